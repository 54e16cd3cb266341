#include "glap/posterior.hpp"

#include "glap/binary_io.hpp"
#include "glap/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace glap {

namespace {

constexpr char kSamplesMagic[8] = {'G', 'L', 'S', 'M', 'P', '0', '0', '1'};

// Stream tags so that noise, Lanczos starts and sample indices never collide.
constexpr std::uint64_t kNoiseStream = 1;
constexpr std::uint64_t kLanczosStream = 2;

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t sample, std::uint64_t step) {
  Rng rng(seed, {kLanczosStream, sample, step});
  return rng.engine()();
}

void check_finite(const ParamVector& w, std::size_t sample) {
  if (!w.allFinite()) {
    throw NumericalError("sample " + std::to_string(sample) + " diverged to non-finite weights");
  }
}

template <typename StepFn>
PosteriorSamples run_diffusion(SamplerKind kind, const NetworkSpec& spec, const Dataset& data,
                               const Likelihood& lik, const ParamVector& w_hat, const DiffusionConfig& cfg,
                               const StepObserver& observer, StepFn&& step_fn) {
  cfg.validate(static_cast<std::size_t>(w_hat.size()));
  const auto shared = std::make_shared<const Dataset>(data);
  PosteriorSamples out;
  out.sampler = kind;
  out.config = cfg;
  out.w_hat = w_hat;
  out.draws.resize(static_cast<Eigen::Index>(cfg.samples), w_hat.size());

  for (std::size_t i = 0; i < cfg.samples; ++i) {
    ParamVector w = w_hat;
    LowRankEigen eig;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      if (t == 0 || !cfg.freeze_eigenpairs) {
        try {
          CurvatureOperator op(spec, w, shared, lik, 0.0);
          eig = top_eigenpairs(op, cfg.rank, cfg.eigen, derived_seed(cfg.seed, i, t));
        } catch (const NumericalError& e) {
          throw NumericalError("sample " + std::to_string(i) + ", step " + std::to_string(t) + ": " + e.what());
        }
      }
      Rng rng(cfg.seed, {kNoiseStream, i, t});
      const ParamVector delta = step_fn(eig, rng);
      if (observer) observer(DiffusionStep{i, t, w, delta, eig});
      w += delta;
      check_finite(w, i);
    }
    out.draws.row(static_cast<Eigen::Index>(i)) = w.transpose();
  }
  return out;
}

}  // namespace

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::sampled_laplace: return "sampled_laplace";
    case SamplerKind::laplace_diffusion: return "laplace_diffusion";
    case SamplerKind::kernel_diffusion: return "kernel_diffusion";
  }
  return "unknown";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "sampled_laplace") return SamplerKind::sampled_laplace;
  if (name == "laplace_diffusion") return SamplerKind::laplace_diffusion;
  if (name == "kernel_diffusion") return SamplerKind::kernel_diffusion;
  throw ConfigError("unknown sampler '" + name + "'");
}

std::string to_string(EigenBackend backend) {
  return backend == EigenBackend::lanczos ? "lanczos" : "dense";
}

EigenBackend parse_eigen_backend(const std::string& name) {
  if (name == "lanczos") return EigenBackend::lanczos;
  if (name == "dense") return EigenBackend::dense;
  throw ConfigError("unknown eigen backend '" + name + "'");
}

LowRankEigen top_eigenpairs(const CurvatureOperator& op, std::size_t k, const EigenSettings& settings,
                            std::uint64_t seed) {
  const std::size_t d = op.dim();
  k = std::min(k, d);
  if (settings.backend == EigenBackend::dense) {
    return exact_eigenpairs(op, settings.rank_tol, settings.budget).leading(static_cast<Eigen::Index>(k));
  }
  LanczosOptions options;
  options.k = k;
  options.iters = settings.lanczos_iters == 0 ? std::min(d, 2 * k + 20) : std::min(settings.lanczos_iters, d);
  options.iters = std::max(options.iters, k);
  options.seed = seed;
  options.tolerance = settings.tolerance;
  const double shift = op.alpha();
  const LinearOperator ggn = [&op, shift](const Vector& v) -> Vector {
    Vector out = op.apply(v);
    if (shift != 0.0) out -= shift * v;
    return out;
  };
  return lanczos_topk(ggn, d, options).nonzero(settings.rank_tol);
}

void DiffusionConfig::validate(std::size_t dim) const {
  if (steps == 0) throw ConfigError("diffusion needs steps >= 1");
  if (samples == 0) throw ConfigError("diffusion needs samples >= 1");
  if (rank == 0 || rank > dim) throw ConfigError("diffusion rank must be in [1, D]");
  if (!(alpha > 0.0)) throw ConfigError("diffusion needs alpha > 0");
  if (!(step_scale > 0.0)) throw ConfigError("diffusion needs step_scale > 0");
}

PosteriorSamples sample_laplace(const LowRankEigen& eig, double alpha, const ParamVector& w_hat,
                                std::size_t samples, std::uint64_t seed) {
  return constant_metric_diffusion(eig, alpha, w_hat, 1, samples, seed);
}

PosteriorSamples constant_metric_diffusion(const LowRankEigen& eig, double alpha, const ParamVector& w_hat,
                                           std::size_t steps, std::size_t samples, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError("sampling needs alpha > 0");
  if (steps == 0 || samples == 0) throw ConfigError("sampling needs steps >= 1 and samples >= 1");
  PosteriorSamples out;
  out.sampler = SamplerKind::sampled_laplace;
  out.config.steps = steps;
  out.config.samples = samples;
  out.config.rank = static_cast<std::size_t>(eig.rank());
  out.config.alpha = alpha;
  out.config.seed = seed;
  out.w_hat = w_hat;
  out.draws.resize(static_cast<Eigen::Index>(samples), w_hat.size());
  const double h = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < samples; ++i) {
    ParamVector w = w_hat;
    for (std::size_t t = 0; t < steps; ++t) {
      Rng rng(seed, {kNoiseStream, i, t});
      w += std::sqrt(h) * inv_sqrt_apply(eig, alpha, rng.normal_vector(w_hat.size()));
    }
    out.draws.row(static_cast<Eigen::Index>(i)) = w.transpose();
  }
  return out;
}

PosteriorSamples laplace_diffusion(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                   const ParamVector& w_hat, const DiffusionConfig& cfg,
                                   const StepObserver& observer) {
  const double factor = cfg.step_scale / std::sqrt(static_cast<double>(cfg.steps));
  return run_diffusion(SamplerKind::laplace_diffusion, spec, data, lik, w_hat, cfg, observer,
                       [&](const LowRankEigen& eig, Rng& rng) -> ParamVector {
                         const Vector eps = rng.normal_vector(eig.rank());
                         const Vector scale = (eig.values.array().max(0.0) + cfg.alpha).rsqrt();
                         return factor * (eig.basis * scale.cwiseProduct(eps));
                       });
}

PosteriorSamples kernel_diffusion(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                  const ParamVector& w_hat, const DiffusionConfig& cfg,
                                  const StepObserver& observer) {
  const double factor = cfg.step_scale / std::sqrt(static_cast<double>(cfg.steps) * cfg.alpha);
  const auto d = w_hat.size();
  return run_diffusion(SamplerKind::kernel_diffusion, spec, data, lik, w_hat, cfg, observer,
                       [&](const LowRankEigen& eig, Rng& rng) -> ParamVector {
                         Vector eps = rng.normal_vector(d);
                         if (eig.rank() > 0) eps -= eig.basis * (eig.basis.transpose() * eps);
                         return factor * eps;
                       });
}

std::vector<Matrix> nn_outputs(const NetworkSpec& spec, const PosteriorSamples& samples, const Matrix& inputs) {
  const Network net(spec);
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(net.forward_batch(samples.draw(i), inputs));
  return out;
}

std::vector<Matrix> linearized_outputs(const NetworkSpec& spec, const ParamVector& w_hat,
                                       const PosteriorSamples& samples, const Matrix& inputs) {
  const Network net(spec);
  ForwardTrace trace;
  const Matrix base = net.forward_batch(w_hat, inputs, &trace);
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(base + net.jvp_batch(w_hat, trace, samples.draw(i) - w_hat));
  }
  return out;
}

Predictive summarize_outputs(const std::vector<Matrix>& outputs, const Likelihood& lik) {
  if (outputs.empty()) throw Error("predictive needs at least one sample");
  std::vector<Matrix> values;
  values.reserve(outputs.size());
  for (const auto& o : outputs) values.push_back(lik.is_classification() ? class_probabilities(lik, o) : o);
  Predictive p;
  p.mean = Matrix::Zero(values.front().rows(), values.front().cols());
  for (const auto& v : values) p.mean += v;
  p.mean /= static_cast<double>(values.size());
  p.variance = Matrix::Zero(p.mean.rows(), p.mean.cols());
  if (values.size() > 1) {
    for (const auto& v : values) p.variance.array() += (v - p.mean).array().square();
    p.variance /= static_cast<double>(values.size() - 1);
  }
  return p;
}

Predictive predictive_nn(const NetworkSpec& spec, const PosteriorSamples& samples, const Matrix& inputs,
                         const Likelihood& lik) {
  return summarize_outputs(nn_outputs(spec, samples, inputs), lik);
}

Predictive predictive_linearized(const NetworkSpec& spec, const ParamVector& w_hat, const PosteriorSamples& samples,
                                 const Matrix& inputs, const Likelihood& lik) {
  return summarize_outputs(linearized_outputs(spec, w_hat, samples, inputs), lik);
}

void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples) {
  std::ostringstream out(std::ios::binary);
  out.write(kSamplesMagic, sizeof(kSamplesMagic));
  io::write_u64_le(out, samples.size());
  io::write_u64_le(out, static_cast<std::uint64_t>(samples.draws.cols()));
  io::write_u64_le(out, static_cast<std::uint64_t>(samples.sampler));
  io::write_u64_le(out, samples.config.seed);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = samples.draws;
  io::write_f64_le(out, std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())));
  io::atomic_write(path, out.str());
}

PosteriorSamples read_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open samples file " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSamplesMagic, sizeof(magic)) != 0) {
    throw Error("bad samples magic in " + path.string());
  }
  const auto s = io::read_u64_le(in);
  const auto d = io::read_u64_le(in);
  const auto id = io::read_u64_le(in);
  const auto seed = io::read_u64_le(in);
  if (id > 2) throw Error("unknown sampler id " + std::to_string(id));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(static_cast<Eigen::Index>(s),
                                                                              static_cast<Eigen::Index>(d));
  io::read_f64_le(in, std::span<double>(rows.data(), s * d));
  PosteriorSamples out;
  out.draws = rows;
  out.sampler = static_cast<SamplerKind>(id);
  out.config.samples = s;
  out.config.seed = seed;
  if (!out.draws.allFinite()) throw NumericalError("samples file contains non-finite values");
  return out;
}

}  // namespace glap
