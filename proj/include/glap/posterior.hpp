#pragma once

#include "glap/curvature.hpp"
#include "glap/lanczos.hpp"
#include "glap/likelihood.hpp"
#include "glap/net.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace glap {

enum class SamplerKind : std::uint64_t {
  sampled_laplace = 0,
  laplace_diffusion = 1,
  kernel_diffusion = 2,
};

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

enum class EigenBackend { lanczos, dense };

std::string to_string(EigenBackend backend);
EigenBackend parse_eigen_backend(const std::string& name);

// How the leading GGN eigenpairs are obtained.
struct EigenSettings {
  EigenBackend backend = EigenBackend::lanczos;
  std::size_t lanczos_iters = 0;  // 0 picks min(D, 2k + 20)
  double tolerance = 1e-8;        // Lanczos residual tolerance, relative to lambda_max
  double rank_tol = 1e-10;        // pairs at or below rank_tol * lambda_max are kernel
  DenseBudget budget;
};

// Nonzero leading eigenpairs (at most k) of the GGN at op's weights; the
// operator's alpha is ignored.
LowRankEigen top_eigenpairs(const CurvatureOperator& op, std::size_t k, const EigenSettings& settings,
                            std::uint64_t seed);

struct DiffusionConfig {
  std::size_t steps = 1;     // T
  std::size_t samples = 1;   // S
  std::size_t rank = 1;      // k
  double alpha = 1.0;        // prior precision, also used inside (Lambda + alpha)^{-1/2}
  double step_scale = 1.0;   // multiplies the 1/sqrt(T) step factor
  std::uint64_t seed = 0;
  bool freeze_eigenpairs = false;  // reuse the eigenpairs from the first step
  EigenSettings eigen;

  void validate(std::size_t dim) const;
};

struct PosteriorSamples {
  Matrix draws;  // S x D, one draw per row
  SamplerKind sampler = SamplerKind::sampled_laplace;
  DiffusionConfig config;
  ParamVector w_hat;

  std::size_t size() const { return static_cast<std::size_t>(draws.rows()); }
  ParamVector draw(std::size_t i) const { return draws.row(static_cast<Eigen::Index>(i)).transpose(); }
};

// Passed to a StepObserver after every diffusion step.
struct DiffusionStep {
  std::size_t sample;
  std::size_t step;
  const ParamVector& before;
  const ParamVector& delta;
  const LowRankEigen& eigen;
};
using StepObserver = std::function<void(const DiffusionStep&)>;

// w_i = w_hat + (GGN + alpha I)^{-1/2} eps_i under the low-rank model.
PosteriorSamples sample_laplace(const LowRankEigen& eig, double alpha, const ParamVector& w_hat,
                                std::size_t samples, std::uint64_t seed);

// Euler-Maruyama for dw = G^{-1/2} dW on [0, 1] with constant G = GGN + alpha I
// and T equal steps; its law at t = 1 is the Laplace posterior for every T.
PosteriorSamples constant_metric_diffusion(const LowRankEigen& eig, double alpha, const ParamVector& w_hat,
                                           std::size_t steps, std::size_t samples, std::uint64_t seed);

// Random walk in the local image of the GGN: at every step the top-k
// eigenpairs are recomputed at the current weights and
//   w += step_scale / sqrt(T) * U (Lambda + alpha)^{-1/2} eps,  eps ~ N(0, I_k).
PosteriorSamples laplace_diffusion(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                   const ParamVector& w_hat, const DiffusionConfig& cfg,
                                   const StepObserver& observer = {});

// Random walk in the local kernel of the GGN:
//   w += step_scale / sqrt(T alpha) * (I - U U^T) eps,  eps ~ N(0, I_D).
PosteriorSamples kernel_diffusion(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik,
                                  const ParamVector& w_hat, const DiffusionConfig& cfg,
                                  const StepObserver& observer = {});

// Network outputs for every draw, one M x O matrix per draw.
std::vector<Matrix> nn_outputs(const NetworkSpec& spec, const PosteriorSamples& samples, const Matrix& inputs);

// f(w_hat, x) + J_{w_hat}(x) (w_i - w_hat); never evaluates the network at w_i.
std::vector<Matrix> linearized_outputs(const NetworkSpec& spec, const ParamVector& w_hat,
                                       const PosteriorSamples& samples, const Matrix& inputs);

// Monte-Carlo predictive. Classification: mean (and between-draw variance) of
// class probabilities. Regression: mean and unbiased variance of outputs.
struct Predictive {
  Matrix mean;
  Matrix variance;
};

Predictive summarize_outputs(const std::vector<Matrix>& outputs, const Likelihood& lik);
Predictive predictive_nn(const NetworkSpec& spec, const PosteriorSamples& samples, const Matrix& inputs,
                         const Likelihood& lik);
Predictive predictive_linearized(const NetworkSpec& spec, const ParamVector& w_hat, const PosteriorSamples& samples,
                                 const Matrix& inputs, const Likelihood& lik);

// Samples file: "GLSMP001", then S, D, sampler id, seed (u64 LE), then S*D
// little-endian doubles, row-major.
void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples);
PosteriorSamples read_samples(const std::filesystem::path& path);

}  // namespace glap
