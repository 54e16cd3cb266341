// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Run from anywhere; the MNIST subset is located through GLAP_SOURCE_DIR.
#include "fixtures.hpp"
#include "glap/curvature.hpp"
#include "glap/geometry.hpp"
#include "glap/harness.hpp"
#include "glap/lanczos.hpp"
#include "glap/metrics.hpp"
#include "glap/posterior.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace glap;
using namespace glap::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Matrix sample_covariance(const Matrix& draws, const Vector& center) {
  const Matrix c = draws.rowwise() - center.transpose();
  return c.transpose() * c / static_cast<double>(draws.rows());
}

// off-diagonals relative to sqrt(C_ii C_jj) so that zero entries are testable
double cov_error(const Matrix& est, const Matrix& ref) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ref.rows(); ++i) {
    for (Eigen::Index j = 0; j < ref.cols(); ++j) {
      const double scale = i == j ? ref(i, i) : std::sqrt(ref(i, i) * ref(j, j));
      worst = std::max(worst, std::abs(est(i, j) - ref(i, j)) / scale);
    }
  }
  return worst;
}

Vector sorted_desc(Vector v) {
  std::sort(v.data(), v.data() + v.size(), std::greater<>());
  return v;
}

ReparamAction scale_unit(double alpha, std::size_t layer, std::size_t unit) {
  ReparamAction a;
  a.layer_index = layer;
  a.unit_index = unit;
  a.alpha = alpha;
  return a;
}

std::string mnist_path(const std::string& file) {
  return (std::filesystem::path(GLAP_SOURCE_DIR) / "data" / "mnist_subset" / file).string();
}

ExperimentConfig mnist_config() {
  ExperimentConfig c = default_config(Task::mnist_subset);
  c.data.train_images = mnist_path("train-images-idx3-ubyte");
  c.data.train_labels = mnist_path("train-labels-idx1-ubyte");
  c.data.test_images = mnist_path("test-images-idx3-ubyte");
  c.data.test_labels = mnist_path("test-labels-idx1-ubyte");
  c.seeds = {0};
  return c;
}

std::vector<std::uint64_t> ten_seeds() { return {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}; }

// 1. matrix-free GGN vs explicit Jacobians, GGN vs NTK spectra
Outcome curvature_oracle() {
  const auto start = Clock::now();
  double worst_mv = 0.0, worst_spec = 0.0;
  std::size_t max_d = 0;
  Rng rng(2024, {1});
  const auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.engine()() % (hi - lo + 1); };
  for (int trial = 0; trial < 20; ++trial) {
    NetworkSpec spec;
    do {
      std::vector<std::size_t> hidden(pick(1, 3));
      for (auto& h : hidden) h = pick(2, 12);
      spec = NetworkSpec::mlp(pick(1, 6), hidden, pick(1, 4), trial % 2 ? Activation::tanh : Activation::relu);
    } while (spec.param_count() > 500);
    max_d = std::max(max_d, spec.param_count());
    const Likelihood lik = trial % 3 == 0 ? Likelihood::categorical() : Likelihood::gaussian(0.2 + 0.1 * trial);
    const std::size_t n = pick(1, 20);
    const std::size_t out = spec.output_dim;
    const Dataset d = lik.is_classification() ? random_classification(n, spec.input_dim, out, 100 + trial)
                                              : random_regression(n, spec.input_dim, out, 100 + trial);
    Network net(spec);
    const ParamVector w = net.init_params(static_cast<std::uint64_t>(trial));
    const double alpha = 0.5;

    Matrix ggn = Matrix::Zero(w.size(), w.size());
    for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
      const Vector x = d.inputs.row(i).transpose();
      const Matrix j = net.jacobian(w, x);
      ggn += j.transpose() * output_hessian(lik, net.forward(w, x)) * j;
    }
    const CurvatureOperator op(spec, w, d, lik, alpha);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const ParamVector v = random_vector(w.size(), 1000 * trial + s);
      worst_mv = std::max(worst_mv, max_rel_error(op.apply(v), ggn * v + alpha * v));
    }

    const Vector lam = sorted_desc(Eigen::SelfAdjointEigenSolver<Matrix>(ggn).eigenvalues());
    const Vector mu = sorted_desc(Eigen::SelfAdjointEigenSolver<Matrix>(ntk_matrix(spec, w, d, lik)).eigenvalues());
    const double top = std::max(lam[0], 1e-300);
    for (Eigen::Index i = 0; i < std::min(lam.size(), mu.size()); ++i) {
      if (lam[i] <= 1e-10 * top && mu[i] <= 1e-10 * top) break;
      worst_spec = std::max(worst_spec, std::abs(lam[i] - mu[i]) / std::max(lam[i], mu[i]));
    }
  }
  const double t = seconds_since(start);
  return {worst_mv < 1e-9 && worst_spec < 1e-7 && t < 30.0,
          "matvec rel err " + fmt(worst_mv) + " (< 1e-9), GGN/NTK spectrum rel err " + fmt(worst_spec) +
              " (< 1e-7), max D " + std::to_string(max_d) + ", " + fmt(t) + " s (< 30 s)"};
}

// 2. Lanczos against a dense eigensolver
Outcome lanczos_oracle() {
  const auto as_op = [](const Matrix& a) -> LinearOperator { return [a](const Vector& v) -> Vector { return a * v; }; };
  double worst_ritz = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Vector spectrum(200);
    for (int i = 0; i < 200; ++i) spectrum[i] = 50.0 * std::pow(0.9 + 0.01 * static_cast<double>(s), i);
    const Matrix a = psd_with_spectrum(spectrum, 10 + s);
    const Vector dense = sorted_desc(Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues());
    LanczosOptions o;
    o.k = 10;
    o.iters = 80;
    o.seed = s;
    const LowRankEigen e = lanczos_topk(as_op(a), 200, o);
    if (e.rank() != 10) return {false, "Lanczos returned " + std::to_string(e.rank()) + " pairs"};
    for (int i = 0; i < 10; ++i) worst_ritz = std::max(worst_ritz, std::abs(e.values[i] - dense[i]) / dense[i]);
  }

  // rank-30 operator, every nonzero pair captured
  Vector spectrum = Vector::Zero(200);
  for (int i = 0; i < 30; ++i) spectrum[i] = 0.1 + 2.0 * i;
  const Matrix g = psd_with_spectrum(spectrum, 99);
  const double alpha = 0.7;
  const Matrix inv_sqrt =
      Eigen::SelfAdjointEigenSolver<Matrix>(g + alpha * Matrix::Identity(200, 200)).operatorInverseSqrt();
  LanczosOptions o;
  o.k = 30;
  o.iters = 60;
  const LowRankEigen e = lanczos_topk(as_op(g), 200, o).nonzero(1e-10);
  double worst_apply = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector v = random_vector(200, s);
    const Vector ref = inv_sqrt * v;
    worst_apply = std::max(worst_apply, (inv_sqrt_apply(e, alpha, v) - ref).norm() / ref.norm());
  }
  return {worst_ritz < 1e-8 && worst_apply < 1e-6 && e.rank() == 30,
          "top-10 Ritz rel err " + fmt(worst_ritz) + " (< 1e-8), inv_sqrt_apply rel err " + fmt(worst_apply) +
              " (< 1e-6), captured rank " + std::to_string(e.rank()) + "/30"};
}

// 3. sampled Laplace covariance on GGN = diag(3, 0), alpha = 1
Outcome closed_form_covariance() {
  LowRankEigen e;
  e.basis = Matrix::Identity(2, 1);
  e.values = Vector::Constant(1, 3.0);
  e.residuals = Vector::Zero(1);
  const ParamVector w = (ParamVector(2) << 0.3, -1.2).finished();
  const PosteriorSamples s = sample_laplace(e, 1.0, w, 50000, 11);
  const Matrix c = sample_covariance(s.draws, w);
  const double err = cov_error(c, (Matrix(2, 2) << 0.25, 0, 0, 1).finished());
  std::ostringstream d;
  d << "cov [[" << fmt(c(0, 0)) << ", " << fmt(c(0, 1)) << "], [" << fmt(c(1, 0)) << ", " << fmt(c(1, 1))
    << "]], worst rel err " << fmt(err) << " (< 0.05)";
  return {err < 0.05, d.str()};
}

// 4. scaling invariance of the pullback geometry
Outcome reparam_invariance() {
  const Dataset pts = regression_data((Matrix(3, 1) << 0.5, 1.0, 2.0).finished(), Matrix::Zero(3, 1));
  PathSpec path;
  for (int i = 0; i <= 1000; ++i) {
    const double a = 1.0 + i / 1000.0;
    path.waypoints.push_back(scaling_net_weights(2.0 / a, 3.0 * a));
  }
  const double length = pullback_length(scaling_net_spec(), pts, Likelihood::gaussian(), path);

  double transform = check_ggn_transform(scaling_net_spec(), pts, Likelihood::gaussian(), scaling_net_weights(2, 3),
                                         scale_unit(2.0, 0, 0))
                         .max_abs_error;
  const auto deep = NetworkSpec::mlp(3, {8, 6}, 2, Activation::relu);
  Network net(deep);
  const Dataset d = random_regression(10, 3, 2, 12);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParamVector w = net.init_params(s);
    transform = std::max(
        transform,
        check_ggn_transform(deep, d, Likelihood::gaussian(), w, scale_unit(0.5 + 0.4 * s, s % 2, s)).max_abs_error);
  }

  double align = kernel_alignment(scaling_net_spec(), pts, Likelihood::gaussian(), scaling_net_weights(2, 3), scale_unit(1.0, 0, 0));
  align = std::max(align, kernel_alignment(deep, d, Likelihood::gaussian(), net.init_params(7), scale_unit(1.0, 1, 2)));
  return {length < 1e-6 && transform < 1e-8 && align < 1e-8,
          "scaling-path length " + fmt(length) + " (< 1e-6), GGN transform err " + fmt(transform) +
              " (< 1e-8), kernel alignment " + fmt(align) + " (< 1e-8)"};
}

// 5. kernel diffusion leaves train predictions fixed, sine task, 10 seeds
Outcome kernel_diffusion_invariance() {
  const auto start = Clock::now();
  ExperimentConfig c = default_config(Task::sine_regression);
  c.sampler.kind = SamplerKind::kernel_diffusion;
  c.sampler.step_scale = 0.04;
  c.sampler.steps = 80;
  c.sampler.samples = 25;
  c.sampler.rank = 0;
  c.sampler.eigen_backend = EigenBackend::dense;
  c.eval.metrics = {"train_var_max", "train_var", "test_var"};
  c.seeds = ten_seeds();
  const ResultsRecord r = run_experiment(c, {false, 1});
  double worst_train = 0.0, worst_ratio = std::numeric_limits<double>::infinity();
  for (const auto& m : r.per_seed) {
    worst_train = std::max(worst_train, m.at("train_var_max"));
    worst_ratio = std::min(worst_ratio, m.at("test_var") / m.at("train_var"));
  }
  const double t = seconds_since(start);
  return {worst_train < 1e-4 && worst_ratio >= 10.0 && t < 120.0,
          "max train variance " + fmt(worst_train) + " (< 1e-4), min held-out/train ratio " + fmt(worst_ratio) +
              " (>= 10), " + fmt(t) + " s (< 120 s)"};
}

// 6. sampled Laplace underfits, linearized and Laplace diffusion do not
Outcome underfitting_contrast() {
  ExperimentConfig base = default_config(Task::sine_regression);
  base.eval.metrics = {"train_rmse", "map_train_rmse"};
  // both Gaussians use the exact covariance; a rank-10 truncation would leave
  // small image directions at prior variance and inflate the linearized error
  ExperimentConfig lap = base, lin = base, diff = base;
  for (auto* c : {&lap, &lin}) {
    c->sampler.kind = SamplerKind::sampled_laplace;
    c->sampler.rank = 0;
    c->sampler.eigen_backend = EigenBackend::dense;
  }
  lin.eval.predictive = PredictiveKind::linearized;
  diff.sampler.kind = SamplerKind::laplace_diffusion;
  std::vector<double> r_lap, r_lin, r_diff;
  for (std::uint64_t seed : ten_seeds()) {
    const Replica rep = prepare_replica(base, seed);
    const auto ratio = [&](const ExperimentConfig& c) {
      const auto m = evaluate_replica(c, rep, draw_samples(c, rep));
      return m.at("train_rmse") / m.at("map_train_rmse");
    };
    r_lap.push_back(ratio(lap));
    r_lin.push_back(ratio(lin));
    r_diff.push_back(ratio(diff));
  }
  const double a = median(r_lap), b = median(r_lin), d = median(r_diff);
  return {a > 3.0 && b < 1.5 && d < 1.5,
          "median train RMSE / MAP: sampled Laplace " + fmt(a) + " (> 3), linearized " + fmt(b) +
              " (< 1.5), Laplace diffusion " + fmt(d) + " (< 1.5)"};
}

// 7. GGN rank vs sampled-Laplace train accuracy on MNIST subsets
Outcome rank_trend() {
  const auto start = Clock::now();
  ExperimentConfig c = mnist_config();
  c.network = NetworkSpec::mlp(784, {4}, 10, Activation::relu);
  c.train.epochs = 200;
  c.sampler.kind = SamplerKind::sampled_laplace;
  c.sampler.samples = 10;
  c.sampler.dense_dim_budget = 6000;
  c.sampler.jacobian_entry_budget = 50'000'000;
  const ResultsRecord r = run_rank_study(c, {false, 1});
  const auto points = rank_points(r);
  std::ostringstream d;
  for (const auto& p : points) d << p.subset_size << ":" << p.rank << "/" << fmt(p.train_accuracy) << " ";
  const double rho = r.metrics.at("spearman").mean;
  const double t = seconds_since(start);
  return {points.size() >= 6 && rho > 0.5 && t < 600.0,
          "Spearman " + fmt(rho) + " (> 0.5) over " + std::to_string(points.size()) + " sizes [n:rank/acc " +
              d.str() + "], " + fmt(t) + " s (< 600 s)"};
}

// 8. Laplace diffusion on a linear net has the image-restricted Laplace law for every T
Outcome constant_metric_equivalence() {
  const auto spec = linear_spec(3);
  const Dataset d = regression_data((Matrix(2, 3) << 1, 2, 0, 0, 1, -1).finished(), Matrix::Zero(2, 1));
  const ParamVector w = (ParamVector(3) << 0.2, -0.1, 0.4).finished();
  const auto lik = Likelihood::gaussian(1.0);
  const double alpha = 0.5;
  const LowRankEigen eig = exact_eigenpairs(CurvatureOperator(spec, w, d, lik));
  const Matrix u = eig.basis;
  const Matrix ref = (eig.values.array() + alpha).inverse().matrix().asDiagonal();
  std::string detail;
  bool pass = eig.rank() == 2;
  for (std::size_t T : {1u, 4u, 16u}) {
    DiffusionConfig cfg;
    cfg.steps = T;
    cfg.samples = 50000;
    cfg.rank = 2;
    cfg.alpha = alpha;
    cfg.seed = 40 + T;
    cfg.eigen.backend = EigenBackend::dense;
    const PosteriorSamples s = laplace_diffusion(spec, d, lik, w, cfg);
    const Matrix c = sample_covariance(s.draws, w);
    const double err = cov_error(u.transpose() * c * u, ref);
    const double leak = (c - u * (u.transpose() * c * u) * u.transpose()).cwiseAbs().maxCoeff();
    pass = pass && err < 0.05 && leak < 1e-12;
    detail += "T=" + std::to_string(T) + " rel err " + fmt(err) + ", kernel leak " + fmt(leak) + "; ";
  }
  return {pass, detail + "limits 0.05 and 1e-12"};
}

// 9. calibration ordering on MNIST
Outcome calibration_ordering() {
  ExperimentConfig c = mnist_config();
  c.eval.metrics = {"accuracy", "map_accuracy"};
  const Replica rep = prepare_replica(c, 0);
  ExperimentConfig lap = c;
  lap.sampler.kind = SamplerKind::sampled_laplace;
  const auto diff = evaluate_replica(c, rep, draw_samples(c, rep));
  const auto sl = evaluate_replica(lap, rep, draw_samples(lap, rep));
  const double map = diff.at("map_accuracy");
  const double gap_diff = map - diff.at("accuracy");
  const double gap_lap = map - sl.at("accuracy");
  return {std::abs(gap_diff) <= 0.02 && gap_lap > 0.20,
          "MAP acc " + fmt(map) + ", Laplace diffusion " + fmt(diff.at("accuracy")) + " (within 0.02), sampled Laplace " +
              fmt(sl.at("accuracy")) + " (drop > 0.20)"};
}

// 10. metrics against hand and brute-force values
Outcome metric_oracles() {
  double worst = 0.0;
  const auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  const auto m = classification_metrics(EvalBatch{(Matrix(2, 2) << 0.6, 0.4, 0.6, 0.4).finished(), {0, 1}});
  track(m.accuracy, 0.5);
  track(m.confidence, 0.6);
  track(m.ece, 0.1);
  track(m.mce, 0.1);
  track(m.nll, -0.5 * (std::log(0.6) + std::log(0.4)));
  track(m.brier, 0.52);

  const auto u = classification_metrics(EvalBatch{Matrix::Constant(4, 4, 0.25), {0, 1, 2, 3}});
  track(u.nll, std::log(4.0));
  track(u.brier, 0.75);

  // brute force on random batches: bins (b/10, (b+1)/10], argmax to the lowest index
  Rng rng(5, {10});
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 200, k = 3 + trial % 4;
    Matrix p(n, k);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) p(i, j) = std::exp(1.5 * rng.normal());
      p.row(i) /= p.row(i).sum();
      y.push_back(static_cast<int>(rng.engine()() % static_cast<std::uint64_t>(k)));
    }
    std::vector<double> bin_n(10, 0), bin_acc(10, 0), bin_conf(10, 0);
    double nll = 0, brier = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      for (Eigen::Index j = 1; j < k; ++j)
        if (p(i, j) > p(i, arg)) arg = j;
      const double conf = p(i, arg);
      const int b = std::clamp(static_cast<int>(std::ceil(conf * 10.0)) - 1, 0, 9);
      bin_n[b] += 1;
      bin_conf[b] += conf;
      bin_acc[b] += arg == y[i] ? 1.0 : 0.0;
      nll -= std::log(p(i, y[i]));
      for (Eigen::Index j = 0; j < k; ++j) brier += std::pow(p(i, j) - (j == y[i] ? 1.0 : 0.0), 2);
    }
    double ece = 0, mce = 0;
    for (int b = 0; b < 10; ++b) {
      if (bin_n[b] == 0) continue;
      const double gap = std::abs(bin_acc[b] - bin_conf[b]) / bin_n[b];
      ece += bin_n[b] / static_cast<double>(n) * gap;
      mce = std::max(mce, gap);
    }
    const auto got = classification_metrics(EvalBatch{p, y});
    track(got.ece, ece);
    track(got.mce, mce);
    track(got.nll, nll / static_cast<double>(n));
    track(got.brier, brier / static_cast<double>(n));
  }

  track(auroc({0.1, 0.4}, {0.35, 0.8}), 0.75);
  track(auroc({0.5, 0.5}, {0.5, 0.5}), 0.5);
  std::vector<double> neg, pos;
  for (int i = 0; i < 100; ++i) {
    neg.push_back(std::round(4 * rng.normal()) / 4);
    pos.push_back(std::round(4 * (rng.normal() + 0.5)) / 4);
  }
  double brute = 0;
  for (double a : pos)
    for (double b : neg) brute += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  track(auroc(neg, pos), brute / 10000.0);
  return {worst < 1e-12, "worst abs deviation " + fmt(worst) + " (< 1e-12)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"curvature oracle", curvature_oracle},
      {"Lanczos oracle", lanczos_oracle},
      {"sampled Laplace closed form", closed_form_covariance},
      {"reparameterization invariance", reparam_invariance},
      {"kernel diffusion train invariance", kernel_diffusion_invariance},
      {"underfitting contrast", underfitting_contrast},
      {"rank vs accuracy trend", rank_trend},
      {"constant-metric equivalence", constant_metric_equivalence},
      {"calibration ordering", calibration_ordering},
      {"metric oracles", metric_oracles},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto start = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << " ["
              << fmt(seconds_since(start)) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
