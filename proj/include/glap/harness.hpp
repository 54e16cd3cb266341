#pragma once

#include "glap/likelihood.hpp"
#include "glap/net.hpp"
#include "glap/posterior.hpp"
#include "glap/train.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace glap {

enum class Task { sine_regression, gaussian_mixture_2class, mnist_subset };

std::string to_string(Task t);
Task parse_task(const std::string& name);

enum class PredictiveKind { nn, linearized };

std::string to_string(PredictiveKind p);
PredictiveKind parse_predictive(const std::string& name);

struct DataSection {
  std::size_t n_train = 100;
  std::size_t n_test = 200;
  double noise_sd = 0.1;                        // sine
  double test_lo = -6.283185307179586;          // sine test grid
  double test_hi = 6.283185307179586;
  std::array<double, 2> mean0{-1.0, -1.0};      // mixture
  std::array<double, 2> mean1{1.0, 1.0};
  double mixture_sd = 0.7;
  std::string train_images = "data/mnist_subset/train-images-idx3-ubyte";
  std::string train_labels = "data/mnist_subset/train-labels-idx1-ubyte";
  std::string test_images = "data/mnist_subset/test-images-idx3-ubyte";
  std::string test_labels = "data/mnist_subset/test-labels-idx1-ubyte";
  double ood_rotation = 90.0;  // degrees, for the auroc metric on image tasks
};

struct SamplerSection {
  SamplerKind kind = SamplerKind::laplace_diffusion;
  std::size_t steps = 5;
  std::size_t samples = 50;
  std::size_t rank = 10;  // 0 keeps every nonzero eigenpair (dense backend only)
  double alpha = 1.0;
  double step_scale = 1.0;
  std::uint64_t seed = 0;
  std::size_t lanczos_iters = 0;
  EigenBackend eigen_backend = EigenBackend::lanczos;
  bool freeze_eigenpairs = false;
  std::size_t dense_dim_budget = 2000;           // dense eigensolves and the rank study
  std::size_t jacobian_entry_budget = 10'000'000;
};

struct TrainSection {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-2;
  std::size_t epochs = 5000;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  std::string checkpoint;  // load MAP weights from here instead of training; "{seed}" is replaced
};

struct EvalSection {
  PredictiveKind predictive = PredictiveKind::nn;
  std::vector<std::string> metrics;
};

struct StudySection {
  std::vector<std::size_t> subset_sizes{10, 25, 50, 100, 200, 350, 500};
  std::vector<double> angles{0, 15, 30, 45, 60, 90, 120, 180};
  std::vector<double> alphas{0.1, 1, 5, 10, 50, 100};
};

struct ExperimentConfig {
  Task task = Task::sine_regression;
  NetworkSpec network;
  Likelihood likelihood;
  DataSection data;
  SamplerSection sampler;
  TrainSection train;
  EvalSection eval;
  StudySection study;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";

  // Throws ConfigError on inconsistent dims, empty seeds or unknown metrics.
  void validate() const;
  DiffusionConfig diffusion(std::uint64_t replica_seed) const;
  TrainConfig train_config(std::uint64_t replica_seed) const;
};

// Defaults for each task: the sine, mixture and MNIST setups used in the tests.
ExperimentConfig default_config(Task task);

// Strict conversion: every key must be known; missing keys keep defaults,
// except `task` and `seeds`, which are required.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// Metric names accepted in eval.metrics for the config's task.
std::vector<std::string> available_metrics(const ExperimentConfig& cfg);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
};

struct ResultsRecord {
  std::string kind;  // which operation produced it
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> metric_names;                 // requested order
  std::vector<std::map<std::string, double>> per_seed;   // aligned with seeds
  std::map<std::string, MetricSummary> metrics;
  nlohmann::json extra;  // operation-specific payload
  std::string started_at;
  std::string finished_at;
};

nlohmann::json results_to_json(const ResultsRecord& r);
// 17 significant digits for every float.
std::string dump_results(const ResultsRecord& r);
MetricSummary summarize(const std::vector<double>& values);

struct RunOptions {
  bool write_outputs = true;
  std::size_t jobs = 1;  // replicas evaluated concurrently
};

struct Replica {
  std::uint64_t seed = 0;
  Dataset train;
  Dataset test;
  ParamVector w_map;
  std::vector<double> loss_trace;
};

// Builds the data for one replica and trains (or loads) the MAP.
Replica prepare_replica(const ExperimentConfig& cfg, std::uint64_t seed);

// Eigenpairs the configured sampler starts from.
LowRankEigen map_eigenpairs(const ExperimentConfig& cfg, const Replica& rep);

PosteriorSamples draw_samples(const ExperimentConfig& cfg, const Replica& rep);

// Metrics for one replica, keys exactly cfg.eval.metrics.
std::map<std::string, double> evaluate_replica(const ExperimentConfig& cfg, const Replica& rep,
                                               const PosteriorSamples& samples);

// train -> curvature -> eigenpairs -> samples -> predictive -> metrics, per
// seed. Writes results.json, metrics.csv and per-seed spectrum, samples and
// checkpoint files into output_dir.
ResultsRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// MAP checkpoints only.
ResultsRecord run_train(const ExperimentConfig& cfg, const RunOptions& opts = {});

// MAP + samples files, no evaluation.
ResultsRecord run_sample(const ExperimentConfig& cfg, const RunOptions& opts = {});

struct RankPoint {
  std::size_t subset_size = 0;
  std::size_t rank = 0;
  std::size_t kernel_dim = 0;
  double train_accuracy = 0.0;
};

// For each subset size: GGN from the first n training points, sampled
// Laplace with every nonzero eigenpair, NN-predictive accuracy on the whole
// training set. Uses the first seed. Writes rank_study.csv.
ResultsRecord run_rank_study(const ExperimentConfig& cfg, const RunOptions& opts = {});
std::vector<RankPoint> rank_points(const ResultsRecord& r);

// Accuracy, NLL and ECE of the configured predictive on rotated test images.
ResultsRecord run_shift_study(const ExperimentConfig& cfg, const RunOptions& opts = {});

// run_experiment for every alpha in study.alphas, the same alpha for the
// prior and the sampler.
ResultsRecord run_alpha_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Spearman rank correlation with midranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace glap
