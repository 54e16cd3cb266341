#include "glap/harness.hpp"

#include "glap/binary_io.hpp"
#include "glap/curvature.hpp"
#include "glap/data.hpp"
#include "glap/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace glap {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + where() + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) throw ConfigError(name(key) + " must be a nonnegative integer");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(name(key) + " must be a boolean");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(name(key) + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(name(key) + " must be a string");
    }
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name(key) + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (has(key)) {
      try {
        out = parse(s);
      } catch (const Error& e) {
        throw ConfigError(name(key) + ": " + e.what());
      }
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, name(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + name(item.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs fn(i) for i < n on up to `jobs` threads; the first exception (by
// index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Re-raises a failure with the stage and config hash in front, keeping its type.
template <typename Fn>
auto stage(const std::string& name, const std::string& hash, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = "[" + name + " | config " + hash + "] ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const BudgetError& e) {
    throw BudgetError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

void dump_json(std::ostream& out, const json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        out << "null";
      } else {
        std::string s = format_double(v);
        // keep it a float on the way back in
        if (s.find_first_of(".eE") == std::string::npos) s += ".0";
        out << s;
      }
      break;
    }
    case json::value_t::object: {
      if (j.empty()) {
        out << "{}";
        break;
      }
      out << "{\n";
      bool first = true;
      for (const auto& item : j.items()) {
        if (!first) out << ",\n";
        first = false;
        out << pad << json(item.key()).dump() << ": ";
        dump_json(out, item.value(), indent, depth + 1);
      }
      out << "\n" << close << "}";
      break;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out << "[]";
        break;
      }
      out << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out << ",\n";
        out << pad;
        dump_json(out, j[i], indent, depth + 1);
      }
      out << "\n" << close << "]";
      break;
    }
    default:
      out << j.dump();
  }
}

std::string seed_path(const std::string& pattern, std::uint64_t seed) {
  std::string out = pattern;
  const std::string tag = "{seed}";
  for (auto pos = out.find(tag); pos != std::string::npos; pos = out.find(tag)) {
    out.replace(pos, tag.size(), std::to_string(seed));
  }
  return out;
}

std::string angle_tag(double a) {
  if (a == std::floor(a) && std::abs(a) < 1e9) return std::to_string(static_cast<long long>(a));
  std::ostringstream s;
  s << a;
  return s.str();
}

const std::vector<std::string> kRegressionMetrics = {"train_rmse",  "test_rmse", "map_train_rmse",
                                                     "map_test_rmse", "train_var", "train_var_max",
                                                     "test_var",    "test_nll"};
const std::vector<std::string> kClassificationMetrics = {"accuracy",     "confidence",     "nll", "brier", "ece",
                                                         "mce",          "map_accuracy",   "train_accuracy"};

Dataset sine_grid(std::size_t n, double lo, double hi) {
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), 1);
  d.targets.resize(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    d.inputs(static_cast<Eigen::Index>(i), 0) = x;
    d.targets(static_cast<Eigen::Index>(i), 0) = std::sin(x);
  }
  return d;
}

// sqrt of the mean over draws and points of the squared error.
double sample_rmse(const std::vector<Matrix>& outputs, const Matrix& targets) {
  double sum = 0.0;
  for (const auto& o : outputs) sum += (o - targets).squaredNorm();
  return std::sqrt(sum / static_cast<double>(outputs.size() * static_cast<std::size_t>(targets.size())));
}

std::vector<Matrix> predictive_outputs(const ExperimentConfig& cfg, const Replica& rep,
                                       const PosteriorSamples& samples, const Matrix& inputs) {
  if (cfg.eval.predictive == PredictiveKind::linearized) {
    return linearized_outputs(cfg.network, rep.w_map, samples, inputs);
  }
  return nn_outputs(cfg.network, samples, inputs);
}

EvalBatch batch_for(const ExperimentConfig& cfg, const Replica& rep, const PosteriorSamples& samples,
                    const Dataset& data) {
  const auto outputs = predictive_outputs(cfg, rep, samples, data.inputs);
  return EvalBatch{summarize_outputs(outputs, cfg.likelihood).mean, data.labels};
}

Matrix map_probs(const ExperimentConfig& cfg, const Replica& rep, const Matrix& inputs) {
  const Network net(cfg.network);
  return class_probabilities(cfg.likelihood, net.forward_batch(rep.w_map, inputs));
}

void write_text(const std::filesystem::path& path, const std::string& text) { io::atomic_write(path, text); }

std::string metrics_csv(const ResultsRecord& r) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "seed";
  for (const auto& m : r.metric_names) s << "," << m;
  s << "\n";
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    s << r.seeds[i];
    for (const auto& m : r.metric_names) s << "," << r.per_seed[i].at(m);
    s << "\n";
  }
  s << "mean";
  for (const auto& m : r.metric_names) s << "," << r.metrics.at(m).mean;
  s << "\n";
  return s.str();
}

ResultsRecord new_record(const std::string& kind, const ExperimentConfig& cfg) {
  ResultsRecord r;
  r.kind = kind;
  r.config_hash = config_hash(cfg);
  r.seeds = cfg.seeds;
  r.started_at = timestamp();
  r.extra = json::object();
  return r;
}

void finish_record(ResultsRecord& r, const std::vector<std::string>& names) {
  r.metric_names = names;
  for (const auto& m : names) {
    std::vector<double> v;
    for (const auto& row : r.per_seed) v.push_back(row.at(m));
    r.metrics[m] = summarize(v);
  }
  r.finished_at = timestamp();
}

void write_record(const ExperimentConfig& cfg, const ResultsRecord& r, const RunOptions& opts) {
  if (!opts.write_outputs) return;
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  json j = results_to_json(r);
  j["config"] = config_to_json(cfg);
  std::ostringstream s;
  dump_json(s, j, 2, 0);
  s << "\n";
  write_text(dir / "results.json", s.str());
  write_text(dir / "metrics.csv", metrics_csv(r));
}

std::filesystem::path seed_file(const ExperimentConfig& cfg, const std::string& stem, std::uint64_t seed,
                                const std::string& ext) {
  return std::filesystem::path(cfg.output_dir) / (stem + "_seed" + std::to_string(seed) + ext);
}

}  // namespace

std::string to_string(Task t) {
  switch (t) {
    case Task::sine_regression: return "sine_regression";
    case Task::gaussian_mixture_2class: return "gaussian_mixture_2class";
    case Task::mnist_subset: return "mnist_subset";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "sine_regression") return Task::sine_regression;
  if (name == "gaussian_mixture_2class") return Task::gaussian_mixture_2class;
  if (name == "mnist_subset") return Task::mnist_subset;
  throw ConfigError("unknown task '" + name + "'");
}

std::string to_string(PredictiveKind p) { return p == PredictiveKind::nn ? "nn" : "linearized"; }

PredictiveKind parse_predictive(const std::string& name) {
  if (name == "nn") return PredictiveKind::nn;
  if (name == "linearized") return PredictiveKind::linearized;
  throw ConfigError("unknown predictive '" + name + "'");
}

ExperimentConfig default_config(Task task) {
  ExperimentConfig c;
  c.task = task;
  c.seeds = {0};
  switch (task) {
    case Task::sine_regression:
      c.network = NetworkSpec::mlp(1, {10, 10}, 1, Activation::relu);
      c.likelihood = Likelihood::gaussian(0.01);
      c.eval.metrics = {"train_rmse", "test_rmse", "map_train_rmse", "train_var", "test_var"};
      c.output_dir = "out/sine";
      break;
    case Task::gaussian_mixture_2class:
      c.network = NetworkSpec::mlp(2, {16}, 2, Activation::relu);
      c.likelihood = Likelihood::categorical();
      c.data.n_train = 200;
      c.data.n_test = 200;
      c.train.epochs = 1000;
      c.eval.metrics = {"accuracy", "nll", "ece", "map_accuracy"};
      c.output_dir = "out/mixture";
      break;
    case Task::mnist_subset:
      c.network = NetworkSpec::mlp(784, {64}, 10, Activation::relu);
      c.likelihood = Likelihood::categorical();
      c.data.n_train = 500;
      c.data.n_test = 500;
      c.train.lr = 1e-3;
      c.train.epochs = 30;
      c.train.batch_size = 50;
      c.sampler.steps = 3;
      c.sampler.samples = 10;
      c.eval.metrics = {"accuracy", "map_accuracy", "nll", "ece", "brier"};
      c.output_dir = "out/mnist";
      break;
  }
  return c;
}

std::vector<std::string> available_metrics(const ExperimentConfig& cfg) {
  if (cfg.task == Task::sine_regression) return kRegressionMetrics;
  auto m = kClassificationMetrics;
  if (cfg.task == Task::mnist_subset) m.push_back("auroc");
  return m;
}

void ExperimentConfig::validate() const {
  try {
    network.validate();
    likelihood.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  switch (task) {
    case Task::sine_regression:
      if (network.input_dim != 1 || network.output_dim != 1) throw ConfigError("sine task needs a 1 -> 1 network");
      if (likelihood.kind != Likelihood::Kind::gaussian) throw ConfigError("sine task needs a gaussian likelihood");
      break;
    case Task::gaussian_mixture_2class:
      if (network.input_dim != 2) throw ConfigError("mixture task needs input_dim 2");
      if (likelihood.kind == Likelihood::Kind::categorical && network.output_dim != 2) {
        throw ConfigError("categorical mixture task needs output_dim 2");
      }
      if (likelihood.kind == Likelihood::Kind::bernoulli && network.output_dim != 1) {
        throw ConfigError("bernoulli mixture task needs output_dim 1");
      }
      if (likelihood.kind == Likelihood::Kind::gaussian) throw ConfigError("mixture task needs a classification likelihood");
      if (data.n_train % 2 || data.n_test % 2) throw ConfigError("mixture task needs even n_train and n_test");
      break;
    case Task::mnist_subset:
      if (network.input_dim != 784 || network.output_dim != 10) throw ConfigError("mnist task needs a 784 -> 10 network");
      if (likelihood.kind != Likelihood::Kind::categorical) throw ConfigError("mnist task needs a categorical likelihood");
      break;
  }
  if (data.n_train == 0 || data.n_test == 0) throw ConfigError("n_train and n_test must be positive");
  if (!(data.noise_sd >= 0.0)) throw ConfigError("noise_sd must be nonnegative");
  if (!(data.mixture_sd >= 0.0)) throw ConfigError("mixture_sd must be nonnegative");
  if (!(data.test_hi > data.test_lo)) throw ConfigError("test_hi must exceed test_lo");

  const std::size_t d = network.param_count();
  if (sampler.steps == 0 || sampler.samples == 0) throw ConfigError("sampler needs steps >= 1 and samples >= 1");
  if (!(sampler.alpha > 0.0) || !std::isfinite(sampler.alpha)) throw ConfigError("sampler alpha must be positive");
  if (!(sampler.step_scale > 0.0)) throw ConfigError("sampler step_scale must be positive");
  if (sampler.rank > d) throw ConfigError("sampler rank exceeds the parameter count " + std::to_string(d));
  if (sampler.rank == 0 && sampler.eigen_backend != EigenBackend::dense) {
    throw ConfigError("sampler rank 0 (all nonzero pairs) needs the dense eigen backend");
  }
  if (!(train.lr > 0.0)) throw ConfigError("train lr must be positive");

  const auto allowed = available_metrics(*this);
  std::set<std::string> seen;
  for (const auto& m : eval.metrics) {
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end()) {
      throw ConfigError("metric '" + m + "' is not available for task " + to_string(task));
    }
    if (!seen.insert(m).second) throw ConfigError("metric '" + m + "' listed twice");
  }
  for (double a : study.alphas) {
    if (!(a > 0.0)) throw ConfigError("study alphas must be positive");
  }
}

DiffusionConfig ExperimentConfig::diffusion(std::uint64_t replica_seed) const {
  DiffusionConfig d;
  d.steps = sampler.steps;
  d.samples = sampler.samples;
  d.rank = sampler.rank == 0 ? network.param_count() : sampler.rank;
  d.alpha = sampler.alpha;
  d.step_scale = sampler.step_scale;
  d.seed = sampler.seed + replica_seed;
  d.freeze_eigenpairs = sampler.freeze_eigenpairs;
  d.eigen.backend = sampler.eigen_backend;
  d.eigen.lanczos_iters = sampler.lanczos_iters;
  d.eigen.budget.matrix_dim = sampler.dense_dim_budget;
  d.eigen.budget.jacobian_entries = sampler.jacobian_entry_budget;
  return d;
}

TrainConfig ExperimentConfig::train_config(std::uint64_t replica_seed) const {
  TrainConfig t;
  t.optimizer = train.optimizer;
  t.lr = train.lr;
  t.epochs = train.epochs;
  t.seed = train.seed + replica_seed;
  t.batch_size = train.batch_size;
  t.prior_precision = sampler.alpha;
  return t;
}

ExperimentConfig config_from_json(const json& j) {
  Section root(j, "");
  if (!root.has("task")) throw ConfigError("missing required key 'task'");
  if (!root.has("seeds")) throw ConfigError("missing required key 'seeds'");
  Task task = Task::sine_regression;
  root.get_enum("task", task, parse_task);
  ExperimentConfig c = default_config(task);

  {
    Section s = root.child("network");
    s.get("input_dim", c.network.input_dim);
    s.get("output_dim", c.network.output_dim);
    s.get("hidden", c.network.hidden);
    s.get_enum("activation", c.network.activation, parse_activation);
    bool bias = c.network.bias_per_layer.empty() || c.network.bias_per_layer.front();
    s.get("bias", bias);
    c.network.bias_per_layer.assign(c.network.num_layers(), bias);
    s.finish();
  }
  {
    Section s = root.child("likelihood");
    s.get_enum("kind", c.likelihood.kind, parse_likelihood_kind);
    s.get("sigma2", c.likelihood.sigma2);
    s.finish();
  }
  {
    Section s = root.child("data");
    s.get("n_train", c.data.n_train);
    s.get("n_test", c.data.n_test);
    s.get("noise_sd", c.data.noise_sd);
    s.get("test_lo", c.data.test_lo);
    s.get("test_hi", c.data.test_hi);
    s.get("mean0", c.data.mean0);
    s.get("mean1", c.data.mean1);
    s.get("mixture_sd", c.data.mixture_sd);
    s.get("train_images", c.data.train_images);
    s.get("train_labels", c.data.train_labels);
    s.get("test_images", c.data.test_images);
    s.get("test_labels", c.data.test_labels);
    s.get("ood_rotation", c.data.ood_rotation);
    s.finish();
  }
  {
    Section s = root.child("sampler");
    s.get_enum("kind", c.sampler.kind, parse_sampler_kind);
    s.get("steps", c.sampler.steps);
    s.get("samples", c.sampler.samples);
    s.get("rank", c.sampler.rank);
    s.get("alpha", c.sampler.alpha);
    s.get("step_scale", c.sampler.step_scale);
    s.get("seed", c.sampler.seed);
    s.get("lanczos_iters", c.sampler.lanczos_iters);
    s.get_enum("eigen_backend", c.sampler.eigen_backend, parse_eigen_backend);
    s.get("freeze_eigenpairs", c.sampler.freeze_eigenpairs);
    s.get("dense_dim_budget", c.sampler.dense_dim_budget);
    s.get("jacobian_entry_budget", c.sampler.jacobian_entry_budget);
    s.finish();
  }
  {
    Section s = root.child("train");
    s.get_enum("optimizer", c.train.optimizer, parse_optimizer);
    s.get("lr", c.train.lr);
    s.get("epochs", c.train.epochs);
    s.get("seed", c.train.seed);
    s.get("batch_size", c.train.batch_size);
    s.get("checkpoint", c.train.checkpoint);
    s.finish();
  }
  {
    Section s = root.child("eval");
    s.get_enum("predictive", c.eval.predictive, parse_predictive);
    s.get("metrics", c.eval.metrics);
    s.finish();
  }
  {
    Section s = root.child("study");
    s.get("subset_sizes", c.study.subset_sizes);
    s.get("angles", c.study.angles);
    s.get("alphas", c.study.alphas);
    s.finish();
  }
  root.get("seeds", c.seeds);
  root.get("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  const bool bias = c.network.bias_per_layer.empty() || c.network.bias_per_layer.front();
  j["network"] = {{"input_dim", c.network.input_dim},
                  {"output_dim", c.network.output_dim},
                  {"hidden", c.network.hidden},
                  {"activation", to_string(c.network.activation)},
                  {"bias", bias}};
  j["likelihood"] = {{"kind", to_string(c.likelihood.kind)}, {"sigma2", c.likelihood.sigma2}};
  j["data"] = {{"n_train", c.data.n_train},
               {"n_test", c.data.n_test},
               {"noise_sd", c.data.noise_sd},
               {"test_lo", c.data.test_lo},
               {"test_hi", c.data.test_hi},
               {"mean0", c.data.mean0},
               {"mean1", c.data.mean1},
               {"mixture_sd", c.data.mixture_sd},
               {"train_images", c.data.train_images},
               {"train_labels", c.data.train_labels},
               {"test_images", c.data.test_images},
               {"test_labels", c.data.test_labels},
               {"ood_rotation", c.data.ood_rotation}};
  j["sampler"] = {{"kind", to_string(c.sampler.kind)},
                  {"steps", c.sampler.steps},
                  {"samples", c.sampler.samples},
                  {"rank", c.sampler.rank},
                  {"alpha", c.sampler.alpha},
                  {"step_scale", c.sampler.step_scale},
                  {"seed", c.sampler.seed},
                  {"lanczos_iters", c.sampler.lanczos_iters},
                  {"eigen_backend", to_string(c.sampler.eigen_backend)},
                  {"freeze_eigenpairs", c.sampler.freeze_eigenpairs},
                  {"dense_dim_budget", c.sampler.dense_dim_budget},
                  {"jacobian_entry_budget", c.sampler.jacobian_entry_budget}};
  j["train"] = {{"optimizer", to_string(c.train.optimizer)},
                {"lr", c.train.lr},
                {"epochs", c.train.epochs},
                {"seed", c.train.seed},
                {"batch_size", c.train.batch_size},
                {"checkpoint", c.train.checkpoint}};
  j["eval"] = {{"predictive", to_string(c.eval.predictive)}, {"metrics", c.eval.metrics}};
  j["study"] = {{"subset_sizes", c.study.subset_sizes}, {"angles", c.study.angles}, {"alphas", c.study.alphas}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("output_dir");
  std::ostringstream canon;
  dump_json(canon, j, 0, 0);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canon.str()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary m;
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

json results_to_json(const ResultsRecord& r) {
  json j;
  j["kind"] = r.kind;
  j["config_hash"] = r.config_hash;
  j["seeds"] = r.seeds;
  json metrics = json::object();
  for (const auto& name : r.metric_names) {
    const auto& m = r.metrics.at(name);
    metrics[name] = {{"mean", m.mean}, {"std", m.std}};
  }
  j["metrics"] = metrics;
  json rows = json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    json row = json::object();
    row["seed"] = r.seeds[i];
    for (const auto& name : r.metric_names) row[name] = r.per_seed[i].at(name);
    rows.push_back(row);
  }
  j["per_seed"] = rows;
  j["extra"] = r.extra;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  return j;
}

std::string dump_results(const ResultsRecord& r) {
  std::ostringstream s;
  dump_json(s, results_to_json(r), 2, 0);
  return s.str();
}

Replica prepare_replica(const ExperimentConfig& cfg, std::uint64_t seed) {
  Replica rep;
  rep.seed = seed;
  switch (cfg.task) {
    case Task::sine_regression:
      rep.train = generate_sine(cfg.data.n_train, cfg.data.noise_sd, seed);
      rep.test = sine_grid(cfg.data.n_test, cfg.data.test_lo, cfg.data.test_hi);
      break;
    case Task::gaussian_mixture_2class:
      rep.train = generate_mixture(cfg.data.n_train, cfg.data.mean0, cfg.data.mean1, cfg.data.mixture_sd, seed);
      rep.test = generate_mixture(cfg.data.n_test, cfg.data.mean0, cfg.data.mean1, cfg.data.mixture_sd,
                                  seed ^ 0x9e3779b97f4a7c15ull);
      break;
    case Task::mnist_subset:
      rep.train = load_idx(cfg.data.train_images, cfg.data.train_labels, cfg.data.n_train);
      rep.test = load_idx(cfg.data.test_images, cfg.data.test_labels, cfg.data.n_test);
      break;
  }
  rep.train.validate(cfg.network.input_dim, cfg.network.output_dim);
  rep.test.validate(cfg.network.input_dim, cfg.network.output_dim);

  if (!cfg.train.checkpoint.empty()) {
    rep.w_map = read_checkpoint(seed_path(cfg.train.checkpoint, seed));
    if (static_cast<std::size_t>(rep.w_map.size()) != cfg.network.param_count()) {
      throw ConfigError("checkpoint has " + std::to_string(rep.w_map.size()) + " weights, network needs " +
                        std::to_string(cfg.network.param_count()));
    }
  } else {
    auto result = train_map(cfg.network, rep.train, cfg.likelihood, cfg.train_config(seed));
    rep.w_map = std::move(result.weights);
    rep.loss_trace = std::move(result.loss_trace);
  }
  return rep;
}

LowRankEigen map_eigenpairs(const ExperimentConfig& cfg, const Replica& rep) {
  const DiffusionConfig d = cfg.diffusion(rep.seed);
  const CurvatureOperator op(cfg.network, rep.w_map, rep.train, cfg.likelihood, 0.0);
  return top_eigenpairs(op, d.rank, d.eigen, d.seed);
}

PosteriorSamples draw_samples(const ExperimentConfig& cfg, const Replica& rep) {
  const DiffusionConfig d = cfg.diffusion(rep.seed);
  switch (cfg.sampler.kind) {
    case SamplerKind::sampled_laplace: {
      PosteriorSamples s = sample_laplace(map_eigenpairs(cfg, rep), d.alpha, rep.w_map, d.samples, d.seed);
      s.config = d;
      s.config.steps = 1;
      return s;
    }
    case SamplerKind::laplace_diffusion:
      return laplace_diffusion(cfg.network, rep.train, cfg.likelihood, rep.w_map, d);
    case SamplerKind::kernel_diffusion:
      return kernel_diffusion(cfg.network, rep.train, cfg.likelihood, rep.w_map, d);
  }
  throw ConfigError("unknown sampler");
}

std::map<std::string, double> evaluate_replica(const ExperimentConfig& cfg, const Replica& rep,
                                               const PosteriorSamples& samples) {
  std::map<std::string, double> out;
  const auto wants = [&](const std::string& m) {
    return std::find(cfg.eval.metrics.begin(), cfg.eval.metrics.end(), m) != cfg.eval.metrics.end();
  };
  const Network net(cfg.network);

  if (cfg.task == Task::sine_regression) {
    const auto train_out = predictive_outputs(cfg, rep, samples, rep.train.inputs);
    const auto test_out = predictive_outputs(cfg, rep, samples, rep.test.inputs);
    const Predictive train_p = summarize_outputs(train_out, cfg.likelihood);
    const Predictive test_p = summarize_outputs(test_out, cfg.likelihood);
    if (wants("train_rmse")) out["train_rmse"] = sample_rmse(train_out, rep.train.targets);
    if (wants("test_rmse")) out["test_rmse"] = sample_rmse(test_out, rep.test.targets);
    if (wants("map_train_rmse")) out["map_train_rmse"] = rmse(net.forward_batch(rep.w_map, rep.train.inputs), rep.train.targets);
    if (wants("map_test_rmse")) out["map_test_rmse"] = rmse(net.forward_batch(rep.w_map, rep.test.inputs), rep.test.targets);
    if (wants("train_var")) out["train_var"] = train_p.variance.mean();
    if (wants("train_var_max")) out["train_var_max"] = train_p.variance.maxCoeff();
    if (wants("test_var")) out["test_var"] = test_p.variance.mean();
    if (wants("test_nll")) {
      const Matrix v = test_p.variance.array() + cfg.likelihood.sigma2;
      const Matrix r = test_p.mean - rep.test.targets;
      out["test_nll"] =
          (0.5 * (2.0 * std::numbers::pi * v.array()).log() + r.array().square() / (2.0 * v.array())).mean();
    }
    return out;
  }

  const EvalBatch test_batch = batch_for(cfg, rep, samples, rep.test);
  const ClassificationMetrics m = classification_metrics(test_batch);
  if (wants("accuracy")) out["accuracy"] = m.accuracy;
  if (wants("confidence")) out["confidence"] = m.confidence;
  if (wants("nll")) out["nll"] = m.nll;
  if (wants("brier")) out["brier"] = m.brier;
  if (wants("ece")) out["ece"] = m.ece;
  if (wants("mce")) out["mce"] = m.mce;
  if (wants("map_accuracy")) {
    out["map_accuracy"] = classification_metrics(EvalBatch{map_probs(cfg, rep, rep.test.inputs), rep.test.labels}).accuracy;
  }
  if (wants("train_accuracy")) {
    out["train_accuracy"] = classification_metrics(batch_for(cfg, rep, samples, rep.train)).accuracy;
  }
  if (wants("auroc")) {
    const Dataset ood = rotate_inputs(rep.test, cfg.data.ood_rotation);
    const EvalBatch ood_batch = batch_for(cfg, rep, samples, ood);
    out["auroc"] = auroc(predictive_entropy(test_batch.probs), predictive_entropy(ood_batch.probs));
  }
  return out;
}

ResultsRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  ResultsRecord r = new_record("evaluate", cfg);
  const std::string hash = r.config_hash;
  if (opts.write_outputs) std::filesystem::create_directories(cfg.output_dir);
  r.per_seed.resize(cfg.seeds.size());
  std::vector<json> extras(cfg.seeds.size());

  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Replica rep = stage("train", hash, [&] { return prepare_replica(cfg, seed); });
    const LowRankEigen eig = stage("curvature", hash, [&] { return map_eigenpairs(cfg, rep); });
    const PosteriorSamples samples = stage("sample", hash, [&] { return draw_samples(cfg, rep); });
    r.per_seed[i] = stage("evaluate", hash, [&] { return evaluate_replica(cfg, rep, samples); });
    extras[i] = {{"seed", seed},
                 {"rank", eig.rank()},
                 {"lambda_max", eig.rank() > 0 ? eig.values[0] : 0.0},
                 {"final_loss", rep.loss_trace.empty() ? 0.0 : rep.loss_trace.back()}};
    if (opts.write_outputs) {
      stage("write", hash, [&] {
        write_checkpoint(seed_file(cfg, "checkpoint", seed, ".bin"), rep.w_map);
        write_samples(seed_file(cfg, "samples", seed, ".bin"), samples);
        write_spectrum_csv(seed_file(cfg, "spectrum", seed, ".csv"), eig);
      });
    }
  });
  r.extra["replicas"] = extras;
  finish_record(r, cfg.eval.metrics);
  write_record(cfg, r, opts);
  return r;
}

ResultsRecord run_train(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  ResultsRecord r = new_record("train", cfg);
  const std::string hash = r.config_hash;
  if (opts.write_outputs) std::filesystem::create_directories(cfg.output_dir);
  r.per_seed.resize(cfg.seeds.size());
  const std::string fit = cfg.task == Task::sine_regression ? "map_train_rmse" : "map_train_accuracy";
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const Replica rep = stage("train", hash, [&] { return prepare_replica(cfg, cfg.seeds[i]); });
    const Network net(cfg.network);
    const Matrix preds = net.forward_batch(rep.w_map, rep.train.inputs);
    auto& row = r.per_seed[i];
    row["final_loss"] = map_objective(net, rep.w_map, rep.train, cfg.likelihood, cfg.sampler.alpha);
    if (cfg.task == Task::sine_regression) {
      row[fit] = rmse(preds, rep.train.targets);
    } else {
      row[fit] = classification_metrics(EvalBatch{class_probabilities(cfg.likelihood, preds), rep.train.labels}).accuracy;
    }
    if (opts.write_outputs) {
      stage("write", hash, [&] { write_checkpoint(seed_file(cfg, "checkpoint", rep.seed, ".bin"), rep.w_map); });
    }
  });
  finish_record(r, {"final_loss", fit});
  write_record(cfg, r, opts);
  return r;
}

ResultsRecord run_sample(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  ResultsRecord r = new_record("sample", cfg);
  const std::string hash = r.config_hash;
  if (opts.write_outputs) std::filesystem::create_directories(cfg.output_dir);
  r.per_seed.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const Replica rep = stage("train", hash, [&] { return prepare_replica(cfg, cfg.seeds[i]); });
    const LowRankEigen eig = stage("curvature", hash, [&] { return map_eigenpairs(cfg, rep); });
    const PosteriorSamples samples = stage("sample", hash, [&] { return draw_samples(cfg, rep); });
    double spread = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) spread += (samples.draw(s) - rep.w_map).norm();
    r.per_seed[i] = {{"rank", static_cast<double>(eig.rank())},
                     {"mean_displacement", spread / static_cast<double>(samples.size())}};
    if (opts.write_outputs) {
      stage("write", hash, [&] {
        write_checkpoint(seed_file(cfg, "checkpoint", rep.seed, ".bin"), rep.w_map);
        write_samples(seed_file(cfg, "samples", rep.seed, ".bin"), samples);
        write_spectrum_csv(seed_file(cfg, "spectrum", rep.seed, ".csv"), eig);
      });
    }
  });
  finish_record(r, {"rank", "mean_displacement"});
  write_record(cfg, r, opts);
  return r;
}

ResultsRecord run_rank_study(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (cfg.task == Task::sine_regression) throw ConfigError("rank study needs a classification task");
  if (cfg.study.subset_sizes.size() < 2) throw ConfigError("rank study needs at least two subset sizes");
  ResultsRecord r = new_record("rank-study", cfg);
  const std::string hash = r.config_hash;
  const std::uint64_t seed = cfg.seeds.front();
  r.seeds = {seed};
  for (auto n : cfg.study.subset_sizes) {
    if (n == 0 || n > cfg.data.n_train) {
      throw ConfigError("subset size " + std::to_string(n) + " outside [1, n_train]");
    }
  }

  const Replica rep = stage("train", hash, [&] { return prepare_replica(cfg, seed); });
  const DiffusionConfig d = cfg.diffusion(seed);
  const auto shared = std::make_shared<const Dataset>(rep.train);
  std::vector<RankPoint> points(cfg.study.subset_sizes.size());

  parallel_for(points.size(), opts.jobs, [&](std::size_t i) {
    const std::size_t n = cfg.study.subset_sizes[i];
    const auto subset = std::make_shared<const Dataset>(rep.train.head(n));
    const CurvatureOperator op(cfg.network, rep.w_map, subset, cfg.likelihood, 0.0);
    const LowRankEigen eig = stage("curvature", hash, [&] { return exact_eigenpairs(op, d.eigen.rank_tol, d.eigen.budget); });
    const PosteriorSamples s = stage("sample", hash, [&] { return sample_laplace(eig, d.alpha, rep.w_map, d.samples, d.seed); });
    const EvalBatch b{summarize_outputs(nn_outputs(cfg.network, s, rep.train.inputs), cfg.likelihood).mean,
                      rep.train.labels};
    points[i].subset_size = n;
    points[i].rank = static_cast<std::size_t>(eig.rank());
    points[i].kernel_dim = cfg.network.param_count() - points[i].rank;
    points[i].train_accuracy = classification_metrics(b).accuracy;
  });

  std::vector<double> ranks, accs;
  json rows = json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << "subset_size,rank,kernel_dim,train_accuracy\n";
  for (const auto& p : points) {
    ranks.push_back(static_cast<double>(p.rank));
    accs.push_back(p.train_accuracy);
    rows.push_back({{"subset_size", p.subset_size},
                    {"rank", p.rank},
                    {"kernel_dim", p.kernel_dim},
                    {"train_accuracy", p.train_accuracy}});
    csv << p.subset_size << "," << p.rank << "," << p.kernel_dim << "," << p.train_accuracy << "\n";
  }
  const double map_acc =
      classification_metrics(EvalBatch{map_probs(cfg, rep, rep.train.inputs), rep.train.labels}).accuracy;
  r.per_seed = {{{"spearman", spearman(ranks, accs)}, {"map_train_accuracy", map_acc}}};
  r.extra["points"] = rows;
  finish_record(r, {"spearman", "map_train_accuracy"});
  if (opts.write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text(std::filesystem::path(cfg.output_dir) / "rank_study.csv", csv.str());
  }
  write_record(cfg, r, opts);
  return r;
}

std::vector<RankPoint> rank_points(const ResultsRecord& r) {
  std::vector<RankPoint> out;
  if (!r.extra.contains("points")) return out;
  for (const auto& p : r.extra.at("points")) {
    out.push_back({p.at("subset_size").get<std::size_t>(), p.at("rank").get<std::size_t>(),
                   p.at("kernel_dim").get<std::size_t>(), p.at("train_accuracy").get<double>()});
  }
  return out;
}

ResultsRecord run_shift_study(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (cfg.task != Task::mnist_subset) throw ConfigError("shift study needs the image task");
  if (cfg.study.angles.empty()) throw ConfigError("shift study needs at least one angle");
  ResultsRecord r = new_record("shift-study", cfg);
  const std::string hash = r.config_hash;
  r.per_seed.resize(cfg.seeds.size());
  std::vector<std::string> names;
  for (double a : cfg.study.angles) {
    for (const char* m : {"accuracy", "nll", "ece", "map_accuracy"}) names.push_back(std::string(m) + "@" + angle_tag(a));
  }

  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t i) {
    const Replica rep = stage("train", hash, [&] { return prepare_replica(cfg, cfg.seeds[i]); });
    const PosteriorSamples samples = stage("sample", hash, [&] { return draw_samples(cfg, rep); });
    stage("evaluate", hash, [&] {
      for (double a : cfg.study.angles) {
        const Dataset shifted = rotate_inputs(rep.test, a);
        const ClassificationMetrics m = classification_metrics(batch_for(cfg, rep, samples, shifted));
        const std::string tag = "@" + angle_tag(a);
        r.per_seed[i]["accuracy" + tag] = m.accuracy;
        r.per_seed[i]["nll" + tag] = m.nll;
        r.per_seed[i]["ece" + tag] = m.ece;
        r.per_seed[i]["map_accuracy" + tag] =
            classification_metrics(EvalBatch{map_probs(cfg, rep, shifted.inputs), shifted.labels}).accuracy;
      }
    });
  });
  finish_record(r, names);

  if (opts.write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ostringstream csv;
    csv << std::setprecision(17) << "angle,accuracy,nll,ece,map_accuracy\n";
    for (double a : cfg.study.angles) {
      const std::string tag = "@" + angle_tag(a);
      csv << a << "," << r.metrics["accuracy" + tag].mean << "," << r.metrics["nll" + tag].mean << ","
          << r.metrics["ece" + tag].mean << "," << r.metrics["map_accuracy" + tag].mean << "\n";
    }
    write_text(std::filesystem::path(cfg.output_dir) / "shift.csv", csv.str());
  }
  write_record(cfg, r, opts);
  return r;
}

ResultsRecord run_alpha_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (cfg.study.alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
  if (cfg.eval.metrics.empty()) throw ConfigError("alpha sweep needs at least one metric");
  ResultsRecord r = new_record("sweep-alpha", cfg);
  r.per_seed.assign(cfg.seeds.size(), {});
  std::vector<std::string> names;
  json rows = json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << "alpha";
  for (const auto& m : cfg.eval.metrics) csv << "," << m << "_mean," << m << "_std";
  csv << "\n";

  for (double a : cfg.study.alphas) {
    ExperimentConfig sub = cfg;
    sub.sampler.alpha = a;
    std::ostringstream dir;
    dir << "alpha_" << a;
    sub.output_dir = (std::filesystem::path(cfg.output_dir) / dir.str()).string();
    const ResultsRecord inner = run_experiment(sub, opts);
    csv << a;
    json row = {{"alpha", a}, {"config_hash", inner.config_hash}};
    for (const auto& m : cfg.eval.metrics) {
      const std::string key = m + "@alpha=" + format_double(a);
      names.push_back(key);
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i) r.per_seed[i][key] = inner.per_seed[i].at(m);
      csv << "," << inner.metrics.at(m).mean << "," << inner.metrics.at(m).std;
      row[m] = inner.metrics.at(m).mean;
    }
    csv << "\n";
    rows.push_back(row);
  }
  r.extra["rows"] = rows;
  finish_record(r, names);
  if (opts.write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text(std::filesystem::path(cfg.output_dir) / "sweep.csv", csv.str());
  }
  write_record(cfg, r, opts);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman needs equal-length inputs");
  if (a.size() < 2) throw Error("spearman needs at least two points");
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  // a constant input has no ordering to agree with
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace glap
