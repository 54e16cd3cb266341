// Command-line front end for the experiment harness.
//
//   glap <train|sample|evaluate|rank-study|shift-study|sweep-alpha>
//        [--config file.json] [--jobs N] [--<section>.<key> value ...]
//
// Every config key has a dotted flag; values are read as JSON when they
// parse (numbers, booleans, arrays) and as plain strings otherwise.

#include "glap/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

void leaf_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& item : j.items()) {
    const std::string name = prefix.empty() ? item.key() : prefix + "." + item.key();
    if (item.value().is_object()) {
      leaf_keys(item.value(), name, out);
    } else {
      out.push_back(name);
    }
  }
}

json::json_pointer pointer_for(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (auto& c : p) {
    if (c == '.') c = '/';
  }
  return json::json_pointer(p);
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

struct Invocation {
  std::string config_path;
  std::size_t jobs = 1;
  std::map<std::string, std::string> overrides;
};

glap::ExperimentConfig build_config(const Invocation& inv) {
  json base;
  if (!inv.config_path.empty()) {
    std::ifstream in(inv.config_path);
    if (!in) throw glap::ConfigError("cannot open config " + inv.config_path);
    try {
      base = json::parse(in);
    } catch (const json::exception& e) {
      throw glap::ConfigError("config " + inv.config_path + " is not valid JSON: " + e.what());
    }
  } else {
    glap::Task task = glap::Task::sine_regression;
    if (auto it = inv.overrides.find("task"); it != inv.overrides.end()) task = glap::parse_task(it->second);
    base = glap::config_to_json(glap::default_config(task));
  }
  for (const auto& [key, value] : inv.overrides) {
    base[pointer_for(key)] = parse_value(value);
  }
  return glap::config_from_json(base);
}

void print_record(const glap::ResultsRecord& r, const glap::ExperimentConfig& cfg) {
  std::cout << r.kind << "  config " << r.config_hash << "  seeds " << r.seeds.size() << "\n";
  for (const auto& name : r.metric_names) {
    const auto& m = r.metrics.at(name);
    std::cout << "  " << name << " = " << m.mean << " +- " << m.std << "\n";
  }
  std::cout << "outputs in " << cfg.output_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvature-aware posterior sampling for small dense networks"};
  app.require_subcommand(1);

  std::vector<std::string> keys;
  leaf_keys(glap::config_to_json(glap::default_config(glap::Task::sine_regression)), "", keys);

  using Runner = std::function<glap::ResultsRecord(const glap::ExperimentConfig&, const glap::RunOptions&)>;
  const std::vector<std::tuple<std::string, std::string, Runner>> commands = {
      {"train", "Train MAP weights and write checkpoints", glap::run_train},
      {"sample", "Train (or load) the MAP and write posterior samples", glap::run_sample},
      {"evaluate", "Full pipeline: MAP, curvature, samples, predictive metrics", glap::run_experiment},
      {"rank-study", "GGN rank against sampled-Laplace train accuracy over subset sizes", glap::run_rank_study},
      {"shift-study", "Metrics on rotated test images", glap::run_shift_study},
      {"sweep-alpha", "Repeat evaluate over the prior precision grid", glap::run_alpha_sweep},
  };

  std::vector<Invocation> invocations(commands.size());
  std::vector<std::map<std::string, std::string>> raw(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    auto* sub = app.add_subcommand(std::get<0>(commands[c]), std::get<1>(commands[c]));
    sub->add_option("--config", invocations[c].config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--jobs", invocations[c].jobs, "Seed replicas run concurrently")->check(CLI::PositiveNumber);
    for (const auto& key : keys) sub->add_option("--" + key, raw[c][key], "config key " + key);
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (std::size_t c = 0; c < commands.size(); ++c) {
      if (!subs[c]->parsed()) continue;
      Invocation inv = invocations[c];
      for (const auto& key : keys) {
        if (subs[c]->count("--" + key) > 0) inv.overrides[key] = raw[c][key];
      }
      const glap::ExperimentConfig cfg = build_config(inv);
      glap::RunOptions opts;
      opts.jobs = inv.jobs;
      print_record(std::get<2>(commands[c])(cfg, opts), cfg);
    }
  } catch (const glap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const glap::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
