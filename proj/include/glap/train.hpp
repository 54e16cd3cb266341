#pragma once

#include "glap/likelihood.hpp"
#include "glap/net.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace glap {

enum class Optimizer { adam, sgd };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 means full batch
  double prior_precision = 1.0;
};

struct TrainResult {
  ParamVector weights;
  std::vector<double> loss_trace;  // full objective after every epoch
};

// MAP objective: sum_n -log p(y_n | f_w(x_n)) + (alpha / 2) ||w||^2.
double map_objective(const Network& net, const ParamVector& w, const Dataset& data, const Likelihood& lik,
                     double prior_precision);

// First-order minimisation of the MAP objective. Deterministic per seed;
// throws NumericalError (with the loss trace in the message) on divergence.
TrainResult train_map(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const TrainConfig& cfg,
                      const std::optional<ParamVector>& init = std::nullopt);

}  // namespace glap
