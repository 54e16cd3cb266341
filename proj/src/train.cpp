#include "glap/train.hpp"

#include "glap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace glap {

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd") return Optimizer::sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

double map_objective(const Network& net, const ParamVector& w, const Dataset& data, const Likelihood& lik,
                     double prior_precision) {
  const Matrix preds = net.forward_batch(w, data.inputs);
  return negative_log_lik(lik, preds, data) + 0.5 * prior_precision * w.squaredNorm();
}

TrainResult train_map(const NetworkSpec& spec, const Dataset& data, const Likelihood& lik, const TrainConfig& cfg,
                      const std::optional<ParamVector>& init) {
  const Network net(spec);
  data.validate(spec.input_dim, spec.output_dim);
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.prior_precision < 0.0) throw ConfigError("prior precision must be nonnegative");

  TrainResult result;
  result.weights = init ? *init : net.init_params(cfg.seed);
  if (static_cast<std::size_t>(result.weights.size()) != net.param_count()) {
    throw DimensionError("initial weights do not match network");
  }
  const std::size_t n = data.size();
  const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  const double scale = static_cast<double>(n) / static_cast<double>(batch);

  ParamVector& w = result.weights;
  ParamVector m = ParamVector::Zero(w.size());
  ParamVector v = ParamVector::Zero(w.size());
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  std::size_t t = 0;

  Rng rng(cfg.seed, {0x7a1});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ForwardTrace trace;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const Dataset mb = batch == n ? data
                                    : data.subset(std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                                           order.begin() + static_cast<long>(stop)));
      const Matrix preds = net.forward_batch(w, mb.inputs, &trace);
      const double mb_scale = batch == n ? 1.0 : scale * static_cast<double>(batch) / static_cast<double>(stop - start);
      const ParamVector grad =
          mb_scale * net.vjp_batch(w, trace, loss_gradients(lik, preds, mb)) + cfg.prior_precision * w;
      ++t;
      if (cfg.optimizer == Optimizer::adam) {
        m = beta1 * m + (1 - beta1) * grad;
        v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        w.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
      } else {
        w -= cfg.lr * grad;
      }
    }
    const double loss = map_objective(net, w, data, lik, cfg.prior_precision);
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss) || !w.allFinite()) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << "; loss trace tail:";
      const std::size_t from = result.loss_trace.size() > 5 ? result.loss_trace.size() - 5 : 0;
      for (std::size_t i = from; i < result.loss_trace.size(); ++i) msg << ' ' << result.loss_trace[i];
      throw NumericalError(msg.str());
    }
  }
  return result;
}

}  // namespace glap
