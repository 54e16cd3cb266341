#include "fixtures.hpp"
#include "glap/data.hpp"
#include "glap/metrics.hpp"
#include "glap/train.hpp"

#include <gtest/gtest.h>

using namespace glap;
using namespace glap::testing;

namespace {

TrainConfig adam(double lr, std::size_t epochs, double alpha = 1.0) {
  TrainConfig c;
  c.lr = lr;
  c.epochs = epochs;
  c.prior_precision = alpha;
  return c;
}

}  // namespace

TEST(Train, FitsSine) {
  const auto spec = NetworkSpec::mlp(1, {10, 10}, 1, Activation::relu);
  const Dataset d = generate_sine(100, 0.1, 0);
  const auto lik = Likelihood::gaussian(0.01);
  const TrainResult r = train_map(spec, d, lik, adam(1e-2, 3000));
  Network net(spec);
  EXPECT_LT(rmse(net.forward_batch(r.weights, d.inputs), d.targets), 0.1);
  EXPECT_EQ(r.loss_trace.size(), 3000u);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  EXPECT_NEAR(r.loss_trace.back(), map_objective(net, r.weights, d, lik, 1.0), 1e-9 * std::abs(r.loss_trace.back()));
}

TEST(Train, StrongPriorShrinksWeights) {
  const auto spec = NetworkSpec::mlp(1, {8}, 1, Activation::tanh);
  const Dataset d = generate_sine(40, 0.1, 1);
  const double weak = train_map(spec, d, Likelihood::gaussian(), adam(1e-2, 500, 1e-3)).weights.norm();
  const double strong = train_map(spec, d, Likelihood::gaussian(), adam(1e-2, 500, 1e3)).weights.norm();
  EXPECT_LT(strong, 0.1 * weak);
}

TEST(Train, ZeroEpochsReturnsInit) {
  const auto spec = NetworkSpec::mlp(2, {3}, 2, Activation::relu);
  const ParamVector init = random_vector(static_cast<Eigen::Index>(spec.param_count()), 1);
  const TrainResult r = train_map(spec, random_classification(10, 2, 2, 1), Likelihood::categorical(), adam(1e-2, 0), init);
  EXPECT_EQ(r.weights, init);
  EXPECT_TRUE(r.loss_trace.empty());
}

TEST(Train, DeterministicPerSeed) {
  const auto spec = NetworkSpec::mlp(2, {5}, 2, Activation::relu);
  const Dataset d = random_classification(30, 2, 2, 2);
  TrainConfig c = adam(1e-2, 20);
  c.batch_size = 7;
  c.seed = 5;
  const TrainResult a = train_map(spec, d, Likelihood::categorical(), c);
  const TrainResult b = train_map(spec, d, Likelihood::categorical(), c);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  c.seed = 6;
  EXPECT_NE(train_map(spec, d, Likelihood::categorical(), c).weights, a.weights);
}

TEST(Train, SgdAlsoDescends) {
  const auto spec = NetworkSpec::mlp(1, {6}, 1, Activation::tanh);
  const Dataset d = generate_sine(30, 0.1, 2);
  TrainConfig c = adam(1e-3, 200);
  c.optimizer = Optimizer::sgd;
  const TrainResult r = train_map(spec, d, Likelihood::gaussian(0.1), c);
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Train, DivergenceThrows) {
  const auto spec = NetworkSpec::mlp(1, {10}, 1, Activation::relu);
  TrainConfig c = adam(10.0, 200);
  c.optimizer = Optimizer::sgd;
  EXPECT_THROW(train_map(spec, generate_sine(50, 0.1, 0), Likelihood::gaussian(1e-4), c), NumericalError);
}

TEST(Train, RejectsBadConfig) {
  const auto spec = scaling_net_spec();
  const Dataset d = regression_data(Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  EXPECT_THROW(train_map(spec, d, Likelihood::gaussian(), adam(0.0, 1)), ConfigError);
  EXPECT_THROW(train_map(spec, d, Likelihood::gaussian(), adam(1e-2, 1, -1.0)), ConfigError);
  EXPECT_THROW(train_map(spec, d, Likelihood::gaussian(), adam(1e-2, 1), ParamVector::Zero(3)), DimensionError);
  EXPECT_THROW(parse_optimizer("lbfgs"), ConfigError);
}
