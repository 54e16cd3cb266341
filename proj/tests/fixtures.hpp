#pragma once

#include "glap/likelihood.hpp"
#include "glap/net.hpp"
#include "glap/rng.hpp"

#include <vector>

namespace glap::testing {

// f(x) = w1 * relu(w2 * x). Flattened as [w2, w1]: the inner layer comes first.
inline NetworkSpec scaling_net_spec() { return NetworkSpec::mlp(1, {1}, 1, Activation::relu, false); }
inline ParamVector scaling_net_weights(double w1, double w2) { return (ParamVector(2) << w2, w1).finished(); }

// f(x) = x . w, no bias.
inline NetworkSpec linear_spec(std::size_t in, std::size_t out = 1) {
  return NetworkSpec::mlp(in, {}, out, Activation::identity, false);
}

inline Dataset regression_data(const Matrix& x, const Matrix& y) {
  Dataset d;
  d.inputs = x;
  d.targets = y;
  return d;
}

inline Dataset random_regression(std::size_t n, std::size_t in, std::size_t out, std::uint64_t seed) {
  Rng rng(seed, {77});
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
  d.targets.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < d.targets.size(); ++i) d.targets.data()[i] = rng.normal();
  return d;
}

inline Dataset random_classification(std::size_t n, std::size_t in, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed, {78});
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<int>(rng.engine()() % classes));
  }
  return d;
}

inline ParamVector random_vector(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed, {79});
  return rng.normal_vector(n);
}

// Symmetric PSD matrix with a prescribed spectrum and a random eigenbasis.
inline Matrix psd_with_spectrum(const Vector& spectrum, std::uint64_t seed) {
  Rng rng(seed, {80});
  Matrix g(spectrum.size(), spectrum.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  return q * spectrum.asDiagonal() * q.transpose();
}

inline double max_rel_error(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace glap::testing
