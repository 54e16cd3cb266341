#pragma once

#include "glap/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace glap {

// Seedable generator. Independent streams are derived from a base seed and
// any number of stream indices (sample index, step index, ...), so parallel
// or reordered work reproduces the same draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, {}) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams);

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  Vector normal_vector(Eigen::Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace glap
