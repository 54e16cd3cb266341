#include "glap/rng.hpp"

#include <vector>

namespace glap {

Rng::Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (streams.size() + 1));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto s : streams) push(s);
  std::seed_seq seq(words.begin(), words.end());
  engine_.seed(seq);
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal_(engine_);
  return v;
}

}  // namespace glap
