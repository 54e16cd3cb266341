#pragma once

#include "glap/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>

namespace glap {

using LinearOperator = std::function<Vector(const Vector&)>;

// Leading eigenpairs of a symmetric PSD operator.
struct LowRankEigen {
  Matrix basis;      // D x k, orthonormal columns
  Vector values;     // k, descending
  Vector residuals;  // k, ||A u_i - lambda_i u_i||
  bool truncated = false;  // Krylov space exhausted before `iters` steps

  Eigen::Index rank() const { return values.size(); }
  Eigen::Index dim() const { return basis.rows(); }

  // Keeps the leading `k` pairs.
  LowRankEigen leading(Eigen::Index k) const;
  // Drops pairs with value <= rel_tol * max value (numerical kernel).
  LowRankEigen nonzero(double rel_tol) const;
};

struct LanczosOptions {
  std::size_t k = 10;
  std::size_t iters = 20;
  std::uint64_t seed = 0;
  double tolerance = 1e-8;  // residual bound, relative to the largest Ritz value
};

// Lanczos with full reorthogonalization (modified Gram-Schmidt, two passes).
// Returns the converged prefix of the top-k Ritz pairs.
LowRankEigen lanczos_topk(const LinearOperator& op, std::size_t dim, const LanczosOptions& options);

// (A + alpha I)^{-1/2} v for A = U diag(lambda) U^T:
//   U ((Lambda + alpha)^{-1/2} - alpha^{-1/2}) U^T v + alpha^{-1/2} v
Vector inv_sqrt_apply(const LowRankEigen& eig, double alpha, const Vector& v);

// CSV with columns index,lambda,residual.
void write_spectrum_csv(const std::filesystem::path& path, const LowRankEigen& eig);

}  // namespace glap
