#include "glap/lanczos.hpp"

#include "glap/binary_io.hpp"
#include "glap/rng.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace glap {

LowRankEigen LowRankEigen::leading(Eigen::Index k) const {
  k = std::min(k, rank());
  LowRankEigen out;
  out.basis = basis.leftCols(k);
  out.values = values.head(k);
  out.residuals = residuals.head(k);
  out.truncated = truncated;
  return out;
}

LowRankEigen LowRankEigen::nonzero(double rel_tol) const {
  if (rank() == 0) return *this;
  const double cutoff = rel_tol * std::max(values.maxCoeff(), 0.0);
  Eigen::Index k = 0;
  while (k < rank() && values[k] > cutoff) ++k;
  return leading(k);
}

LowRankEigen lanczos_topk(const LinearOperator& op, std::size_t dim, const LanczosOptions& options) {
  if (options.k > options.iters || options.iters > dim) {
    throw DimensionError("lanczos needs k <= iters <= dim (k=" + std::to_string(options.k) +
                         ", iters=" + std::to_string(options.iters) + ", dim=" + std::to_string(dim) + ")");
  }
  const auto d = static_cast<Eigen::Index>(dim);
  const auto m = static_cast<Eigen::Index>(options.iters);

  LowRankEigen result;
  result.basis.resize(d, 0);
  if (m == 0) return result;

  Matrix q(d, m);
  Vector alpha(m);
  Vector beta(m);

  Rng rng(options.seed, {0x1a2c});
  Vector v = rng.normal_vector(d);
  v.normalize();

  double scale = 0.0;  // running estimate of ||A|| for the breakdown test
  Eigen::Index steps = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    q.col(j) = v;
    Vector w = op(v);
    if (w.size() != d) throw DimensionError("operator returned a vector of the wrong length");
    alpha[j] = v.dot(w);
    w -= alpha[j] * v;
    if (j > 0) w -= beta[j - 1] * q.col(j - 1);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i <= j; ++i) w -= q.col(i).dot(w) * q.col(i);
    }
    beta[j] = w.norm();
    scale = std::max({scale, std::abs(alpha[j]), beta[j]});
    steps = j + 1;
    if (beta[j] < 1e-14 * std::max(1.0, scale)) {
      result.truncated = j + 1 < m;
      beta[j] = 0.0;
      break;
    }
    v = w / beta[j];
  }

  Eigen::SelfAdjointEigenSolver<Matrix> tri;
  tri.computeFromTridiagonal(alpha.head(steps), beta.head(steps - 1), Eigen::ComputeEigenvectors);
  // Eigen sorts ascending; Ritz pairs are taken from the top.
  const Vector& theta = tri.eigenvalues();
  const Matrix& s = tri.eigenvectors();
  const double last_beta = beta[steps - 1];
  const double lambda_max = std::max(std::abs(theta[steps - 1]), std::abs(theta[0]));
  const double tol = options.tolerance * std::max(lambda_max, 1e-300);

  const Eigen::Index want = std::min<Eigen::Index>(static_cast<Eigen::Index>(options.k), steps);
  Eigen::Index keep = 0;
  Vector residuals(want);
  for (Eigen::Index i = 0; i < want; ++i) {
    const Eigen::Index col = steps - 1 - i;
    residuals[i] = std::abs(last_beta * s(steps - 1, col));
    if (residuals[i] > tol) break;
    ++keep;
  }

  result.basis = q.leftCols(steps) * s.rightCols(keep).rowwise().reverse();
  result.values = theta.tail(keep).reverse();
  result.residuals = residuals.head(keep);
  return result;
}

Vector inv_sqrt_apply(const LowRankEigen& eig, double alpha, const Vector& v) {
  if (!(alpha > 0.0)) throw Error("inv_sqrt_apply needs alpha > 0");
  if (eig.rank() > 0 && eig.dim() != v.size()) throw DimensionError("vector length does not match eigenbasis");
  const double prior = 1.0 / std::sqrt(alpha);
  Vector out = prior * v;
  if (eig.rank() == 0) return out;
  const Vector coeffs = eig.basis.transpose() * v;
  const Vector gain = (eig.values.array().max(0.0) + alpha).rsqrt() - prior;
  out.noalias() += eig.basis * gain.cwiseProduct(coeffs);
  return out;
}

void write_spectrum_csv(const std::filesystem::path& path, const LowRankEigen& eig) {
  std::ostringstream out;
  out << "index,lambda,residual\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < eig.rank(); ++i) {
    out << i << ',' << eig.values[i] << ',' << eig.residuals[i] << '\n';
  }
  io::atomic_write(path, out.str());
}

}  // namespace glap
