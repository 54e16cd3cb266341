#pragma once

#include "glap/lanczos.hpp"
#include "glap/likelihood.hpp"
#include "glap/net.hpp"

#include <memory>
#include <utility>

namespace glap {

// Limits on dense materialization. Oracle paths refuse beyond these.
struct DenseBudget {
  std::size_t jacobian_entries = 10'000'000;
  std::size_t matrix_dim = 2000;
};

// v -> (GGN_w + alpha I) v, GGN_w = sum_n J_w(x_n)^T H(x_n) J_w(x_n).
// The forward pass at w is cached at construction; apply() streams one
// batched JVP and one batched VJP and never forms J.
class CurvatureOperator {
 public:
  CurvatureOperator(NetworkSpec spec, ParamVector w, std::shared_ptr<const Dataset> data, Likelihood lik,
                    double alpha = 0.0);
  CurvatureOperator(NetworkSpec spec, ParamVector w, Dataset data, Likelihood lik, double alpha = 0.0);

  std::size_t dim() const { return net_.param_count(); }
  double alpha() const { return alpha_; }
  const Network& network() const { return net_; }
  const ParamVector& weights() const { return w_; }
  const Dataset& data() const { return *data_; }
  const Likelihood& likelihood() const { return lik_; }
  const Matrix& predictions() const { return predictions_; }

  ParamVector apply(const ParamVector& v) const;
  LinearOperator as_operator() const;

  // D x D matrix; refuses when D exceeds budget.matrix_dim.
  Matrix dense(const DenseBudget& budget = {}) const;

  // Stacked H^{1/2} J, (N*O) x D, datum-major.
  Matrix whitened_jacobian(const DenseBudget& budget = {}) const;

 private:
  Network net_;
  ParamVector w_;
  std::shared_ptr<const Dataset> data_;
  Likelihood lik_;
  double alpha_;
  ForwardTrace trace_;
  Matrix predictions_;
};

// H^{1/2} J J^T H^{1/2}, (N*O) x (N*O).
Matrix ntk_matrix(const NetworkSpec& spec, const ParamVector& w, const Dataset& data, const Likelihood& lik,
                  const DenseBudget& budget = {});

// Number of GGN eigenvalues above tol * lambda_max (alpha ignored). Works on
// whichever of GGN and NTK is smaller; an all-zero GGN has rank 0.
std::size_t ggn_rank(const CurvatureOperator& op, double tol = 1e-10, const DenseBudget& budget = {});

// All GGN eigenpairs above rel_tol * lambda_max, from a dense eigensolver on
// the smaller of GGN and NTK (alpha ignored).
LowRankEigen exact_eigenpairs(const CurvatureOperator& op, double rel_tol = 1e-10,
                              const DenseBudget& budget = {});

// Sigma = U (Lambda + alpha)^{-1} U^T + alpha^{-1} (I - U U^T), with U spanning
// the image of the GGN and Lambda its nonzero eigenvalues.
class CovarianceDecomposition {
 public:
  CovarianceDecomposition(Matrix basis, Vector lambdas, double alpha);

  const Matrix& basis() const { return basis_; }
  const Vector& lambdas() const { return lambdas_; }
  double alpha() const { return alpha_; }
  Eigen::Index rank() const { return lambdas_.size(); }
  Eigen::Index dim() const { return basis_.rows(); }

  Vector apply_sigma(const Vector& v) const;
  // Sigma^{1/2} v = (GGN + alpha I)^{-1/2} v
  Vector apply_inv_sqrt(const Vector& v) const;
  // Sigma^{-1} v = (GGN + alpha I) v
  Vector apply_precision(const Vector& v) const;
  // U U^T v
  Vector project_image(const Vector& v) const;

  Matrix dense_sigma() const;

 private:
  Matrix basis_;
  Vector lambdas_;
  double alpha_;
};

CovarianceDecomposition decompose_covariance(const LowRankEigen& eig, double alpha);

struct SampleSplit {
  ParamVector kernel;
  ParamVector image;
};

// w_sample - w_hat = kernel + image, image = U U^T (w_sample - w_hat).
SampleSplit split_sample(const CovarianceDecomposition& decomp, const ParamVector& w_sample,
                         const ParamVector& w_hat);

}  // namespace glap
