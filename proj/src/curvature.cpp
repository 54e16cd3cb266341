#include "glap/curvature.hpp"

#include <cmath>

namespace glap {

namespace {

void check_data_dims(const Network& net, const Dataset& data) {
  if (data.size() == 0) return;
  if (static_cast<std::size_t>(data.inputs.cols()) != net.input_dim()) {
    throw DimensionError("dataset inputs do not match network input_dim");
  }
}

Vector ascending_to_descending(const Vector& v) { return v.reverse(); }

// Rayleigh-Ritz on span(candidates): orthonormalize, project the GGN
// (given as B^T B with B = whitened Jacobian) and diagonalize.
LowRankEigen rayleigh_ritz(const Matrix& whitened, const Matrix& candidates) {
  Eigen::HouseholderQR<Matrix> qr(candidates);
  const Matrix q = qr.householderQ() * Matrix::Identity(candidates.rows(), candidates.cols());
  const Matrix bq = whitened * q;
  Eigen::SelfAdjointEigenSolver<Matrix> es(bq.transpose() * bq);
  LowRankEigen out;
  out.values = ascending_to_descending(es.eigenvalues());
  out.basis = q * es.eigenvectors().rowwise().reverse();
  out.residuals = Vector::Zero(out.values.size());
  return out;
}

}  // namespace

CurvatureOperator::CurvatureOperator(NetworkSpec spec, ParamVector w, std::shared_ptr<const Dataset> data,
                                     Likelihood lik, double alpha)
    : net_(std::move(spec)), w_(std::move(w)), data_(std::move(data)), lik_(lik), alpha_(alpha) {
  if (!data_) throw Error("curvature operator needs a dataset");
  if (alpha_ < 0.0 || !std::isfinite(alpha_)) throw Error("prior precision must be finite and nonnegative");
  lik_.validate();
  check_data_dims(net_, *data_);
  Matrix inputs = data_->inputs;
  if (inputs.rows() == 0) inputs.resize(0, static_cast<Eigen::Index>(net_.input_dim()));
  predictions_ = net_.forward_batch(w_, inputs, &trace_);
}

CurvatureOperator::CurvatureOperator(NetworkSpec spec, ParamVector w, Dataset data, Likelihood lik, double alpha)
    : CurvatureOperator(std::move(spec), std::move(w), std::make_shared<const Dataset>(std::move(data)), lik,
                        alpha) {}

ParamVector CurvatureOperator::apply(const ParamVector& v) const {
  if (static_cast<std::size_t>(v.size()) != dim()) {
    throw DimensionError("ggn_matvec got a vector of length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(dim()));
  }
  ParamVector out = alpha_ * v;
  if (predictions_.rows() == 0) return out;
  Matrix jv = net_.jvp_batch(w_, trace_, v);
  if (lik_.kind == Likelihood::Kind::gaussian) {
    jv /= lik_.sigma2;
  } else {
    for (Eigen::Index n = 0; n < jv.rows(); ++n) {
      jv.row(n) = apply_output_hessian(lik_, predictions_.row(n).transpose(), jv.row(n).transpose()).transpose();
    }
  }
  out.noalias() += net_.vjp_batch(w_, trace_, jv);
  return out;
}

LinearOperator CurvatureOperator::as_operator() const {
  return [this](const Vector& v) { return apply(v); };
}

Matrix CurvatureOperator::whitened_jacobian(const DenseBudget& budget) const {
  const auto o = static_cast<Eigen::Index>(net_.output_dim());
  Matrix b = net_.dense_jacobian(w_, *data_, budget.jacobian_entries);
  for (Eigen::Index n = 0; n < predictions_.rows(); ++n) {
    const Matrix root = output_hessian_sqrt(lik_, predictions_.row(n).transpose());
    b.middleRows(n * o, o) = root * b.middleRows(n * o, o);
  }
  return b;
}

Matrix CurvatureOperator::dense(const DenseBudget& budget) const {
  if (dim() > budget.matrix_dim) {
    throw BudgetError("dense GGN of dimension " + std::to_string(dim()) + " exceeds budget " +
                      std::to_string(budget.matrix_dim));
  }
  const auto d = static_cast<Eigen::Index>(dim());
  Matrix g = Matrix::Zero(d, d);
  if (predictions_.rows() > 0) {
    const Matrix b = whitened_jacobian(budget);
    g.selfadjointView<Eigen::Lower>().rankUpdate(b.transpose());
    g = g.selfadjointView<Eigen::Lower>();
  }
  g.diagonal().array() += alpha_;
  return g;
}

Matrix ntk_matrix(const NetworkSpec& spec, const ParamVector& w, const Dataset& data, const Likelihood& lik,
                  const DenseBudget& budget) {
  const std::size_t no = data.size() * spec.output_dim;
  if (no > budget.matrix_dim) {
    throw BudgetError("NTK of dimension " + std::to_string(no) + " exceeds budget " +
                      std::to_string(budget.matrix_dim));
  }
  CurvatureOperator op(spec, w, data, lik);
  const Matrix b = op.whitened_jacobian(budget);
  Matrix k = Matrix::Zero(b.rows(), b.rows());
  k.selfadjointView<Eigen::Lower>().rankUpdate(b);
  return k.selfadjointView<Eigen::Lower>();
}

LowRankEigen exact_eigenpairs(const CurvatureOperator& op, double rel_tol, const DenseBudget& budget) {
  LowRankEigen out;
  const auto d = static_cast<Eigen::Index>(op.dim());
  const auto no = static_cast<Eigen::Index>(op.data().size() * op.network().output_dim());
  out.basis.resize(d, 0);
  if (no == 0) return out;

  const Matrix b = op.whitened_jacobian(budget);
  if (no < d) {
    if (static_cast<std::size_t>(no) > budget.matrix_dim) throw BudgetError("NTK exceeds dense budget");
    Matrix k = Matrix::Zero(no, no);
    k.selfadjointView<Eigen::Lower>().rankUpdate(b);
    Eigen::SelfAdjointEigenSolver<Matrix> es(k.selfadjointView<Eigen::Lower>());
    const Vector mu = ascending_to_descending(es.eigenvalues());
    const double cutoff = rel_tol * std::max(mu[0], 0.0);
    Eigen::Index r = 0;
    while (r < no && mu[r] > cutoff) ++r;
    if (r == 0) return out;
    const Matrix v = es.eigenvectors().rowwise().reverse().leftCols(r);
    return rayleigh_ritz(b, b.transpose() * v).nonzero(rel_tol);
  }
  if (static_cast<std::size_t>(d) > budget.matrix_dim) throw BudgetError("GGN exceeds dense budget");
  Matrix g = Matrix::Zero(d, d);
  g.selfadjointView<Eigen::Lower>().rankUpdate(b.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(g.selfadjointView<Eigen::Lower>());
  out.values = ascending_to_descending(es.eigenvalues());
  out.basis = es.eigenvectors().rowwise().reverse();
  out.residuals = Vector::Zero(d);
  return out.nonzero(rel_tol);
}

std::size_t ggn_rank(const CurvatureOperator& op, double tol, const DenseBudget& budget) {
  const auto d = op.dim();
  const auto no = op.data().size() * op.network().output_dim();
  if (no == 0) return 0;
  const Matrix b = op.whitened_jacobian(budget);
  Vector spectrum;
  if (no < d) {
    if (no > budget.matrix_dim) throw BudgetError("NTK exceeds dense budget");
    Matrix k = Matrix::Zero(b.rows(), b.rows());
    k.selfadjointView<Eigen::Lower>().rankUpdate(b);
    spectrum = Eigen::SelfAdjointEigenSolver<Matrix>(k.selfadjointView<Eigen::Lower>(), Eigen::EigenvaluesOnly)
                   .eigenvalues();
  } else {
    if (d > budget.matrix_dim) throw BudgetError("GGN exceeds dense budget");
    Matrix g = Matrix::Zero(b.cols(), b.cols());
    g.selfadjointView<Eigen::Lower>().rankUpdate(b.transpose());
    spectrum = Eigen::SelfAdjointEigenSolver<Matrix>(g.selfadjointView<Eigen::Lower>(), Eigen::EigenvaluesOnly)
                   .eigenvalues();
  }
  const double lambda_max = spectrum.maxCoeff();
  if (!(lambda_max > 0.0)) return 0;
  return static_cast<std::size_t>((spectrum.array() > tol * lambda_max).count());
}

CovarianceDecomposition::CovarianceDecomposition(Matrix basis, Vector lambdas, double alpha)
    : basis_(std::move(basis)), lambdas_(std::move(lambdas)), alpha_(alpha) {
  if (!(alpha_ > 0.0)) throw Error("covariance decomposition needs alpha > 0");
  if (basis_.cols() != lambdas_.size()) throw DimensionError("basis and eigenvalue counts differ");
  lambdas_ = lambdas_.cwiseMax(0.0);
}

Vector CovarianceDecomposition::apply_sigma(const Vector& v) const {
  const Vector c = basis_.transpose() * v;
  const Vector gain = (lambdas_.array() + alpha_).inverse() - 1.0 / alpha_;
  return v / alpha_ + basis_ * gain.cwiseProduct(c);
}

Vector CovarianceDecomposition::apply_inv_sqrt(const Vector& v) const {
  const Vector c = basis_.transpose() * v;
  const double prior = 1.0 / std::sqrt(alpha_);
  const Vector gain = (lambdas_.array() + alpha_).rsqrt() - prior;
  return prior * v + basis_ * gain.cwiseProduct(c);
}

Vector CovarianceDecomposition::apply_precision(const Vector& v) const {
  const Vector c = basis_.transpose() * v;
  return alpha_ * v + basis_ * lambdas_.cwiseProduct(c);
}

Vector CovarianceDecomposition::project_image(const Vector& v) const {
  return basis_ * (basis_.transpose() * v);
}

Matrix CovarianceDecomposition::dense_sigma() const {
  const Vector gain = (lambdas_.array() + alpha_).inverse() - 1.0 / alpha_;
  Matrix s = basis_ * gain.asDiagonal() * basis_.transpose();
  s.diagonal().array() += 1.0 / alpha_;
  return s;
}

CovarianceDecomposition decompose_covariance(const LowRankEigen& eig, double alpha) {
  return CovarianceDecomposition(eig.basis, eig.values, alpha);
}

SampleSplit split_sample(const CovarianceDecomposition& decomp, const ParamVector& w_sample,
                         const ParamVector& w_hat) {
  if (w_sample.size() != w_hat.size() || w_hat.size() != decomp.dim()) {
    throw DimensionError("split_sample shapes do not match");
  }
  const ParamVector delta = w_sample - w_hat;
  SampleSplit out;
  out.image = decomp.project_image(delta);
  out.kernel = delta - out.image;
  return out;
}

}  // namespace glap
