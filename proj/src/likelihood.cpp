#include "glap/likelihood.hpp"

#include <cmath>
#include <numbers>

namespace glap {

namespace {

void require_finite(const Vector& prediction) {
  if (!prediction.allFinite()) throw NumericalError("prediction contains non-finite values");
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

Likelihood Likelihood::gaussian(double sigma2) {
  Likelihood l{Kind::gaussian, sigma2};
  l.validate();
  return l;
}

void Likelihood::validate() const {
  if (kind == Kind::gaussian && !(sigma2 > 0.0 && std::isfinite(sigma2))) {
    throw ConfigError("gaussian likelihood needs sigma2 > 0");
  }
}

std::string to_string(Likelihood::Kind kind) {
  switch (kind) {
    case Likelihood::Kind::gaussian: return "gaussian";
    case Likelihood::Kind::categorical: return "categorical";
    case Likelihood::Kind::bernoulli: return "bernoulli";
  }
  return "unknown";
}

Likelihood::Kind parse_likelihood_kind(const std::string& name) {
  if (name == "gaussian") return Likelihood::Kind::gaussian;
  if (name == "categorical") return Likelihood::Kind::categorical;
  if (name == "bernoulli") return Likelihood::Kind::bernoulli;
  throw ConfigError("unknown likelihood '" + name + "'");
}

Vector softmax(const Vector& logits) {
  Vector p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_lik(const Likelihood& lik, const Vector& prediction, const Vector& target) {
  require_finite(prediction);
  if (lik.kind != Likelihood::Kind::gaussian) {
    throw DimensionError("real-valued target given to a classification likelihood");
  }
  if (target.size() != prediction.size()) throw DimensionError("target and prediction lengths differ");
  const double o = static_cast<double>(prediction.size());
  return -0.5 * (target - prediction).squaredNorm() / lik.sigma2 -
         0.5 * o * std::log(2.0 * std::numbers::pi * lik.sigma2);
}

double log_lik(const Likelihood& lik, const Vector& prediction, int label) {
  require_finite(prediction);
  switch (lik.kind) {
    case Likelihood::Kind::categorical:
      if (label < 0 || label >= prediction.size()) {
        throw DimensionError("class index " + std::to_string(label) + " invalid for " +
                             std::to_string(prediction.size()) + " classes");
      }
      return prediction[label] - log_sum_exp(prediction);
    case Likelihood::Kind::bernoulli: {
      if (prediction.size() != 1) throw DimensionError("bernoulli likelihood needs a single logit");
      if (label != 0 && label != 1) throw DimensionError("bernoulli label must be 0 or 1");
      // log sigmoid(+-z) computed stably
      const double z = label == 1 ? prediction[0] : -prediction[0];
      return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
    }
    case Likelihood::Kind::gaussian: break;
  }
  throw DimensionError("class label given to a gaussian likelihood");
}

Matrix output_hessian(const Likelihood& lik, const Vector& prediction) {
  require_finite(prediction);
  const auto o = prediction.size();
  switch (lik.kind) {
    case Likelihood::Kind::gaussian: return Matrix::Identity(o, o) / lik.sigma2;
    case Likelihood::Kind::categorical: {
      const Vector p = softmax(prediction);
      Matrix h = -p * p.transpose();
      h.diagonal() += p;
      return h;
    }
    case Likelihood::Kind::bernoulli: {
      const double p = sigmoid(prediction[0]);
      return Matrix::Constant(1, 1, p * (1.0 - p));
    }
  }
  return {};
}

Matrix output_hessian_sqrt(const Likelihood& lik, const Vector& prediction) {
  if (lik.kind == Likelihood::Kind::gaussian) {
    return Matrix::Identity(prediction.size(), prediction.size()) / std::sqrt(lik.sigma2);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(output_hessian(lik, prediction));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Vector apply_output_hessian(const Likelihood& lik, const Vector& prediction, const Vector& v) {
  switch (lik.kind) {
    case Likelihood::Kind::gaussian: return v / lik.sigma2;
    case Likelihood::Kind::categorical: {
      const Vector p = softmax(prediction);
      return p.cwiseProduct(v) - p * p.dot(v);
    }
    case Likelihood::Kind::bernoulli: {
      const double p = sigmoid(prediction[0]);
      return v * (p * (1.0 - p));
    }
  }
  return v;
}

Matrix loss_gradients(const Likelihood& lik, const Matrix& predictions, const Dataset& data) {
  Matrix g(predictions.rows(), predictions.cols());
  for (Eigen::Index n = 0; n < predictions.rows(); ++n) {
    const Vector f = predictions.row(n).transpose();
    switch (lik.kind) {
      case Likelihood::Kind::gaussian:
        g.row(n) = (f - data.targets.row(n).transpose()).transpose() / lik.sigma2;
        break;
      case Likelihood::Kind::categorical: {
        Vector p = softmax(f);
        p[data.labels[static_cast<std::size_t>(n)]] -= 1.0;
        g.row(n) = p.transpose();
        break;
      }
      case Likelihood::Kind::bernoulli:
        g(n, 0) = sigmoid(f[0]) - static_cast<double>(data.labels[static_cast<std::size_t>(n)]);
        break;
    }
  }
  return g;
}

double negative_log_lik(const Likelihood& lik, const Matrix& predictions, const Dataset& data) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < predictions.rows(); ++n) {
    const Vector f = predictions.row(n).transpose();
    if (lik.is_classification()) {
      total -= log_lik(lik, f, data.labels[static_cast<std::size_t>(n)]);
    } else {
      total -= log_lik(lik, f, Vector(data.targets.row(n).transpose()));
    }
  }
  return total;
}

Matrix class_probabilities(const Likelihood& lik, const Matrix& logits) {
  if (lik.kind == Likelihood::Kind::bernoulli) {
    Matrix p(logits.rows(), 2);
    for (Eigen::Index n = 0; n < logits.rows(); ++n) {
      p(n, 1) = sigmoid(logits(n, 0));
      p(n, 0) = 1.0 - p(n, 1);
    }
    return p;
  }
  if (lik.kind != Likelihood::Kind::categorical) throw Error("class probabilities need a classification likelihood");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) p.row(n) = softmax(logits.row(n).transpose()).transpose();
  return p;
}

}  // namespace glap
