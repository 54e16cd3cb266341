#pragma once

#include "glap/net.hpp"
#include "glap/types.hpp"

#include <string>

namespace glap {

// Observation model p(y | f). Categorical and Bernoulli predictions are
// logits; Bernoulli uses a single output.
struct Likelihood {
  enum class Kind { gaussian, categorical, bernoulli };

  Kind kind = Kind::gaussian;
  double sigma2 = 1.0;  // gaussian noise variance

  static Likelihood gaussian(double sigma2 = 1.0);
  static Likelihood categorical() { return {Kind::categorical, 1.0}; }
  static Likelihood bernoulli() { return {Kind::bernoulli, 1.0}; }

  bool is_classification() const { return kind != Kind::gaussian; }
  void validate() const;
};

std::string to_string(Likelihood::Kind kind);
Likelihood::Kind parse_likelihood_kind(const std::string& name);

Vector softmax(const Vector& logits);
double sigmoid(double x);

double log_lik(const Likelihood& lik, const Vector& prediction, const Vector& target);
double log_lik(const Likelihood& lik, const Vector& prediction, int label);

// -d^2 log p / df^2 at the prediction. Symmetric PSD; independent of the target.
Matrix output_hessian(const Likelihood& lik, const Vector& prediction);

// Symmetric square root of output_hessian.
Matrix output_hessian_sqrt(const Likelihood& lik, const Vector& prediction);

// Applies output_hessian(prediction) to v without forming it.
Vector apply_output_hessian(const Likelihood& lik, const Vector& prediction, const Vector& v);

// Gradient of -log p with respect to the prediction, one row per datum.
Matrix loss_gradients(const Likelihood& lik, const Matrix& predictions, const Dataset& data);

// Sum of -log p over the dataset.
double negative_log_lik(const Likelihood& lik, const Matrix& predictions, const Dataset& data);

// Class probabilities (M x C) from logits; Bernoulli expands to two columns.
Matrix class_probabilities(const Likelihood& lik, const Matrix& logits);

}  // namespace glap
