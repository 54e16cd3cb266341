#pragma once

#include "glap/types.hpp"

#include <vector>

namespace glap {

// Predictive probabilities for M inputs over C classes.
struct EvalBatch {
  Matrix probs;            // M x C, rows sum to 1
  std::vector<int> labels;  // M

  void validate() const;
};

struct ClassificationMetrics {
  double confidence = 0.0;
  double accuracy = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  double mce = 0.0;
};

// ECE and MCE use 10 equal-width confidence bins (b/10, (b+1)/10]; argmax
// ties resolve to the lowest class index.
ClassificationMetrics classification_metrics(const EvalBatch& batch, std::size_t bins = 10);

// Mann-Whitney estimate of P(positive > negative) + P(tie) / 2.
double auroc(const std::vector<double>& scores_negative, const std::vector<double>& scores_positive);

// Entropy of each probability row.
std::vector<double> predictive_entropy(const Matrix& probs);

double rmse(const Matrix& predictions, const Matrix& targets);

}  // namespace glap
