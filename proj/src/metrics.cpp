#include "glap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace glap {

void EvalBatch::validate() const {
  if (probs.rows() == 0) throw Error("evaluation batch is empty");
  if (labels.size() != static_cast<std::size_t>(probs.rows())) throw DimensionError("label count mismatch");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
      throw Error("probability row " + std::to_string(i) + " does not sum to 1");
    }
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw DimensionError("label out of range");
  }
}

ClassificationMetrics classification_metrics(const EvalBatch& batch, std::size_t bins) {
  batch.validate();
  const auto m = batch.probs.rows();
  const auto c = batch.probs.cols();
  std::vector<double> bin_conf(bins, 0.0), bin_acc(bins, 0.0);
  std::vector<std::size_t> bin_count(bins, 0);

  ClassificationMetrics out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto row = batch.probs.row(i);
    Eigen::Index pred = 0;
    for (Eigen::Index k = 1; k < c; ++k) {
      if (row[k] > row[pred]) pred = k;
    }
    const int label = batch.labels[static_cast<std::size_t>(i)];
    const double conf = row[pred];
    const double correct = pred == label ? 1.0 : 0.0;
    out.confidence += conf;
    out.accuracy += correct;
    out.nll -= std::log(std::max(row[label], std::numeric_limits<double>::min()));
    for (Eigen::Index k = 0; k < c; ++k) {
      const double target = k == label ? 1.0 : 0.0;
      out.brier += (row[k] - target) * (row[k] - target);
    }
    auto b = static_cast<std::size_t>(std::max(0.0, std::ceil(conf * static_cast<double>(bins)) - 1.0));
    b = std::min(b, bins - 1);
    bin_conf[b] += conf;
    bin_acc[b] += correct;
    ++bin_count[b];
  }
  const double md = static_cast<double>(m);
  out.confidence /= md;
  out.accuracy /= md;
  out.nll /= md;
  out.brier /= md;
  for (std::size_t b = 0; b < bins; ++b) {
    if (bin_count[b] == 0) continue;
    const double n = static_cast<double>(bin_count[b]);
    const double gap = std::abs(bin_acc[b] / n - bin_conf[b] / n);
    out.ece += (n / md) * gap;
    out.mce = std::max(out.mce, gap);
  }
  return out;
}

double auroc(const std::vector<double>& scores_negative, const std::vector<double>& scores_positive) {
  if (scores_negative.empty() || scores_positive.empty()) throw Error("auroc needs both score sets nonempty");
  // Rank-sum form with midranks for ties.
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(scores_negative.size() + scores_positive.size());
  for (double s : scores_negative) items.push_back({s, false});
  for (double s : scores_positive) items.push_back({s, true});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].positive) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(scores_positive.size());
  const double nn = static_cast<double>(scores_negative.size());
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<double> predictive_entropy(const Matrix& probs) {
  std::vector<double> h(static_cast<std::size_t>(probs.rows()), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      if (p > 0.0) h[static_cast<std::size_t>(i)] -= p * std::log(p);
    }
  }
  return h;
}

double rmse(const Matrix& predictions, const Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw DimensionError("rmse shapes differ");
  }
  if (predictions.size() == 0) throw Error("rmse of an empty set");
  return std::sqrt((predictions - targets).squaredNorm() / static_cast<double>(predictions.size()));
}

}  // namespace glap
