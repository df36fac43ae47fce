#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "dgl/diagnostics.hpp"

namespace dgl {

struct MetricReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::map<int, double> hits;  // K -> Hits@K
};

/// Candidate set for ranking metrics: scores and labels of one query's
/// candidates (e.g. all same-source pairs of a relation).
struct RankGroup {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// AUC-ROC as the tie-averaged rank statistic.
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  size_t n = scores.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  long long positives = 0, negatives = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    i = j;
  }
  for (int l : labels) (l ? positives : negatives) += 1;
  if (positives == 0 || negatives == 0) return 0.5;  // degenerate: no ranking defined
  double p = static_cast<double>(positives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

/// Fraction of positive items whose pessimistic rank (ties count against the
/// item) is within the top K of their candidate set.
inline double hits_at_k(const std::vector<RankGroup>& groups, int k) {
  long long hits = 0, total = 0;
  for (const RankGroup& g : groups) {
    for (size_t i = 0; i < g.scores.size(); ++i) {
      if (!g.labels[i]) continue;
      int rank = 1;
      for (size_t j = 0; j < g.scores.size(); ++j) {
        if (j == i) continue;
        if (g.scores[j] >= g.scores[i]) ++rank;
      }
      ++total;
      if (rank <= k) ++hits;
    }
  }
  if (total == 0) throw DglError(ErrorKind::Data, "no positive items to rank");
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Accuracy at threshold 0.5, F1 on the positive class, tie-averaged AUC-ROC,
/// and Hits@K over the given candidate groups (when provided).
inline MetricReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                             const std::vector<int>& ks = {},
                             const std::vector<RankGroup>& groups = {}) {
  if (scores.empty() || scores.size() != labels.size())
    throw DglError(ErrorKind::Data, "empty or mismatched predictions and truth");

  MetricReport r;
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] >= 0.5;
    if (pred && labels[i]) ++tp;
    else if (pred && !labels[i]) ++fp;
    else if (!pred && labels[i]) ++fn;
    else ++tn;
  }
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  double denom = 2.0 * tp + fp + fn;
  r.f1 = denom > 0 ? 2.0 * tp / denom : 1.0;
  r.auc = auc_roc(scores, labels);
  for (int k : ks) r.hits[k] = hits_at_k(groups, k);
  return r;
}

inline double mean(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace dgl
