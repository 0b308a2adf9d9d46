#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "duomodal/errors.hpp"

namespace duomodal {

struct ClassificationMetrics {
  double wa = 0;  // overall accuracy
  double ua = 0;  // unweighted mean of per-class recalls
};

inline ClassificationMetrics metrics_classification(
    const std::vector<int>& preds, const std::vector<int>& labels) {
  check_contract(!labels.empty(), "metrics_classification: empty input");
  check_contract(preds.size() == labels.size(),
                 "metrics_classification: " + std::to_string(preds.size()) +
                     " predictions for " + std::to_string(labels.size()) +
                     " labels");
  std::size_t correct = 0;
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // hit, total
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hit, total] = per_class[labels[i]];
    ++total;
    if (preds[i] == labels[i]) {
      ++hit;
      ++correct;
    }
  }
  ClassificationMetrics m;
  m.wa = static_cast<double>(correct) / labels.size();
  double recall_sum = 0;
  for (const auto& [cls, ht] : per_class)
    recall_sum += static_cast<double>(ht.first) / ht.second;
  m.ua = recall_sum / per_class.size();
  return m;
}

struct RegressionMetrics {
  double mae = 0;
  std::optional<double> corr;  // empty when either side has zero variance
};

inline RegressionMetrics metrics_regression(const std::vector<double>& preds,
                                            const std::vector<double>& labels) {
  check_contract(!labels.empty(), "metrics_regression: empty input");
  check_contract(preds.size() == labels.size(),
                 "metrics_regression: size mismatch");
  RegressionMetrics m;
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) m.mae += std::abs(preds[i] - labels[i]);
  m.mae /= n;
  if (n < 2) return m;
  double mp = 0, ml = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += preds[i];
    ml += labels[i];
  }
  mp /= n;
  ml /= n;
  double cov = 0, vp = 0, vl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (preds[i] - mp) * (labels[i] - ml);
    vp += (preds[i] - mp) * (preds[i] - mp);
    vl += (labels[i] - ml) * (labels[i] - ml);
  }
  if (vp > 0 && vl > 0) m.corr = cov / std::sqrt(vp * vl);
  return m;
}

// Equal error rate: sweep thresholds over the score values (accept when
// score >= t) and linearly interpolate the operating points that bracket
// FAR == FRR.
inline double metrics_eer(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& is_same) {
  check_contract(scores.size() == is_same.size(), "metrics_eer: size mismatch");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (is_same[i] ? pos : neg).push_back(scores[i]);
  check_contract(!pos.empty() && !neg.empty(),
                 "metrics_eer: both classes must be present");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  auto far_at = [&](double t) {  // fraction of negatives accepted
    return static_cast<double>(neg.end() -
                               std::lower_bound(neg.begin(), neg.end(), t)) /
           neg.size();
  };
  auto frr_at = [&](double t) {  // fraction of positives rejected
    return static_cast<double>(std::lower_bound(pos.begin(), pos.end(), t) -
                               pos.begin()) /
           pos.size();
  };

  std::vector<double> thresholds = pos;
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  // walk from the strictest threshold: FAR rises from 0, FRR falls to 0
  double prev_far = 0.0, prev_frr = 1.0;
  for (double t : thresholds) {
    const double far = far_at(t);
    const double frr = frr_at(t);
    if (frr <= far) {
      const double d1 = prev_frr - prev_far;  // > 0
      const double d2 = frr - far;            // <= 0
      if (d1 == d2) return far;
      const double s = d1 / (d1 - d2);
      return prev_far + s * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  // all thresholds keep FRR above FAR; the curves meet at (1, 0)
  const double d1 = prev_frr - prev_far;
  const double d2 = 0.0 - 1.0;
  const double s = d1 / (d1 - d2);
  return prev_far + s * (1.0 - prev_far);
}

inline double cosine_similarity(const std::vector<float>& a,
                                const std::vector<float>& b) {
  check_contract(a.size() == b.size() && !a.empty(),
                 "cosine_similarity: size mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

}  // namespace duomodal
