#pragma once

// Confidence scoring of pooled teacher samples and the sample-selection
// weights derived from it.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msdcrd/decouple.hpp"

namespace msdcrd {

/// Frozen teacher classifier: logits = weights * t + bias.
struct ClassifierHead {
  Matrix weights;  // K x C
  Vector bias;     // K, may be empty (treated as zeros)

  std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(weights.cols()); }

  void validate() const {
    detail::require(classes() >= 2, "classifier head needs at least 2 classes");
    detail::require(bias.size() == 0 || static_cast<std::size_t>(bias.size()) == classes(),
                    "classifier bias length does not match class count");
  }
};

struct Thresholds {
  double alpha = 0.05;  // samples with P < alpha are filtered out
  double beta = 0.6;    // P >= beta is high confidence

  void validate() const {
    detail::require(0.0 <= alpha && alpha <= beta && beta <= 1.0,
                    "thresholds must satisfy 0 <= alpha <= beta <= 1");
  }
};

/// Maximum softmax probability and arg-max class for every pooled sample.
struct ConfidenceTable {
  std::vector<double> p;
  std::vector<std::size_t> predicted;
  std::size_t classes = 0;

  std::size_t size() const { return p.size(); }
};

struct SelectionWeights {
  std::vector<double> sample;         // per-sample weight in the sample-wise loss
  std::vector<std::uint8_t> feature;  // 1 where the sample survives filtering
  std::size_t n_high = 0;
  std::size_t n_low = 0;

  std::size_t selected() const { return n_high + n_low; }
  std::size_t filtered() const { return sample.size() - selected(); }
};

inline ConfidenceTable confidence(const Matrix& teacher_samples, const ClassifierHead& head) {
  head.validate();
  detail::require(static_cast<std::size_t>(teacher_samples.cols()) == head.channels(),
                  "classifier expects " + std::to_string(head.channels()) + " channels, pooled samples have " +
                      std::to_string(teacher_samples.cols()));
  ConfidenceTable table;
  table.classes = head.classes();
  table.p.reserve(static_cast<std::size_t>(teacher_samples.rows()));
  table.predicted.reserve(static_cast<std::size_t>(teacher_samples.rows()));
  for (Eigen::Index n = 0; n < teacher_samples.rows(); ++n) {
    Vector logits = head.weights * teacher_samples.row(n).transpose();
    if (head.bias.size() != 0) logits += head.bias;
    const auto probs = softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    table.p.push_back(probs[best]);
    table.predicted.push_back(best);
  }
  return table;
}

inline ConfidenceTable confidence(const PooledSet& teacher, const ClassifierHead& head) {
  return confidence(teacher.samples, head);
}

/// Inverse-frequency weights: filtered samples get 0, low-confidence samples
/// 1/(2 N_high), high-confidence samples 1/(2 N_low). When only one group is
/// populated every selected sample gets 1/(N_high + N_low).
inline SelectionWeights sample_weights(const ConfidenceTable& table, const Thresholds& th) {
  th.validate();
  SelectionWeights w;
  w.sample.assign(table.size(), 0.0);
  w.feature.assign(table.size(), 0);
  for (std::size_t n = 0; n < table.size(); ++n) {
    const double p = table.p[n];
    if (p < th.alpha) continue;
    w.feature[n] = 1;
    if (p < th.beta) ++w.n_low;
    else ++w.n_high;
  }
  if (w.selected() == 0) {
    detail::fail(ErrorKind::empty_selection,
                 "empty selection: all " + std::to_string(table.size()) +
                     " pooled samples have confidence below alpha = " + std::to_string(th.alpha));
  }

  const bool both = w.n_high > 0 && w.n_low > 0;
  const double uniform = 1.0 / static_cast<double>(w.selected());
  const double low_weight = both ? 0.5 / static_cast<double>(w.n_high) : uniform;
  const double high_weight = both ? 0.5 / static_cast<double>(w.n_low) : uniform;
  for (std::size_t n = 0; n < table.size(); ++n) {
    if (!w.feature[n]) continue;
    w.sample[n] = table.p[n] < th.beta ? low_weight : high_weight;
  }
  return w;
}

inline std::vector<std::uint8_t> feature_mask(const ConfidenceTable& table, double alpha) {
  detail::require(0.0 <= alpha && alpha <= 1.0, "alpha must lie in [0, 1]");
  std::vector<std::uint8_t> mask(table.size());
  for (std::size_t n = 0; n < table.size(); ++n) mask[n] = table.p[n] >= alpha ? 1 : 0;
  return mask;
}

/// Counts over `bins` equal-width, left-closed bins of [0, 1]; P = 1 lands in
/// the last bin.
inline std::vector<std::size_t> confidence_histogram(const ConfidenceTable& table, std::size_t bins) {
  detail::require(bins >= 1, "histogram needs at least one bin");
  std::vector<std::size_t> counts(bins, 0);
  for (double p : table.p) {
    auto bin = static_cast<std::size_t>(std::floor(p * static_cast<double>(bins)));
    ++counts[std::min(bin, bins - 1)];
  }
  return counts;
}

}  // namespace msdcrd
