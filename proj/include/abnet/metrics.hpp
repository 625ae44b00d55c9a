#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace abnet {

struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;  // counts[true][predicted]
  std::vector<std::string> labels;

  std::size_t total() const;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double micro_f = 0.0;
  ConfusionMatrix confusion;
};

// Class count defaults to one past the largest id seen; names default to the ids.
ClassificationMetrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                             std::size_t n_classes = 0, std::span<const std::string> names = {});

// Unknown windows are the positive class.
struct RejectionMetrics {
  double sensitivity = 0.0;  // rejected unknown / unknown
  double specificity = 0.0;  // accepted known / known, 1 when there are no known windows
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when nothing is rejected
  double f_score = 0.0;    // harmonic mean of precision and sensitivity, 0 when both are 0
};

// Throws ContractError on length mismatch or when no window is unknown.
RejectionMetrics rejection_metrics(const std::vector<bool>& is_unknown, const std::vector<bool>& rejected);

// Equal-width bins over [0, 1]. Value v lands in bin min(floor(v * bins), bins - 1), so
// every bin is [lo, hi) except the last, which is closed on the right.
struct Histogram {
  std::vector<std::size_t> counts;
  std::size_t total() const;
};

Histogram probability_histogram(std::span<const double> values, std::size_t bins = 20);

// Columns: bin_lower, bin_upper, count.
std::string histogram_csv(const Histogram& histogram);

}  // namespace abnet
