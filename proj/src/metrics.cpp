#include "abnet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "abnet/errors.hpp"

namespace abnet {

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) t += v;
  }
  return t;
}

ClassificationMetrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                             std::size_t n_classes, std::span<const std::string> names) {
  if (truth.size() != predicted.size()) throw ContractError("truth and prediction lengths differ");
  if (truth.empty()) throw ContractError("classification metrics need at least one sample");
  const std::size_t seen =
      std::max(*std::max_element(truth.begin(), truth.end()), *std::max_element(predicted.begin(), predicted.end())) + 1;
  if (n_classes == 0) n_classes = seen;
  if (seen > n_classes) throw ContractError("label id exceeds the class count");
  if (!names.empty() && names.size() != n_classes) throw ContractError("one name per class required");

  ClassificationMetrics m;
  m.confusion.counts.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t c = 0; c < n_classes; ++c) {
    m.confusion.labels.push_back(names.empty() ? fmt::format("{}", c) : names[c]);
  }
  for (std::size_t i = 0; i < truth.size(); ++i) ++m.confusion.counts[truth[i]][predicted[i]];

  // Pooled over classes: every off-diagonal count is one FP (its column) and one FN (its row).
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t r = 0; r < n_classes; ++r) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (r == c) {
        tp += m.confusion.counts[r][c];
      } else {
        fp += m.confusion.counts[r][c];
        fn += m.confusion.counts[r][c];
      }
    }
  }
  const double n = static_cast<double>(truth.size());
  m.accuracy = static_cast<double>(tp) / n;
  m.micro_f = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return m;
}

RejectionMetrics rejection_metrics(const std::vector<bool>& is_unknown, const std::vector<bool>& rejected) {
  if (is_unknown.size() != rejected.size()) throw ContractError("unknown and reject flag lengths differ");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < is_unknown.size(); ++i) {
    if (is_unknown[i]) {
      (rejected[i] ? tp : fn) += 1;
    } else {
      (rejected[i] ? fp : tn) += 1;
    }
  }
  if (tp + fn == 0) throw ContractError("sensitivity is undefined without unknown windows");
  RejectionMetrics m;
  m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.specificity = tn + fp == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(is_unknown.size());
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.f_score = m.precision + m.sensitivity == 0.0 ? 0.0
                                                 : 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
  return m;
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts) t += c;
  return t;
}

Histogram probability_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ContractError("histogram needs at least one bin");
  Histogram h{std::vector<std::size_t>(bins, 0)};
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError(fmt::format("histogram value {} outside [0, 1]", v));
    const auto idx = static_cast<std::size_t>(std::floor(v * static_cast<double>(bins)));
    ++h.counts[std::min(idx, bins - 1)];
  }
  return h;
}

std::string histogram_csv(const Histogram& histogram) {
  std::string out = "bin_lower,bin_upper,count\n";
  const double bins = static_cast<double>(histogram.counts.size());
  for (std::size_t i = 0; i < histogram.counts.size(); ++i) {
    out += fmt::format("{},{},{}\n", static_cast<double>(i) / bins, static_cast<double>(i + 1) / bins,
                       histogram.counts[i]);
  }
  return out;
}

}  // namespace abnet
