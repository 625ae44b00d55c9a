#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abnet/tensor.hpp"

namespace abnet {

// One C x T segment of multichannel sensor data.
struct SensorWindow {
  Tensor signal;  // C x T
  std::size_t activity = 0;
  std::optional<std::size_t> context;
  std::optional<std::size_t> subject;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at kStdFloor
  static constexpr double kStdFloor = 1e-8;
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

struct LabeledDataset {
  std::vector<SensorWindow> windows;
  std::vector<std::string> activity_names;
  std::vector<std::string> context_names;
  std::optional<NormalizationStats> normalization;

  std::size_t size() const noexcept { return windows.size(); }
  bool empty() const noexcept { return windows.empty(); }
  std::size_t channels() const;
  std::size_t window_length() const;
  std::size_t activity_count() const noexcept { return activity_names.size(); }
  std::size_t context_count() const noexcept { return context_names.size(); }

  // B x C x T tensor of the selected windows (all windows when indices is empty and all is true).
  Tensor inputs(std::span<const std::size_t> indices) const;
  Tensor inputs() const;
  std::vector<std::size_t> activities(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> activities() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

// Per-frame labels aligned with the columns of a C x N frame matrix.
struct FrameLabels {
  std::vector<std::size_t> activity;
  std::optional<std::vector<std::size_t>> context;
  std::optional<std::vector<std::size_t>> subject;
};

// Non-overlapping windows; trailing frames that do not fill a window are dropped.
// Each window takes the majority per-frame label, ties going to the lowest id.
std::vector<SensorWindow> segment_windows(const Tensor& frames, const FrameLabels& labels,
                                          std::size_t window_len = 30);

std::size_t majority_label(std::span<const std::size_t> labels);

NormalizationStats fit_normalization(const LabeledDataset& train);
// Applies stored stats; never recomputes them.
LabeledDataset apply_normalization(const LabeledDataset& dataset, const NormalizationStats& stats);

struct NormalizedDataset {
  LabeledDataset dataset;
  NormalizationStats stats;
};
// z-scores the whole dataset with statistics from the training indices only.
NormalizedDataset normalize(const LabeledDataset& dataset, std::span<const std::size_t> train_indices);

// k disjoint folds of window indices, stratified by activity. Throws StratificationError
// when an activity has fewer than k windows.
std::vector<std::vector<std::size_t>> kfold_split(const LabeledDataset& dataset, std::size_t k, std::uint64_t seed);

struct CsvSchema {
  std::size_t window_length = 30;
  // When set, the file must carry exactly this many channel columns.
  std::optional<std::size_t> channels;
};

struct CsvLoadResult {
  LabeledDataset dataset;
  std::size_t rows_read = 0;
  std::size_t rows_rejected = 0;  // rows with NaN channel values
};

// Header: timestamp, channel_0..channel_{C-1}, activity[, context][, subject].
// Label cells may be any token; ids follow numeric order when every token is an
// integer, lexicographic order otherwise.
CsvLoadResult load_windows_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

// Inverse of load_windows_csv for window-aligned data: T rows per window.
std::string windows_to_csv(const LabeledDataset& dataset);

struct SyntheticConfig {
  std::size_t n_contexts = 3;
  std::size_t activities_per_context = 4;
  std::size_t channels = 6;
  std::size_t windows_per_activity = 50;
  std::size_t window_length = 30;
  double noise_std = 0.05;
  // Each window starts at a random point of the cycle, uniform over this fraction of it.
  double phase_jitter = 1.0;
  std::uint64_t seed = 1;
};

// Context c: per-channel baseline offset in [-5, 5] and c+1 oscillation cycles per window.
// Activities draw per-channel amplitude/phase signatures from one shared pool, and
// context c gives activity a the signature (a + c) mod A, so the same signature means a
// different activity in every context. Windows are ordered by context, activity, index.
LabeledDataset generate_synthetic(const SyntheticConfig& cfg);

}  // namespace abnet
