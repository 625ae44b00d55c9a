#include "abnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "abnet/errors.hpp"
#include "abnet/random.hpp"

namespace abnet {

std::size_t LabeledDataset::channels() const {
  if (windows.empty()) throw ContractError("empty dataset has no channel extent");
  return windows.front().signal.extent(0);
}

std::size_t LabeledDataset::window_length() const {
  if (windows.empty()) throw ContractError("empty dataset has no window length");
  return windows.front().signal.extent(1);
}

Tensor LabeledDataset::inputs(std::span<const std::size_t> indices) const {
  if (indices.empty()) {
    return windows.empty() ? Tensor({0, 1, 1}) : Tensor({0, channels(), window_length()});
  }
  const std::size_t c = channels(), t = window_length(), stride = c * t;
  Tensor out({indices.size(), c, t});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& s = windows.at(indices[i]).signal;
    std::copy(s.values().begin(), s.values().end(), out.data() + i * stride);
  }
  return out;
}

Tensor LabeledDataset::inputs() const {
  std::vector<std::size_t> all(windows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return inputs(all);
}

std::vector<std::size_t> LabeledDataset::activities(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(windows.at(i).activity);
  return out;
}

std::vector<std::size_t> LabeledDataset::activities() const {
  std::vector<std::size_t> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(w.activity);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.activity_names = activity_names;
  out.context_names = context_names;
  out.normalization = normalization;
  out.windows.reserve(indices.size());
  for (std::size_t i : indices) out.windows.push_back(windows.at(i));
  return out;
}

std::size_t majority_label(std::span<const std::size_t> labels) {
  if (labels.empty()) throw ContractError("majority of an empty label run");
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t y : labels) ++counts[y];
  std::size_t best = counts.begin()->first, best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

std::vector<SensorWindow> segment_windows(const Tensor& frames, const FrameLabels& labels, std::size_t window_len) {
  if (window_len == 0) throw ContractError("window length must be positive");
  if (frames.rank() != 2) throw ContractError("frames must be a C x N matrix");
  const std::size_t c = frames.extent(0), n = frames.extent(1);
  if (labels.activity.size() != n || (labels.context && labels.context->size() != n) ||
      (labels.subject && labels.subject->size() != n)) {
    throw ContractError("per-frame label length does not match frame count");
  }
  std::vector<SensorWindow> out;
  for (std::size_t start = 0; start + window_len <= n; start += window_len) {
    SensorWindow w;
    w.signal = Tensor({c, window_len});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < window_len; ++t) w.signal.at(ch, t) = frames.at(ch, start + t);
    }
    auto span_of = [&](const std::vector<std::size_t>& v) {
      return std::span<const std::size_t>(v.data() + start, window_len);
    };
    w.activity = majority_label(span_of(labels.activity));
    if (labels.context) w.context = majority_label(span_of(*labels.context));
    if (labels.subject) w.subject = majority_label(span_of(*labels.subject));
    out.push_back(std::move(w));
  }
  return out;
}

NormalizationStats fit_normalization(const LabeledDataset& train) {
  if (train.empty()) throw ContractError("normalization needs a nonempty training fold");
  const std::size_t c = train.channels(), t = train.window_length();
  NormalizationStats stats;
  stats.mean.assign(c, 0.0);
  stats.stddev.assign(c, 0.0);
  const double count = static_cast<double>(train.size() * t);
  for (const auto& w : train.windows) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t; ++i) stats.mean[ch] += w.signal.at(ch, i);
    }
  }
  for (double& m : stats.mean) m /= count;
  for (const auto& w : train.windows) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t; ++i) {
        const double d = w.signal.at(ch, i) - stats.mean[ch];
        stats.stddev[ch] += d * d;
      }
    }
  }
  for (double& s : stats.stddev) s = std::max(std::sqrt(s / count), NormalizationStats::kStdFloor);
  return stats;
}

LabeledDataset apply_normalization(const LabeledDataset& dataset, const NormalizationStats& stats) {
  LabeledDataset out = dataset;
  for (auto& w : out.windows) {
    const std::size_t c = w.signal.extent(0), t = w.signal.extent(1);
    if (c != stats.mean.size()) throw ContractError("normalization stats do not match channel count");
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t; ++i) {
        double& v = w.signal.at(ch, i);
        v = (v - stats.mean[ch]) / stats.stddev[ch];
      }
    }
  }
  out.normalization = stats;
  return out;
}

NormalizedDataset normalize(const LabeledDataset& dataset, std::span<const std::size_t> train_indices) {
  NormalizationStats stats = fit_normalization(dataset.subset(train_indices));
  return {apply_normalization(dataset, stats), std::move(stats)};
}

std::vector<std::vector<std::size_t>> kfold_split(const LabeledDataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("k must be positive");
  std::map<std::size_t, std::vector<std::size_t>> by_activity;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_activity[dataset.windows[i].activity].push_back(i);
  for (const auto& [activity, members] : by_activity) {
    if (members.size() < k) {
      const std::string name =
          activity < dataset.activity_names.size() ? dataset.activity_names[activity] : std::to_string(activity);
      throw StratificationError(fmt::format("activity '{}' has {} windows, fewer than k={}", name, members.size(), k));
    }
  }
  Rng rng(derive_seed(seed, stream::kFolds));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (auto& [activity, members] : by_activity) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) {
      folds[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool is_nan_token(const std::string& s) {
  if (s.size() != 3) return false;
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return lower == "nan";
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) return std::nullopt;
  return v;
}

bool is_unsigned_integer(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); });
}

// Dense ids for label tokens: numeric order when all tokens are integers.
std::map<std::string, std::size_t> label_dictionary(const std::vector<std::string>& tokens,
                                                    std::vector<std::string>& names) {
  std::vector<std::string> unique(tokens.begin(), tokens.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (std::all_of(unique.begin(), unique.end(), is_unsigned_integer)) {
    std::sort(unique.begin(), unique.end(), [](const std::string& a, const std::string& b) {
      return std::stoull(a) < std::stoull(b);
    });
  }
  std::map<std::string, std::size_t> ids;
  names = unique;
  for (std::size_t i = 0; i < unique.size(); ++i) ids[unique[i]] = i;
  return ids;
}

}  // namespace

CsvLoadResult load_windows_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);

  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto ts_col = find_column("timestamp");
  if (!ts_col) throw SchemaError("missing column 'timestamp'");
  const auto activity_col = find_column("activity");
  if (!activity_col) throw SchemaError("missing column 'activity'");
  const auto context_col = find_column("context");
  const auto subject_col = find_column("subject");
  std::vector<std::size_t> channel_cols;
  for (std::size_t ch = 0;; ++ch) {
    const auto col = find_column(fmt::format("channel_{}", ch));
    if (!col) break;
    channel_cols.push_back(*col);
  }
  if (channel_cols.empty()) throw SchemaError("missing column 'channel_0'");
  if (schema.channels && channel_cols.size() != *schema.channels) {
    throw SchemaError(fmt::format("expected {} channel columns, found {}", *schema.channels, channel_cols.size()));
  }

  const std::size_t c = channel_cols.size();
  std::vector<std::vector<double>> columns(c);
  std::vector<std::string> activity_tokens, context_tokens, subject_tokens;
  CsvLoadResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    }
    ++result.rows_read;
    if (!parse_double(cells[*ts_col])) throw ParseError(line_no, "non-numeric timestamp '" + cells[*ts_col] + "'");
    std::vector<double> row(c);
    bool has_nan = false;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::string& cell = cells[channel_cols[ch]];
      if (is_nan_token(cell)) {
        has_nan = true;
        continue;
      }
      const auto v = parse_double(cell);
      if (!v) throw ParseError(line_no, fmt::format("non-numeric value '{}' in channel_{}", cell, ch));
      if (std::isnan(*v)) has_nan = true;
      row[ch] = *v;
    }
    if (has_nan) {
      ++result.rows_rejected;
      continue;
    }
    for (std::size_t ch = 0; ch < c; ++ch) columns[ch].push_back(row[ch]);
    activity_tokens.push_back(cells[*activity_col]);
    if (context_col) context_tokens.push_back(cells[*context_col]);
    if (subject_col) subject_tokens.push_back(cells[*subject_col]);
  }

  const std::size_t n = activity_tokens.size();
  Tensor frames({c, n});
  for (std::size_t ch = 0; ch < c; ++ch) std::copy(columns[ch].begin(), columns[ch].end(), frames.data() + ch * n);

  LabeledDataset& ds = result.dataset;
  FrameLabels labels;
  auto encode = [](const std::vector<std::string>& tokens, std::vector<std::string>& names) {
    const auto ids = label_dictionary(tokens, names);
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(ids.at(t));
    return out;
  };
  labels.activity = encode(activity_tokens, ds.activity_names);
  if (context_col) labels.context = encode(context_tokens, ds.context_names);
  if (subject_col) {
    std::vector<std::string> subject_names;
    labels.subject = encode(subject_tokens, subject_names);
  }
  ds.windows = segment_windows(frames, labels, schema.window_length);
  return result;
}

std::string windows_to_csv(const LabeledDataset& dataset) {
  std::string out = "timestamp";
  const std::size_t c = dataset.empty() ? 0 : dataset.channels();
  const bool has_context = std::any_of(dataset.windows.begin(), dataset.windows.end(),
                                       [](const SensorWindow& w) { return w.context.has_value(); });
  const bool has_subject = std::any_of(dataset.windows.begin(), dataset.windows.end(),
                                       [](const SensorWindow& w) { return w.subject.has_value(); });
  for (std::size_t ch = 0; ch < c; ++ch) out += fmt::format(",channel_{}", ch);
  out += ",activity";
  if (has_context) out += ",context";
  if (has_subject) out += ",subject";
  out += '\n';
  std::size_t frame = 0;
  for (const auto& w : dataset.windows) {
    for (std::size_t t = 0; t < w.signal.extent(1); ++t, ++frame) {
      out += fmt::format("{}", frame);
      for (std::size_t ch = 0; ch < c; ++ch) out += fmt::format(",{}", w.signal.at(ch, t));
      out += fmt::format(",{}", w.activity);
      if (has_context) out += fmt::format(",{}", w.context.value_or(0));
      if (has_subject) out += fmt::format(",{}", w.subject.value_or(0));
      out += '\n';
    }
  }
  return out;
}

LabeledDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_contexts == 0 || cfg.activities_per_context == 0 || cfg.channels == 0 || cfg.windows_per_activity == 0 ||
      cfg.window_length == 0) {
    throw ContractError("synthetic config counts must be at least 1");
  }
  if (!(cfg.noise_std >= 0.0)) throw ContractError("noise_std must be nonnegative");
  if (!(cfg.phase_jitter >= 0.0 && cfg.phase_jitter <= 1.0)) throw ContractError("phase_jitter must lie in [0, 1]");
  Rng rng(derive_seed(cfg.seed, stream::kSynthetic));
  std::uniform_real_distribution<double> offset_dist(-5.0, 5.0);
  std::uniform_real_distribution<double> amp_dist(0.5, 1.5);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  // Baselines are redrawn until every pair of contexts is at least min_distance apart;
  // the requirement is halved whenever a thousand draws in a row fail.
  double min_distance = 6.0;
  std::size_t failures = 0;
  std::vector<std::vector<double>> offsets;
  while (offsets.size() < cfg.n_contexts) {
    std::vector<double> candidate(cfg.channels);
    for (double& v : candidate) v = offset_dist(rng);
    const bool far_enough = std::all_of(offsets.begin(), offsets.end(), [&](const std::vector<double>& o) {
      double d2 = 0.0;
      for (std::size_t ch = 0; ch < cfg.channels; ++ch) d2 += (o[ch] - candidate[ch]) * (o[ch] - candidate[ch]);
      return std::sqrt(d2) >= min_distance;
    });
    if (far_enough) {
      offsets.push_back(std::move(candidate));
      failures = 0;
    } else if (++failures == 1000) {
      min_distance /= 2.0;
      failures = 0;
    }
  }

  // One pool of amplitude/phase signatures; context c hands signature (a + c) mod A to
  // activity a, so a signature alone never identifies the activity.
  struct Signature {
    std::vector<double> amplitude, phase;
  };
  std::vector<Signature> pool(cfg.activities_per_context);
  for (auto& sig : pool) {
    sig.amplitude.resize(cfg.channels);
    sig.phase.resize(cfg.channels);
    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
      sig.amplitude[ch] = amp_dist(rng);
      sig.phase[ch] = phase_dist(rng);
    }
  }

  LabeledDataset ds;
  for (std::size_t a = 0; a < cfg.activities_per_context; ++a) ds.activity_names.push_back(fmt::format("activity_{}", a));
  for (std::size_t c = 0; c < cfg.n_contexts; ++c) ds.context_names.push_back(fmt::format("context_{}", c));
  const double t_len = static_cast<double>(cfg.window_length);
  for (std::size_t c = 0; c < cfg.n_contexts; ++c) {
    const double cycles = static_cast<double>(c + 1);
    for (std::size_t a = 0; a < cfg.activities_per_context; ++a) {
      const Signature& sig = pool[(a + c) % cfg.activities_per_context];
      for (std::size_t w = 0; w < cfg.windows_per_activity; ++w) {
        SensorWindow win;
        const double shift = cfg.phase_jitter > 0.0 ? cfg.phase_jitter * phase_dist(rng) : 0.0;
        win.signal = Tensor({cfg.channels, cfg.window_length});
        for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
          for (std::size_t t = 0; t < cfg.window_length; ++t) {
            const double angle = 2.0 * std::numbers::pi * cycles * static_cast<double>(t) / t_len + sig.phase[ch] + shift;
            double v = offsets[c][ch] + sig.amplitude[ch] * std::sin(angle);
            if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(rng);
            win.signal.at(ch, t) = v;
          }
        }
        win.activity = a;
        win.context = c;
        ds.windows.push_back(std::move(win));
      }
    }
  }
  return ds;
}

}  // namespace abnet
