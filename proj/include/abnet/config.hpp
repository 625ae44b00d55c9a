#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abnet/dataset.hpp"
#include "abnet/evaluation.hpp"

namespace abnet {

struct DatasetSource {
  std::string kind = "synthetic";  // "synthetic" or "csv"
  std::filesystem::path csv_path;
  std::size_t window_length = 30;
  std::optional<std::size_t> channels;  // csv only
  SyntheticConfig synthetic;            // its seed is replaced by RunConfig::seed
};

struct UqConfig {
  double epsilon_step = 0.05;
  std::size_t histogram_bins = 20;
  std::size_t folds = 5;
  std::size_t removed_per_rotation = 1;
};

struct EvaluationConfig {
  std::size_t folds = 5;
  std::size_t test_fold = 0;
  // Benchmarks repeat with seeds seed, seed + 1, ... and report mean and std.
  std::size_t repeats = 1;
  // Checkpoint read by `eval`; empty means <output_dir>/model.json.
  std::filesystem::path model_path;
};

// Everything a CLI command needs. Parsed from a JSON file whose sections mirror the
// fields below; missing keys keep their defaults and unknown keys are rejected.
struct RunConfig {
  DatasetSource dataset;
  AlphaBetaConfig model;
  std::size_t baseline_epochs = 0;
  MedOptions med;
  LogisticOptions logistic;
  UqConfig uq;
  std::vector<double> sweep_coefficients{0.01, 0.1, 1.0};
  EvaluationConfig evaluation;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";

  // Throws ConfigError naming the offending key.
  void validate() const;

  BenchmarkConfig benchmark() const;
  RotationConfig rotation() const;
  SyntheticConfig synthetic() const;
};

nlohmann::json config_to_json(const RunConfig& config);
// Throws ConfigError on unknown keys, wrong types or failed validation.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

// Sorted-key, 2-space-indented dump; the text written as config.json.
std::string canonical_config_text(const RunConfig& config);

// Hex SHA-256 of the canonical text without output_dir, so moving a run keeps its identity.
std::string config_fingerprint(const RunConfig& config);
std::string sha256_hex(std::string_view data);

// Loads the configured dataset (synthetic or CSV).
LabeledDataset load_dataset(const RunConfig& config);

}  // namespace abnet
