#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abnet/dataset.hpp"
#include "abnet/med.hpp"
#include "abnet/metrics.hpp"
#include "abnet/mixture.hpp"
#include "abnet/network.hpp"
#include "abnet/pretraining.hpp"

namespace abnet {

struct ArchitectureConfig {
  std::vector<std::size_t> conv_channels{16, 16, 16};
  std::size_t kernel_width = 5;
  std::size_t stride = 1;
  std::vector<std::size_t> dense_widths{64, 64};

  NetworkSpec network(std::size_t channels, std::size_t length, std::size_t outputs) const;
};

struct PretrainConfig {
  bool enabled = true;
  SgdSchedule base{2, 32, 0.001, 0.9};
  SgdSchedule gate{20, 32, 0.001, 0.9};
  std::size_t kmeans_max_iter = 100;
  std::size_t kmeans_restarts = 10;
};

struct AlphaBetaConfig {
  ArchitectureConfig architecture;
  std::size_t n_contexts = 3;
  EmConfig em;
  PretrainConfig pretrain;
};

struct AlphaBetaRun {
  MixtureModel model;
  TrainTrace trace;
  std::optional<KMeansResult> clusters;
  double gate_cluster_accuracy = 0.0;  // pre-trained gate argmax vs cluster ids, before EM
};

// Optional gate pre-training (base net, trunk embedding, k-means with k = N_c, gate
// fit to cluster ids) followed by EM. All randomness derives from seed.
AlphaBetaRun train_alpha_beta(const Tensor& inputs, std::span<const std::size_t> activities,
                              std::size_t n_activities, const AlphaBetaConfig& config, std::uint64_t seed);

// Single network with the template's conv trunk and every hidden dense width scaled by
// k + 1. Throws ContractError for k == 0.
NetworkSpec build_equal_capacity_baseline(const NetworkSpec& template_spec, std::size_t k);

struct BaselineRun {
  NetworkSpec spec;
  Parameters params;
};

BaselineRun train_baseline(const Tensor& inputs, std::span<const std::size_t> activities, const NetworkSpec& spec,
                           const SgdSchedule& schedule, std::uint64_t seed);

std::vector<std::size_t> predict_labels(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs);

// Train/test partition of a dataset: one stratified fold held out, z-scored with
// training statistics.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  LabeledDataset normalized;
};

Split make_split(const LabeledDataset& dataset, std::size_t folds, std::size_t test_fold, std::uint64_t seed);

struct BenchmarkConfig {
  AlphaBetaConfig alpha_beta;
  std::size_t folds = 5;
  std::size_t test_fold = 0;
  bool run_baseline = true;
  // Baseline epochs; 0 means em.em_rounds * em.m_epochs, the passes each expert makes.
  std::size_t baseline_epochs = 0;
};

struct BenchmarkResult {
  ClassificationMetrics alpha_beta;
  std::optional<ClassificationMetrics> baseline;
  GateUsage test_gate_usage;
  std::size_t baseline_parameters = 0;
  std::size_t alpha_beta_parameters = 0;
  AlphaBetaRun run;
};

BenchmarkResult run_benchmark(const LabeledDataset& dataset, const BenchmarkConfig& config, std::uint64_t seed);

struct SweepRow {
  std::string variant;  // "pretrained" or "regularized"
  double coefficient = 0.0;
  double accuracy = 0.0;
  double micro_f = 0.0;
  double gate_perplexity = 0.0;
};

// One regularized row per coefficient (pre-training off) plus one pre-trained row with
// the regularizer off; everything else identical.
std::vector<SweepRow> pretrain_vs_regularization_sweep(const LabeledDataset& dataset,
                                                       std::span<const double> coefficients,
                                                       const BenchmarkConfig& config, std::uint64_t seed);

std::string sweep_csv(std::span<const SweepRow> rows);

struct RotationConfig {
  AlphaBetaConfig alpha_beta;  // n_contexts is replaced by the number of known contexts
  MedOptions med;
  LogisticOptions logistic;
  std::vector<double> epsilon_grid = abnet::epsilon_grid(0.05);
  std::size_t folds = 5;
  std::size_t histogram_bins = 20;
  std::size_t removed_per_rotation = 1;
};

struct ScorerOutcome {
  RejectionPolicy policy;
  RejectionMetrics metrics;
  std::vector<UqExportRow> rows;
  Histogram known_histogram;
  Histogram unknown_histogram;
  double mean_known_confidence = 0.0;
  double mean_unknown_confidence = 0.0;
};

struct RotationReport {
  std::size_t rotation = 0;
  std::vector<std::size_t> removed_contexts;
  std::uint64_t seed = 0;
  std::size_t train_windows = 0;
  std::size_t removed_windows_in_training = 0;  // always 0; asserted
  std::size_t known_test_windows = 0;
  std::size_t unknown_windows = 0;
  double known_activity_accuracy = 0.0;  // alpha-beta on known test windows
  ScorerOutcome uq;
  ScorerOutcome baseline;
  std::string config_fingerprint;
};

// Rotation r removes contexts {r, r+1, ..., r+m-1} (mod N) from training and runs with
// seed base_seed + r. Throws ContractError with fewer than 2 labeled contexts or when
// fewer than one context would remain known.
RotationReport run_rotation(const LabeledDataset& dataset, const RotationConfig& config, std::size_t rotation,
                            std::uint64_t base_seed, const std::string& fingerprint = {});

// Rotations run on up to jobs threads; the result does not depend on jobs.
std::vector<RotationReport> run_rotation_protocol(const LabeledDataset& dataset, const RotationConfig& config,
                                                  std::uint64_t base_seed, const std::string& fingerprint = {},
                                                  std::size_t jobs = 1);

// Columns: scorer, sensitivity, specificity, accuracy, precision, f_score, epsilon,
// mean_known_confidence, mean_unknown_confidence.
std::string rotation_metrics_csv(const RotationReport& report);

}  // namespace abnet
