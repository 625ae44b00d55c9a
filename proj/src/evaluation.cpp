#include "abnet/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "abnet/errors.hpp"
#include "abnet/random.hpp"

namespace abnet {

NetworkSpec ArchitectureConfig::network(std::size_t channels, std::size_t length, std::size_t outputs) const {
  NetworkSpec spec;
  spec.input_channels = channels;
  spec.input_length = length;
  for (std::size_t ch : conv_channels) spec.conv_layers.push_back({ch, kernel_width, stride});
  spec.dense_layers = dense_widths;
  spec.output_units = outputs;
  spec.validate();
  return spec;
}

AlphaBetaRun train_alpha_beta(const Tensor& inputs, std::span<const std::size_t> activities,
                              std::size_t n_activities, const AlphaBetaConfig& config, std::uint64_t seed) {
  if (inputs.rank() != 3) throw ContractError("inputs must be B x C x T");
  const NetworkSpec arch = config.architecture.network(inputs.extent(1), inputs.extent(2), n_activities);
  AlphaBetaRun run;
  MixtureModel model = MixtureModel::create(arch, config.n_contexts, n_activities, seed);
  if (config.pretrain.enabled) {
    const BaseNetwork base = train_base_and_embed(inputs, activities, arch, config.pretrain.base, seed);
    run.clusters = kmeans_cluster(base.embedding.rows, config.n_contexts, seed, config.pretrain.kmeans_max_iter,
                                  config.pretrain.kmeans_restarts);
    model = pretrain_gate(std::move(model), inputs, run.clusters->assignments, config.pretrain.gate, seed);
    const Tensor q = gate_probs(model, inputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q.extent(0); ++i) hits += argmax_lowest(q.row(i)) == run.clusters->assignments[i];
    run.gate_cluster_accuracy = q.extent(0) ? static_cast<double>(hits) / static_cast<double>(q.extent(0)) : 0.0;
  }
  EmConfig em = config.em;
  em.seed = seed;
  EmResult result = em_train(std::move(model), inputs, activities, em);
  run.model = std::move(result.model);
  run.trace = std::move(result.trace);
  return run;
}

NetworkSpec build_equal_capacity_baseline(const NetworkSpec& template_spec, std::size_t k) {
  if (k == 0) throw ContractError("the equal-capacity baseline needs k >= 1");
  NetworkSpec spec = template_spec;
  for (std::size_t& w : spec.dense_layers) w *= k + 1;
  spec.validate();
  return spec;
}

BaselineRun train_baseline(const Tensor& inputs, std::span<const std::size_t> activities, const NetworkSpec& spec,
                           const SgdSchedule& schedule, std::uint64_t seed) {
  const std::uint64_t base = derive_seed(seed, stream::kBaseline);
  BaselineRun run{spec, Parameters::initialize(spec, derive_seed(base, 0))};
  OptimizerState opt = OptimizerState::for_parameters(run.params, schedule.learning_rate, schedule.momentum);
  Rng rng(derive_seed(base, 1));
  train_classifier(spec, run.params, opt, inputs, activities, {schedule.epochs, schedule.batch_size}, rng);
  return run;
}

std::vector<std::size_t> predict_labels(const NetworkSpec& spec, const Parameters& params, const Tensor& inputs) {
  const Tensor logits = predict_logits(spec, params, inputs);
  std::vector<std::size_t> out(logits.extent(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_lowest(logits.row(i));
  return out;
}

Split make_split(const LabeledDataset& dataset, std::size_t folds, std::size_t test_fold, std::uint64_t seed) {
  if (test_fold >= folds) throw ContractError("test fold index out of range");
  const auto parts = kfold_split(dataset, folds, seed);
  Split split;
  split.test = parts[test_fold];
  for (std::size_t f = 0; f < parts.size(); ++f) {
    if (f != test_fold) split.train.insert(split.train.end(), parts[f].begin(), parts[f].end());
  }
  std::sort(split.train.begin(), split.train.end());
  split.normalized = normalize(dataset, split.train).dataset;
  return split;
}

namespace {

std::size_t mixture_parameter_count(const MixtureModel& m) {
  return m.gate_spec.parameter_count() + m.experts.size() * m.expert_spec.parameter_count();
}

}  // namespace

BenchmarkResult run_benchmark(const LabeledDataset& dataset, const BenchmarkConfig& config, std::uint64_t seed) {
  const Split split = make_split(dataset, config.folds, config.test_fold, seed);
  const Tensor x_train = split.normalized.inputs(split.train);
  const Tensor x_test = split.normalized.inputs(split.test);
  const auto y_train = split.normalized.activities(split.train);
  const auto y_test = split.normalized.activities(split.test);
  const std::size_t k = dataset.activity_count();

  BenchmarkResult result;
  result.run = train_alpha_beta(x_train, y_train, k, config.alpha_beta, seed);
  result.alpha_beta = classification_metrics(y_test, mixture_predict(result.run.model, x_test).labels, k,
                                             dataset.activity_names);
  result.test_gate_usage = gate_usage_stats(result.run.model, x_test);
  result.alpha_beta_parameters = mixture_parameter_count(result.run.model);

  if (config.run_baseline) {
    const NetworkSpec spec = build_equal_capacity_baseline(result.run.model.expert_spec, config.alpha_beta.n_contexts);
    const EmConfig& em = config.alpha_beta.em;
    const SgdSchedule schedule{config.baseline_epochs ? config.baseline_epochs : em.em_rounds * em.m_epochs,
                               em.batch_size, em.learning_rate, em.momentum};
    const BaselineRun base = train_baseline(x_train, y_train, spec, schedule, seed);
    result.baseline = classification_metrics(y_test, predict_labels(base.spec, base.params, x_test), k,
                                             dataset.activity_names);
    result.baseline_parameters = spec.parameter_count();
  }
  return result;
}

std::vector<SweepRow> pretrain_vs_regularization_sweep(const LabeledDataset& dataset,
                                                       std::span<const double> coefficients,
                                                       const BenchmarkConfig& config, std::uint64_t seed) {
  if (coefficients.empty()) throw ContractError("the regularization grid is empty");
  std::vector<SweepRow> rows;
  auto run = [&](const std::string& variant, double coeff, bool pretrain) {
    BenchmarkConfig c = config;
    c.run_baseline = false;
    c.alpha_beta.pretrain.enabled = pretrain;
    c.alpha_beta.em.balance_coeff = coeff;
    const BenchmarkResult r = run_benchmark(dataset, c, seed);
    rows.push_back({variant, coeff, r.alpha_beta.accuracy, r.alpha_beta.micro_f, r.test_gate_usage.perplexity});
  };
  for (double coeff : coefficients) {
    if (!(coeff >= 0.0)) throw ContractError("regularization coefficients must be nonnegative");
    run("regularized", coeff, false);
  }
  run("pretrained", 0.0, true);
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "variant,coefficient,accuracy,micro_f,gate_perplexity\n";
  for (const SweepRow& r : rows) {
    out += fmt::format("{},{},{},{},{}\n", r.variant, r.coefficient, r.accuracy, r.micro_f,
                       r.gate_perplexity);
  }
  return out;
}

namespace {

std::vector<std::size_t> context_labels(const LabeledDataset& dataset, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(*dataset.windows[i].context);
  return out;
}

std::vector<std::size_t> pick(std::span<const std::size_t> values, std::span<const std::size_t> positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(values[p]);
  return out;
}

// A context scorer trained on embeddings of some known contexts.
struct Scorer {
  virtual ~Scorer() = default;
  virtual std::vector<UqScore> fit_and_score(const Tensor& train, std::span<const std::size_t> train_contexts,
                                             std::span<const std::size_t> ids, const Tensor& query) const = 0;
};

struct MedScorer : Scorer {
  MedOptions options;
  explicit MedScorer(MedOptions o) : options(o) {}
  std::vector<UqScore> fit_and_score(const Tensor& train, std::span<const std::size_t> train_contexts,
                                     std::span<const std::size_t> ids, const Tensor& query) const override {
    return med_scores(fit_one_vs_rest_med(train, train_contexts, ids, options), query);
  }
};

struct LogisticBaselineScorer : Scorer {
  LogisticOptions options;
  explicit LogisticBaselineScorer(LogisticOptions o) : options(o) {}
  std::vector<UqScore> fit_and_score(const Tensor& train, std::span<const std::size_t> train_contexts,
                                     std::span<const std::size_t> ids, const Tensor& query) const override {
    return logistic_scores(fit_logistic_baseline(train, train_contexts, ids, options), query);
  }
};

struct RotationData {
  Tensor emb_train, emb_val, emb_eval;
  std::vector<std::size_t> ctx_train, ctx_val, eval_ids, eval_ctx;
  std::vector<bool> eval_unknown;
  std::vector<std::size_t> known;
};

ScorerOutcome evaluate_scorer(const Scorer& scorer, const RotationData& d, const RotationConfig& config) {
  // Calibration: each known context in turn plays the unknown on the validation split.
  std::vector<double> pooled;
  std::vector<bool> pooled_unknown;
  if (d.known.size() < 2) throw CalibrationError("calibration needs at least two known contexts");
  for (std::size_t proxy : d.known) {
    std::vector<std::size_t> rest;
    for (std::size_t c : d.known) {
      if (c != proxy) rest.push_back(c);
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.ctx_train.size(); ++i) {
      if (d.ctx_train[i] != proxy) rows.push_back(i);
    }
    const auto scores = scorer.fit_and_score(gather_rows(d.emb_train, rows), pick(d.ctx_train, rows), rest, d.emb_val);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      pooled.push_back(scores[i].confidence);
      pooled_unknown.push_back(d.ctx_val[i] == proxy);
    }
  }
  ScorerOutcome out;
  out.policy = calibrate_epsilon(pooled, pooled_unknown, config.epsilon_grid);

  const auto scores = reject_decision(scorer.fit_and_score(d.emb_train, d.ctx_train, d.known, d.emb_eval), out.policy);
  std::vector<bool> rejected;
  std::vector<double> known_conf, unknown_conf;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    rejected.push_back(scores[i].rejected);
    (d.eval_unknown[i] ? unknown_conf : known_conf).push_back(scores[i].confidence);
    out.rows.push_back({d.eval_ids[i], d.eval_ctx[i] + 1, scores[i], d.eval_unknown[i]});
  }
  out.metrics = rejection_metrics(d.eval_unknown, rejected);
  out.known_histogram = probability_histogram(known_conf, config.histogram_bins);
  out.unknown_histogram = probability_histogram(unknown_conf, config.histogram_bins);
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  out.mean_known_confidence = mean(known_conf);
  out.mean_unknown_confidence = mean(unknown_conf);
  return out;
}

}  // namespace

RotationReport run_rotation(const LabeledDataset& dataset, const RotationConfig& config, std::size_t rotation,
                            std::uint64_t base_seed, const std::string& fingerprint) {
  for (const auto& w : dataset.windows) {
    if (!w.context) throw ContractError("the rotation protocol needs a context label on every window");
  }
  const std::size_t n_contexts = dataset.context_count();
  if (n_contexts < 2) throw ContractError("the rotation protocol needs at least two labeled contexts");
  if (config.removed_per_rotation == 0 || config.removed_per_rotation >= n_contexts) {
    throw ContractError("removed_per_rotation must leave at least one known context");
  }
  if (rotation >= n_contexts) throw ContractError("rotation index out of range");

  RotationReport report;
  report.rotation = rotation;
  report.seed = base_seed + rotation;
  report.config_fingerprint = fingerprint;
  std::vector<bool> removed(n_contexts, false);
  for (std::size_t i = 0; i < config.removed_per_rotation; ++i) {
    const std::size_t c = (rotation + i) % n_contexts;
    removed[c] = true;
    report.removed_contexts.push_back(c);
  }
  RotationData d;
  for (std::size_t c = 0; c < n_contexts; ++c) {
    if (!removed[c]) d.known.push_back(c);
  }

  std::vector<std::size_t> known_idx, unknown_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (removed[*dataset.windows[i].context] ? unknown_idx : known_idx).push_back(i);
  }
  // Known windows: fold 0 tests, fold 1 calibrates, the rest trains.
  const LabeledDataset known_set = dataset.subset(known_idx);
  const auto folds = kfold_split(known_set, config.folds, report.seed);
  if (folds.size() < 3) throw ContractError("the rotation protocol needs at least three folds");
  std::vector<std::size_t> train, val, test;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    auto& dst = f == 0 ? test : f == 1 ? val : train;
    for (std::size_t i : folds[f]) dst.push_back(known_idx[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());
  for (std::size_t i : train) report.removed_windows_in_training += removed[*dataset.windows[i].context] ? 1 : 0;
  if (report.removed_windows_in_training != 0) throw std::logic_error("a removed context leaked into training");
  report.train_windows = train.size();
  report.known_test_windows = test.size();
  report.unknown_windows = unknown_idx.size();

  const LabeledDataset norm = normalize(dataset, train).dataset;
  AlphaBetaConfig ab = config.alpha_beta;
  ab.n_contexts = d.known.size();
  const Tensor x_train = norm.inputs(train);
  const AlphaBetaRun run = train_alpha_beta(x_train, norm.activities(train), dataset.activity_count(), ab, report.seed);

  const Tensor x_test = norm.inputs(test);
  const auto y_test = norm.activities(test);
  report.known_activity_accuracy = classification_metrics(y_test, mixture_predict(run.model, x_test).labels,
                                                          dataset.activity_count())
                                       .accuracy;

  d.emb_train = gate_embedding(run.model, x_train);
  d.emb_val = gate_embedding(run.model, norm.inputs(val));
  d.ctx_train = context_labels(dataset, train);
  d.ctx_val = context_labels(dataset, val);
  d.eval_ids = test;
  d.eval_ids.insert(d.eval_ids.end(), unknown_idx.begin(), unknown_idx.end());
  d.emb_eval = gate_embedding(run.model, norm.inputs(d.eval_ids));
  d.eval_ctx = context_labels(dataset, d.eval_ids);
  for (std::size_t c : d.eval_ctx) d.eval_unknown.push_back(removed[c]);

  report.uq = evaluate_scorer(MedScorer(config.med), d, config);
  report.baseline = evaluate_scorer(LogisticBaselineScorer(config.logistic), d, config);
  return report;
}

std::vector<RotationReport> run_rotation_protocol(const LabeledDataset& dataset, const RotationConfig& config,
                                                  std::uint64_t base_seed, const std::string& fingerprint,
                                                  std::size_t jobs) {
  const std::size_t n = dataset.context_count();
  if (n < 2) throw ContractError("the rotation protocol needs at least two labeled contexts");
  std::vector<std::optional<RotationReport>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < n;) {
      try {
        slots[r] = run_rotation(dataset, config, r, base_seed, fingerprint);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<RotationReport> reports;
  for (auto& s : slots) reports.push_back(std::move(*s));
  return reports;
}

std::string rotation_metrics_csv(const RotationReport& report) {
  std::string out =
      "scorer,sensitivity,specificity,accuracy,precision,f_score,epsilon,mean_known_confidence,"
      "mean_unknown_confidence\n";
  auto line = [&](const char* name, const ScorerOutcome& s) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", name,
                       s.metrics.sensitivity, s.metrics.specificity, s.metrics.accuracy, s.metrics.precision,
                       s.metrics.f_score, s.policy.epsilon, s.mean_known_confidence, s.mean_unknown_confidence);
  };
  line("uq", report.uq);
  line("baseline", report.baseline);
  return out;
}

}  // namespace abnet
