#include "abnet/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/opensslv.h>

#include <fmt/format.h>

#include "abnet/checkpoint.hpp"
#include "abnet/config.hpp"
#include "abnet/errors.hpp"
#include "abnet/evaluation.hpp"
#include "abnet/io.hpp"

namespace abnet {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& cli_commands() {
  static const std::vector<std::string> kCommands{"synth", "pretrain", "train", "eval", "rotate", "sweep"};
  return kCommands;
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  for (double x : v) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(v.size()));
  return out;
}

json mean_std_json(const std::vector<double>& v) {
  const MeanStd m = mean_std(v);
  return {{"mean", m.mean}, {"std", m.std}, {"n", v.size()}, {"over", "seeds"}};
}

std::string num(double v) { return fmt::format("{}", v); }

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (const std::string& l : cm.labels) out += "," + l;
  out += "\n";
  for (std::size_t t = 0; t < cm.counts.size(); ++t) {
    out += t < cm.labels.size() ? cm.labels[t] : std::to_string(t);
    for (std::size_t c : cm.counts[t]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

std::string trace_csv(const TrainTrace& trace) {
  std::string out = "round,phase,negative_bound\n";
  for (const auto& p : trace.phases) out += fmt::format("{},{},{}\n", p.round, to_string(p.phase), num(p.negative_bound));
  return out;
}

std::string gate_usage_csv(const TrainTrace& trace) {
  std::string out = "round,train_accuracy";
  const std::size_t n = trace.gate_usage.empty() ? 0 : trace.gate_usage.front().size();
  for (std::size_t c = 0; c < n; ++c) out += fmt::format(",context_{}", c);
  out += "\n";
  for (std::size_t r = 0; r < trace.gate_usage.size(); ++r) {
    out += std::to_string(r) + "," + num(r < trace.train_accuracy.size() ? trace.train_accuracy[r] : 0.0);
    for (double u : trace.gate_usage[r]) out += "," + num(u);
    out += "\n";
  }
  return out;
}

// Everything a command needs, fixed before the first write.
struct Job {
  RunConfig config;
  std::string fingerprint;
  fs::path out;
  std::size_t jobs = 1;
  std::ostream& log;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < config.evaluation.repeats; ++i) s.push_back(config.seed + i);
    return s;
  }

  LabeledDataset dataset(std::uint64_t seed) const {
    RunConfig c = config;
    c.seed = seed;
    return load_dataset(c);
  }

  void write(const fs::path& rel, std::string_view content) const { write_file_atomic(out / rel, content); }

  void finish(const std::string& command, json metrics) const {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json summary;
    summary["command"] = command;
    summary["config_fingerprint"] = fingerprint;
    summary["seeds"] = seeds();
    summary["timings"] = {{"total_seconds", seconds}};
    summary["versions"] = {{"abnet", kVersion},
                           {"fmt", FMT_VERSION},
                           {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR,
                                                         NLOHMANN_JSON_VERSION_MINOR, NLOHMANN_JSON_VERSION_PATCH)},
                           {"openssl", OPENSSL_VERSION_TEXT}};
    summary["metrics"] = std::move(metrics);
    write("summary.json", summary.dump(2) + "\n");
  }
};

json run_synth(const Job& job) {
  json metrics = json::array();
  for (std::uint64_t seed : job.seeds()) {
    const LabeledDataset ds = job.dataset(seed);
    const std::string name = job.seeds().size() == 1 ? "dataset.csv" : fmt::format("dataset_seed_{}.csv", seed);
    job.write(name, windows_to_csv(ds));
    metrics.push_back({{"seed", seed},
                       {"file", name},
                       {"windows", ds.size()},
                       {"channels", ds.channels()},
                       {"activities", ds.activity_count()},
                       {"contexts", ds.context_count()}});
  }
  return metrics;
}

json run_pretrain(const Job& job) {
  json metrics = json::array();
  for (std::uint64_t seed : job.seeds()) {
    const LabeledDataset ds = job.dataset(seed);
    const Split split = make_split(ds, job.config.evaluation.folds, job.config.evaluation.test_fold, seed);
    AlphaBetaConfig ab = job.config.model;
    ab.pretrain.enabled = true;
    ab.em.em_rounds = 0;
    const Tensor x = split.normalized.inputs(split.train);
    const AlphaBetaRun run = train_alpha_beta(x, split.normalized.activities(split.train), ds.activity_count(), ab, seed);
    const fs::path dir = job.seeds().size() == 1 ? fs::path() : fs::path(fmt::format("seed_{}", seed));

    std::string clusters = "window,cluster,context\n";
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      const auto& ctx = ds.windows[split.train[i]].context;
      clusters += fmt::format("{},{},{}\n", split.train[i], run.clusters->assignments[i],
                              ctx ? std::to_string(*ctx) : std::string());
    }
    job.write(dir / "clusters.csv", clusters);
    std::string history = "iteration,inertia\n";
    for (std::size_t i = 0; i < run.clusters->inertia_history.size(); ++i) {
      history += fmt::format("{},{}\n", i + 1, num(run.clusters->inertia_history[i]));
    }
    job.write(dir / "kmeans_inertia.csv", history);
    save_checkpoint(job.out / dir / "pretrained_model.json",
                    {run.model, ds.activity_names, ds.context_names, split.normalized.normalization, job.fingerprint,
                     seed});
    const GateUsage usage = gate_usage_stats(run.model, x);
    metrics.push_back({{"seed", seed},
                       {"kmeans_inertia", run.clusters->inertia},
                       {"kmeans_iterations", run.clusters->iterations},
                       {"kmeans_converged", run.clusters->converged},
                       {"gate_cluster_accuracy", run.gate_cluster_accuracy},
                       {"gate_perplexity", usage.perplexity}});
  }
  return metrics;
}

json run_train(const Job& job) {
  std::string rows = "seed,model,accuracy,micro_f,parameters,gate_perplexity\n";
  std::vector<double> ab_acc, ab_f, base_acc, base_f, perplexities;
  bool first = true;
  for (std::uint64_t seed : job.seeds()) {
    const LabeledDataset ds = job.dataset(seed);
    const BenchmarkResult r = run_benchmark(ds, job.config.benchmark(), seed);
    rows += fmt::format("{},alpha_beta,{},{},{},{}\n", seed, num(r.alpha_beta.accuracy), num(r.alpha_beta.micro_f),
                        r.alpha_beta_parameters, num(r.test_gate_usage.perplexity));
    ab_acc.push_back(r.alpha_beta.accuracy);
    ab_f.push_back(r.alpha_beta.micro_f);
    perplexities.push_back(r.test_gate_usage.perplexity);
    if (r.baseline) {
      rows += fmt::format("{},baseline,{},{},{},\n", seed, num(r.baseline->accuracy), num(r.baseline->micro_f),
                          r.baseline_parameters);
      base_acc.push_back(r.baseline->accuracy);
      base_f.push_back(r.baseline->micro_f);
    }
    if (first) {
      // The checkpoint and per-run detail files come from the first seed.
      const Split split = make_split(ds, job.config.evaluation.folds, job.config.evaluation.test_fold, seed);
      save_checkpoint(job.out / "model.json", {r.run.model, ds.activity_names, ds.context_names,
                                               split.normalized.normalization, job.fingerprint, seed});
      job.write("confusion.csv", confusion_csv(r.alpha_beta.confusion));
      if (r.baseline) job.write("baseline_confusion.csv", confusion_csv(r.baseline->confusion));
      job.write("trace.csv", trace_csv(r.run.trace));
      job.write("gate_usage.csv", gate_usage_csv(r.run.trace));
      first = false;
    }
  }
  job.write("metrics.csv", rows);
  json metrics = {{"alpha_beta_accuracy", mean_std_json(ab_acc)},
                  {"alpha_beta_micro_f", mean_std_json(ab_f)},
                  {"test_gate_perplexity", mean_std_json(perplexities)}};
  if (!base_acc.empty()) {
    metrics["baseline_accuracy"] = mean_std_json(base_acc);
    metrics["baseline_micro_f"] = mean_std_json(base_f);
  }
  return metrics;
}

json run_eval(const Job& job) {
  const fs::path model_path =
      job.config.evaluation.model_path.empty() ? job.out / "model.json" : job.config.evaluation.model_path;
  const Checkpoint cp = load_checkpoint(model_path);
  const std::uint64_t seed = job.config.seed;
  const LabeledDataset ds = job.dataset(seed);
  if (ds.activity_names != cp.activity_names) {
    throw SchemaError("dataset activity labels do not match the checkpoint");
  }
  const auto folds = kfold_split(ds, job.config.evaluation.folds, seed);
  std::vector<std::size_t> test = folds.at(job.config.evaluation.test_fold);
  std::sort(test.begin(), test.end());
  LabeledDataset test_set = ds.subset(test);
  if (cp.normalization) test_set = apply_normalization(test_set, *cp.normalization);
  const Tensor x = test_set.inputs();
  const ClassificationMetrics m = classification_metrics(test_set.activities(), mixture_predict(cp.model, x).labels,
                                                         ds.activity_count(), ds.activity_names);
  const GateUsage usage = gate_usage_stats(cp.model, x);
  job.write("eval_metrics.csv", fmt::format("windows,accuracy,micro_f,gate_perplexity\n{},{},{},{}\n", test.size(),
                                            num(m.accuracy), num(m.micro_f), num(usage.perplexity)));
  job.write("eval_confusion.csv", confusion_csv(m.confusion));
  return {{"model", model_path.string()},
          {"model_fingerprint", cp.config_fingerprint},
          {"test_windows", test.size()},
          {"accuracy", m.accuracy},
          {"micro_f", m.micro_f},
          {"gate_perplexity", usage.perplexity}};
}

void write_rotation(const Job& job, const fs::path& dir, const RotationReport& rep) {
  job.write(dir / "metrics.csv", rotation_metrics_csv(rep));
  job.write(dir / "uq_scores.csv", uq_scores_csv(rep.uq.rows));
  job.write(dir / "baseline_scores.csv", uq_scores_csv(rep.baseline.rows));
  job.write(dir / "histogram_known.csv", histogram_csv(rep.uq.known_histogram));
  job.write(dir / "histogram_unknown.csv", histogram_csv(rep.uq.unknown_histogram));
  job.write(dir / "baseline_histogram_known.csv", histogram_csv(rep.baseline.known_histogram));
  job.write(dir / "baseline_histogram_unknown.csv", histogram_csv(rep.baseline.unknown_histogram));
  auto policy = [](const RejectionPolicy& p) {
    return json{{"epsilon", p.epsilon},
                {"grid", p.grid},
                {"grid_f_scores", p.grid_f_scores},
                {"validation_known", p.validation_known},
                {"validation_unknown", p.validation_unknown}};
  };
  const json summary = {{"rotation", rep.rotation},
                        {"removed_contexts", rep.removed_contexts},
                        {"seed", rep.seed},
                        {"config_fingerprint", rep.config_fingerprint},
                        {"train_windows", rep.train_windows},
                        {"removed_windows_in_training", rep.removed_windows_in_training},
                        {"known_test_windows", rep.known_test_windows},
                        {"unknown_windows", rep.unknown_windows},
                        {"known_activity_accuracy", rep.known_activity_accuracy},
                        {"uq_policy", policy(rep.uq.policy)},
                        {"baseline_policy", policy(rep.baseline.policy)}};
  job.write(dir / "summary.json", summary.dump(2) + "\n");
}

json run_rotate(const Job& job) {
  std::string rows =
      "seed,rotation,removed_contexts,uq_sensitivity,uq_specificity,uq_accuracy,uq_f_score,uq_epsilon,"
      "uq_mean_known_confidence,uq_mean_unknown_confidence,baseline_sensitivity,baseline_specificity,"
      "baseline_accuracy,baseline_f_score,baseline_epsilon,baseline_mean_known_confidence,"
      "baseline_mean_unknown_confidence\n";
  std::vector<double> uq_f, base_f, uq_acc, base_acc;
  std::size_t separated = 0, total = 0;
  for (std::uint64_t seed : job.seeds()) {
    const LabeledDataset ds = job.dataset(seed);
    const auto reports = run_rotation_protocol(ds, job.config.rotation(), seed, job.fingerprint, job.jobs);
    const fs::path base = job.seeds().size() == 1 ? fs::path() : fs::path(fmt::format("seed_{}", seed));
    for (const RotationReport& rep : reports) {
      write_rotation(job, base / fmt::format("rotation_{}", rep.rotation), rep);
      std::string removed;
      for (std::size_t c : rep.removed_contexts) removed += (removed.empty() ? "" : ";") + std::to_string(c);
      const ScorerOutcome& u = rep.uq;
      const ScorerOutcome& b = rep.baseline;
      rows += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", seed, rep.rotation, removed,
                          num(u.metrics.sensitivity), num(u.metrics.specificity), num(u.metrics.accuracy),
                          num(u.metrics.f_score), num(u.policy.epsilon), num(u.mean_known_confidence),
                          num(u.mean_unknown_confidence), num(b.metrics.sensitivity), num(b.metrics.specificity),
                          num(b.metrics.accuracy), num(b.metrics.f_score), num(b.policy.epsilon),
                          num(b.mean_known_confidence), num(b.mean_unknown_confidence));
      uq_f.push_back(u.metrics.f_score);
      base_f.push_back(b.metrics.f_score);
      uq_acc.push_back(u.metrics.accuracy);
      base_acc.push_back(b.metrics.accuracy);
      separated += u.mean_unknown_confidence < u.mean_known_confidence ? 1 : 0;
      ++total;
    }
  }
  job.write("rotations.csv", rows);
  return {{"uq_f_score", mean_std_json(uq_f)},
          {"baseline_f_score", mean_std_json(base_f)},
          {"uq_accuracy", mean_std_json(uq_acc)},
          {"baseline_accuracy", mean_std_json(base_acc)},
          {"rotations_with_unknown_below_known", separated},
          {"rotations", total}};
}

json run_sweep(const Job& job) {
  std::string rows = "seed,variant,coefficient,accuracy,micro_f,gate_perplexity\n";
  json per_seed = json::array();
  for (std::uint64_t seed : job.seeds()) {
    const LabeledDataset ds = job.dataset(seed);
    const auto table = pretrain_vs_regularization_sweep(ds, job.config.sweep_coefficients, job.config.benchmark(), seed);
    double best_regularized = 0.0, pretrained = 0.0;
    for (const SweepRow& r : table) {
      rows += fmt::format("{},{},{},{},{},{}\n", seed, r.variant, num(r.coefficient), num(r.accuracy), num(r.micro_f),
                          num(r.gate_perplexity));
      if (r.variant == "pretrained") {
        pretrained = r.accuracy;
      } else {
        best_regularized = std::max(best_regularized, r.accuracy);
      }
    }
    per_seed.push_back({{"seed", seed}, {"pretrained_accuracy", pretrained}, {"best_regularized_accuracy", best_regularized}});
  }
  job.write("sweep.csv", rows);
  return per_seed;
}

// Checks that cannot wait until the first write.
void validate_for_command(const std::string& command, const RunConfig& config) {
  if (std::find(cli_commands().begin(), cli_commands().end(), command) == cli_commands().end()) {
    throw ConfigError(fmt::format("unknown command '{}'", command));
  }
  if (config.dataset.kind == "csv" && !fs::is_regular_file(config.dataset.csv_path)) {
    throw ConfigError(fmt::format("dataset.csv_path '{}' does not exist", config.dataset.csv_path.string()));
  }
  if (command == "rotate" && config.dataset.kind == "synthetic" &&
      config.dataset.synthetic.n_contexts <= config.uq.removed_per_rotation) {
    throw ConfigError("rotate needs more synthetic contexts than uq.removed_per_rotation");
  }
  if (command == "eval") {
    const fs::path model =
        config.evaluation.model_path.empty() ? config.output_dir / "model.json" : config.evaluation.model_path;
    if (!fs::is_regular_file(model)) throw ConfigError(fmt::format("model checkpoint '{}' does not exist", model.string()));
  }
}

}  // namespace

int execute(const CliOptions& options, std::ostream& log, std::ostream& err) {
  RunConfig config;
  try {
    if (options.jobs == 0) throw ConfigError("--jobs must be at least 1");
    config = load_config(options.config);
    if (options.seed) config.seed = *options.seed;
    if (options.out) config.output_dir = *options.out;
    config.validate();
    validate_for_command(options.command, config);
  } catch (const ConfigError& e) {
    err << "abnet: invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    Job job{config, config_fingerprint(config), config.output_dir, options.jobs, log};
    log << fmt::format("abnet {}: config {} -> {}\n", options.command, job.fingerprint.substr(0, 12),
                       job.out.string());
    json metrics;
    if (options.command == "synth") {
      metrics = run_synth(job);
    } else if (options.command == "pretrain") {
      metrics = run_pretrain(job);
    } else if (options.command == "train") {
      metrics = run_train(job);
    } else if (options.command == "eval") {
      metrics = run_eval(job);
    } else if (options.command == "rotate") {
      metrics = run_rotate(job);
    } else {
      metrics = run_sweep(job);
    }
    job.write("config.json", canonical_config_text(config));
    job.finish(options.command, metrics);
    log << metrics.dump(2) << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "abnet " << options.command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cli_main(int argc, const char* const* argv, std::ostream& log, std::ostream& err) {
  CLI::App app{"Alpha-beta mixture networks for context-aware activity recognition"};
  app.set_version_flag("--version", kVersion);
  CliOptions options;
  std::uint64_t seed = 0;
  std::string out;
  app.require_subcommand(1, 1);
  const std::map<std::string, std::string> about{
      {"synth", "write the configured synthetic dataset as CSV"},
      {"pretrain", "pre-train the gate (base net, embedding, k-means) without EM"},
      {"train", "train alpha-beta and the equal-capacity baseline, report test metrics"},
      {"eval", "score a saved checkpoint on the held-out fold"},
      {"rotate", "leave-contexts-out rotations with MED and logistic rejection"},
      {"sweep", "pre-training versus balance regularization"}};
  for (const std::string& name : cli_commands()) {
    CLI::App* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", options.config, "JSON run configuration")->required();
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "seed (overrides the config seed)");
    sub->add_option("--jobs", options.jobs, "parallel rotations")->default_val(1);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    log << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "abnet: " << e.what() << "\n";
    return kExitValidation;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    options.command = sub->get_name();
    if (sub->count("--seed")) options.seed = seed;
    if (sub->count("--out")) options.out = out;
  }
  return execute(options, log, err);
}

}  // namespace abnet
