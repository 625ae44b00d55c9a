#include "abnet/config.hpp"

#include <cmath>
#include <set>

#include <openssl/evp.h>

#include <fmt/format.h>

#include "abnet/errors.hpp"
#include "abnet/io.hpp"

namespace abnet {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{} must be an object", name()));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        if (!v.is_array()) throw ConfigError("");
        for (const json& e : v) {
          if (!e.is_number_unsigned()) throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!v.is_array()) throw ConfigError("");
        for (const json& e : v) {
          if (!e.is_number()) throw ConfigError("");
        }
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}.{} has the wrong type", name(), key));
    }
  }

  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void get(const char* key, std::optional<std::size_t>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    std::size_t v = 0;
    get(key, v);
    out = v;
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(fmt::format("unknown config key '{}{}'", path_.empty() ? "" : path_ + ".", item.key()));
      }
    }
  }

 private:
  std::string name() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void RunConfig::validate() const {
  require(dataset.kind == "synthetic" || dataset.kind == "csv", "dataset.kind must be \"synthetic\" or \"csv\"");
  require(dataset.window_length >= 1, "dataset.window_length must be at least 1");
  if (dataset.kind == "csv") require(!dataset.csv_path.empty(), "dataset.csv_path is required for csv data");
  const SyntheticConfig& s = dataset.synthetic;
  require(s.n_contexts >= 1 && s.activities_per_context >= 1 && s.channels >= 1 && s.windows_per_activity >= 1 &&
              s.window_length >= 1,
          "dataset.synthetic counts must be at least 1");
  require(std::isfinite(s.noise_std) && s.noise_std >= 0.0, "dataset.synthetic.noise_std must be nonnegative");
  require(s.phase_jitter >= 0.0 && s.phase_jitter <= 1.0, "dataset.synthetic.phase_jitter must lie in [0, 1]");

  require(model.n_contexts >= 1, "model.n_contexts must be at least 1");
  require(!model.architecture.conv_channels.empty(), "model.conv_channels must not be empty");
  for (std::size_t c : model.architecture.conv_channels) require(c >= 1, "model.conv_channels entries must be >= 1");
  for (std::size_t w : model.architecture.dense_widths) require(w >= 1, "model.dense_widths entries must be >= 1");
  require(model.architecture.kernel_width >= 1 && model.architecture.stride >= 1,
          "model.kernel_width and model.stride must be at least 1");
  try {
    model.em.validate();
  } catch (const ContractError& e) {
    throw ConfigError(fmt::format("em: {}", e.what()));
  }
  require(model.pretrain.kmeans_max_iter >= 1 && model.pretrain.kmeans_restarts >= 1,
          "pretraining.kmeans_max_iter and kmeans_restarts must be at least 1");

  require(med.margin > 0.0 && std::isfinite(med.margin), "med.margin must be positive");
  require(med.slack_bound > 0.0 && std::isfinite(med.slack_bound), "med.slack_bound must be positive");
  require(med.tol > 0.0, "med.tol must be positive");
  require(med.max_iter >= 1, "med.max_iter must be at least 1");
  require(logistic.learning_rate > 0.0 && std::isfinite(logistic.learning_rate),
          "logistic.learning_rate must be positive");

  require(uq.epsilon_step > 0.0 && uq.epsilon_step < 1.0, "uq.epsilon_step must lie in (0, 1)");
  require(uq.histogram_bins >= 1, "uq.histogram_bins must be at least 1");
  require(uq.folds >= 3, "uq.folds must be at least 3");
  require(uq.removed_per_rotation >= 1, "uq.removed_per_rotation must be at least 1");
  require(!sweep_coefficients.empty(), "sweep.coefficients must not be empty");
  for (double c : sweep_coefficients) require(c >= 0.0 && std::isfinite(c), "sweep.coefficients must be nonnegative");
  require(evaluation.folds >= 2, "evaluation.folds must be at least 2");
  require(evaluation.test_fold < evaluation.folds, "evaluation.test_fold must be below evaluation.folds");
  require(evaluation.repeats >= 1, "evaluation.repeats must be at least 1");
  require(!output_dir.empty(), "output_dir must not be empty");
}

BenchmarkConfig RunConfig::benchmark() const {
  BenchmarkConfig b;
  b.alpha_beta = model;
  b.folds = evaluation.folds;
  b.test_fold = evaluation.test_fold;
  b.baseline_epochs = baseline_epochs;
  return b;
}

RotationConfig RunConfig::rotation() const {
  RotationConfig r;
  r.alpha_beta = model;
  r.med = med;
  r.logistic = logistic;
  r.epsilon_grid = epsilon_grid(uq.epsilon_step);
  r.folds = uq.folds;
  r.histogram_bins = uq.histogram_bins;
  r.removed_per_rotation = uq.removed_per_rotation;
  return r;
}

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig s = dataset.synthetic;
  s.seed = seed;
  return s;
}

json config_to_json(const RunConfig& c) {
  const SyntheticConfig& s = c.dataset.synthetic;
  const AlphaBetaConfig& m = c.model;
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"csv_path", c.dataset.csv_path.string()},
                  {"window_length", c.dataset.window_length},
                  {"channels", c.dataset.channels ? json(*c.dataset.channels) : json(nullptr)},
                  {"synthetic",
                   {{"n_contexts", s.n_contexts},
                    {"activities_per_context", s.activities_per_context},
                    {"channels", s.channels},
                    {"windows_per_activity", s.windows_per_activity},
                    {"window_length", s.window_length},
                    {"noise_std", s.noise_std},
                    {"phase_jitter", s.phase_jitter}}}};
  j["model"] = {{"n_contexts", m.n_contexts},
                {"conv_channels", m.architecture.conv_channels},
                {"kernel_width", m.architecture.kernel_width},
                {"stride", m.architecture.stride},
                {"dense_widths", m.architecture.dense_widths}};
  j["em"] = {{"rounds", m.em.em_rounds},         {"e_epochs", m.em.e_epochs},
             {"m_epochs", m.em.m_epochs},        {"batch_size", m.em.batch_size},
             {"learning_rate", m.em.learning_rate}, {"momentum", m.em.momentum},
             {"balance_coeff", m.em.balance_coeff}};
  j["pretraining"] = {{"enabled", m.pretrain.enabled},
                      {"base_epochs", m.pretrain.base.epochs},
                      {"gate_epochs", m.pretrain.gate.epochs},
                      {"kmeans_max_iter", m.pretrain.kmeans_max_iter},
                      {"kmeans_restarts", m.pretrain.kmeans_restarts}};
  j["baseline"] = {{"epochs", c.baseline_epochs}};
  j["med"] = {{"margin", c.med.margin}, {"slack_bound", c.med.slack_bound}, {"tol", c.med.tol},
              {"max_iter", c.med.max_iter}};
  j["logistic"] = {{"epochs", c.logistic.epochs}, {"learning_rate", c.logistic.learning_rate}};
  j["uq"] = {{"epsilon_step", c.uq.epsilon_step},
             {"histogram_bins", c.uq.histogram_bins},
             {"folds", c.uq.folds},
             {"removed_per_rotation", c.uq.removed_per_rotation}};
  j["sweep"] = {{"coefficients", c.sweep_coefficients}};
  j["evaluation"] = {{"folds", c.evaluation.folds},
                     {"test_fold", c.evaluation.test_fold},
                     {"repeats", c.evaluation.repeats},
                     {"model_path", c.evaluation.model_path.string()}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  {
    Section d = root.child("dataset");
    d.get("kind", c.dataset.kind);
    d.get("csv_path", c.dataset.csv_path);
    d.get("window_length", c.dataset.window_length);
    d.get("channels", c.dataset.channels);
    Section s = d.child("synthetic");
    SyntheticConfig& sc = c.dataset.synthetic;
    s.get("n_contexts", sc.n_contexts);
    s.get("activities_per_context", sc.activities_per_context);
    s.get("channels", sc.channels);
    s.get("windows_per_activity", sc.windows_per_activity);
    s.get("window_length", sc.window_length);
    s.get("noise_std", sc.noise_std);
    s.get("phase_jitter", sc.phase_jitter);
    s.finish();
    d.finish();
  }
  {
    Section m = root.child("model");
    m.get("n_contexts", c.model.n_contexts);
    m.get("conv_channels", c.model.architecture.conv_channels);
    m.get("kernel_width", c.model.architecture.kernel_width);
    m.get("stride", c.model.architecture.stride);
    m.get("dense_widths", c.model.architecture.dense_widths);
    m.finish();
  }
  {
    Section e = root.child("em");
    EmConfig& em = c.model.em;
    e.get("rounds", em.em_rounds);
    e.get("e_epochs", em.e_epochs);
    e.get("m_epochs", em.m_epochs);
    e.get("batch_size", em.batch_size);
    e.get("learning_rate", em.learning_rate);
    e.get("momentum", em.momentum);
    e.get("balance_coeff", em.balance_coeff);
    e.finish();
  }
  {
    Section p = root.child("pretraining");
    PretrainConfig& pc = c.model.pretrain;
    p.get("enabled", pc.enabled);
    p.get("base_epochs", pc.base.epochs);
    p.get("gate_epochs", pc.gate.epochs);
    p.get("kmeans_max_iter", pc.kmeans_max_iter);
    p.get("kmeans_restarts", pc.kmeans_restarts);
    p.finish();
  }
  {
    Section b = root.child("baseline");
    b.get("epochs", c.baseline_epochs);
    b.finish();
  }
  {
    Section m = root.child("med");
    m.get("margin", c.med.margin);
    m.get("slack_bound", c.med.slack_bound);
    m.get("tol", c.med.tol);
    m.get("max_iter", c.med.max_iter);
    m.finish();
  }
  {
    Section l = root.child("logistic");
    l.get("epochs", c.logistic.epochs);
    l.get("learning_rate", c.logistic.learning_rate);
    l.finish();
  }
  {
    Section u = root.child("uq");
    u.get("epsilon_step", c.uq.epsilon_step);
    u.get("histogram_bins", c.uq.histogram_bins);
    u.get("folds", c.uq.folds);
    u.get("removed_per_rotation", c.uq.removed_per_rotation);
    u.finish();
  }
  {
    Section s = root.child("sweep");
    s.get("coefficients", c.sweep_coefficients);
    s.finish();
  }
  {
    Section e = root.child("evaluation");
    e.get("folds", c.evaluation.folds);
    e.get("test_fold", c.evaluation.test_fold);
    e.get("repeats", c.evaluation.repeats);
    e.get("model_path", c.evaluation.model_path);
    e.finish();
  }
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.finish();

  // Pre-training SGD shares the EM optimizer settings.
  for (SgdSchedule* s : {&c.model.pretrain.base, &c.model.pretrain.gate}) {
    s->batch_size = c.model.em.batch_size;
    s->learning_rate = c.model.em.learning_rate;
    s->momentum = c.model.em.momentum;
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

std::string canonical_config_text(const RunConfig& config) { return config_to_json(config).dump(2) + "\n"; }

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string config_fingerprint(const RunConfig& config) {
  json j = config_to_json(config);
  j.erase("output_dir");
  return sha256_hex(j.dump(2) + "\n");
}

LabeledDataset load_dataset(const RunConfig& config) {
  if (config.dataset.kind == "synthetic") return generate_synthetic(config.synthetic());
  CsvSchema schema;
  schema.window_length = config.dataset.window_length;
  schema.channels = config.dataset.channels;
  return load_windows_csv(config.dataset.csv_path, schema).dataset;
}

}  // namespace abnet
