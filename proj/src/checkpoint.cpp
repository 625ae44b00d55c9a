#include "abnet/checkpoint.hpp"

#include "abnet/errors.hpp"
#include "abnet/io.hpp"

namespace abnet {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "abnet-checkpoint";
constexpr int kVersion = 1;

json params_to_json(const Parameters& p) { return {{"init_seed", p.init_seed()}, {"values", p.flatten()}}; }

Parameters params_from_json(const NetworkSpec& spec, const json& j) {
  const auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != spec.parameter_count()) {
    throw SchemaError("checkpoint parameter count does not match its network spec");
  }
  return Parameters::from_flat(spec, values, j.at("init_seed").get<std::uint64_t>());
}

}  // namespace

json spec_to_json(const NetworkSpec& spec) {
  json conv = json::array();
  for (const ConvLayerSpec& c : spec.conv_layers) {
    conv.push_back({{"out_channels", c.out_channels}, {"kernel_width", c.kernel_width}, {"stride", c.stride}});
  }
  return {{"input_channels", spec.input_channels},
          {"input_length", spec.input_length},
          {"conv_layers", conv},
          {"dense_layers", spec.dense_layers},
          {"output_units", spec.output_units}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.input_channels = j.at("input_channels").get<std::size_t>();
  spec.input_length = j.at("input_length").get<std::size_t>();
  for (const json& c : j.at("conv_layers")) {
    spec.conv_layers.push_back({c.at("out_channels").get<std::size_t>(), c.at("kernel_width").get<std::size_t>(),
                                c.at("stride").get<std::size_t>()});
  }
  spec.dense_layers = j.at("dense_layers").get<std::vector<std::size_t>>();
  spec.output_units = j.at("output_units").get<std::size_t>();
  spec.validate();
  return spec;
}

std::string checkpoint_to_text(const Checkpoint& cp) {
  json experts = json::array();
  for (const Parameters& p : cp.model.experts) experts.push_back(params_to_json(p));
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config_fingerprint"] = cp.config_fingerprint;
  j["seed"] = cp.seed;
  j["gate_spec"] = spec_to_json(cp.model.gate_spec);
  j["expert_spec"] = spec_to_json(cp.model.expert_spec);
  j["gate"] = params_to_json(cp.model.gate);
  j["experts"] = experts;
  j["context_prior"] = cp.model.context_prior;
  j["activity_names"] = cp.activity_names;
  j["context_names"] = cp.context_names;
  if (cp.normalization) {
    j["normalization"] = {{"mean", cp.normalization->mean}, {"stddev", cp.normalization->stddev}};
  } else {
    j["normalization"] = nullptr;
  }
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kFormat) throw SchemaError("not an abnet checkpoint");
    if (j.at("version").get<int>() != kVersion) throw SchemaError("unsupported checkpoint version");
    Checkpoint cp;
    cp.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    cp.seed = j.at("seed").get<std::uint64_t>();
    cp.model.gate_spec = spec_from_json(j.at("gate_spec"));
    cp.model.expert_spec = spec_from_json(j.at("expert_spec"));
    cp.model.gate = params_from_json(cp.model.gate_spec, j.at("gate"));
    for (const json& e : j.at("experts")) cp.model.experts.push_back(params_from_json(cp.model.expert_spec, e));
    cp.model.context_prior = j.at("context_prior").get<std::vector<double>>();
    cp.activity_names = j.at("activity_names").get<std::vector<std::string>>();
    cp.context_names = j.at("context_names").get<std::vector<std::string>>();
    if (!j.at("normalization").is_null()) {
      cp.normalization = NormalizationStats{j["normalization"].at("mean").get<std::vector<double>>(),
                                            j["normalization"].at("stddev").get<std::vector<double>>()};
    }
    cp.model.validate();
    if (cp.activity_names.size() != cp.model.activity_count()) {
      throw SchemaError("checkpoint activity dictionary does not match the expert output width");
    }
    return cp;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw SchemaError(std::string("inconsistent checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, checkpoint_to_text(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_text(read_file(path)); }

}  // namespace abnet
