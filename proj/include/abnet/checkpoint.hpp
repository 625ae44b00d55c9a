#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abnet/dataset.hpp"
#include "abnet/mixture.hpp"
#include "abnet/network.hpp"

namespace abnet {

// A trained alpha-beta model plus what is needed to apply it to raw windows.
struct Checkpoint {
  MixtureModel model;
  std::vector<std::string> activity_names;
  std::vector<std::string> context_names;
  std::optional<NormalizationStats> normalization;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

// Parameter values are written with round-trip precision, so save/load is bit-exact.
std::string checkpoint_to_text(const Checkpoint& checkpoint);
// Throws SchemaError on malformed or inconsistent content.
Checkpoint checkpoint_from_text(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace abnet
