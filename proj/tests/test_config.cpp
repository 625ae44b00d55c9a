#include <doctest.h>

#include <filesystem>

#include "abnet/checkpoint.hpp"
#include "abnet/config.hpp"
#include "abnet/errors.hpp"
#include "abnet/io.hpp"

using namespace abnet;
namespace fs = std::filesystem;

TEST_CASE("defaults survive a JSON round trip") {
  const RunConfig a;
  const RunConfig b = config_from_json(config_to_json(a));
  CHECK(canonical_config_text(b) == canonical_config_text(a));
  CHECK(config_to_json(a)["model"]["n_contexts"] == 3);
  CHECK(config_to_json(a)["uq"]["epsilon_step"] == 0.05);
}

TEST_CASE("partial sections keep defaults") {
  const RunConfig c = config_from_json(nlohmann::json::parse(R"({"em":{"rounds":4},"seed":9})"));
  CHECK(c.model.em.em_rounds == 4);
  CHECK(c.model.em.m_epochs == RunConfig{}.model.em.m_epochs);
  CHECK(c.seed == 9);
  CHECK(c.synthetic().seed == 9);
}

TEST_CASE("bad configs are rejected with the key name") {
  auto message = [](const char* text) -> std::string {
    try {
      config_from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message(R"({"em":{"roundz":4}})").find("em.roundz") != std::string::npos);
  CHECK(message(R"({"bogus":1})").find("bogus") != std::string::npos);
  CHECK(message(R"({"em":{"rounds":"many"}})").find("em.rounds") != std::string::npos);
  CHECK_FALSE(message(R"({"model":{"n_contexts":0}})").empty());
  CHECK_FALSE(message(R"({"dataset":{"kind":"parquet"}})").empty());
  CHECK_FALSE(message(R"({"uq":{"epsilon_step":1.5}})").empty());
}

TEST_CASE("unreadable config files are config errors") {
  CHECK_THROWS_AS(load_config("/nonexistent/abnet.json"), ConfigError);
  const fs::path p = fs::temp_directory_path() / "abnet_test_config_bad.json";
  write_file_atomic(p, "{ not json");
  CHECK_THROWS_AS(load_config(p), ConfigError);
}

TEST_CASE("fingerprint") {
  RunConfig a;
  const std::string fp = config_fingerprint(a);
  CHECK(fp.size() == 64);
  CHECK(config_fingerprint(a) == fp);
  a.output_dir = "elsewhere";
  CHECK(config_fingerprint(a) == fp);
  a.seed = 2;
  CHECK(config_fingerprint(a) != fp);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const NetworkSpec spec = ArchitectureConfig{}.network(6, 30, 4);
  Checkpoint c;
  c.model = MixtureModel::create(spec, 3, 4, 42);
  c.model.context_prior = {0.2, 0.3, 0.5};
  c.activity_names = {"a", "b", "c", "d"};
  c.context_names = {"x", "y", "z"};
  NormalizationStats stats;
  stats.mean.assign(6, 0.1);
  stats.stddev.assign(6, 1.0 / 3.0);
  c.normalization = stats;
  c.config_fingerprint = "ff";
  c.seed = 5;

  const fs::path p = fs::temp_directory_path() / "abnet_test_checkpoint.json";
  save_checkpoint(p, c);
  const Checkpoint back = load_checkpoint(p);
  CHECK(back.model.gate == c.model.gate);
  CHECK(back.model.experts == c.model.experts);
  CHECK(back.model.context_prior == c.model.context_prior);
  CHECK(back.activity_names == c.activity_names);
  CHECK(back.context_names == c.context_names);
  CHECK(*back.normalization == stats);
  CHECK(back.seed == 5);
  CHECK(checkpoint_to_text(back) == checkpoint_to_text(c));
}

TEST_CASE("malformed checkpoints are schema errors") {
  CHECK_THROWS_AS(checkpoint_from_text("[]"), SchemaError);
  CHECK_THROWS_AS(checkpoint_from_text("not json"), SchemaError);
  Checkpoint c;
  c.model = MixtureModel::create(ArchitectureConfig{}.network(2, 30, 2), 2, 2, 1);
  c.activity_names = {"a", "b"};
  auto j = nlohmann::json::parse(checkpoint_to_text(c));
  j["experts"][0]["values"].erase(0);
  CHECK_THROWS_AS(checkpoint_from_text(j.dump()), SchemaError);
  j = nlohmann::json::parse(checkpoint_to_text(c));
  j["version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_text(j.dump()), SchemaError);
}
