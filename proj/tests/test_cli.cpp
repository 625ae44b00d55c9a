#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "abnet/cli.hpp"
#include "abnet/config.hpp"
#include "abnet/io.hpp"

using namespace abnet;
namespace fs = std::filesystem;

namespace {

const char* kSmall =
    R"({"dataset":{"synthetic":{"n_contexts":3,"windows_per_activity":15}},"em":{"rounds":2},)"
    R"("pretraining":{"gate_epochs":3},"logistic":{"epochs":50}})";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "abnet_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config_in.json";
  write_file_atomic(p, text);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(ABNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("command list") {
  CHECK(cli_commands() == std::vector<std::string>{"synth", "pretrain", "train", "eval", "rotate", "sweep"});
}

TEST_CASE("invalid config exits 1 without writing") {
  const fs::path dir = scratch("invalid");
  const fs::path cfg = write_config(dir, R"({"em":{"roundz":2}})");
  const fs::path out = dir / "out";
  CHECK(run("train --config " + cfg.string() + " --out " + out.string()) == 1);
  CHECK_FALSE(fs::exists(out));

  std::ostringstream log, err;
  CHECK(execute({"train", cfg, out, std::nullopt, 1}, log, err) == kExitValidation);
  CHECK(err.str().find("em.roundz") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("missing model for eval is a validation error") {
  const fs::path dir = scratch("eval_missing");
  const fs::path cfg = write_config(dir, kSmall);
  CHECK(run("eval --config " + cfg.string() + " --out " + (dir / "out").string()) == 1);
  CHECK(run("frobnicate --config " + cfg.string()) != 0);
}

TEST_CASE("train then eval") {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir, kSmall);
  const fs::path out = dir / "out";
  REQUIRE(run("train --config " + cfg.string() + " --out " + out.string()) == 0);
  for (const char* f : {"config.json", "summary.json", "metrics.csv", "model.json", "confusion.csv", "trace.csv",
                        "gate_usage.csv", "baseline_confusion.csv"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const RunConfig written = load_config(out / "config.json");
  CHECK(canonical_config_text(written) == read_file(out / "config.json"));
  const auto summary = nlohmann::json::parse(read_file(out / "summary.json"));
  CHECK(summary["command"] == "train");
  CHECK(summary["config_fingerprint"] == config_fingerprint(written));

  REQUIRE(run("eval --config " + cfg.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "eval_metrics.csv"));
  CHECK(fs::exists(out / "eval_confusion.csv"));
}

TEST_CASE("rotate on five contexts is deterministic") {
  const fs::path dir = scratch("rotate");
  const fs::path cfg = write_config(
      dir, R"({"dataset":{"synthetic":{"n_contexts":5,"windows_per_activity":10}},"em":{"rounds":1},)"
           R"("pretraining":{"gate_epochs":3},"logistic":{"epochs":30}})");
  const fs::path a = dir / "a", b = dir / "b";
  REQUIRE(run("rotate --config " + cfg.string() + " --out " + a.string() + " --jobs 2") == 0);
  REQUIRE(run("rotate --config " + cfg.string() + " --out " + b.string()) == 0);
  for (int r = 0; r < 5; ++r) {
    const fs::path sub = "rotation_" + std::to_string(r);
    REQUIRE(fs::is_directory(a / sub));
    for (const char* f : {"metrics.csv", "uq_scores.csv", "baseline_scores.csv", "histogram_known.csv",
                          "histogram_unknown.csv"}) {
      CHECK(read_file(a / sub / f) == read_file(b / sub / f));
    }
  }
  CHECK(fs::exists(a / "summary.json"));
  CHECK(read_file(a / "rotations.csv") == read_file(b / "rotations.csv"));
}

TEST_CASE("synth is byte-identical across runs and honors --seed") {
  const fs::path dir = scratch("synth");
  const fs::path cfg = write_config(dir, kSmall);
  REQUIRE(run("synth --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run("synth --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
  REQUIRE(run("synth --config " + cfg.string() + " --out " + (dir / "c").string() + " --seed 7") == 0);
  const std::string a = read_file(dir / "a" / "dataset.csv");
  CHECK(a == read_file(dir / "b" / "dataset.csv"));
  CHECK(a != read_file(dir / "c" / "dataset.csv"));
}
