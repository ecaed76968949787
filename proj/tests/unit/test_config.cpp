#include <doctest.h>

#include <fstream>

#include "ifprobe/config.hpp"
#include "ifprobe/error.hpp"
#include "oracles.hpp"

using namespace ifprobe;
using namespace ifprobe::experiment;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kInvariant;
}

}  // namespace

TEST_CASE("run config round-trips through JSON") {
  RunConfig c;
  c.dataset_path = "d.json";
  c.split.kind = dataset::SplitKind::kInstructionLoo;
  c.positions = {repstore::TokenPosition::kLast};
  c.layers = {14, 32};
  c.steering.alpha = -0.3;
  c.steering.candidates = {0.1, 0.2};
  c.steering.random_seeds = {7, 8};
  c.steering.layer = 31;
  c.backend = {"url", "http://x", 0.2};
  c.judge = {"cliff", "", 0.25};
  c.hyperparams.epochs = 10;
  c.jobs = 3;
  const auto j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(to_json(run_config_from_json(to_json(RunConfig{}))) == to_json(RunConfig{}));
}

TEST_CASE("TOML and JSON configs are equivalent") {
  oracle::TempDir dir("cfg");
  write(dir / "c.toml", R"(
dataset_path = "data.json"
reps_path = "/abs/reps.ifrep"
jobs = 2
layers = [14, 26]
positions = ["first", "last"]

[split]
kind = "loo"

[hyperparams]
epochs = 50
learning_rate = 0.01

[steering]
direction_path = "probe.json"
candidates = [0.05, 0.1]

[backend]
kind = "synthetic"
target = "backend.json"
)");
  write(dir / "c.json", R"({
  "dataset_path": "data.json", "reps_path": "/abs/reps.ifrep", "jobs": 2, "layers": [14, 26],
  "positions": ["first", "last"], "split": {"kind": "loo"},
  "hyperparams": {"epochs": 50, "learning_rate": 0.01},
  "steering": {"direction_path": "probe.json", "candidates": [0.05, 0.1]},
  "backend": {"kind": "synthetic", "target": "backend.json"}
})");
  const auto t = load_run_config(dir / "c.toml");
  const auto j = load_run_config(dir / "c.json");
  CHECK(to_json(t) == to_json(j));
  CHECK(t.dataset_path == (dir / "data.json").string());
  CHECK(t.reps_path == "/abs/reps.ifrep");
  CHECK(t.steering.direction_path == (dir / "probe.json").string());
  CHECK(t.backend.target == (dir / "backend.json").string());
  CHECK(t.hyperparams.epochs == 50);
  CHECK(t.split.kind == dataset::SplitKind::kInstructionLoo);
}

TEST_CASE("config errors") {
  oracle::TempDir dir("cfgerr");
  write(dir / "a.json", R"({"dataset_path": "x", "mystery": 1})");
  CHECK(kind_of([&] { load_run_config(dir / "a.json"); }) == ErrorKind::kSchema);
  write(dir / "b.toml", "dataset_path = \n");
  CHECK(kind_of([&] { load_run_config(dir / "b.toml"); }) == ErrorKind::kParse);
  write(dir / "c.json", R"({"split": {"kind": "random"}})");
  CHECK(kind_of([&] { load_run_config(dir / "c.json"); }) == ErrorKind::kSchema);
  write(dir / "d.json", R"({"jobs": "many"})");
  CHECK(kind_of([&] { load_run_config(dir / "d.json"); }) == ErrorKind::kSchema);
  CHECK(kind_of([&] { load_run_config(dir / "missing.json"); }) == ErrorKind::kIo);
}

TEST_CASE("toml conversion") {
  const auto j = toml_to_json("a = 1\nb = 2.5\nc = true\nd = [\"x\"]\n[e]\nf = \"g\"\n");
  CHECK(j == nlohmann::json{{"a", 1}, {"b", 2.5}, {"c", true}, {"d", {"x"}}, {"e", {{"f", "g"}}}});
}
