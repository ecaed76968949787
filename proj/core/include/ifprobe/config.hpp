#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ifprobe/dataset.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/repstore.hpp"

namespace ifprobe::experiment {

struct SplitConfig {
  dataset::SplitKind kind = dataset::SplitKind::kTaskSplit;
  double fraction = 0.7;
  /// One task split per seed; ignored for leave-one-out.
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
};

/// Where generations or quality scores come from.
///   backend kinds: "synthetic" (target = backend config JSON), "url", "cmd"
///   judge kinds:   "stub", "cliff" (SteeringCliffJudge with `cliff`), "url", "cmd"
struct EndpointConfig {
  std::string kind;
  std::string target;
  double cliff = 0.2;

  friend bool operator==(const EndpointConfig&, const EndpointConfig&) = default;
};

struct SteeringSection {
  /// Probe or direction file.
  std::string direction_path;
  std::optional<double> alpha;
  /// When non-empty, alpha is selected on a validation slice.
  std::vector<double> candidates;
  std::vector<std::uint64_t> random_seeds;
  double validation_fraction = 0.1;
  std::uint64_t validation_seed = 0;
  std::optional<int> layer;
  repstore::TokenPosition position = repstore::TokenPosition::kFirst;
  int repeats = 1;
};

struct RunConfig {
  std::string dataset_path;
  std::string reps_path;
  /// Labels JSONL; when empty the labels embedded in the reps are used.
  std::string labels_path;
  std::string perturbations_path;
  SplitConfig split;
  probe::ProbeHyperparams hyperparams;
  /// Probe grid; empty means every position/layer present in the store.
  std::vector<repstore::TokenPosition> positions;
  std::vector<int> layers;
  SteeringSection steering;
  EndpointConfig backend{"synthetic", "", 0.2};
  EndpointConfig judge{"stub", "", 0.2};
  int timeout_ms = 30000;
  int retries = 2;
  std::size_t jobs = 1;
  std::string output_dir = "ifprobe-out";
  bool emit_splits = false;
  /// Manifest of an interrupted steering run to resume from.
  std::string resume_path;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Converts a TOML document to the equivalent JSON value.
nlohmann::json toml_to_json(std::string_view toml_text);

/// Loads JSON or TOML (chosen by extension: .toml is TOML, anything else is
/// JSON). Relative paths inside the file resolve against its directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ifprobe::experiment
