#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ifprobe/backend.hpp"
#include "ifprobe/config.hpp"
#include "ifprobe/dataset.hpp"
#include "ifprobe/error.hpp"
#include "ifprobe/verifier.hpp"

namespace ifprobe::experiment {

/// Raised after a failed stage has been written to the manifest.
class StageError : public Error {
 public:
  StageError(ErrorKind kind, std::string stage, const std::string& message)
      : Error(kind, stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ExperimentResult {
  nlohmann::json manifest;
  std::filesystem::path manifest_path;
};

/// Manifests carry a "created_at" timestamp; everything else is a pure
/// function of the inputs and config.
inline constexpr const char* kTimestampKey = "created_at";

/// split -> train -> eval for every (position, layer) cell and every split
/// (one per seed for task splits, one per held-out type for leave-one-out).
ExperimentResult run_probe_experiment(const RunConfig& config);

/// Optional alpha selection on a validation slice, then steering along the
/// probe direction and each random-seed direction.
ExperimentResult run_steer_experiment(const RunConfig& config);

/// Per-kind alignment report as JSON (sensitivity.json) and CSV (sensitivity.csv).
ExperimentResult run_sensitivity(const RunConfig& config);

std::unique_ptr<backend::Backend> make_backend(const EndpointConfig& endpoint, const dataset::Dataset& dataset,
                                               int timeout_ms, int retries);
std::unique_ptr<backend::Judge> make_judge(const EndpointConfig& endpoint, int timeout_ms, int retries);

struct ResponseLine {
  std::string prompt_id;
  std::string response;
};

std::vector<ResponseLine> read_responses(const std::filesystem::path& path);
void write_responses(const std::vector<ResponseLine>& responses, const std::filesystem::path& path);

struct LabelLine {
  std::string prompt_id;
  verifier::VerificationResult result;
};

/// Verifies each response against its prompt's instruction.
std::vector<LabelLine> verify_responses(const dataset::Dataset& dataset, const std::vector<ResponseLine>& responses);
void write_labels(const std::vector<LabelLine>& labels, const std::filesystem::path& path);

struct SynthOptions {
  std::size_t tasks = 100;
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  double noise_scale = 1.0;
  double threshold = 0.0;
  /// Layers written to the store; the last one is the backend's last layer and
  /// its first-token reps are exactly the backend's R_original.
  std::vector<int> layers = {14, 26, 32};
  std::size_t perturbation_prompts = 20;
  std::size_t perturbations_per_kind = 5;
};

struct SynthPaths {
  std::filesystem::path dataset, reps, responses, labels, backend, perturbations;
};

/// Writes the planted-direction fixture (dataset, reps, responses, labels,
/// backend config, perturbation store) into `out_dir`.
SynthPaths write_synthetic_fixture(const SynthOptions& options, const std::filesystem::path& out_dir);

/// The fixture dataset on its own: `tasks` tasks times the five built-in types.
dataset::Dataset synthetic_dataset(std::size_t tasks);

}  // namespace ifprobe::experiment
