#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ifprobe/backend.hpp"
#include "ifprobe/dataset.hpp"
#include "ifprobe/error.hpp"
#include "ifprobe/probe.hpp"

namespace ifprobe::steer {

struct SteeringConfig {
  probe::Direction direction;
  double alpha = 0.0;
  /// Unset means the backend's last layer.
  std::optional<int> layer;
  repstore::TokenPosition position = repstore::TokenPosition::kFirst;
};

/// rep + alpha * d_vec.
Eigen::VectorXd apply_steering(const Eigen::VectorXd& rep, const probe::Direction& direction, double alpha);

/// Unit-norm standard-Gaussian direction, deterministic per seed.
probe::Direction random_direction(Eigen::Index dim, std::uint64_t seed);

struct TransitionReport {
  std::size_t f2t = 0, f2f = 0, t2t = 0, t2f = 0;
  std::optional<double> scr;  // f2t / (f2t + f2f)
  std::optional<double> spr;  // t2t / (t2t + t2f)
};

/// Throws Error(kValidation) when the key sets differ.
TransitionReport transition_metrics(const std::map<std::string, bool>& before,
                                    const std::map<std::string, bool>& after);

/// Paired result of one prompt under the unsteered and steered arms.
struct PromptOutcome {
  std::string prompt_id;
  bool passed_original = false;
  bool passed_steered = false;
  int score_original = 0;
  int score_steered = 0;
};

struct SteeringReport {
  double sr_original = 0.0;
  double sr_steered = 0.0;
  std::optional<double> qr_original;
  std::optional<double> qr_steered;
  TransitionReport transitions;
  std::size_t n = 0;
  SteeringConfig config;
  int layer = 0;  // resolved layer
  // Raw counts behind SR and QR.
  std::size_t passed_original = 0;
  std::size_t passed_steered = 0;
  std::size_t quality_original = 0;  // passing and score > 7
  std::size_t quality_steered = 0;
};

nlohmann::json to_json(const SteeringReport& report);
nlohmann::json to_json(const PromptOutcome& outcome);
PromptOutcome outcome_from_json(const nlohmann::json& j);

/// Builds the report from per-prompt outcomes. Quality counts use score > 7.
SteeringReport assemble_report(const std::vector<PromptOutcome>& outcomes, const SteeringConfig& config,
                               int resolved_layer);

/// Thrown when a backend or judge failure interrupts a run; carries the
/// outcomes completed so far so the run can be resumed.
class PartialRunError : public Error {
 public:
  PartialRunError(ErrorKind kind, const std::string& message, std::vector<PromptOutcome> completed)
      : Error(kind, message), completed_(std::move(completed)) {}
  const std::vector<PromptOutcome>& completed() const { return completed_; }

 private:
  std::vector<PromptOutcome> completed_;
};

struct EvaluateOptions {
  /// Maximum concurrent prompt evaluations.
  std::size_t jobs = 1;
  /// Outcomes from an interrupted run; these prompts are not re-evaluated.
  std::vector<PromptOutcome> resume;
};

/// Generates each prompt unsteered and steered, verifies both responses and
/// judges their quality. Outcomes are sorted by prompt_id.
std::vector<PromptOutcome> collect_outcomes(backend::Backend& backend, backend::Judge& judge,
                                            const std::vector<dataset::PromptRecord>& prompts,
                                            const SteeringConfig& config, const EvaluateOptions& options = {});

SteeringReport evaluate_steering(backend::Backend& backend, backend::Judge& judge,
                                 const std::vector<dataset::PromptRecord>& prompts,
                                 const SteeringConfig& config, const EvaluateOptions& options = {});

struct AlphaCandidateResult {
  double alpha = 0.0;
  SteeringReport report;
  bool satisfies_quality = false;
};

struct AlphaSelection {
  double alpha = 0.0;
  /// True when no candidate met the quality constraint and the pick fell back
  /// to the best qr_steered.
  bool flagged = false;
  std::vector<AlphaCandidateResult> candidates;
};

struct SelectOptions {
  std::optional<int> layer;
  repstore::TokenPosition position = repstore::TokenPosition::kFirst;
  std::size_t jobs = 1;
  /// A candidate qualifies when qr_steered >= qr_original - qr_tolerance.
  double qr_tolerance = 0.02;
};

/// Maximizes sr_steered over qualifying candidates, breaking ties toward the
/// smaller |alpha| (then the positive sign).
AlphaSelection select_alpha(backend::Backend& backend, backend::Judge& judge,
                            const std::vector<dataset::PromptRecord>& validation_prompts,
                            const probe::Direction& direction, const std::vector<double>& candidates,
                            const SelectOptions& options = {});

nlohmann::json to_json(const AlphaSelection& selection);

/// Seeded shuffle; the first ceil(fraction * n) prompts form the validation set.
std::pair<std::vector<dataset::PromptRecord>, std::vector<dataset::PromptRecord>> validation_slice(
    const std::vector<dataset::PromptRecord>& prompts, double fraction, std::uint64_t seed);

}  // namespace ifprobe::steer
