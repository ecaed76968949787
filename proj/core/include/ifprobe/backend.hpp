#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ifprobe/dataset.hpp"
#include "ifprobe/repstore.hpp"

namespace ifprobe::backend {

struct Steering {
  Eigen::VectorXd direction;  // unit norm
  double alpha = 0.0;         // negative values steer toward failure
  int layer = 0;
  repstore::TokenPosition position = repstore::TokenPosition::kFirst;
};

struct GenerationRequest {
  std::string prompt_id;
  std::string prompt_text;
  std::optional<Steering> steering;
};

/// Throws Error(kPrecondition) if steering is present with a non-unit
/// direction or a negative layer.
void validate(const GenerationRequest& request);

struct GenerationResponse {
  std::string prompt_id;
  std::string response_text;
  std::optional<Eigen::VectorXd> representation;
};

struct JudgeRequest {
  std::string prompt_id;
  std::string task_text;
  std::string response;
};

struct QualityScore {
  std::string prompt_id;
  int score = 0;  // 0..9
};

nlohmann::json to_json(const GenerationRequest& request);
GenerationRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerationResponse& response);
GenerationResponse response_from_json(const nlohmann::json& j);

/// Quality-judge prompt; {Task-only-input} and {Response} are substituted.
extern const std::string_view kJudgeTemplate;
std::string render_judge_prompt(std::string_view task_text, std::string_view response);

/// Body sent to POST /judge: {prompt_id, prompt, task, response}.
nlohmann::json judge_request_body(const JudgeRequest& request);

/// Parses a judge reply that must be exactly one integer in [0, 9] (surrounding
/// whitespace allowed). Throws Error(kProtocol) carrying the raw payload.
int parse_judge_reply(std::string_view raw);

/// Generation backend. Implementations must be deterministic for a fixed
/// state and safe to call from several threads.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
  /// Layer used when a steering config leaves the layer unset.
  virtual std::optional<int> last_layer() const { return std::nullopt; }
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual QualityScore judge(const JudgeRequest& request) = 0;
};

struct SyntheticBackendConfig {
  std::size_t dim = 64;
  Eigen::VectorXd planted_direction;  // u, unit norm
  std::uint64_t seed = 0;
  double noise_scale = 1.0;
  double threshold = 0.0;
  int last_layer = 32;

  /// Config with u drawn as a seeded random unit vector.
  static SyntheticBackendConfig planted(std::size_t dim, std::uint64_t seed, double noise_scale = 1.0,
                                        double threshold = 0.0);
  void validate() const;
};

nlohmann::json to_json(const SyntheticBackendConfig& config);
SyntheticBackendConfig synthetic_config_from_json(const nlohmann::json& j);
SyntheticBackendConfig load_synthetic_config(const std::filesystem::path& path);

/// R_original for a prompt: i.i.d. N(0, noise_scale^2) components drawn from
/// SplitMix64(derive_seed(seed, prompt_id)).
Eigen::VectorXd synthetic_representation(const SyntheticBackendConfig& config, std::string_view prompt_id);

/// Builds a response satisfying (or violating, when `compliant` is false) the
/// instruction's verifier. Steered responses with alpha != 0 carry an
/// " alpha=<value>" marker on the first line. Throws Error(kInvariant) when no
/// candidate text reaches the requested verdict.
std::string synthetic_response_text(const dataset::InstructionInstance& instruction,
                                    std::string_view prompt_id, bool compliant,
                                    std::optional<double> alpha);

/// Reads the alpha marker written by synthetic_response_text.
std::optional<double> parse_alpha_marker(std::string_view response);

/// Planted-direction model: with s = u.R + alpha * (u.direction) (alpha term
/// only when steering), the response complies iff s >= threshold. The
/// returned representation is R_original.
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(SyntheticBackendConfig config, const dataset::Dataset& dataset);

  GenerationResponse generate(const GenerationRequest& request) override;
  std::optional<int> last_layer() const override { return config_.last_layer; }

  const SyntheticBackendConfig& config() const { return config_; }
  /// s for a request, as used for the verdict.
  double projection(const GenerationRequest& request) const;

 private:
  SyntheticBackendConfig config_;
  std::map<std::string, dataset::InstructionInstance, std::less<>> instructions_;
};

GenerationResponse synthetic_generate(const SyntheticBackendConfig& config,
                                      const dataset::Dataset& dataset,
                                      const GenerationRequest& request);

/// 9 for responses starting with "PASS:", 8 otherwise.
class StubJudge final : public Judge {
 public:
  QualityScore judge(const JudgeRequest& request) override;
};

/// Scores `low_score` when the response's alpha marker exceeds `cliff` in
/// absolute value, otherwise behaves like StubJudge. cliff = 0 penalizes every
/// steered response.
class SteeringCliffJudge final : public Judge {
 public:
  explicit SteeringCliffJudge(double cliff, int low_score = 6) : cliff_(cliff), low_score_(low_score) {}
  QualityScore judge(const JudgeRequest& request) override;

 private:
  double cliff_;
  int low_score_;
  StubJudge stub_;
};

}  // namespace ifprobe::backend
