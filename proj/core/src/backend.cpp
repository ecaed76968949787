#include "ifprobe/backend.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ifprobe/error.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/rng.hpp"
#include "ifprobe/verifier.hpp"
#include "json_util.hpp"

namespace ifprobe::backend {

using detail::json;

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_json_array(const json& j, std::string_view ctx) {
  if (!j.is_array()) throw Error(ErrorKind::kProtocol, std::string(ctx) + ": expected a number array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::kProtocol, std::string(ctx) + ": non-numeric element");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

}  // namespace

void validate(const GenerationRequest& request) {
  if (!request.steering) return;
  const auto& s = *request.steering;
  if (s.direction.size() == 0 || !s.direction.allFinite() || std::abs(s.direction.norm() - 1.0) > 1e-9) {
    throw Error(ErrorKind::kPrecondition, "steering direction must be unit norm");
  }
  if (!std::isfinite(s.alpha)) throw Error(ErrorKind::kPrecondition, "steering alpha must be finite");
  if (s.layer < 0) throw Error(ErrorKind::kPrecondition, "steering layer must be >= 0");
}

json to_json(const GenerationRequest& request) {
  json j = {{"prompt_id", request.prompt_id}, {"prompt_text", request.prompt_text}};
  if (request.steering) {
    const auto& s = *request.steering;
    j["steering"] = {{"direction", to_std(s.direction)},
                     {"alpha", s.alpha},
                     {"layer", s.layer},
                     {"position", repstore::to_string(s.position)}};
  }
  return j;
}

GenerationRequest request_from_json(const json& j) {
  GenerationRequest r;
  r.prompt_id = detail::require_string(j, "prompt_id", "generation request");
  r.prompt_text = detail::require_string(j, "prompt_text", "generation request");
  if (j.contains("steering") && !j["steering"].is_null()) {
    const auto& s = j["steering"];
    Steering st;
    st.direction = from_json_array(detail::require(s, "direction", "steering"), "steering.direction");
    st.alpha = detail::require_number(s, "alpha", "steering");
    st.layer = static_cast<int>(detail::require_int(s, "layer", "steering"));
    st.position = repstore::parse_position(detail::require_string(s, "position", "steering"));
    r.steering = std::move(st);
  }
  return r;
}

json to_json(const GenerationResponse& response) {
  json j = {{"prompt_id", response.prompt_id}, {"response_text", response.response_text}};
  if (response.representation) j["representation"] = to_std(*response.representation);
  return j;
}

GenerationResponse response_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kProtocol, "generation response: expected an object");
  GenerationResponse r;
  try {
    r.prompt_id = detail::require_string(j, "prompt_id", "generation response");
    r.response_text = detail::require_string(j, "response_text", "generation response");
  } catch (const Error& e) {
    throw Error(ErrorKind::kProtocol, e.what());
  }
  if (j.contains("representation") && !j["representation"].is_null()) {
    r.representation = from_json_array(j["representation"], "representation");
  }
  return r;
}

const std::string_view kJudgeTemplate =
    "You are a helpful assistant in evaluating the quality of the outputs for a given instruction. "
    "Your goal is to score a given output for the given instruction. You should give an overall "
    "score (an integer) on a scale of 0 to 9, where a higher score indicates better overall "
    "performance. Do NOT provide any explanation for your evaluation.\n"
    "\n"
    "# Instruction: {Task-only-input}\n"
    "\n"
    "# Output:{Response}\n"
    "\n"
    "# Score of the Output (Your response should be ONLY the score, an integer between 0-9):";

std::string render_judge_prompt(std::string_view task_text, std::string_view response) {
  std::string out(kJudgeTemplate);
  // Substitute the response first so task text containing "{Response}" is left alone.
  static constexpr std::string_view kResponse = "{Response}";
  static constexpr std::string_view kTask = "{Task-only-input}";
  out.replace(out.find(kResponse), kResponse.size(), response);
  out.replace(out.find(kTask), kTask.size(), task_text);
  return out;
}

json judge_request_body(const JudgeRequest& request) {
  return {{"prompt_id", request.prompt_id},
          {"prompt", render_judge_prompt(request.task_text, request.response)},
          {"task", request.task_text},
          {"response", request.response}};
}

int parse_judge_reply(std::string_view raw) {
  auto s = raw;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  int value = -1;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || value < 0 || value > 9) {
    throw Error(ErrorKind::kProtocol, "judge reply is not an integer in [0, 9]: raw payload \"" +
                                          std::string(raw) + "\"");
  }
  return value;
}

SyntheticBackendConfig SyntheticBackendConfig::planted(std::size_t dim, std::uint64_t seed,
                                                       double noise_scale, double threshold) {
  SyntheticBackendConfig c;
  c.dim = dim;
  c.seed = seed;
  c.noise_scale = noise_scale;
  c.threshold = threshold;
  c.planted_direction = probe::random_unit_vector(static_cast<Eigen::Index>(dim),
                                                  derive_seed(seed, "planted-direction"),
                                                  probe::DirectionSource::kPlanted)
                            .d_vec;
  return c;
}

void SyntheticBackendConfig::validate() const {
  if (dim < 1) throw Error(ErrorKind::kPrecondition, "synthetic backend: dim must be >= 1");
  if (static_cast<std::size_t>(planted_direction.size()) != dim) {
    throw Error(ErrorKind::kDimensionMismatch, "synthetic backend: planted direction dimension != dim");
  }
  if (!planted_direction.allFinite() || std::abs(planted_direction.norm() - 1.0) > 1e-9) {
    throw Error(ErrorKind::kPrecondition, "synthetic backend: planted direction must be unit norm");
  }
  if (!(noise_scale > 0.0)) throw Error(ErrorKind::kPrecondition, "synthetic backend: noise_scale must be > 0");
  if (!std::isfinite(threshold)) throw Error(ErrorKind::kPrecondition, "synthetic backend: threshold must be finite");
}

json to_json(const SyntheticBackendConfig& c) {
  return {{"dim", c.dim},
          {"planted_direction", to_std(c.planted_direction)},
          {"seed", c.seed},
          {"noise_scale", c.noise_scale},
          {"threshold", c.threshold},
          {"last_layer", c.last_layer}};
}

SyntheticBackendConfig synthetic_config_from_json(const json& j) {
  SyntheticBackendConfig c;
  const std::string ctx = "synthetic backend config";
  c.dim = static_cast<std::size_t>(detail::require_int(j, "dim", ctx));
  c.planted_direction = from_json_array(detail::require(j, "planted_direction", ctx), ctx);
  c.seed = detail::require(j, "seed", ctx).get<std::uint64_t>();
  c.noise_scale = detail::require_number(j, "noise_scale", ctx);
  c.threshold = detail::require_number(j, "threshold", ctx);
  if (j.contains("last_layer")) c.last_layer = j["last_layer"].get<int>();
  c.validate();
  return c;
}

SyntheticBackendConfig load_synthetic_config(const std::filesystem::path& path) {
  return synthetic_config_from_json(detail::parse_json(detail::read_file(path), path.string()));
}

Eigen::VectorXd synthetic_representation(const SyntheticBackendConfig& config, std::string_view prompt_id) {
  SplitMix64 rng(derive_seed(config.seed, prompt_id));
  Eigen::VectorXd r(static_cast<Eigen::Index>(config.dim));
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = config.noise_scale * rng.gaussian();
  return r;
}

std::string synthetic_response_text(const dataset::InstructionInstance& instruction,
                                    std::string_view prompt_id, bool compliant,
                                    std::optional<double> alpha) {
  namespace t = dataset::types;
  const std::string marker = alpha && *alpha != 0.0 ? " alpha=" + format_double(*alpha) : "";
  const std::string id(prompt_id);
  std::ostringstream hash;
  hash << std::hex << fnv1a64(prompt_id);

  const auto& p = instruction.params;
  const auto& type = instruction.type_id;
  std::string body;
  if (compliant) {
    if (type == t::kKeywordsExistence) {
      for (const auto& k : p.keywords) body += "\n" + k;
    } else if (type == t::kKeywordsFrequency && !p.keywords.empty()) {
      for (int i = 0; i < p.min_frequency.value_or(1); ++i) body += "\n" + p.keywords.front();
    } else if (type == t::kEndChecker) {
      body = "\n" + p.end_phrase.value_or("");
    } else if (type == t::kPlaceholders) {
      body = "\n";
      for (int i = 0; i < p.min_placeholders.value_or(1); ++i) body += "[slot" + std::to_string(i + 1) + "] ";
      body.pop_back();
    }
  } else if (type == t::kKeywordsForbidden && !p.keywords.empty()) {
    body = "\n" + p.keywords.front();
  }

  const std::string tag = compliant ? "PASS" : "FAIL";
  const std::vector<std::string> candidates = {
      tag + ":" + id + marker + body,
      tag + ":" + hash.str() + marker + body,
      tag + ":" + id + body,
      tag + ":" + hash.str() + body,
      body.empty() ? std::string() : body.substr(1),
  };
  for (const auto& text : candidates) {
    if (verifier::verify(instruction, text).passed == compliant) return text;
  }
  throw Error(ErrorKind::kInvariant, "synthetic backend: cannot build a " +
                                         std::string(compliant ? "compliant" : "non-compliant") +
                                         " response for '" + id + "'");
}

std::optional<double> parse_alpha_marker(std::string_view response) {
  const auto line = response.substr(0, response.find('\n'));
  static constexpr std::string_view kKey = " alpha=";
  const auto at = line.find(kKey);
  if (at == std::string_view::npos) return std::nullopt;
  const auto value = line.substr(at + kKey.size());
  double alpha = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), alpha);
  if (ec != std::errc{}) return std::nullopt;
  return alpha;
}

SyntheticBackend::SyntheticBackend(SyntheticBackendConfig config, const dataset::Dataset& dataset)
    : config_(std::move(config)) {
  config_.validate();
  for (const auto& p : dataset.prompts()) {
    if (!p.instruction.verifiable()) {
      throw Error(ErrorKind::kUnregisteredType,
                  "synthetic backend: prompt '" + p.prompt_id + "' has no built-in verifier");
    }
    instructions_.emplace(p.prompt_id, p.instruction);
  }
}

double SyntheticBackend::projection(const GenerationRequest& request) const {
  const auto r = synthetic_representation(config_, request.prompt_id);
  double s = config_.planted_direction.dot(r);
  if (request.steering) {
    const auto& st = *request.steering;
    if (static_cast<std::size_t>(st.direction.size()) != config_.dim) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "synthetic backend: steering direction has dimension " +
                      std::to_string(st.direction.size()) + ", backend has " + std::to_string(config_.dim));
    }
    s += st.alpha * config_.planted_direction.dot(st.direction);
  }
  return s;
}

GenerationResponse SyntheticBackend::generate(const GenerationRequest& request) {
  validate(request);
  auto it = instructions_.find(request.prompt_id);
  if (it == instructions_.end()) {
    throw Error(ErrorKind::kValidation, "synthetic backend: unknown prompt '" + request.prompt_id + "'");
  }
  const double s = projection(request);
  std::optional<double> alpha;
  if (request.steering) alpha = request.steering->alpha;
  GenerationResponse out;
  out.prompt_id = request.prompt_id;
  out.response_text = synthetic_response_text(it->second, request.prompt_id, s >= config_.threshold, alpha);
  out.representation = synthetic_representation(config_, request.prompt_id);
  return out;
}

GenerationResponse synthetic_generate(const SyntheticBackendConfig& config, const dataset::Dataset& dataset,
                                      const GenerationRequest& request) {
  SyntheticBackend backend(config, dataset);
  return backend.generate(request);
}

QualityScore StubJudge::judge(const JudgeRequest& request) {
  return {request.prompt_id, request.response.starts_with("PASS:") ? 9 : 8};
}

QualityScore SteeringCliffJudge::judge(const JudgeRequest& request) {
  const auto alpha = parse_alpha_marker(request.response);
  if (alpha && std::abs(*alpha) > cliff_) return {request.prompt_id, low_score_};
  return stub_.judge(request);
}

}  // namespace ifprobe::backend
