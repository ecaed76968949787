#include "ifprobe/steer.hpp"

#include <algorithm>
#include <set>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "ifprobe/rng.hpp"
#include "ifprobe/verifier.hpp"

namespace ifprobe::steer {

using nlohmann::json;

Eigen::VectorXd apply_steering(const Eigen::VectorXd& rep, const probe::Direction& direction, double alpha) {
  if (rep.size() != direction.d_vec.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "apply_steering: representation and direction differ in size");
  }
  return rep + alpha * direction.d_vec;
}

probe::Direction random_direction(Eigen::Index dim, std::uint64_t seed) {
  return probe::random_unit_vector(dim, seed, probe::DirectionSource::kRandom);
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

TransitionReport transition_metrics(const std::map<std::string, bool>& before,
                                    const std::map<std::string, bool>& after) {
  if (before.size() != after.size()) {
    throw Error(ErrorKind::kValidation, "transition_metrics: key sets differ");
  }
  TransitionReport r;
  for (const auto& [id, was] : before) {
    auto it = after.find(id);
    if (it == after.end()) throw Error(ErrorKind::kValidation, "transition_metrics: '" + id + "' missing after");
    const bool now = it->second;
    if (!was && now) ++r.f2t;
    else if (!was && !now) ++r.f2f;
    else if (was && now) ++r.t2t;
    else ++r.t2f;
  }
  r.scr = ratio(r.f2t, r.f2t + r.f2f);
  r.spr = ratio(r.t2t, r.t2t + r.t2f);
  return r;
}

json to_json(const SteeringReport& r) {
  const auto& c = r.config;
  return {
      {"sr_original", r.sr_original},
      {"sr_steered", r.sr_steered},
      {"qr_original", opt(r.qr_original)},
      {"qr_steered", opt(r.qr_steered)},
      {"transitions",
       {{"f2t", r.transitions.f2t},
        {"f2f", r.transitions.f2f},
        {"t2t", r.transitions.t2t},
        {"t2f", r.transitions.t2f},
        {"scr", opt(r.transitions.scr)},
        {"spr", opt(r.transitions.spr)}}},
      {"n", r.n},
      {"config",
       {{"direction", probe::to_json(c.direction)},
        {"alpha", c.alpha},
        {"layer", r.layer},
        {"position", repstore::to_string(c.position)}}},
      {"counts",
       {{"passed_original", r.passed_original},
        {"passed_steered", r.passed_steered},
        {"quality_original", r.quality_original},
        {"quality_steered", r.quality_steered}}},
  };
}

json to_json(const PromptOutcome& o) {
  return {{"prompt_id", o.prompt_id},
          {"passed_original", o.passed_original},
          {"passed_steered", o.passed_steered},
          {"score_original", o.score_original},
          {"score_steered", o.score_steered}};
}

PromptOutcome outcome_from_json(const json& j) {
  return {j.at("prompt_id").get<std::string>(), j.at("passed_original").get<bool>(),
          j.at("passed_steered").get<bool>(), j.at("score_original").get<int>(),
          j.at("score_steered").get<int>()};
}

SteeringReport assemble_report(const std::vector<PromptOutcome>& outcomes, const SteeringConfig& config,
                               int resolved_layer) {
  if (outcomes.empty()) throw Error(ErrorKind::kPrecondition, "steering report: no outcomes");
  SteeringReport r;
  r.config = config;
  r.layer = resolved_layer;
  r.n = outcomes.size();
  std::map<std::string, bool> before, after;
  for (const auto& o : outcomes) {
    if (!before.emplace(o.prompt_id, o.passed_original).second) {
      throw Error(ErrorKind::kDuplicate, "steering report: duplicate outcome for '" + o.prompt_id + "'");
    }
    after.emplace(o.prompt_id, o.passed_steered);
    if (o.passed_original) {
      ++r.passed_original;
      if (o.score_original > 7) ++r.quality_original;
    }
    if (o.passed_steered) {
      ++r.passed_steered;
      if (o.score_steered > 7) ++r.quality_steered;
    }
  }
  r.transitions = transition_metrics(before, after);
  const double n = static_cast<double>(r.n);
  r.sr_original = static_cast<double>(r.passed_original) / n;
  r.sr_steered = static_cast<double>(r.passed_steered) / n;
  r.qr_original = ratio(r.quality_original, r.passed_original);
  r.qr_steered = ratio(r.quality_steered, r.passed_steered);
  const auto& t = r.transitions;
  if (t.f2t + t.f2f + t.t2t + t.t2f != r.n || t.f2t + t.t2t != r.passed_steered) {
    throw Error(ErrorKind::kInvariant, "steering report: transition accounting does not add up");
  }
  return r;
}

namespace {

int resolve_layer(const backend::Backend& backend, const SteeringConfig& config) {
  if (config.layer) return *config.layer;
  if (auto last = backend.last_layer()) return *last;
  throw Error(ErrorKind::kPrecondition, "steering: no layer given and the backend does not report its last layer");
}

PromptOutcome evaluate_prompt(backend::Backend& backend, backend::Judge& judge, const dataset::PromptRecord& prompt,
                              const backend::Steering& steering) {
  backend::GenerationRequest request{prompt.prompt_id, prompt.prompt_text, std::nullopt};
  const auto original = backend.generate(request);
  request.steering = steering;
  const auto steered = backend.generate(request);

  PromptOutcome o;
  o.prompt_id = prompt.prompt_id;
  o.passed_original = verifier::verify(prompt.instruction, original.response_text).passed;
  o.passed_steered = verifier::verify(prompt.instruction, steered.response_text).passed;
  o.score_original = judge.judge({prompt.prompt_id, prompt.task.text, original.response_text}).score;
  o.score_steered = judge.judge({prompt.prompt_id, prompt.task.text, steered.response_text}).score;
  return o;
}

}  // namespace

std::vector<PromptOutcome> collect_outcomes(backend::Backend& backend, backend::Judge& judge,
                                            const std::vector<dataset::PromptRecord>& prompts,
                                            const SteeringConfig& config, const EvaluateOptions& options) {
  if (prompts.empty()) throw Error(ErrorKind::kPrecondition, "evaluate_steering: no prompts");
  const int layer = resolve_layer(backend, config);
  const backend::Steering steering{config.direction.d_vec, config.alpha, layer, config.position};

  std::map<std::string, PromptOutcome> done;
  for (const auto& o : options.resume) done.emplace(o.prompt_id, o);
  std::vector<const dataset::PromptRecord*> todo;
  for (const auto& p : prompts) {
    if (!done.contains(p.prompt_id)) todo.push_back(&p);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::optional<Error> first_error;
  auto worker = [&] {
    while (!failed.load()) {
      const auto i = next.fetch_add(1);
      if (i >= todo.size()) return;
      try {
        auto o = evaluate_prompt(backend, judge, *todo[i], steering);
        std::lock_guard lock(mu);
        done.emplace(o.prompt_id, std::move(o));
      } catch (const Error& e) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = e;
        failed = true;
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = Error(ErrorKind::kInvariant, e.what());
        failed = true;
      }
    }
  };
  const auto n_threads = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(todo.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<PromptOutcome> outcomes;
  outcomes.reserve(prompts.size());
  std::set<std::string> wanted;
  for (const auto& p : prompts) wanted.insert(p.prompt_id);
  for (auto& [id, o] : done) {
    if (wanted.contains(id)) outcomes.push_back(std::move(o));
  }
  if (first_error) {
    throw PartialRunError(first_error->kind(), first_error->what(), std::move(outcomes));
  }
  return outcomes;
}

SteeringReport evaluate_steering(backend::Backend& backend, backend::Judge& judge,
                                 const std::vector<dataset::PromptRecord>& prompts, const SteeringConfig& config,
                                 const EvaluateOptions& options) {
  const auto outcomes = collect_outcomes(backend, judge, prompts, config, options);
  return assemble_report(outcomes, config, resolve_layer(backend, config));
}

namespace {

bool quality_ok(const SteeringReport& r, double tolerance) {
  if (!r.qr_original) return true;
  if (!r.qr_steered) return false;
  return *r.qr_steered >= *r.qr_original - tolerance;
}

// Strict preference for a over b on |alpha|, then sign.
bool simpler(double a, double b) {
  if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
  return a > b;
}

}  // namespace

AlphaSelection select_alpha(backend::Backend& backend, backend::Judge& judge,
                            const std::vector<dataset::PromptRecord>& validation_prompts,
                            const probe::Direction& direction, const std::vector<double>& candidates,
                            const SelectOptions& options) {
  if (candidates.empty()) throw Error(ErrorKind::kPrecondition, "select_alpha: no candidates");
  if (validation_prompts.empty()) throw Error(ErrorKind::kPrecondition, "select_alpha: empty validation set");

  AlphaSelection sel;
  for (double alpha : candidates) {
    SteeringConfig config{direction, alpha, options.layer, options.position};
    EvaluateOptions eval;
    eval.jobs = options.jobs;
    auto report = evaluate_steering(backend, judge, validation_prompts, config, eval);
    const bool ok = quality_ok(report, options.qr_tolerance);
    sel.candidates.push_back({alpha, std::move(report), ok});
  }

  const AlphaCandidateResult* best = nullptr;
  for (const auto& c : sel.candidates) {
    if (!c.satisfies_quality) continue;
    if (!best || c.report.passed_steered > best->report.passed_steered ||
        (c.report.passed_steered == best->report.passed_steered && simpler(c.alpha, best->alpha))) {
      best = &c;
    }
  }
  if (!best) {
    sel.flagged = true;
    for (const auto& c : sel.candidates) {
      const double q = c.report.qr_steered.value_or(-1.0);
      const double bq = best ? best->report.qr_steered.value_or(-1.0) : -2.0;
      if (!best || q > bq || (q == bq && simpler(c.alpha, best->alpha))) best = &c;
    }
  }
  sel.alpha = best->alpha;
  return sel;
}

json to_json(const AlphaSelection& selection) {
  json cands = json::array();
  for (const auto& c : selection.candidates) {
    cands.push_back({{"alpha", c.alpha}, {"satisfies_quality", c.satisfies_quality}, {"report", to_json(c.report)}});
  }
  return {{"alpha", selection.alpha}, {"flagged", selection.flagged}, {"candidates", std::move(cands)}};
}

std::pair<std::vector<dataset::PromptRecord>, std::vector<dataset::PromptRecord>> validation_slice(
    const std::vector<dataset::PromptRecord>& prompts, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kPrecondition, "validation_slice: fraction must be in (0, 1)");
  }
  if (prompts.size() < 2) throw Error(ErrorKind::kPrecondition, "validation_slice: need at least 2 prompts");
  std::vector<std::size_t> order(prompts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  const auto n = static_cast<double>(prompts.size());
  const auto n_val = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
  if (n_val == 0 || n_val >= prompts.size()) {
    throw Error(ErrorKind::kPrecondition, "validation_slice: fraction leaves one side empty");
  }
  std::pair<std::vector<dataset::PromptRecord>, std::vector<dataset::PromptRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? out.first : out.second).push_back(prompts[order[i]]);
  }
  return out;
}

}  // namespace ifprobe::steer
