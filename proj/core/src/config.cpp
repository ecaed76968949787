#include "ifprobe/config.hpp"

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "ifprobe/error.hpp"
#include "json_util.hpp"

namespace ifprobe::experiment {

using detail::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json endpoint_json(const EndpointConfig& e) {
  return {{"kind", e.kind}, {"target", e.target}, {"cliff", e.cliff}};
}

EndpointConfig endpoint_from(const json& j, const EndpointConfig& defaults) {
  EndpointConfig e = defaults;
  if (!j.is_object()) throw Error(ErrorKind::kSchema, "config: endpoint must be a table");
  for (const auto& [k, v] : j.items()) {
    if (k == "kind") e.kind = v.get<std::string>();
    else if (k == "target") e.target = v.get<std::string>();
    else if (k == "cliff") e.cliff = v.get<double>();
    else throw Error(ErrorKind::kSchema, "config: unknown endpoint key '" + k + "'");
  }
  return e;
}

}  // namespace

json to_json(const RunConfig& c) {
  json positions = json::array();
  for (auto p : c.positions) positions.push_back(repstore::to_string(p));
  const auto& s = c.steering;
  json steering = {{"direction_path", s.direction_path},
                   {"alpha", opt(s.alpha)},
                   {"candidates", s.candidates},
                   {"random_seeds", s.random_seeds},
                   {"validation_fraction", s.validation_fraction},
                   {"validation_seed", s.validation_seed},
                   {"layer", s.layer ? json(*s.layer) : json(nullptr)},
                   {"position", repstore::to_string(s.position)},
                   {"repeats", s.repeats}};
  return {{"dataset_path", c.dataset_path},
          {"reps_path", c.reps_path},
          {"labels_path", c.labels_path},
          {"perturbations_path", c.perturbations_path},
          {"split", {{"kind", c.split.kind == dataset::SplitKind::kTaskSplit ? "task" : "loo"},
                     {"fraction", c.split.fraction},
                     {"seeds", c.split.seeds}}},
          {"hyperparams", probe::to_json(c.hyperparams)},
          {"positions", std::move(positions)},
          {"layers", c.layers},
          {"steering", std::move(steering)},
          {"backend", endpoint_json(c.backend)},
          {"judge", endpoint_json(c.judge)},
          {"timeout_ms", c.timeout_ms},
          {"retries", c.retries},
          {"jobs", c.jobs},
          {"output_dir", c.output_dir},
          {"emit_splits", c.emit_splits},
          {"resume_path", c.resume_path}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kSchema, "config: top level must be an object");
  RunConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "dataset_path") c.dataset_path = v.get<std::string>();
      else if (k == "reps_path") c.reps_path = v.get<std::string>();
      else if (k == "labels_path") c.labels_path = v.get<std::string>();
      else if (k == "perturbations_path") c.perturbations_path = v.get<std::string>();
      else if (k == "split") {
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "kind") {
            const auto kind = sv.get<std::string>();
            if (kind == "task" || kind == "task_split") c.split.kind = dataset::SplitKind::kTaskSplit;
            else if (kind == "loo" || kind == "instruction_loo") c.split.kind = dataset::SplitKind::kInstructionLoo;
            else throw Error(ErrorKind::kSchema, "config: unknown split kind '" + kind + "'");
          } else if (sk == "fraction") c.split.fraction = sv.get<double>();
          else if (sk == "seeds") c.split.seeds = sv.get<std::vector<std::uint64_t>>();
          else throw Error(ErrorKind::kSchema, "config: unknown split key '" + sk + "'");
        }
      } else if (k == "hyperparams") c.hyperparams = probe::hyperparams_from_json(v);
      else if (k == "positions") {
        c.positions.clear();
        for (const auto& p : v) c.positions.push_back(repstore::parse_position(p.get<std::string>()));
      } else if (k == "layers") c.layers = v.get<std::vector<int>>();
      else if (k == "steering") {
        auto& s = c.steering;
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "direction_path") s.direction_path = sv.get<std::string>();
          else if (sk == "alpha") s.alpha = sv.is_null() ? std::nullopt : std::optional<double>(sv.get<double>());
          else if (sk == "candidates") s.candidates = sv.get<std::vector<double>>();
          else if (sk == "random_seeds") s.random_seeds = sv.get<std::vector<std::uint64_t>>();
          else if (sk == "validation_fraction") s.validation_fraction = sv.get<double>();
          else if (sk == "validation_seed") s.validation_seed = sv.get<std::uint64_t>();
          else if (sk == "layer") s.layer = sv.is_null() ? std::nullopt : std::optional<int>(sv.get<int>());
          else if (sk == "position") s.position = repstore::parse_position(sv.get<std::string>());
          else if (sk == "repeats") s.repeats = sv.get<int>();
          else throw Error(ErrorKind::kSchema, "config: unknown steering key '" + sk + "'");
        }
      } else if (k == "backend") c.backend = endpoint_from(v, c.backend);
      else if (k == "judge") c.judge = endpoint_from(v, c.judge);
      else if (k == "timeout_ms") c.timeout_ms = v.get<int>();
      else if (k == "retries") c.retries = v.get<int>();
      else if (k == "jobs") c.jobs = v.get<std::size_t>();
      else if (k == "output_dir") c.output_dir = v.get<std::string>();
      else if (k == "emit_splits") c.emit_splits = v.get<bool>();
      else if (k == "resume_path") c.resume_path = v.get<std::string>();
      else throw Error(ErrorKind::kSchema, "config: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("config: ") + e.what());
  }
  if (c.steering.repeats < 1) throw Error(ErrorKind::kSchema, "config: steering.repeats must be >= 1");
  if (c.jobs < 1) throw Error(ErrorKind::kSchema, "config: jobs must be >= 1");
  return c;
}

namespace {

json node_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = node_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(node_to_json(v));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw Error(ErrorKind::kSchema, "config: TOML dates and times are not supported");
}

void resolve(std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return;
  std::filesystem::path p(path);
  if (p.is_relative()) path = (base / p).lexically_normal().string();
}

}  // namespace

json toml_to_json(std::string_view toml_text) {
  try {
    return node_to_json(toml::parse(toml_text));
  } catch (const toml::parse_error& e) {
    throw Error(ErrorKind::kParse, "config: line " + std::to_string(e.source().begin.line) + ": " +
                                       std::string(e.description()));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  const json j = path.extension() == ".toml" ? toml_to_json(text) : detail::parse_json(text, path.string());
  auto c = run_config_from_json(j);
  const auto base = path.parent_path();
  for (auto* p : {&c.dataset_path, &c.reps_path, &c.labels_path, &c.perturbations_path,
                  &c.steering.direction_path, &c.output_dir, &c.resume_path}) {
    resolve(*p, base);
  }
  if (c.backend.kind == "synthetic") resolve(c.backend.target, base);
  return c;
}

}  // namespace ifprobe::experiment
