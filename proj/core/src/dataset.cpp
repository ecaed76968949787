#include "ifprobe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ifprobe/error.hpp"
#include "ifprobe/hash.hpp"
#include "ifprobe/rng.hpp"
#include "json_util.hpp"

namespace ifprobe::dataset {

using detail::json;

const std::vector<std::string>& builtin_types() {
  static const std::vector<std::string> kTypes = [] {
    std::vector<std::string> v{std::string(types::kPlaceholders),
                               std::string(types::kKeywordsExistence),
                               std::string(types::kKeywordsForbidden),
                               std::string(types::kKeywordsFrequency),
                               std::string(types::kEndChecker)};
    std::sort(v.begin(), v.end());
    return v;
  }();
  return kTypes;
}

bool is_builtin_type(std::string_view type_id) {
  const auto& v = builtin_types();
  return std::binary_search(v.begin(), v.end(), type_id);
}

namespace {

bool has_trailing_space(std::string_view s) {
  return !s.empty() && std::isspace(static_cast<unsigned char>(s.back()));
}

std::string ctx_of(const InstructionInstance& in) {
  return "instruction (task '" + in.task_id + "', type '" + in.type_id + "')";
}

}  // namespace

void validate_params(const InstructionInstance& in) {
  if (!in.verifiable()) return;
  const auto& p = in.params;
  const auto ctx = ctx_of(in);
  auto fail = [&](const std::string& why) { throw Error(ErrorKind::kSchema, ctx + ": " + why); };

  const bool keyword_type = in.type_id == types::kKeywordsExistence ||
                            in.type_id == types::kKeywordsForbidden ||
                            in.type_id == types::kKeywordsFrequency;
  const bool wants_frequency = in.type_id == types::kKeywordsFrequency;
  const bool wants_end = in.type_id == types::kEndChecker;
  const bool wants_placeholders = in.type_id == types::kPlaceholders;

  if (keyword_type) {
    if (p.keywords.empty()) fail("keywords must be non-empty");
    for (const auto& k : p.keywords) {
      if (k.empty()) fail("keywords must not contain empty strings");
    }
    if (wants_frequency && p.keywords.size() != 1) {
      fail("keywords:frequency takes exactly one keyword");
    }
  } else if (!p.keywords.empty()) {
    fail("unexpected param 'keywords'");
  }

  if (wants_frequency) {
    if (!p.min_frequency) fail("missing param 'min_frequency'");
    if (*p.min_frequency < 1) fail("min_frequency must be >= 1");
  } else if (p.min_frequency) {
    fail("unexpected param 'min_frequency'");
  }

  if (wants_end) {
    if (!p.end_phrase) fail("missing param 'end_phrase'");
    if (p.end_phrase->empty()) fail("end_phrase must be non-empty");
    if (has_trailing_space(*p.end_phrase)) fail("end_phrase must not end in whitespace");
  } else if (p.end_phrase) {
    fail("unexpected param 'end_phrase'");
  }

  if (wants_placeholders) {
    if (!p.min_placeholders) fail("missing param 'min_placeholders'");
    if (*p.min_placeholders < 1) fail("min_placeholders must be >= 1");
  } else if (p.min_placeholders) {
    fail("unexpected param 'min_placeholders'");
  }
}

std::string make_prompt_id(std::string_view task_id, std::string_view type_id) {
  std::string id;
  id.reserve(task_id.size() + type_id.size() + 1);
  id.append(task_id).push_back('/');
  id.append(type_id);
  return id;
}

std::string assemble_prompt(const Task& task, const InstructionInstance& instruction) {
  if (task.text.empty()) throw Error(ErrorKind::kPrecondition, "assemble_prompt: empty task text");
  if (instruction.text.empty()) {
    throw Error(ErrorKind::kPrecondition, "assemble_prompt: empty instruction text");
  }
  return task.text + " " + instruction.text;
}

Dataset::Dataset(std::vector<Task> tasks, std::vector<InstructionInstance> instructions)
    : tasks_(std::move(tasks)) {
  std::map<std::string, std::size_t, std::less<>> task_index;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto& t = tasks_[i];
    if (t.id.empty()) throw Error(ErrorKind::kSchema, "task #" + std::to_string(i) + ": empty id");
    if (t.text.empty()) throw Error(ErrorKind::kSchema, "task '" + t.id + "': empty text");
    if (!task_index.emplace(t.id, i).second) {
      throw Error(ErrorKind::kDuplicate, "duplicate task id '" + t.id + "'");
    }
  }
  std::sort(tasks_.begin(), tasks_.end(), [](const Task& a, const Task& b) { return a.id < b.id; });

  std::set<std::pair<std::string, std::string>> pairs;
  prompts_.reserve(instructions.size());
  for (auto& in : instructions) {
    if (in.type_id.empty()) throw Error(ErrorKind::kSchema, ctx_of(in) + ": empty type_id");
    if (in.text.empty()) throw Error(ErrorKind::kSchema, ctx_of(in) + ": empty text");
    auto it = task_index.find(in.task_id);
    if (it == task_index.end()) {
      throw Error(ErrorKind::kSchema, ctx_of(in) + ": unknown task id");
    }
    if (!pairs.emplace(in.task_id, in.type_id).second) {
      throw Error(ErrorKind::kDuplicate, ctx_of(in) + ": duplicate (task, type) pair");
    }
    validate_params(in);
    const Task& task = *std::find_if(tasks_.begin(), tasks_.end(),
                                     [&](const Task& t) { return t.id == in.task_id; });
    PromptRecord rec;
    rec.prompt_id = make_prompt_id(in.task_id, in.type_id);
    rec.prompt_text = assemble_prompt(task, in);
    rec.task = task;
    rec.instruction = std::move(in);
    prompts_.push_back(std::move(rec));
  }
  std::sort(prompts_.begin(), prompts_.end(),
            [](const PromptRecord& a, const PromptRecord& b) { return a.prompt_id < b.prompt_id; });
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    if (!index_.emplace(prompts_[i].prompt_id, i).second) {
      throw Error(ErrorKind::kDuplicate, "prompt id collision '" + prompts_[i].prompt_id + "'");
    }
  }
}

std::vector<std::string> Dataset::instruction_types() const {
  std::set<std::string> s;
  for (const auto& p : prompts_) s.insert(p.instruction.type_id);
  return {s.begin(), s.end()};
}

DatasetCounts Dataset::counts() const {
  DatasetCounts c;
  c.tasks = tasks_.size();
  c.instruction_types = instruction_types().size();
  c.prompts = prompts_.size();
  c.unverifiable_prompts = static_cast<std::size_t>(std::count_if(
      prompts_.begin(), prompts_.end(),
      [](const PromptRecord& p) { return !p.instruction.verifiable(); }));
  return c;
}

const PromptRecord* Dataset::find(std::string_view prompt_id) const {
  auto it = index_.find(prompt_id);
  return it == index_.end() ? nullptr : &prompts_[it->second];
}

const PromptRecord& Dataset::at(std::string_view prompt_id) const {
  const auto* p = find(prompt_id);
  if (!p) throw Error(ErrorKind::kValidation, "unknown prompt id '" + std::string(prompt_id) + "'");
  return *p;
}

namespace {

json params_to_json(const InstructionInstance& in) {
  if (!in.verifiable()) return in.params.extra;
  json j = json::object();
  const auto& p = in.params;
  if (!p.keywords.empty()) j["keywords"] = p.keywords;
  if (p.min_frequency) j["min_frequency"] = *p.min_frequency;
  if (p.end_phrase) j["end_phrase"] = *p.end_phrase;
  if (p.min_placeholders) j["min_placeholders"] = *p.min_placeholders;
  return j;
}

InstructionParams params_from_json(const json& j, const std::string& type_id,
                                   const std::string& ctx) {
  if (!j.is_object()) throw Error(ErrorKind::kSchema, ctx + ": params must be an object");
  InstructionParams p;
  if (!is_builtin_type(type_id)) {
    p.extra = j;
    return p;
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "keywords") {
      if (!value.is_array()) throw Error(ErrorKind::kSchema, ctx + ": keywords must be an array");
      for (const auto& k : value) {
        if (!k.is_string()) throw Error(ErrorKind::kSchema, ctx + ": keywords must be strings");
        p.keywords.push_back(k.get<std::string>());
      }
    } else if (key == "min_frequency" || key == "min_placeholders") {
      if (!value.is_number_integer()) {
        throw Error(ErrorKind::kSchema, ctx + ": " + key + " must be an integer");
      }
      (key == "min_frequency" ? p.min_frequency : p.min_placeholders) = value.get<int>();
    } else if (key == "end_phrase") {
      if (!value.is_string()) throw Error(ErrorKind::kSchema, ctx + ": end_phrase must be a string");
      p.end_phrase = value.get<std::string>();
    } else {
      throw Error(ErrorKind::kSchema, ctx + ": unknown param '" + key + "'");
    }
  }
  return p;
}

}  // namespace

json Dataset::to_json() const {
  json tasks = json::array();
  for (const auto& t : tasks_) tasks.push_back({{"id", t.id}, {"text", t.text}});
  json instructions = json::array();
  for (const auto& p : prompts_) {
    const auto& in = p.instruction;
    instructions.push_back({{"type_id", in.type_id},
                            {"task_id", in.task_id},
                            {"text", in.text},
                            {"params", params_to_json(in)}});
  }
  return {{"tasks", std::move(tasks)}, {"instructions", std::move(instructions)}};
}

Dataset parse_dataset(std::string_view text) {
  const json root = detail::parse_json(text, "dataset");
  if (!root.is_object()) throw Error(ErrorKind::kSchema, "dataset: top level must be an object");
  const auto& tasks_j = detail::require(root, "tasks", "dataset");
  const auto& instr_j = detail::require(root, "instructions", "dataset");
  if (!tasks_j.is_array() || !instr_j.is_array()) {
    throw Error(ErrorKind::kSchema, "dataset: 'tasks' and 'instructions' must be arrays");
  }
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < tasks_j.size(); ++i) {
    const auto ctx = "task #" + std::to_string(i);
    tasks.push_back({detail::require_string(tasks_j[i], "id", ctx),
                     detail::require_string(tasks_j[i], "text", ctx)});
  }
  std::vector<InstructionInstance> instructions;
  for (std::size_t i = 0; i < instr_j.size(); ++i) {
    const auto ctx = "instruction #" + std::to_string(i);
    InstructionInstance in;
    in.type_id = detail::require_string(instr_j[i], "type_id", ctx);
    in.task_id = detail::require_string(instr_j[i], "task_id", ctx);
    in.text = detail::require_string(instr_j[i], "text", ctx);
    in.params = params_from_json(detail::require(instr_j[i], "params", ctx), in.type_id,
                                 ctx + " (" + in.type_id + ")");
    instructions.push_back(std::move(in));
  }
  return Dataset(std::move(tasks), std::move(instructions));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(detail::read_file(path));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  detail::write_file(path, dataset.to_json().dump(2) + "\n");
}

std::string_view to_string(SplitKind kind) {
  return kind == SplitKind::kTaskSplit ? "task_split" : "instruction_loo";
}

json to_json(const SplitSpec& split) {
  json j = {{"kind", to_string(split.kind)}, {"seed", split.seed}};
  if (split.train_fraction) j["train_fraction"] = *split.train_fraction;
  if (split.held_out_type) j["held_out_type"] = *split.held_out_type;
  j["train_ids"] = split.train_ids;
  j["test_ids"] = split.test_ids;
  return j;
}

SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  const auto kind = detail::require_string(j, "kind", "split");
  if (kind == "task_split") {
    s.kind = SplitKind::kTaskSplit;
  } else if (kind == "instruction_loo") {
    s.kind = SplitKind::kInstructionLoo;
  } else {
    throw Error(ErrorKind::kSchema, "split: unknown kind '" + kind + "'");
  }
  const auto& seed = detail::require(j, "seed", "split");
  if (!seed.is_number_integer()) throw Error(ErrorKind::kSchema, "split: seed must be an integer");
  s.seed = seed.get<std::uint64_t>();
  if (j.contains("train_fraction")) s.train_fraction = detail::require_number(j, "train_fraction", "split");
  if (j.contains("held_out_type")) s.held_out_type = detail::require_string(j, "held_out_type", "split");
  for (const auto* key : {"train_ids", "test_ids"}) {
    const auto& arr = detail::require(j, key, "split");
    if (!arr.is_array()) throw Error(ErrorKind::kSchema, std::string("split: ") + key + " must be an array");
    auto& dst = std::string_view(key) == "train_ids" ? s.train_ids : s.test_ids;
    for (const auto& id : arr) dst.insert(id.get<std::string>());
  }
  for (const auto& id : s.train_ids) {
    if (s.test_ids.contains(id)) {
      throw Error(ErrorKind::kValidation, "split: prompt '" + id + "' on both sides");
    }
  }
  return s;
}

std::string split_hash(const SplitSpec& split) { return sha256_hex(to_json(split).dump()); }

SplitSpec task_split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::kPrecondition, "task_split: train_fraction must be in (0, 1)");
  }
  std::vector<std::string> task_ids;
  for (const auto& t : dataset.tasks()) task_ids.push_back(t.id);
  if (task_ids.size() < 2) {
    throw Error(ErrorKind::kPrecondition, "task_split: need at least 2 tasks");
  }
  SplitMix64 rng(seed);
  shuffle(std::span<std::string>(task_ids), rng);

  // The 1e-9 guard keeps products such as 0.7 * 100 from flooring to 69.
  const auto n_tasks = task_ids.size();
  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n_tasks) + 1e-9));
  if (n_train == 0 || n_train >= n_tasks) {
    throw Error(ErrorKind::kPrecondition, "task_split: train_fraction leaves one side empty");
  }
  const std::set<std::string> train_tasks(task_ids.begin(), task_ids.begin() + n_train);

  SplitSpec s;
  s.kind = SplitKind::kTaskSplit;
  s.seed = seed;
  s.train_fraction = train_fraction;
  for (const auto& p : dataset.prompts()) {
    (train_tasks.contains(p.task.id) ? s.train_ids : s.test_ids).insert(p.prompt_id);
  }
  return s;
}

std::vector<SplitSpec> instruction_loo_splits(const Dataset& dataset) {
  const auto types = dataset.instruction_types();
  if (types.size() < 2) {
    throw Error(ErrorKind::kPrecondition, "instruction_loo_splits: need at least 2 instruction types");
  }
  std::vector<SplitSpec> out;
  out.reserve(types.size());
  for (const auto& held : types) {
    SplitSpec s;
    s.kind = SplitKind::kInstructionLoo;
    s.held_out_type = held;
    for (const auto& p : dataset.prompts()) {
      (p.instruction.type_id == held ? s.test_ids : s.train_ids).insert(p.prompt_id);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ifprobe::dataset
