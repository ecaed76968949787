#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ifprobe::dataset {

/// Instruction types with a built-in verifier.
namespace types {
inline constexpr std::string_view kKeywordsExistence = "keywords:existence";
inline constexpr std::string_view kKeywordsForbidden = "keywords:forbidden_words";
inline constexpr std::string_view kKeywordsFrequency = "keywords:frequency";
inline constexpr std::string_view kEndChecker = "startend:end_checker";
inline constexpr std::string_view kPlaceholders = "detectable_content:number_placeholders";
}  // namespace types

/// The five built-in type ids, sorted.
const std::vector<std::string>& builtin_types();
bool is_builtin_type(std::string_view type_id);

struct Task {
  std::string id;
  std::string text;

  friend bool operator==(const Task&, const Task&) = default;
};

/// Verifier parameters. Which members are populated is fixed by the type id;
/// `extra` carries the raw params of types without a built-in verifier.
struct InstructionParams {
  std::vector<std::string> keywords;
  std::optional<int> min_frequency;
  std::optional<std::string> end_phrase;
  std::optional<int> min_placeholders;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const InstructionParams&, const InstructionParams&) = default;
};

struct InstructionInstance {
  std::string type_id;
  std::string task_id;
  std::string text;
  InstructionParams params;

  bool verifiable() const { return is_builtin_type(type_id); }

  friend bool operator==(const InstructionInstance&, const InstructionInstance&) = default;
};

/// Checks params against the schema of a built-in type. Throws Error(kSchema).
void validate_params(const InstructionInstance& instruction);

struct PromptRecord {
  std::string prompt_id;
  Task task;
  InstructionInstance instruction;
  std::string prompt_text;
};

/// Prompt ids are "<task_id>/<type_id>".
std::string make_prompt_id(std::string_view task_id, std::string_view type_id);

/// task.text + " " + instruction.text. Throws Error(kPrecondition) on empty
/// task or instruction text.
std::string assemble_prompt(const Task& task, const InstructionInstance& instruction);

struct DatasetCounts {
  std::size_t tasks = 0;
  std::size_t instruction_types = 0;
  std::size_t prompts = 0;
  std::size_t unverifiable_prompts = 0;
};

/// Immutable after construction; prompts are kept sorted by prompt_id.
class Dataset {
 public:
  Dataset(std::vector<Task> tasks, std::vector<InstructionInstance> instructions);

  const std::vector<Task>& tasks() const { return tasks_; }
  const std::vector<PromptRecord>& prompts() const { return prompts_; }
  /// Distinct instruction type ids, sorted.
  std::vector<std::string> instruction_types() const;
  DatasetCounts counts() const;

  const PromptRecord* find(std::string_view prompt_id) const;
  const PromptRecord& at(std::string_view prompt_id) const;

  nlohmann::json to_json() const;

 private:
  std::vector<Task> tasks_;
  std::vector<PromptRecord> prompts_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

Dataset parse_dataset(std::string_view text);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

enum class SplitKind { kTaskSplit, kInstructionLoo };

std::string_view to_string(SplitKind kind);

struct SplitSpec {
  SplitKind kind = SplitKind::kTaskSplit;
  std::uint64_t seed = 0;
  std::optional<double> train_fraction;
  std::optional<std::string> held_out_type;
  std::set<std::string> train_ids;
  std::set<std::string> test_ids;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

nlohmann::json to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& j);
/// SHA-256 of the canonical JSON dump.
std::string split_hash(const SplitSpec& split);

/// Shuffles the sorted task ids with SplitMix64(seed); the first
/// floor(train_fraction * T) tasks and all their prompts go to train.
SplitSpec task_split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

/// One split per instruction type (sorted by type id), holding that type out.
std::vector<SplitSpec> instruction_loo_splits(const Dataset& dataset);

}  // namespace ifprobe::dataset
