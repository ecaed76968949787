#include <doctest.h>

#include <map>
#include <set>

#include "ifprobe/dataset.hpp"
#include "ifprobe/error.hpp"
#include "ifprobe/experiment.hpp"
#include "ifprobe/rng.hpp"
#include "oracles.hpp"

using namespace ifprobe;
using dataset::Dataset;
using nlohmann::json;

namespace {

json five_type_instructions(const std::string& task) {
  return json::array({
      {{"type_id", "keywords:existence"}, {"task_id", task}, {"text", "Include skills."},
       {"params", {{"keywords", {"skills", "technology", "career"}}}}},
      {{"type_id", "keywords:forbidden_words"}, {"task_id", task}, {"text", "Avoid resume."},
       {"params", {{"keywords", {"resume", "software"}}}}},
      {{"type_id", "keywords:frequency"}, {"task_id", task}, {"text", "Say syntax 3 times."},
       {"params", {{"keywords", {"syntax"}}, {"min_frequency", 3}}}},
      {{"type_id", "startend:end_checker"}, {"task_id", task}, {"text", "End with it."},
       {"params", {{"end_phrase", "The end."}}}},
      {{"type_id", "detectable_content:number_placeholders"}, {"task_id", task}, {"text", "Use [x]."},
       {"params", {{"min_placeholders", 2}}}},
  });
}

json two_task_doc() {
  json doc = {{"tasks", json::array({{{"id", "t1"}, {"text", "Write a joke."}}, {{"id", "t2"}, {"text", "Write a poem."}}})},
              {"instructions", json::array()}};
  for (const auto& t : {"t1", "t2"}) {
    for (auto& in : five_type_instructions(t)) doc["instructions"].push_back(in);
  }
  return doc;
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

TEST_CASE("two tasks by five types give ten prompts") {
  const auto d = dataset::parse_dataset(two_task_doc().dump());
  CHECK(d.prompts().size() == 10);
  CHECK(d.counts().tasks == 2);
  CHECK(d.counts().instruction_types == 5);
  CHECK(d.counts().unverifiable_prompts == 0);
  CHECK(d.instruction_types() == dataset::builtin_types());
  const auto& p = d.at("t1/keywords:frequency");
  CHECK(p.prompt_text == "Write a joke. Say syntax 3 times.");
  CHECK(p.instruction.params.min_frequency == 3);
}

TEST_CASE("full-size synthetic dataset has 500 prompts") {
  const auto d = experiment::synthetic_dataset(100);
  CHECK(d.prompts().size() == 500);
  CHECK(d.tasks().size() == 100);
}

TEST_CASE("schema violations") {
  auto doc = two_task_doc();
  doc["instructions"][2]["params"].erase("min_frequency");
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kSchema);

  doc = two_task_doc();
  doc["instructions"][0]["params"]["keywords"] = json::array();
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kSchema);

  doc = two_task_doc();
  doc["instructions"][3]["params"]["min_placeholders"] = 1;
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kSchema);

  doc = two_task_doc();
  doc["instructions"][4]["params"]["min_placeholders"] = 0;
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kSchema);

  doc = two_task_doc();
  doc["tasks"].push_back({{"id", "t1"}, {"text", "again"}});
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kDuplicate);

  doc = two_task_doc();
  doc["instructions"].push_back(doc["instructions"][0]);
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kDuplicate);

  doc = two_task_doc();
  doc["instructions"][0]["task_id"] = "t9";
  CHECK(kind_of([&] { dataset::parse_dataset(doc.dump()); }) == ErrorKind::kSchema);
}

TEST_CASE("parse errors carry a line number") {
  try {
    dataset::parse_dataset("{\n\"tasks\": [\n,]}");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("unverifiable types are kept but flagged") {
  auto doc = two_task_doc();
  doc["instructions"].push_back(
      {{"type_id", "language:response_language"}, {"task_id", "t1"}, {"text", "Answer in French."},
       {"params", {{"language", "fr"}}}});
  const auto d = dataset::parse_dataset(doc.dump());
  CHECK(d.counts().unverifiable_prompts == 1);
  CHECK_FALSE(d.at("t1/language:response_language").instruction.verifiable());
  CHECK(d.at("t1/language:response_language").instruction.params.extra["language"] == "fr");
}

TEST_CASE("assemble_prompt") {
  const dataset::Task t{"t", "Write a joke about programmers."};
  dataset::InstructionInstance in;
  in.text = "Make sure to use the word \"syntax\" at least 3 times.";
  CHECK(dataset::assemble_prompt(t, in) ==
        "Write a joke about programmers. Make sure to use the word \"syntax\" at least 3 times.");
  CHECK(dataset::assemble_prompt(t, in) == dataset::assemble_prompt(t, in));
  in.text.clear();
  CHECK(kind_of([&] { dataset::assemble_prompt(t, in); }) == ErrorKind::kPrecondition);
}

TEST_CASE("dataset round-trips through JSON") {
  oracle::TempDir dir("ds");
  const auto d = experiment::synthetic_dataset(7);
  dataset::save_dataset(d, dir / "d.json");
  const auto back = dataset::load_dataset(dir / "d.json");
  CHECK(back.to_json() == d.to_json());
  CHECK(kind_of([&] { dataset::load_dataset(dir / "missing.json"); }) == ErrorKind::kIo);
}

TEST_CASE("task split arithmetic") {
  const auto d = experiment::synthetic_dataset(100);
  const auto s = dataset::task_split(d, 0.7, 42);
  CHECK(s.train_ids.size() == 350);
  CHECK(s.test_ids.size() == 150);
  CHECK(dataset::to_json(s).dump() == dataset::to_json(dataset::task_split(d, 0.7, 42)).dump());
  CHECK(dataset::split_hash(s) == dataset::split_hash(dataset::task_split(d, 0.7, 42)));
  CHECK(dataset::split_hash(s) != dataset::split_hash(dataset::task_split(d, 0.7, 43)));

  const auto two = experiment::synthetic_dataset(2);
  const auto s2 = dataset::task_split(two, 0.5, 1);
  CHECK(s2.train_ids.size() == 5);
  CHECK(s2.test_ids.size() == 5);

  CHECK(kind_of([&] { dataset::task_split(two, 0.2, 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([&] { dataset::task_split(two, 1.0, 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([&] { dataset::task_split(experiment::synthetic_dataset(1), 0.5, 1); }) == ErrorKind::kPrecondition);
}

TEST_CASE("task split matches a hand-run shuffle") {
  const auto d = experiment::synthetic_dataset(10);
  std::vector<std::string> ids;
  for (const auto& t : d.tasks()) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(5);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.next() % i]);
  const std::set<std::string> train_tasks(ids.begin(), ids.begin() + 7);
  const auto s = dataset::task_split(d, 0.7, 5);
  for (const auto& id : s.train_ids) CHECK(train_tasks.count(id.substr(0, id.find('/'))) == 1);
  for (const auto& id : s.test_ids) CHECK(train_tasks.count(id.substr(0, id.find('/'))) == 0);
}

TEST_CASE("split JSON round trip and validation") {
  const auto d = experiment::synthetic_dataset(5);
  for (const auto& s : dataset::instruction_loo_splits(d)) {
    CHECK(dataset::split_from_json(dataset::to_json(s)) == s);
  }
  const auto s = dataset::task_split(d, 0.6, 3);
  CHECK(dataset::split_from_json(dataset::to_json(s)) == s);
  auto bad = dataset::to_json(s);
  bad["test_ids"].push_back(*s.train_ids.begin());
  CHECK(kind_of([&] { dataset::split_from_json(bad); }) == ErrorKind::kValidation);
}

TEST_CASE("leave-one-out splits") {
  const auto d = experiment::synthetic_dataset(100);
  const auto splits = dataset::instruction_loo_splits(d);
  REQUIRE(splits.size() == 5);
  std::multiset<std::string> held;
  for (const auto& s : splits) {
    CHECK(s.test_ids.size() == 100);
    CHECK(s.train_ids.size() == 400);
    held.insert(*s.held_out_type);
    for (const auto& id : s.test_ids) CHECK(d.at(id).instruction.type_id == *s.held_out_type);
  }
  CHECK(std::set<std::string>(held.begin(), held.end()).size() == 5);

  // Two types mirror each other.
  json doc = {{"tasks", json::array({{{"id", "a"}, {"text", "A."}}, {{"id", "b"}, {"text", "B."}}})},
              {"instructions", json::array()}};
  for (const auto& t : {"a", "b"}) {
    doc["instructions"].push_back({{"type_id", "keywords:existence"}, {"task_id", t}, {"text", "x"},
                                   {"params", {{"keywords", {"k"}}}}});
    doc["instructions"].push_back({{"type_id", "startend:end_checker"}, {"task_id", t}, {"text", "y"},
                                   {"params", {{"end_phrase", "z"}}}});
  }
  const auto two = dataset::instruction_loo_splits(dataset::parse_dataset(doc.dump()));
  REQUIRE(two.size() == 2);
  CHECK(two[0].train_ids == two[1].test_ids);
  CHECK(two[0].test_ids == two[1].train_ids);

  doc["instructions"].erase(doc["instructions"].begin() + 1);
  doc["instructions"].erase(doc["instructions"].begin() + 2);
  CHECK(kind_of([&] { dataset::instruction_loo_splits(dataset::parse_dataset(doc.dump())); }) ==
        ErrorKind::kPrecondition);
}

TEST_CASE("prompt ids are injective over (task, type)") {
  const auto d = experiment::synthetic_dataset(30);
  std::set<std::string> ids;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& p : d.prompts()) {
    ids.insert(p.prompt_id);
    keys.insert({p.task.id, p.instruction.type_id});
    CHECK(p.prompt_id == dataset::make_prompt_id(p.task.id, p.instruction.type_id));
    CHECK(p.prompt_text.find(p.task.text) != std::string::npos);
    CHECK(p.prompt_text.find(p.instruction.text) != std::string::npos);
  }
  CHECK(ids.size() == d.prompts().size());
  CHECK(keys.size() == d.prompts().size());
}
