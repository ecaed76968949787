#include "ifprobe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>

#include "ifprobe/analysis.hpp"
#include "ifprobe/hash.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/repstore.hpp"
#include "ifprobe/rng.hpp"
#include "ifprobe/steer.hpp"
#include "ifprobe/transport.hpp"
#include "json_util.hpp"

namespace ifprobe::experiment {

namespace fs = std::filesystem;
using detail::json;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const std::string& path, std::string_view what) {
  if (path.empty()) throw Error(ErrorKind::kPrecondition, "config: " + std::string(what) + " path is not set");
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorKind::kIo, "config: " + std::string(what) + " '" + path + "' does not exist");
  }
}

json input_entry(const std::string& path) { return {{"path", path}, {"sha256", sha256_file(path)}}; }

void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::kIo, "cannot create output directory " + dir.string());
}

std::string sanitize(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return out;
}

json failure_json(std::string_view stage, const Error& e) {
  return {{"stage", stage}, {"kind", to_string(e.kind())}, {"message", e.what()}};
}

ExperimentResult finish(json manifest, const fs::path& dir, std::string_view name) {
  const auto path = dir / name;
  detail::write_file(path, manifest.dump(2) + "\n");
  return {std::move(manifest), path};
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Population standard deviation.
MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

template <typename Job>
void run_parallel(std::size_t count, std::size_t jobs, Job&& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= count) return;
      job(i);
    }
  };
  const auto threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

}  // namespace

ExperimentResult run_probe_experiment(const RunConfig& config) {
  require_file(config.dataset_path, "dataset");
  require_file(config.reps_path, "reps");
  if (!config.labels_path.empty()) require_file(config.labels_path, "labels");
  config.hyperparams.validate();
  const fs::path out_dir(config.output_dir);
  prepare_output_dir(out_dir);

  json manifest = {{"kind", "probe_experiment"}, {kTimestampKey, utc_timestamp()}, {"config", to_json(config)}};
  json inputs = {{"dataset", input_entry(config.dataset_path)}, {"reps", input_entry(config.reps_path)}};
  if (!config.labels_path.empty()) inputs["labels"] = input_entry(config.labels_path);
  manifest["inputs"] = inputs;

  std::string stage = "load";
  try {
    const auto data = dataset::load_dataset(config.dataset_path);
    const auto records = repstore::read_reps(config.reps_path);
    const auto labels =
        config.labels_path.empty() ? repstore::embedded_labels(records) : repstore::read_labels(config.labels_path);

    stage = "split";
    struct NamedSplit {
      std::string name;
      dataset::SplitSpec spec;
    };
    std::vector<NamedSplit> splits;
    if (config.split.kind == dataset::SplitKind::kTaskSplit) {
      if (config.split.seeds.empty()) throw Error(ErrorKind::kSchema, "config: split.seeds is empty");
      for (auto seed : config.split.seeds) {
        splits.push_back({"seed-" + std::to_string(seed), dataset::task_split(data, config.split.fraction, seed)});
      }
    } else {
      for (auto& s : dataset::instruction_loo_splits(data)) {
        splits.push_back({"loo-" + sanitize(*s.held_out_type), std::move(s)});
      }
    }
    json split_entries = json::array();
    for (const auto& s : splits) {
      json e = {{"name", s.name},
                {"kind", dataset::to_string(s.spec.kind)},
                {"hash", dataset::split_hash(s.spec)},
                {"n_train", s.spec.train_ids.size()},
                {"n_test", s.spec.test_ids.size()}};
      if (s.spec.kind == dataset::SplitKind::kTaskSplit) e["seed"] = s.spec.seed;
      if (s.spec.held_out_type) e["held_out_type"] = *s.spec.held_out_type;
      if (config.emit_splits) {
        prepare_output_dir(out_dir / "splits");
        const auto rel = fs::path("splits") / (s.name + ".json");
        detail::write_file(out_dir / rel, dataset::to_json(s.spec).dump(2) + "\n");
        e["path"] = rel.string();
      }
      split_entries.push_back(std::move(e));
    }
    manifest["splits"] = split_entries;

    const auto summary = repstore::summarize(records);
    std::vector<repstore::TokenPosition> positions = config.positions;
    if (positions.empty()) {
      for (const auto& p : summary.positions) positions.push_back(repstore::parse_position(p));
    }
    const std::vector<int> layers = config.layers.empty() ? summary.layers : config.layers;

    struct Cell {
      repstore::TokenPosition position;
      int layer;
      repstore::LabeledMatrix matrix;
      std::size_t dropped = 0;
    };
    stage = "join";
    std::vector<Cell> cells;
    for (auto pos : positions) {
      for (int layer : layers) {
        auto joined = repstore::join_labels(repstore::select(records, pos, layer), labels, repstore::DropPolicy::kDrop);
        if (joined.matrix.rows.empty()) {
          throw Error(ErrorKind::kValidation, "no labeled records at position " + std::string(repstore::to_string(pos)) +
                                                  ", layer " + std::to_string(layer));
        }
        cells.push_back({pos, layer, std::move(joined.matrix), joined.dropped});
      }
    }

    struct Run {
      double train_auroc = 0.0, test_auroc = 0.0, final_loss = 0.0;
      std::size_t n_train = 0, n_test = 0;
      std::string probe_path;
    };
    std::vector<Run> runs(cells.size() * splits.size());
    std::mutex mu;
    std::optional<std::pair<std::string, Error>> failure;
    prepare_output_dir(out_dir / "probes");
    stage = "train";
    run_parallel(runs.size(), config.jobs, [&](std::size_t i) {
      const auto& cell = cells[i / splits.size()];
      const auto& split = splits[i % splits.size()];
      std::string where = "train";
      try {
        const std::vector<std::string> train_ids(split.spec.train_ids.begin(), split.spec.train_ids.end());
        const std::vector<std::string> test_ids(split.spec.test_ids.begin(), split.spec.test_ids.end());
        const auto train = repstore::subset(cell.matrix, train_ids);
        const auto test = repstore::subset(cell.matrix, test_ids);
        auto p = probe::train_probe(train, config.hyperparams);
        p.position = cell.position;
        p.layer = cell.layer;
        where = "eval";
        Run r;
        r.train_auroc = probe::auroc(probe::predict_scores(p, train.X), train.y);
        r.test_auroc = probe::auroc(probe::predict_scores(p, test.X), test.y);
        r.final_loss = p.final_loss;
        r.n_train = train.rows.size();
        r.n_test = test.rows.size();
        const auto rel = fs::path("probes") / (std::string(repstore::to_string(cell.position)) + "-L" +
                                               std::to_string(cell.layer) + "-" + split.name + ".json");
        probe::save_probe(p, out_dir / rel);
        r.probe_path = rel.string();
        runs[i] = std::move(r);
      } catch (const Error& e) {
        std::lock_guard lock(mu);
        if (!failure) {
          failure.emplace(where + " (" + std::string(repstore::to_string(cell.position)) + ", layer " +
                              std::to_string(cell.layer) + ", " + split.name + ")",
                          e);
        }
      }
    });
    if (failure) {
      stage = failure->first;
      throw failure->second;
    }

    json cell_entries = json::array();
    for (std::size_t c = 0; c < cells.size(); ++c) {
      json run_entries = json::array();
      std::vector<double> train_aurocs, test_aurocs;
      for (std::size_t s = 0; s < splits.size(); ++s) {
        const auto& r = runs[c * splits.size() + s];
        train_aurocs.push_back(r.train_auroc);
        test_aurocs.push_back(r.test_auroc);
        run_entries.push_back({{"split", splits[s].name},
                               {"split_hash", dataset::split_hash(splits[s].spec)},
                               {"train_auroc", r.train_auroc},
                               {"test_auroc", r.test_auroc},
                               {"final_loss", r.final_loss},
                               {"n_train", r.n_train},
                               {"n_test", r.n_test},
                               {"probe_path", r.probe_path}});
      }
      const auto tr = mean_std(train_aurocs);
      const auto te = mean_std(test_aurocs);
      cell_entries.push_back({{"position", repstore::to_string(cells[c].position)},
                              {"layer", cells[c].layer},
                              {"n", cells[c].matrix.rows.size()},
                              {"dropped_unlabeled", cells[c].dropped},
                              {"runs", std::move(run_entries)},
                              {"train_auroc_mean", tr.mean},
                              {"train_auroc_std", tr.std},
                              {"test_auroc_mean", te.mean},
                              {"test_auroc_std", te.std}});
    }
    manifest["cells"] = std::move(cell_entries);
    manifest["status"] = "ok";
    return finish(std::move(manifest), out_dir, "manifest.json");
  } catch (const Error& e) {
    manifest["status"] = "failed";
    manifest["failure"] = failure_json(stage, e);
    finish(std::move(manifest), out_dir, "manifest.json");
    throw StageError(e.kind(), stage, e.what());
  }
}

std::unique_ptr<backend::Backend> make_backend(const EndpointConfig& endpoint, const dataset::Dataset& data,
                                               int timeout_ms, int retries) {
  const std::chrono::milliseconds timeout(timeout_ms);
  if (endpoint.kind == "synthetic") {
    require_file(endpoint.target, "synthetic backend config");
    return std::make_unique<backend::SyntheticBackend>(backend::load_synthetic_config(endpoint.target), data);
  }
  if (endpoint.kind == "url") {
    return std::make_unique<backend::RemoteBackend>(std::make_shared<backend::HttpTransport>(endpoint.target, timeout),
                                                    retries);
  }
  if (endpoint.kind == "cmd") {
    return std::make_unique<backend::RemoteBackend>(std::make_shared<backend::StdioTransport>(endpoint.target, timeout),
                                                    retries);
  }
  throw Error(ErrorKind::kSchema, "config: unknown backend kind '" + endpoint.kind + "'");
}

std::unique_ptr<backend::Judge> make_judge(const EndpointConfig& endpoint, int timeout_ms, int retries) {
  const std::chrono::milliseconds timeout(timeout_ms);
  if (endpoint.kind == "stub") return std::make_unique<backend::StubJudge>();
  if (endpoint.kind == "cliff") return std::make_unique<backend::SteeringCliffJudge>(endpoint.cliff);
  if (endpoint.kind == "url") {
    return std::make_unique<backend::RemoteJudge>(std::make_shared<backend::HttpTransport>(endpoint.target, timeout),
                                                  retries);
  }
  if (endpoint.kind == "cmd") {
    return std::make_unique<backend::RemoteJudge>(std::make_shared<backend::StdioTransport>(endpoint.target, timeout),
                                                  retries);
  }
  throw Error(ErrorKind::kSchema, "config: unknown judge kind '" + endpoint.kind + "'");
}

namespace {

struct ResumeState {
  std::map<std::string, std::vector<steer::PromptOutcome>> complete;
  std::map<std::string, std::vector<steer::PromptOutcome>> partial;
  std::optional<json> selection;
};

ResumeState load_resume(const std::string& path) {
  ResumeState st;
  if (path.empty()) return st;
  const auto j = detail::parse_json(detail::read_file(path), path);
  if (j.value("kind", "") != "steer_experiment") {
    throw Error(ErrorKind::kSchema, "resume: '" + path + "' is not a steering manifest");
  }
  if (j.contains("selection")) st.selection = j["selection"];
  for (const auto& arm : j.value("arms", json::array())) {
    std::vector<steer::PromptOutcome> outcomes;
    for (const auto& o : arm.at("outcomes")) outcomes.push_back(steer::outcome_from_json(o));
    auto& dst = arm.value("status", "") == "complete" ? st.complete : st.partial;
    dst[arm.at("name").get<std::string>()] = std::move(outcomes);
  }
  return st;
}

std::vector<dataset::PromptRecord> sorted_by_id(std::vector<dataset::PromptRecord> v) {
  std::sort(v.begin(), v.end(),
            [](const dataset::PromptRecord& a, const dataset::PromptRecord& b) { return a.prompt_id < b.prompt_id; });
  return v;
}

}  // namespace

ExperimentResult run_steer_experiment(const RunConfig& config) {
  require_file(config.dataset_path, "dataset");
  require_file(config.steering.direction_path, "direction");
  if (!config.resume_path.empty()) require_file(config.resume_path, "resume manifest");
  const fs::path out_dir(config.output_dir);
  prepare_output_dir(out_dir);
  const auto& sc = config.steering;
  if (sc.candidates.empty() && !sc.alpha) {
    throw Error(ErrorKind::kPrecondition, "config: steering needs alpha or candidates");
  }

  json manifest = {{"kind", "steer_experiment"}, {kTimestampKey, utc_timestamp()}, {"config", to_json(config)}};
  manifest["inputs"] = {{"dataset", input_entry(config.dataset_path)},
                        {"direction", input_entry(config.steering.direction_path)}};
  if (config.backend.kind == "synthetic") manifest["inputs"]["backend"] = input_entry(config.backend.target);
  json arms = json::array();

  std::string stage = "load";
  try {
    const auto data = dataset::load_dataset(config.dataset_path);
    const auto direction = probe::load_direction(config.steering.direction_path);
    const auto resume = load_resume(config.resume_path);
    stage = "connect";
    auto backend = make_backend(config.backend, data, config.timeout_ms, config.retries);
    auto judge = make_judge(config.judge, config.timeout_ms, config.retries);

    double alpha = sc.alpha.value_or(0.0);
    std::vector<dataset::PromptRecord> eval_prompts = data.prompts();
    if (!sc.candidates.empty()) {
      stage = "select_alpha";
      auto [validation, remainder] = steer::validation_slice(data.prompts(), sc.validation_fraction, sc.validation_seed);
      eval_prompts = sorted_by_id(std::move(remainder));
      json selection;
      if (resume.selection) {
        selection = *resume.selection;
      } else {
        steer::SelectOptions opts;
        opts.layer = sc.layer;
        opts.position = sc.position;
        opts.jobs = config.jobs;
        selection = steer::to_json(steer::select_alpha(*backend, *judge, sorted_by_id(std::move(validation)),
                                                       direction, sc.candidates, opts));
      }
      selection["validation_size"] = data.prompts().size() - eval_prompts.size();
      alpha = selection.at("alpha").get<double>();
      manifest["selection"] = selection;
    }
    manifest["alpha"] = alpha;

    std::vector<std::pair<std::string, probe::Direction>> arm_defs = {{"probe", direction}};
    for (auto seed : sc.random_seeds) {
      arm_defs.emplace_back("random-" + std::to_string(seed), steer::random_direction(direction.d_vec.size(), seed));
    }

    for (int rep = 0; rep < sc.repeats; ++rep) {
      for (const auto& [base_name, dir] : arm_defs) {
        const auto name = sc.repeats > 1 ? base_name + "#" + std::to_string(rep) : base_name;
        stage = "evaluate:" + name;
        const steer::SteeringConfig cfg{dir, alpha, sc.layer, sc.position};
        std::vector<steer::PromptOutcome> outcomes;
        if (auto it = resume.complete.find(name); it != resume.complete.end()) {
          outcomes = it->second;
        } else {
          steer::EvaluateOptions opts;
          opts.jobs = config.jobs;
          if (auto p = resume.partial.find(name); p != resume.partial.end()) opts.resume = p->second;
          try {
            outcomes = steer::collect_outcomes(*backend, *judge, eval_prompts, cfg, opts);
          } catch (const steer::PartialRunError& e) {
            json partial = json::array();
            for (const auto& o : e.completed()) partial.push_back(steer::to_json(o));
            arms.push_back({{"name", name}, {"status", "partial"}, {"outcomes", std::move(partial)}});
            throw;
          }
        }
        const int layer = sc.layer ? *sc.layer : backend->last_layer().value_or(0);
        const auto report = steer::assemble_report(outcomes, cfg, layer);
        json outs = json::array();
        for (const auto& o : outcomes) outs.push_back(steer::to_json(o));
        arms.push_back({{"name", name},
                        {"status", "complete"},
                        {"direction_source", probe::to_string(dir.source)},
                        {"report", steer::to_json(report)},
                        {"outcomes", std::move(outs)}});
      }
    }
    manifest["arms"] = std::move(arms);
    manifest["status"] = "ok";
    return finish(std::move(manifest), out_dir, "steer_manifest.json");
  } catch (const Error& e) {
    manifest["arms"] = std::move(arms);
    manifest["status"] = "failed";
    manifest["failure"] = failure_json(stage, e);
    finish(std::move(manifest), out_dir, "steer_manifest.json");
    throw StageError(e.kind(), stage, e.what());
  }
}

ExperimentResult run_sensitivity(const RunConfig& config) {
  require_file(config.perturbations_path, "perturbations");
  require_file(config.steering.direction_path, "direction");
  const fs::path out_dir(config.output_dir);
  prepare_output_dir(out_dir);

  const auto sets = analysis::read_perturbations(config.perturbations_path);
  if (sets.empty()) throw Error(ErrorKind::kValidation, "sensitivity: perturbation file has no perturbation sets");
  const auto direction = probe::load_direction(config.steering.direction_path);
  const auto report = analysis::sensitivity_report(sets, direction);

  json warnings = json::array();
  for (auto k : report.missing_kinds) warnings.push_back("missing perturbation kind: " + std::string(analysis::to_string(k)));
  json manifest = {{"kind", "sensitivity"},
                   {kTimestampKey, utc_timestamp()},
                   {"inputs",
                    {{"perturbations", input_entry(config.perturbations_path)},
                     {"direction", input_entry(config.steering.direction_path)}}},
                   {"report", analysis::to_json(report)},
                   {"warnings", std::move(warnings)}};
  detail::write_file(out_dir / "sensitivity.csv", analysis::to_csv(report));
  return finish(std::move(manifest), out_dir, "sensitivity.json");
}

std::vector<ResponseLine> read_responses(const fs::path& path) {
  std::vector<ResponseLine> out;
  std::size_t n = 0;
  for (const auto& j : detail::parse_jsonl(detail::read_file(path), path.string())) {
    const auto ctx = path.string() + " entry " + std::to_string(++n);
    out.push_back({detail::require_string(j, "prompt_id", ctx), detail::require_string(j, "response", ctx)});
  }
  return out;
}

void write_responses(const std::vector<ResponseLine>& responses, const fs::path& path) {
  std::string text;
  for (const auto& r : responses) text += json{{"prompt_id", r.prompt_id}, {"response", r.response}}.dump() + "\n";
  detail::write_file(path, text);
}

std::vector<LabelLine> verify_responses(const dataset::Dataset& data, const std::vector<ResponseLine>& responses) {
  std::vector<LabelLine> out;
  std::set<std::string> seen;
  for (const auto& r : responses) {
    if (!seen.insert(r.prompt_id).second) {
      throw Error(ErrorKind::kDuplicate, "responses: duplicate prompt_id '" + r.prompt_id + "'");
    }
    const auto& prompt = data.at(r.prompt_id);
    out.push_back({r.prompt_id, verifier::verify(prompt.instruction, r.response)});
  }
  return out;
}

void write_labels(const std::vector<LabelLine>& labels, const fs::path& path) {
  std::string text;
  for (const auto& l : labels) {
    text += json{{"prompt_id", l.prompt_id},
                 {"passed", l.result.passed},
                 {"type_id", l.result.type_id},
                 {"evidence", verifier::evidence_to_json(l.result.evidence)}}
                .dump() +
            "\n";
  }
  detail::write_file(path, text);
}

dataset::Dataset synthetic_dataset(std::size_t n_tasks) {
  static const std::vector<std::string> kNouns = {"river",  "lantern", "meadow", "copper", "harbor",  "orchid",
                                                  "summit", "velvet",  "glacier", "ember", "willow",  "prairie",
                                                  "beacon", "canyon",  "thistle", "cobalt", "juniper", "marble"};
  namespace t = dataset::types;
  std::vector<dataset::Task> tasks;
  std::vector<dataset::InstructionInstance> instructions;
  auto word = [&](std::size_t i) { return kNouns[i % kNouns.size()]; };
  for (std::size_t i = 0; i < n_tasks; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "task-%03zu", i + 1);
    const std::string task_id = id;
    tasks.push_back({task_id, "Write a short note about the " + word(i) + " near town number " +
                                  std::to_string(i + 1) + "."});
    const auto k1 = word(i + 1), k2 = word(i + 5), kf = word(i + 9), kq = word(i + 13);
    const int freq = 2 + static_cast<int>(i % 3);
    const int holders = 1 + static_cast<int>(i % 4);
    const std::string phrase = "That is all for note " + std::to_string(i + 1) + ".";

    dataset::InstructionInstance in;
    in.task_id = task_id;
    in.type_id = std::string(t::kKeywordsExistence);
    in.text = "Make sure to include the keywords: \"" + k1 + "\", \"" + k2 + "\".";
    in.params.keywords = {k1, k2};
    instructions.push_back(in);

    in = {};
    in.task_id = task_id;
    in.type_id = std::string(t::kKeywordsForbidden);
    in.text = "Do not include the following keywords: " + kf + ".";
    in.params.keywords = {kf};
    instructions.push_back(in);

    in = {};
    in.task_id = task_id;
    in.type_id = std::string(t::kKeywordsFrequency);
    in.text = "Make sure to use the word \"" + kq + "\" at least " + std::to_string(freq) + " times.";
    in.params.keywords = {kq};
    in.params.min_frequency = freq;
    instructions.push_back(in);

    in = {};
    in.task_id = task_id;
    in.type_id = std::string(t::kEndChecker);
    in.text = "Your note must end with the exact phrase \"" + phrase + "\"";
    in.params.end_phrase = phrase;
    instructions.push_back(in);

    in = {};
    in.task_id = task_id;
    in.type_id = std::string(t::kPlaceholders);
    in.text = "Make sure to include at least " + std::to_string(holders) +
              " placeholders represented by square brackets, such as [name].";
    in.params.min_placeholders = holders;
    instructions.push_back(in);
  }
  return dataset::Dataset(std::move(tasks), std::move(instructions));
}

SynthPaths write_synthetic_fixture(const SynthOptions& options, const fs::path& out_dir) {
  if (options.layers.empty()) throw Error(ErrorKind::kPrecondition, "synth: no layers");
  prepare_output_dir(out_dir);
  SynthPaths paths{out_dir / "data.json",    out_dir / "reps.ifrep",   out_dir / "responses.jsonl",
                   out_dir / "labels.jsonl", out_dir / "backend.json", out_dir / "perturbations.ifrep"};

  const auto data = synthetic_dataset(options.tasks);
  auto config = backend::SyntheticBackendConfig::planted(options.dim, options.seed, options.noise_scale, options.threshold);
  const int last_layer = *std::max_element(options.layers.begin(), options.layers.end());
  config.last_layer = last_layer;
  backend::SyntheticBackend synth(config, data);

  std::vector<ResponseLine> responses;
  std::vector<repstore::RepRecord> records;
  for (const auto& p : data.prompts()) {
    const auto gen = synth.generate({p.prompt_id, p.prompt_text, std::nullopt});
    responses.push_back({p.prompt_id, gen.response_text});
    const bool passed = verifier::verify(p.instruction, gen.response_text).passed;
    const Eigen::VectorXd& r = *gen.representation;
    for (auto pos : {repstore::TokenPosition::kFirst, repstore::TokenPosition::kMiddle, repstore::TokenPosition::kLast}) {
      for (int layer : options.layers) {
        // Correlation with R_original; first-token reps at the last layer are R_original itself.
        double rho = 0.85;
        if (pos == repstore::TokenPosition::kFirst) rho = layer == last_layer ? 1.0 : 0.9;
        if (pos == repstore::TokenPosition::kMiddle) rho = 0.3;
        Eigen::VectorXd v = r;
        if (rho < 1.0) {
          SplitMix64 rng(derive_seed(options.seed, p.prompt_id + "|" + std::string(repstore::to_string(pos)) + "|" +
                                                       std::to_string(layer)));
          for (Eigen::Index k = 0; k < v.size(); ++k) {
            v[k] = rho * r[k] + std::sqrt(1.0 - rho * rho) * options.noise_scale * rng.gaussian();
          }
        }
        repstore::RepRecord rec{p.prompt_id, pos, layer, std::vector<float>(v.size()), passed};
        for (Eigen::Index k = 0; k < v.size(); ++k) rec.vector[static_cast<std::size_t>(k)] = static_cast<float>(v[k]);
        records.push_back(std::move(rec));
      }
    }
  }
  dataset::save_dataset(data, paths.dataset);
  repstore::write_reps(records, paths.reps);
  write_responses(responses, paths.responses);
  write_labels(verify_responses(data, responses), paths.labels);
  detail::write_file(paths.backend, backend::to_json(config).dump(2) + "\n");

  // Phrasing perturbations move along u; the other kinds move orthogonally to it.
  const Eigen::VectorXd& u = config.planted_direction;
  std::vector<analysis::PerturbationSet> sets;
  const auto n_pert = std::min(options.perturbation_prompts, data.prompts().size());
  for (std::size_t i = 0; i < n_pert; ++i) {
    const auto& id = data.prompts()[i].prompt_id;
    const auto original = backend::synthetic_representation(config, id);
    for (auto kind : {analysis::PerturbationKind::kTaskFamiliarity, analysis::PerturbationKind::kInstructionDifficulty,
                      analysis::PerturbationKind::kPhrasing}) {
      analysis::PerturbationSet s{id, kind, {}, original};
      SplitMix64 rng(derive_seed(options.seed, id + "|" + std::string(analysis::to_string(kind))));
      for (std::size_t k = 0; k < options.perturbations_per_kind; ++k) {
        if (kind == analysis::PerturbationKind::kPhrasing) {
          s.modified_reps.push_back(original + (0.5 + 0.25 * static_cast<double>(k)) * u);
        } else {
          Eigen::VectorXd v(u.size());
          for (Eigen::Index c = 0; c < v.size(); ++c) v[c] = rng.gaussian();
          v -= v.dot(u) * u;
          s.modified_reps.push_back(original + v);
        }
      }
      sets.push_back(std::move(s));
    }
  }
  repstore::write_container(analysis::perturbations_to_entries(sets), paths.perturbations);
  return paths;
}

}  // namespace ifprobe::experiment
