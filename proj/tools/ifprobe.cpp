#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ifprobe/analysis.hpp"
#include "ifprobe/backend.hpp"
#include "ifprobe/config.hpp"
#include "ifprobe/dataset.hpp"
#include "ifprobe/error.hpp"
#include "ifprobe/experiment.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/repstore.hpp"
#include "ifprobe/steer.hpp"

namespace {

using nlohmann::json;
using namespace ifprobe;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kSchema, "not a number: '" + item + "'");
    }
  }
  return out;
}

repstore::LabelMap labels_for(const std::vector<repstore::RepRecord>& records, const std::string& labels_path) {
  return labels_path.empty() ? repstore::embedded_labels(records) : repstore::read_labels(labels_path);
}

/// Endpoint flags shared by steer, select-alpha and the experiment commands.
struct EndpointFlags {
  std::string backend_url, backend_cmd, synthetic;
  std::string judge_url, judge_cmd;
  std::optional<double> judge_cliff;
  bool judge_stub = false;
  std::optional<int> timeout_ms, retries;
  std::optional<std::size_t> jobs;

  void add(CLI::App* app) {
    auto* b = app->add_option("--backend-url", backend_url, "Generation endpoint base URL (HTTP)");
    auto* c = app->add_option("--backend-cmd", backend_cmd, "Generation peer command (NDJSON over stdio)");
    auto* s = app->add_option("--synthetic", synthetic, "Synthetic backend config JSON");
    b->excludes(c)->excludes(s);
    c->excludes(s);
    auto* ju = app->add_option("--judge-url", judge_url, "Judge endpoint base URL (HTTP)");
    auto* jc = app->add_option("--judge-cmd", judge_cmd, "Judge peer command (NDJSON over stdio)");
    auto* jl = app->add_option("--judge-cliff", judge_cliff, "Offline judge scoring 6 once |alpha| exceeds this");
    auto* js = app->add_flag("--judge-stub", judge_stub, "Offline judge: 9 for PASS responses, else 8");
    ju->excludes(jc)->excludes(jl)->excludes(js);
    jc->excludes(jl)->excludes(js);
    jl->excludes(js);
    app->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    app->add_option("--retries", retries, "Retries on transport errors")->check(CLI::NonNegativeNumber);
    app->add_option("--jobs", jobs, "Concurrent evaluations")->check(CLI::PositiveNumber);
  }

  bool backend_given() const { return !backend_url.empty() || !backend_cmd.empty() || !synthetic.empty(); }

  void apply(experiment::RunConfig& cfg) const {
    if (!backend_url.empty()) cfg.backend = {"url", backend_url, 0.2};
    if (!backend_cmd.empty()) cfg.backend = {"cmd", backend_cmd, 0.2};
    if (!synthetic.empty()) cfg.backend = {"synthetic", synthetic, 0.2};
    if (!judge_url.empty()) cfg.judge = {"url", judge_url, 0.2};
    if (!judge_cmd.empty()) cfg.judge = {"cmd", judge_cmd, 0.2};
    if (judge_cliff) cfg.judge = {"cliff", "", *judge_cliff};
    if (judge_stub) cfg.judge = {"stub", "", 0.2};
    if (timeout_ms) cfg.timeout_ms = *timeout_ms;
    if (retries) cfg.retries = *retries;
    if (jobs) cfg.jobs = *jobs;
  }

  /// Resolves endpoints for a flag-only invocation.
  void resolve(experiment::RunConfig& cfg) const {
    apply(cfg);
    if (!backend_given()) {
      const char* env = std::getenv("IFPROBE_BACKEND_URL");
      if (env == nullptr || *env == '\0') {
        throw Error(ErrorKind::kPrecondition,
                    "no backend: pass --backend-url, --backend-cmd or --synthetic, or set IFPROBE_BACKEND_URL");
      }
      cfg.backend = {"url", env, 0.2};
    }
    const bool judge_given = !judge_url.empty() || !judge_cmd.empty() || judge_cliff || judge_stub;
    if (!judge_given && cfg.backend.kind != "synthetic") {
      throw Error(ErrorKind::kPrecondition, "no judge: pass --judge-url, --judge-cmd, --judge-cliff or --judge-stub");
    }
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Linear probes, steering and sensitivity analysis for instruction following"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ifprobe 0.1.0");

  // verify
  auto* verify = app.add_subcommand("verify", "Label responses with the deterministic verifier");
  std::string v_data, v_responses, v_out;
  verify->add_option("--data", v_data)->required();
  verify->add_option("--responses", v_responses)->required();
  verify->add_option("--out", v_out, "Labels JSONL (default stdout)");

  // split
  auto* split = app.add_subcommand("split", "Task split or leave-one-instruction-type-out splits");
  std::string s_kind = "task", s_in, s_out, s_held_out;
  double s_fraction = 0.7;
  std::uint64_t s_seed = 0;
  split->add_option("--kind", s_kind)->check(CLI::IsMember({"task", "loo"}));
  split->add_option("--fraction", s_fraction)->check(CLI::Range(0.0, 1.0));
  split->add_option("--seed", s_seed);
  split->add_option("--held-out", s_held_out, "With --kind loo: emit only this type's split");
  split->add_option("--in", s_in)->required();
  split->add_option("--out", s_out);

  // reps inspect
  auto* reps = app.add_subcommand("reps", "Representation store tools");
  reps->require_subcommand(1);
  auto* inspect = reps->add_subcommand("inspect", "Print count, d, positions and layers");
  std::string r_file;
  inspect->add_option("file", r_file)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a logistic-regression probe");
  std::string t_reps, t_labels, t_position = "first", t_split, t_out, t_hp;
  int t_layer = 0;
  probe::ProbeHyperparams hp;
  train->add_option("--reps", t_reps)->required();
  train->add_option("--labels", t_labels, "Labels JSONL (default: labels embedded in the store)");
  train->add_option("--position", t_position)->check(CLI::IsMember({"first", "middle", "last"}));
  train->add_option("--layer", t_layer)->required();
  train->add_option("--split", t_split, "Train on the split's train ids (default: all labeled rows)");
  train->add_option("--epochs", hp.epochs);
  train->add_option("--lr", hp.learning_rate);
  train->add_option("--weight-decay", hp.weight_decay);
  train->add_flag("--standardize", hp.standardize);
  train->add_option("--out", t_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Train/test AUROC of a probe on a split");
  std::string e_probe, e_reps, e_labels, e_split, e_out;
  std::optional<std::string> e_position;
  std::optional<int> e_layer;
  eval->add_option("--probe", e_probe)->required();
  eval->add_option("--reps", e_reps)->required();
  eval->add_option("--labels", e_labels);
  eval->add_option("--split", e_split)->required();
  eval->add_option("--position", e_position)->check(CLI::IsMember({"first", "middle", "last"}));
  eval->add_option("--layer", e_layer);
  eval->add_option("--out", e_out);

  // pca
  auto* pca = app.add_subcommand("pca", "Fit PCA on train rows and project train and test rows");
  std::string p_reps, p_labels, p_split, p_position = "first", p_out;
  int p_layer = 0;
  int p_k = 2;
  pca->add_option("--reps", p_reps)->required();
  pca->add_option("--labels", p_labels);
  pca->add_option("--split", p_split)->required();
  pca->add_option("--position", p_position)->check(CLI::IsMember({"first", "middle", "last"}));
  pca->add_option("--layer", p_layer)->required();
  pca->add_option("--k", p_k)->check(CLI::PositiveNumber);
  pca->add_option("--out", p_out);

  // steer, steer select-alpha
  auto* steer_cmd = app.add_subcommand("steer", "Paired unsteered/steered evaluation");
  std::string st_data, st_direction, st_out, st_position = "first";
  std::optional<double> st_alpha;
  std::optional<std::uint64_t> st_random_seed;
  std::optional<int> st_layer;
  int st_repeats = 1;
  EndpointFlags st_ep;
  steer_cmd->add_option("--data", st_data)->required();
  steer_cmd->add_option("--direction", st_direction, "Probe or direction JSON");
  steer_cmd->add_option("--alpha", st_alpha);
  steer_cmd->add_option("--random-seed", st_random_seed, "Use a seeded random unit direction instead");
  steer_cmd->add_option("--layer", st_layer, "Steering layer (default: backend's last layer)");
  steer_cmd->add_option("--position", st_position)->check(CLI::IsMember({"first", "middle", "last"}));
  steer_cmd->add_option("--repeats", st_repeats)->check(CLI::PositiveNumber);
  steer_cmd->add_option("--out", st_out);
  st_ep.add(steer_cmd);

  auto* select = steer_cmd->add_subcommand("select-alpha", "Pick alpha on a validation slice");
  std::string sa_candidates = "0.05,0.1,0.15,0.3";
  double sa_fraction = 0.1;
  std::uint64_t sa_seed = 0;
  bool sa_all = false;
  select->add_option("--candidates", sa_candidates);
  select->add_option("--validation-fraction", sa_fraction)->check(CLI::Range(0.0, 1.0));
  select->add_option("--validation-seed", sa_seed);
  select->add_flag("--all", sa_all, "Use every prompt as the validation set");
  select->fallthrough();

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "Alignment of perturbation shifts with a direction");
  std::string se_pert, se_direction, se_out;
  sens->add_option("--perturbations", se_pert)->required();
  sens->add_option("--direction", se_direction)->required();
  sens->add_option("--out", se_out, "Report JSON; a CSV is written next to it");

  // synth
  auto* synth = app.add_subcommand("synth", "Write the planted-direction fixture");
  experiment::SynthOptions so;
  std::string sy_out;
  synth->add_option("--out-dir", sy_out)->required();
  synth->add_option("--tasks", so.tasks)->check(CLI::PositiveNumber);
  synth->add_option("--dim", so.dim)->check(CLI::PositiveNumber);
  synth->add_option("--seed", so.seed);
  synth->add_option("--noise", so.noise_scale);
  synth->add_option("--threshold", so.threshold);
  synth->add_option("--layers", so.layers);

  // experiment {probe, steer, sensitivity}
  auto* exp = app.add_subcommand("experiment", "Config-driven pipelines with manifests");
  exp->require_subcommand(1);
  std::string x_config, x_out_dir, x_resume;
  bool x_emit_splits = false;
  EndpointFlags x_ep;
  exp->add_option("--config", x_config, "TOML or JSON run config")->required();
  exp->add_option("--out-dir", x_out_dir);
  exp->add_flag("--emit-splits", x_emit_splits);
  exp->add_option("--resume", x_resume, "Manifest of an interrupted steering run");
  x_ep.add(exp);
  auto* x_probe = exp->add_subcommand("probe", "split, train and eval over the position/layer grid");
  auto* x_steer = exp->add_subcommand("steer", "alpha selection and steering arms");
  auto* x_sens = exp->add_subcommand("sensitivity", "perturbation alignment report");
  for (auto* sub : {x_probe, x_steer, x_sens}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*verify) {
    const auto data = dataset::load_dataset(v_data);
    const auto labels = experiment::verify_responses(data, experiment::read_responses(v_responses));
    if (v_out.empty()) {
      for (const auto& l : labels) {
        std::cout << json{{"prompt_id", l.prompt_id},
                          {"passed", l.result.passed},
                          {"type_id", l.result.type_id},
                          {"evidence", verifier::evidence_to_json(l.result.evidence)}}
                         .dump()
                  << "\n";
      }
    } else {
      experiment::write_labels(labels, v_out);
    }
    return 0;
  }

  if (*split) {
    const auto data = dataset::load_dataset(s_in);
    if (s_kind == "task") {
      write_json(s_out, dataset::to_json(dataset::task_split(data, s_fraction, s_seed)));
      return 0;
    }
    const auto splits = dataset::instruction_loo_splits(data);
    if (!s_held_out.empty()) {
      for (const auto& s : splits) {
        if (*s.held_out_type == s_held_out) {
          write_json(s_out, dataset::to_json(s));
          return 0;
        }
      }
      throw Error(ErrorKind::kPrecondition, "no instruction type '" + s_held_out + "' in the dataset");
    }
    json arr = json::array();
    for (const auto& s : splits) arr.push_back(dataset::to_json(s));
    write_json(s_out, arr);
    return 0;
  }

  if (*inspect) {
    write_json("", repstore::to_json(repstore::summarize(repstore::read_reps(r_file))));
    return 0;
  }

  if (*train) {
    hp.validate();
    const auto records = repstore::read_reps(t_reps);
    const auto pos = repstore::parse_position(t_position);
    auto joined = repstore::join_labels(repstore::select(records, pos, t_layer), labels_for(records, t_labels),
                                        repstore::DropPolicy::kDrop);
    auto matrix = std::move(joined.matrix);
    if (!t_split.empty()) {
      const auto spec = dataset::split_from_json(read_json_file(t_split));
      matrix = repstore::subset(matrix, {spec.train_ids.begin(), spec.train_ids.end()});
    }
    auto p = probe::train_probe(matrix, hp);
    p.position = pos;
    p.layer = t_layer;
    probe::save_probe(p, t_out);
    std::cerr << "trained on " << matrix.rows.size() << " rows (" << joined.dropped
              << " unlabeled dropped), final loss " << p.final_loss << "\n";
    return 0;
  }

  if (*eval) {
    const auto p = probe::load_probe(e_probe);
    const auto pos = e_position ? repstore::parse_position(*e_position) : p.position;
    const auto layer = e_layer ? e_layer : p.layer;
    if (!pos || !layer) {
      throw Error(ErrorKind::kPrecondition, "probe file has no position/layer; pass --position and --layer");
    }
    const auto records = repstore::read_reps(e_reps);
    const auto joined = repstore::join_labels(repstore::select(records, *pos, *layer), labels_for(records, e_labels),
                                              repstore::DropPolicy::kDrop);
    const auto spec = dataset::split_from_json(read_json_file(e_split));
    const auto tr = repstore::subset(joined.matrix, {spec.train_ids.begin(), spec.train_ids.end()});
    const auto te = repstore::subset(joined.matrix, {spec.test_ids.begin(), spec.test_ids.end()});
    json out = {{"split_hash", dataset::split_hash(spec)},
                {"position", repstore::to_string(*pos)},
                {"layer", *layer},
                {"n_train", tr.rows.size()},
                {"n_test", te.rows.size()},
                {"train_auroc", probe::auroc(probe::predict_scores(p, tr.X), tr.y)},
                {"test_auroc", probe::auroc(probe::predict_scores(p, te.X), te.y)}};
    write_json(e_out, out);
    return 0;
  }

  if (*pca) {
    const auto records = repstore::read_reps(p_reps);
    const auto joined = repstore::join_labels(repstore::select(records, repstore::parse_position(p_position), p_layer),
                                              labels_for(records, p_labels), repstore::DropPolicy::kDrop);
    const auto spec = dataset::split_from_json(read_json_file(p_split));
    const auto tr = repstore::subset(joined.matrix, {spec.train_ids.begin(), spec.train_ids.end()});
    const auto te = repstore::subset(joined.matrix, {spec.test_ids.begin(), spec.test_ids.end()});
    const auto model = analysis::pca_fit(tr.X, p_k);
    if (model.rank_deficient) std::cerr << "warning: training data is rank deficient\n";
    std::ostringstream csv;
    csv << "prompt_id";
    for (int c = 1; c <= p_k; ++c) csv << ",pc" << c;
    csv << ",label\n";
    csv.precision(17);
    for (const auto* m : {&tr, &te}) {
      const auto coords = analysis::pca_project(model, m->X);
      for (std::size_t r = 0; r < m->rows.size(); ++r) {
        csv << m->rows[r];
        for (Eigen::Index c = 0; c < coords.cols(); ++c) csv << "," << coords(static_cast<Eigen::Index>(r), c);
        csv << "," << (m->y[r] ? 1 : 0) << "\n";
      }
    }
    write_text(p_out, csv.str());
    return 0;
  }

  if (*steer_cmd) {
    experiment::RunConfig cfg;
    st_ep.resolve(cfg);
    const auto data = dataset::load_dataset(st_data);
    auto backend = experiment::make_backend(cfg.backend, data, cfg.timeout_ms, cfg.retries);
    auto judge = experiment::make_judge(cfg.judge, cfg.timeout_ms, cfg.retries);
    const auto position = repstore::parse_position(st_position);

    std::optional<probe::Direction> direction;
    if (!st_direction.empty()) direction = probe::load_direction(st_direction);
    if (st_random_seed) {
      Eigen::Index dim = 0;
      if (direction) {
        dim = direction->d_vec.size();
      } else if (cfg.backend.kind == "synthetic") {
        dim = static_cast<Eigen::Index>(backend::load_synthetic_config(cfg.backend.target).dim);
      } else {
        throw Error(ErrorKind::kPrecondition, "--random-seed needs --direction to fix the dimension");
      }
      direction = steer::random_direction(dim, *st_random_seed);
    }
    if (!direction) throw Error(ErrorKind::kPrecondition, "pass --direction or --random-seed");

    if (*select) {
      steer::SelectOptions opts;
      opts.layer = st_layer;
      opts.position = position;
      opts.jobs = cfg.jobs;
      std::vector<dataset::PromptRecord> validation = data.prompts();
      if (!sa_all) validation = steer::validation_slice(data.prompts(), sa_fraction, sa_seed).first;
      const auto sel = steer::select_alpha(*backend, *judge, validation, *direction, parse_doubles(sa_candidates), opts);
      if (sel.flagged) std::cerr << "warning: no candidate kept quality within tolerance\n";
      write_json(st_out, steer::to_json(sel));
      return 0;
    }

    if (!st_alpha) throw Error(ErrorKind::kPrecondition, "--alpha is required");
    steer::SteeringConfig sc{*direction, *st_alpha, st_layer, position};
    steer::EvaluateOptions opts;
    opts.jobs = cfg.jobs;
    if (st_repeats == 1) {
      write_json(st_out, steer::to_json(steer::evaluate_steering(*backend, *judge, data.prompts(), sc, opts)));
    } else {
      json runs = json::array();
      for (int r = 0; r < st_repeats; ++r) {
        runs.push_back(steer::to_json(steer::evaluate_steering(*backend, *judge, data.prompts(), sc, opts)));
      }
      write_json(st_out, json{{"runs", runs}});
    }
    return 0;
  }

  if (*sens) {
    const auto sets = analysis::read_perturbations(se_pert);
    if (sets.empty()) throw Error(ErrorKind::kValidation, "perturbation file has no perturbation sets");
    const auto report = analysis::sensitivity_report(sets, probe::load_direction(se_direction));
    for (auto k : report.missing_kinds) {
      std::cerr << "warning: missing perturbation kind " << analysis::to_string(k) << "\n";
    }
    write_json(se_out, analysis::to_json(report));
    if (!se_out.empty() && se_out != "-") {
      auto csv_path = std::filesystem::path(se_out).replace_extension(".csv");
      write_text(csv_path.string(), analysis::to_csv(report));
    }
    return 0;
  }

  if (*synth) {
    const auto paths = experiment::write_synthetic_fixture(so, sy_out);
    write_json("", json{{"dataset", paths.dataset.string()},
                        {"reps", paths.reps.string()},
                        {"responses", paths.responses.string()},
                        {"labels", paths.labels.string()},
                        {"backend", paths.backend.string()},
                        {"perturbations", paths.perturbations.string()}});
    return 0;
  }

  if (*exp) {
    auto cfg = experiment::load_run_config(x_config);
    x_ep.apply(cfg);
    if (!x_out_dir.empty()) cfg.output_dir = x_out_dir;
    if (x_emit_splits) cfg.emit_splits = true;
    if (!x_resume.empty()) cfg.resume_path = x_resume;
    if ((cfg.backend.kind == "url") && cfg.backend.target.empty()) {
      if (const char* env = std::getenv("IFPROBE_BACKEND_URL"); env != nullptr) cfg.backend.target = env;
    }
    experiment::ExperimentResult result;
    if (*x_probe) result = experiment::run_probe_experiment(cfg);
    if (*x_steer) result = experiment::run_steer_experiment(cfg);
    if (*x_sens) result = experiment::run_sensitivity(cfg);
    for (const auto& w : result.manifest.value("warnings", json::array())) {
      std::cerr << "warning: " << w.get<std::string>() << "\n";
    }
    std::cout << result.manifest_path.string() << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ifprobe::experiment::StageError& e) {
    std::cerr << "error [" << ifprobe::to_string(e.kind()) << "] stage " << e.stage() << ": " << e.what() << "\n";
    return ifprobe::exit_code_for(e.kind());
  } catch (const ifprobe::Error& e) {
    std::cerr << "error [" << ifprobe::to_string(e.kind()) << "]: " << e.what() << "\n";
    return ifprobe::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}
