#include "ifprobe/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "ifprobe/error.hpp"
#include "json_util.hpp"

namespace ifprobe::analysis {

using detail::json;

PcaModel pca_fit(const Eigen::MatrixXd& X_train, Eigen::Index k) {
  const auto n = X_train.rows();
  const auto d = X_train.cols();
  if (n < 2) throw Error(ErrorKind::kPrecondition, "pca_fit: need at least 2 rows");
  if (k < 1 || k > std::min(n, d)) {
    throw Error(ErrorKind::kPrecondition, "pca_fit: k must be in [1, min(n, d)]");
  }
  if (!X_train.allFinite()) throw Error(ErrorKind::kValidation, "pca_fit: non-finite input");

  PcaModel model;
  model.mean = X_train.colwise().mean();
  const Eigen::MatrixXd centered = X_train.rowwise() - model.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::kInvariant, "pca_fit: eigendecomposition failed");
  }
  // Eigen returns ascending eigenvalues.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  const double top = std::max(values[d - 1], 0.0);
  const double tol = top * 1e-12 * static_cast<double>(d);

  model.components.resize(k, d);
  model.explained_variance.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto src = d - 1 - i;
    Eigen::RowVectorXd row = vectors.col(src).transpose();
    Eigen::Index arg = 0;
    row.cwiseAbs().maxCoeff(&arg);
    if (row[arg] < 0) row = -row;
    model.components.row(i) = row;
    double var = values[src];
    if (var <= tol) {
      var = 0.0;
      model.rank_deficient = true;
    }
    model.explained_variance[i] = var;
  }
  return model;
}

Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.mean.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "pca_project: column count differs from model");
  }
  return (X.rowwise() - model.mean) * model.components.transpose();
}

Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& coords) {
  if (coords.cols() != model.components.rows()) {
    throw Error(ErrorKind::kDimensionMismatch, "pca_reconstruct: coordinate width differs from k");
  }
  return (coords * model.components).rowwise() + model.mean;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kDimensionMismatch, "cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorKind::kPrecondition, "cosine_similarity: zero-norm input");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::string_view to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kTaskFamiliarity: return "task_familiarity";
    case PerturbationKind::kInstructionDifficulty: return "instruction_difficulty";
    case PerturbationKind::kPhrasing: return "phrasing";
  }
  return "phrasing";
}

PerturbationKind parse_kind(std::string_view text) {
  if (text == "task_familiarity") return PerturbationKind::kTaskFamiliarity;
  if (text == "instruction_difficulty") return PerturbationKind::kInstructionDifficulty;
  if (text == "phrasing") return PerturbationKind::kPhrasing;
  throw Error(ErrorKind::kSchema, "unknown perturbation kind '" + std::string(text) + "'");
}

std::optional<double> perturbation_alignment(const PerturbationSet& set,
                                             const probe::Direction& direction) {
  if (set.modified_reps.empty()) {
    throw Error(ErrorKind::kPrecondition, "perturbation '" + set.original_id + "': no modified reps");
  }
  const auto d = set.original_rep.size();
  if (direction.d_vec.size() != d) {
    throw Error(ErrorKind::kDimensionMismatch, "perturbation '" + set.original_id + "': direction dimension");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& m : set.modified_reps) {
    if (m.size() != d) {
      throw Error(ErrorKind::kDimensionMismatch, "perturbation '" + set.original_id + "': rep dimension");
    }
    mean += m;
  }
  mean /= static_cast<double>(set.modified_reps.size());
  const Eigen::VectorXd diff = mean - set.original_rep;
  if (diff.norm() <= 1e-12 * std::max(1.0, set.original_rep.norm())) return std::nullopt;
  return cosine_similarity(diff, direction.d_vec);
}

SensitivityReport sensitivity_report(const std::vector<PerturbationSet>& sets,
                                     const probe::Direction& direction) {
  if (sets.empty()) throw Error(ErrorKind::kPrecondition, "sensitivity_report: no perturbation sets");
  std::map<PerturbationKind, std::vector<AlignmentValue>> grouped;
  for (const auto& s : sets) grouped[s.kind].push_back({s.original_id, perturbation_alignment(s, direction)});

  SensitivityReport report;
  for (auto kind : {PerturbationKind::kTaskFamiliarity, PerturbationKind::kInstructionDifficulty,
                    PerturbationKind::kPhrasing}) {
    auto it = grouped.find(kind);
    if (it == grouped.end()) {
      report.missing_kinds.push_back(kind);
      continue;
    }
    KindSummary g{kind, std::move(it->second), std::nullopt, std::nullopt, 0};
    std::stable_sort(g.values.begin(), g.values.end(),
                     [](const AlignmentValue& a, const AlignmentValue& b) {
                       if (a.original_id != b.original_id) return a.original_id < b.original_id;
                       // Duplicate ids (several sets for one prompt) order by value.
                       return a.alignment.value_or(-2.0) < b.alignment.value_or(-2.0);
                     });
    std::vector<double> xs;
    for (const auto& v : g.values) {
      if (v.alignment) xs.push_back(*v.alignment);
      else ++g.null_count;
    }
    if (!xs.empty()) {
      std::sort(xs.begin(), xs.end());
      double sum = 0.0;
      for (double x : xs) sum += x;
      g.mean = sum / static_cast<double>(xs.size());
      const auto m = xs.size();
      g.median = m % 2 ? xs[m / 2] : 0.5 * (xs[m / 2 - 1] + xs[m / 2]);
    }
    report.groups.push_back(std::move(g));
  }
  return report;
}

json to_json(const SensitivityReport& report) {
  json groups = json::array();
  for (const auto& g : report.groups) {
    json values = json::array();
    for (const auto& v : g.values) {
      values.push_back({{"original_id", v.original_id},
                        {"alignment", v.alignment ? json(*v.alignment) : json(nullptr)}});
    }
    groups.push_back({{"kind", to_string(g.kind)},
                      {"values", std::move(values)},
                      {"mean", g.mean ? json(*g.mean) : json(nullptr)},
                      {"median", g.median ? json(*g.median) : json(nullptr)},
                      {"null_count", g.null_count}});
  }
  json missing = json::array();
  for (auto k : report.missing_kinds) missing.push_back(to_string(k));
  return {{"groups", std::move(groups)}, {"missing_kinds", std::move(missing)}};
}

std::string to_csv(const SensitivityReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "kind,original_id,alignment\n";
  for (const auto& g : report.groups) {
    for (const auto& v : g.values) {
      out << to_string(g.kind) << ',' << v.original_id << ',';
      if (v.alignment) out << *v.alignment;
      out << '\n';
    }
  }
  return out.str();
}

namespace {

Eigen::VectorXd to_vec(const std::vector<float>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

std::vector<float> to_floats(const Eigen::VectorXd& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

}  // namespace

std::vector<PerturbationSet> perturbations_from_entries(const std::vector<repstore::RawEntry>& entries) {
  std::map<std::string, Eigen::VectorXd> originals;
  std::map<std::pair<std::string, PerturbationKind>, std::vector<Eigen::VectorXd>> modified;
  std::optional<std::size_t> dim;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto ctx = "perturbation entry " + std::to_string(i + 1);
    if (dim && e.vector.size() != *dim) throw Error(ErrorKind::kDimensionMismatch, ctx + ": dimension differs");
    dim = e.vector.size();
    for (float f : e.vector) {
      if (!std::isfinite(f)) throw Error(ErrorKind::kValidation, ctx + ": non-finite component");
    }
    const auto id = detail::require_string(e.meta, "original_id", ctx);
    if (detail::require_bool(e.meta, "is_original", ctx)) {
      if (!originals.emplace(id, to_vec(e.vector)).second) {
        throw Error(ErrorKind::kDuplicate, ctx + ": second original for '" + id + "'");
      }
    } else {
      const auto kind = parse_kind(detail::require_string(e.meta, "kind", ctx));
      modified[{id, kind}].push_back(to_vec(e.vector));
    }
  }
  std::vector<PerturbationSet> sets;
  for (auto& [key, reps] : modified) {
    auto it = originals.find(key.first);
    if (it == originals.end()) {
      throw Error(ErrorKind::kSchema, "perturbations: no original entry for '" + key.first + "'");
    }
    sets.push_back({key.first, key.second, std::move(reps), it->second});
  }
  return sets;
}

std::vector<PerturbationSet> read_perturbations(const std::filesystem::path& path) {
  return perturbations_from_entries(repstore::read_container(path));
}

std::vector<repstore::RawEntry> perturbations_to_entries(const std::vector<PerturbationSet>& sets) {
  std::vector<repstore::RawEntry> entries;
  std::set<std::string> written;
  for (const auto& s : sets) {
    if (written.insert(s.original_id).second) {
      entries.push_back({{{"prompt_id", s.original_id}, {"original_id", s.original_id}, {"is_original", true}},
                         to_floats(s.original_rep)});
    }
    for (std::size_t k = 0; k < s.modified_reps.size(); ++k) {
      const auto kind = std::string(to_string(s.kind));
      entries.push_back({{{"prompt_id", s.original_id + "/" + kind + "/" + std::to_string(k)},
                          {"original_id", s.original_id},
                          {"kind", kind},
                          {"is_original", false}},
                         to_floats(s.modified_reps[k])});
    }
  }
  return entries;
}

}  // namespace ifprobe::analysis
