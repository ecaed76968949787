#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ifprobe/probe.hpp"

namespace ifprobe::analysis {

struct PcaModel {
  Eigen::RowVectorXd mean;
  /// k x d, orthonormal rows ordered by descending explained variance. Each
  /// row's largest-magnitude entry is positive.
  Eigen::MatrixXd components;
  /// Sample variance (n - 1 denominator) along each component.
  Eigen::VectorXd explained_variance;
  /// Set when the centered data has rank below k; trailing components then
  /// span the null space with zero variance.
  bool rank_deficient = false;
};

/// Eigendecomposition of the d x d sample covariance of X_train.
PcaModel pca_fit(const Eigen::MatrixXd& X_train, Eigen::Index k);

/// (X - train mean) * components^T.
Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& X);

/// coords * components + mean.
Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& coords);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class PerturbationKind { kTaskFamiliarity, kInstructionDifficulty, kPhrasing };

std::string_view to_string(PerturbationKind kind);
PerturbationKind parse_kind(std::string_view text);

struct PerturbationSet {
  std::string original_id;
  PerturbationKind kind = PerturbationKind::kPhrasing;
  std::vector<Eigen::VectorXd> modified_reps;
  Eigen::VectorXd original_rep;
};

/// cos(mean(modified) - original, direction). std::nullopt when the difference
/// vector vanishes (norm <= 1e-12 * max(1, ||original||)).
std::optional<double> perturbation_alignment(const PerturbationSet& set,
                                             const probe::Direction& direction);

struct AlignmentValue {
  std::string original_id;
  std::optional<double> alignment;
};

struct KindSummary {
  PerturbationKind kind;
  std::vector<AlignmentValue> values;  // sorted by original_id
  std::optional<double> mean;          // over non-null values
  std::optional<double> median;
  std::size_t null_count = 0;
};

struct SensitivityReport {
  std::vector<KindSummary> groups;  // in PerturbationKind order, present kinds only
  std::vector<PerturbationKind> missing_kinds;
};

SensitivityReport sensitivity_report(const std::vector<PerturbationSet>& sets,
                                     const probe::Direction& direction);

nlohmann::json to_json(const SensitivityReport& report);
/// kind,original_id,alignment rows; nulls are written as empty cells.
std::string to_csv(const SensitivityReport& report);

/// Entries carry {original_id, is_original, kind?}; one original per
/// original_id, modified entries grouped by (original_id, kind).
std::vector<PerturbationSet> read_perturbations(const std::filesystem::path& path);
std::vector<PerturbationSet> perturbations_from_entries(const std::vector<repstore::RawEntry>& entries);
std::vector<repstore::RawEntry> perturbations_to_entries(const std::vector<PerturbationSet>& sets);

}  // namespace ifprobe::analysis
