#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ifprobe/repstore.hpp"

namespace ifprobe::probe {

struct ProbeHyperparams {
  int epochs = 1000;
  double learning_rate = 0.001;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Train on features standardized with the training mean/std; the fitted
  /// weights are folded back into raw-feature space.
  bool standardize = false;

  void validate() const;
  friend bool operator==(const ProbeHyperparams&, const ProbeHyperparams&) = default;
};

nlohmann::json to_json(const ProbeHyperparams& hp);
ProbeHyperparams hyperparams_from_json(const nlohmann::json& j);

struct Probe {
  Eigen::VectorXd w;
  double b = 0.0;
  ProbeHyperparams hyperparams;
  /// Mean logistic loss evaluated at the start of each epoch.
  std::vector<double> train_loss_trace;
  /// Mean logistic loss after the last update.
  double final_loss = 0.0;
  std::optional<repstore::TokenPosition> position;
  std::optional<int> layer;
};

nlohmann::json to_json(const Probe& probe);
Probe probe_from_json(const nlohmann::json& j);
void save_probe(const Probe& probe, const std::filesystem::path& path);
Probe load_probe(const std::filesystem::path& path);

enum class DirectionSource { kProbe, kRandom, kPlanted };

std::string_view to_string(DirectionSource source);

/// Unit-norm direction in representation space.
struct Direction {
  Eigen::VectorXd d_vec;
  DirectionSource source = DirectionSource::kProbe;
};

/// Normalizes `v`. Throws Error(kPrecondition) when ||v|| == 0 or non-finite.
Direction make_direction(const Eigen::VectorXd& v, DirectionSource source);

/// Standard-Gaussian sample from SplitMix64(seed), normalized.
Direction random_unit_vector(Eigen::Index dim, std::uint64_t seed, DirectionSource source);

nlohmann::json to_json(const Direction& direction);
/// Reads either a probe file ({w, b, ...}) or a direction file ({d_vec, source}).
Direction load_direction(const std::filesystem::path& path);

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad_w;
  double grad_b = 0.0;
};

/// Mean logistic loss of sigmoid(Xw + b) against y (0/1) and its gradient.
LossGradient logistic_loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double b);

/// AdamW with decoupled weight decay on w only (the bias is not decayed).
class AdamW {
 public:
  AdamW(const ProbeHyperparams& hp, Eigen::Index dim);

  void step(Eigen::VectorXd& w, double& b, const Eigen::VectorXd& grad_w, double grad_b);
  int steps() const { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  Eigen::VectorXd m_w_, v_w_;
  double m_b_ = 0.0, v_b_ = 0.0;
  int t_ = 0;
};

/// Full-batch AdamW on the mean logistic loss, zero-initialized.
/// Throws Error(kPrecondition) on single-class data or n < 2,
/// Error(kValidation) on non-finite inputs.
Probe train_probe(const repstore::LabeledMatrix& data, const ProbeHyperparams& hp = {});

/// Logits w.x + b per row.
Eigen::VectorXd predict_scores(const Probe& probe, const Eigen::MatrixXd& X);

/// Mann-Whitney AUROC with midrank tie handling, O(n log n).
double auroc(std::span<const double> scores, const std::vector<bool>& labels);
double auroc(const Eigen::VectorXd& scores, const std::vector<bool>& labels);

Direction probe_direction(const Probe& probe);

}  // namespace ifprobe::probe
