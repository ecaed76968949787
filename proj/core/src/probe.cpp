#include "ifprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ifprobe/error.hpp"
#include "ifprobe/rng.hpp"
#include "json_util.hpp"

namespace ifprobe::probe {

using detail::json;

void ProbeHyperparams::validate() const {
  auto bad = [](const std::string& why) { throw Error(ErrorKind::kPrecondition, "hyperparams: " + why); };
  if (epochs < 1) bad("epochs must be positive");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be non-negative");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) bad("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) bad("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) bad("adam_eps must be positive");
}

json to_json(const ProbeHyperparams& hp) {
  return {{"epochs", hp.epochs},         {"learning_rate", hp.learning_rate},
          {"weight_decay", hp.weight_decay}, {"adam_beta1", hp.adam_beta1},
          {"adam_beta2", hp.adam_beta2}, {"adam_eps", hp.adam_eps},
          {"seed", hp.seed},             {"standardize", hp.standardize}};
}

ProbeHyperparams hyperparams_from_json(const json& j) {
  ProbeHyperparams hp;
  if (!j.is_object()) throw Error(ErrorKind::kSchema, "hyperparams must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") hp.epochs = v.get<int>();
    else if (key == "learning_rate") hp.learning_rate = v.get<double>();
    else if (key == "weight_decay") hp.weight_decay = v.get<double>();
    else if (key == "adam_beta1") hp.adam_beta1 = v.get<double>();
    else if (key == "adam_beta2") hp.adam_beta2 = v.get<double>();
    else if (key == "adam_eps") hp.adam_eps = v.get<double>();
    else if (key == "seed") hp.seed = v.get<std::uint64_t>();
    else if (key == "standardize") hp.standardize = v.get<bool>();
    else throw Error(ErrorKind::kSchema, "hyperparams: unknown key '" + key + "'");
  }
  hp.validate();
  return hp;
}

json to_json(const Probe& probe) {
  json j = {{"w", std::vector<double>(probe.w.data(), probe.w.data() + probe.w.size())},
            {"b", probe.b},
            {"hyperparams", to_json(probe.hyperparams)},
            {"final_loss", probe.final_loss},
            {"train_loss_trace", probe.train_loss_trace}};
  if (probe.position) j["position"] = repstore::to_string(*probe.position);
  if (probe.layer) j["layer"] = *probe.layer;
  return j;
}

Probe probe_from_json(const json& j) {
  Probe p;
  const auto& w = detail::require(j, "w", "probe");
  if (!w.is_array() || w.empty()) throw Error(ErrorKind::kSchema, "probe: w must be a non-empty array");
  const auto wv = w.get<std::vector<double>>();
  p.w = Eigen::Map<const Eigen::VectorXd>(wv.data(), static_cast<Eigen::Index>(wv.size()));
  if (!p.w.allFinite()) throw Error(ErrorKind::kValidation, "probe: non-finite weight");
  p.b = detail::require_number(j, "b", "probe");
  if (j.contains("hyperparams")) p.hyperparams = hyperparams_from_json(j["hyperparams"]);
  if (j.contains("final_loss")) p.final_loss = j["final_loss"].get<double>();
  if (j.contains("train_loss_trace")) p.train_loss_trace = j["train_loss_trace"].get<std::vector<double>>();
  if (j.contains("position")) p.position = repstore::parse_position(j["position"].get<std::string>());
  if (j.contains("layer")) p.layer = j["layer"].get<int>();
  return p;
}

void save_probe(const Probe& probe, const std::filesystem::path& path) {
  detail::write_file(path, to_json(probe).dump(2) + "\n");
}

Probe load_probe(const std::filesystem::path& path) {
  return probe_from_json(detail::parse_json(detail::read_file(path), path.string()));
}

std::string_view to_string(DirectionSource source) {
  switch (source) {
    case DirectionSource::kProbe: return "probe";
    case DirectionSource::kRandom: return "random";
    case DirectionSource::kPlanted: return "planted";
  }
  return "probe";
}

Direction make_direction(const Eigen::VectorXd& v, DirectionSource source) {
  if (v.size() == 0 || !v.allFinite()) {
    throw Error(ErrorKind::kPrecondition, "direction: empty or non-finite vector");
  }
  const double norm = v.norm();
  if (norm == 0.0) throw Error(ErrorKind::kPrecondition, "direction: zero vector");
  return {v / norm, source};
}

Direction random_unit_vector(Eigen::Index dim, std::uint64_t seed, DirectionSource source) {
  if (dim < 1) throw Error(ErrorKind::kPrecondition, "random direction: dim must be >= 1");
  SplitMix64 rng(seed);
  Eigen::VectorXd v(dim);
  for (;;) {
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.gaussian();
    if (v.norm() > 0.0) return make_direction(v, source);
  }
}

json to_json(const Direction& direction) {
  const auto& d = direction.d_vec;
  return {{"d_vec", std::vector<double>(d.data(), d.data() + d.size())},
          {"source", to_string(direction.source)}};
}

Direction load_direction(const std::filesystem::path& path) {
  const auto j = detail::parse_json(detail::read_file(path), path.string());
  if (j.contains("w")) return probe_direction(probe_from_json(j));
  const auto& d = detail::require(j, "d_vec", path.string());
  const auto v = d.get<std::vector<double>>();
  DirectionSource source = DirectionSource::kProbe;
  if (j.contains("source")) {
    const auto s = j["source"].get<std::string>();
    if (s == "random") source = DirectionSource::kRandom;
    else if (s == "planted") source = DirectionSource::kPlanted;
    else if (s != "probe") throw Error(ErrorKind::kSchema, "direction: unknown source '" + s + "'");
  }
  return make_direction(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())),
                        source);
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LossGradient logistic_loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double b) {
  const auto n = X.rows();
  const Eigen::VectorXd z = (X * w).array() + b;
  Eigen::VectorXd residual(n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    loss += softplus(z[i]) - y[i] * z[i];
    residual[i] = sigmoid(z[i]) - y[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return {loss * inv_n, X.transpose() * residual * inv_n, residual.sum() * inv_n};
}

AdamW::AdamW(const ProbeHyperparams& hp, Eigen::Index dim)
    : lr_(hp.learning_rate),
      wd_(hp.weight_decay),
      beta1_(hp.adam_beta1),
      beta2_(hp.adam_beta2),
      eps_(hp.adam_eps),
      m_w_(Eigen::VectorXd::Zero(dim)),
      v_w_(Eigen::VectorXd::Zero(dim)) {}

void AdamW::step(Eigen::VectorXd& w, double& b, const Eigen::VectorXd& grad_w, double grad_b) {
  ++t_;
  w *= 1.0 - lr_ * wd_;
  m_w_ = beta1_ * m_w_ + (1.0 - beta1_) * grad_w;
  v_w_ = beta2_ * v_w_ + (1.0 - beta2_) * grad_w.cwiseAbs2();
  m_b_ = beta1_ * m_b_ + (1.0 - beta1_) * grad_b;
  v_b_ = beta2_ * v_b_ + (1.0 - beta2_) * grad_b * grad_b;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  w.array() -= lr_ * (m_w_.array() / c1) / ((v_w_.array() / c2).sqrt() + eps_);
  b -= lr_ * (m_b_ / c1) / (std::sqrt(v_b_ / c2) + eps_);
}

Probe train_probe(const repstore::LabeledMatrix& data, const ProbeHyperparams& hp) {
  hp.validate();
  const auto n = data.X.rows();
  const auto d = data.X.cols();
  if (n < 2 || d < 1) throw Error(ErrorKind::kPrecondition, "train_probe: need n >= 2 and d >= 1");
  if (static_cast<std::size_t>(n) != data.y.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "train_probe: label count != row count");
  }
  if (!data.X.allFinite()) throw Error(ErrorKind::kValidation, "train_probe: non-finite feature");
  const auto positives = std::count(data.y.begin(), data.y.end(), true);
  if (positives == 0 || positives == n) {
    throw Error(ErrorKind::kPrecondition, "train_probe: both classes must be present");
  }

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = data.y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd scale = Eigen::RowVectorXd::Ones(d);
  Eigen::MatrixXd X = data.X;
  if (hp.standardize) {
    mean = X.colwise().mean();
    X.rowwise() -= mean;
    scale = (X.cwiseAbs2().colwise().sum() / static_cast<double>(n)).cwiseSqrt();
    for (Eigen::Index k = 0; k < d; ++k) {
      if (scale[k] == 0.0) scale[k] = 1.0;
    }
    X.array().rowwise() /= scale.array();
  }

  Probe probe;
  probe.hyperparams = hp;
  probe.train_loss_trace.reserve(static_cast<std::size_t>(hp.epochs));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  AdamW opt(hp, d);
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto g = logistic_loss(X, y, w, b);
    if (!std::isfinite(g.loss)) throw Error(ErrorKind::kInvariant, "train_probe: loss diverged");
    probe.train_loss_trace.push_back(g.loss);
    opt.step(w, b, g.grad_w, g.grad_b);
  }
  probe.final_loss = logistic_loss(X, y, w, b).loss;

  probe.w = w.array() / scale.transpose().array();
  probe.b = b - mean.dot(probe.w);
  if (!probe.w.allFinite() || !std::isfinite(probe.b)) {
    throw Error(ErrorKind::kInvariant, "train_probe: non-finite weights");
  }
  return probe;
}

Eigen::VectorXd predict_scores(const Probe& probe, const Eigen::MatrixXd& X) {
  if (X.cols() != probe.w.size()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "predict_scores: matrix has " + std::to_string(X.cols()) + " columns, probe expects " +
                    std::to_string(probe.w.size()));
  }
  return (X * probe.w).array() + probe.b;
}

double auroc(std::span<const double> scores, const std::vector<bool>& labels) {
  const auto n = scores.size();
  if (n != labels.size()) throw Error(ErrorKind::kDimensionMismatch, "auroc: scores/labels length differ");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const auto n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::kPrecondition, "auroc: both classes must be present");
  for (double s : scores) {
    if (std::isnan(s)) throw Error(ErrorKind::kValidation, "auroc: NaN score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are 1-based; a tie group spanning ranks [i+1, j] gets (i+1+j)/2.
  // Midranks are multiples of 0.5, so the rank sum is exact in double.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(n_neg));
}

double auroc(const Eigen::VectorXd& scores, const std::vector<bool>& labels) {
  return auroc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

Direction probe_direction(const Probe& probe) {
  if (probe.w.size() == 0 || probe.w.norm() == 0.0) {
    throw Error(ErrorKind::kPrecondition, "probe_direction: zero weight vector");
  }
  return make_direction(probe.w, DirectionSource::kProbe);
}

}  // namespace ifprobe::probe
