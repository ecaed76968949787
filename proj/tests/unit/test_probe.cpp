#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ifprobe/error.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/rng.hpp"
#include "oracles.hpp"

using namespace ifprobe;
using namespace ifprobe::probe;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kInvariant;
}

repstore::LabeledMatrix matrix(const Eigen::MatrixXd& X, std::vector<bool> y) {
  repstore::LabeledMatrix m;
  m.X = X;
  m.y = std::move(y);
  for (Eigen::Index i = 0; i < X.rows(); ++i) m.rows.push_back("r" + std::to_string(i));
  return m;
}

repstore::LabeledMatrix planted(std::size_t n, Eigen::Index d, std::uint64_t seed, Eigen::VectorXd* u_out = nullptr) {
  SplitMix64 rng(seed);
  Eigen::VectorXd u(d);
  for (auto& x : u) x = rng.gaussian();
  u.normalize();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), d);
  std::vector<bool> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) X(static_cast<Eigen::Index>(i), k) = rng.gaussian();
    y[i] = X.row(static_cast<Eigen::Index>(i)).dot(u) + 0.3 * rng.gaussian() >= 0.0;
  }
  if (u_out) *u_out = u;
  return matrix(X, y);
}

}  // namespace

TEST_CASE("hyperparameter defaults") {
  const ProbeHyperparams hp;
  CHECK(hp.epochs == 1000);
  CHECK(hp.learning_rate == 0.001);
  CHECK(hp.weight_decay == 0.1);
  CHECK(hp.adam_beta1 == 0.9);
  CHECK(hp.adam_beta2 == 0.999);
  CHECK(hp.adam_eps == 1e-8);
  CHECK(hyperparams_from_json(to_json(hp)) == hp);
  ProbeHyperparams bad;
  bad.adam_beta1 = 1.0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kPrecondition);
  bad = {};
  bad.epochs = 0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kPrecondition);
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 15, d = 6;
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n), w(d);
    for (auto& x : X.reshaped()) x = g(rng);
    for (auto& v : y) v = (rng() & 1) ? 1.0 : 0.0;
    for (auto& v : w) v = g(rng);
    const double b = g(rng);
    const auto lg = logistic_loss(X, y, w, b);
    CHECK(lg.loss == doctest::Approx(oracle::logistic_loss(X, y, w, b)).epsilon(1e-12));
    Eigen::VectorXd wb(d + 1);
    wb << w, b;
    const auto numeric = oracle::central_difference(
        [&](const Eigen::VectorXd& p) { return oracle::logistic_loss(X, y, p.head(d), p[d]); }, wb, 1e-5);
    Eigen::VectorXd analytic(d + 1);
    analytic << lg.grad_w, lg.grad_b;
    CHECK((analytic - numeric).norm() / std::max(1e-12, numeric.norm()) < 1e-6);
  }
}

TEST_CASE("logistic loss is stable for large logits") {
  Eigen::MatrixXd X(2, 1);
  X << 1000, -1000;
  Eigen::VectorXd y(2);
  y << 1, 0;
  Eigen::VectorXd w(1);
  w << 1.0;
  const auto lg = logistic_loss(X, y, w, 0.0);
  CHECK(std::isfinite(lg.loss));
  CHECK(lg.loss < 1e-12);
  y << 0, 1;
  CHECK(logistic_loss(X, y, w, 0.0).loss == doctest::Approx(1000.0));
}

TEST_CASE("AdamW step with zero gradient applies only decoupled decay") {
  ProbeHyperparams hp;
  AdamW opt(hp, 3);
  Eigen::VectorXd w(3);
  w << 1.0, -2.0, 0.5;
  double b = 0.7;
  const Eigen::VectorXd before = w;
  opt.step(w, b, Eigen::VectorXd::Zero(3), 0.0);
  for (int i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(before[i] * 0.9999).epsilon(1e-15));
  CHECK(b == 0.7);
}

TEST_CASE("AdamW follows the reference recurrence") {
  ProbeHyperparams hp;
  hp.learning_rate = 0.01;
  AdamW opt(hp, 2);
  Eigen::VectorXd w(2);
  w << 0.3, -0.1;
  double b = 0.2;
  double rw[2] = {0.3, -0.1}, rb = 0.2, m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  for (int t = 1; t <= 25; ++t) {
    const double g[3] = {std::sin(t), std::cos(t), 0.1 * t};
    Eigen::VectorXd gw(2);
    gw << g[0], g[1];
    opt.step(w, b, gw, g[2]);
    double* p[3] = {&rw[0], &rw[1], &rb};
    for (int i = 0; i < 3; ++i) {
      if (i < 2) *p[i] *= 1.0 - hp.learning_rate * hp.weight_decay;
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      *p[i] -= hp.learning_rate * mh / (std::sqrt(vh) + hp.adam_eps);
    }
  }
  CHECK(w[0] == doctest::Approx(rw[0]).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(rw[1]).epsilon(1e-12));
  CHECK(b == doctest::Approx(rb).epsilon(1e-12));
}

TEST_CASE("training basics") {
  Eigen::MatrixXd X(2, 1);
  X << -1, 1;
  const auto p = train_probe(matrix(X, {false, true}));
  CHECK(p.w[0] > 0.0);
  CHECK(p.train_loss_trace.size() == 1000);
  CHECK(p.train_loss_trace.front() == doctest::Approx(std::log(2.0)));
  CHECK(p.final_loss <= p.train_loss_trace.front());
  for (double l : p.train_loss_trace) CHECK(std::isfinite(l));

  CHECK(kind_of([&] { train_probe(matrix(X, {true, true})); }) == ErrorKind::kPrecondition);
  Eigen::MatrixXd bad = X;
  bad(0, 0) = std::nan("");
  CHECK(kind_of([&] { train_probe(matrix(bad, {false, true})); }) == ErrorKind::kValidation);
}

TEST_CASE("training is deterministic and reduces loss on separable data") {
  const auto data = planted(200, 5, 3);
  const auto a = train_probe(data);
  const auto b = train_probe(data);
  CHECK(a.w == b.w);
  CHECK(a.b == b.b);
  CHECK(a.train_loss_trace == b.train_loss_trace);
  CHECK(a.final_loss < a.train_loss_trace.front());
}

TEST_CASE("standardized training folds back into raw space") {
  auto data = planted(300, 4, 9);
  data.X.col(0) = data.X.col(0) * 50.0 + Eigen::VectorXd::Constant(300, 10.0);
  ProbeHyperparams hp;
  hp.standardize = true;
  const auto p = train_probe(data, hp);
  CHECK(auroc(predict_scores(p, data.X), data.y) > 0.9);
  CHECK(p.hyperparams.standardize);
}

TEST_CASE("predict_scores") {
  Probe p;
  p.w = Eigen::Vector2d(1.0, 0.0);
  p.b = 0.0;
  Eigen::MatrixXd X(1, 2);
  X << 3, 7;
  CHECK(predict_scores(p, X)[0] == 3.0);
  p.b = 2.5;
  CHECK(predict_scores(p, X)[0] == 5.5);
  CHECK(kind_of([&] { predict_scores(p, Eigen::MatrixXd::Zero(1, 3)); }) == ErrorKind::kDimensionMismatch);
}

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, {true, true, false, false}) == 1.0);
  CHECK(auroc(std::vector<double>{1, 1, 1, 1}, {true, false, true, false}) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, {false, false, true, true}) == 0.75);
  CHECK(kind_of([] { auroc(std::vector<double>{1, 2}, {true, true}); }) == ErrorKind::kPrecondition);
}

TEST_CASE("property: auroc equals pair counting, flips and monotone transforms") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 80;
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10);
      y[i] = (rng() & 1) != 0;
    }
    y[0] = true;
    y[1] = false;
    const double a = auroc(s, y);
    CHECK(std::abs(a - oracle::pair_auroc(s, y)) <= 1e-12);
    std::vector<bool> flipped(n);
    for (std::size_t i = 0; i < n; ++i) flipped[i] = !y[i];
    CHECK(std::abs(auroc(s, flipped) - (1.0 - a)) <= 1e-12);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.3 * s[i]) - 4.0;
    CHECK(std::abs(auroc(t, y) - a) <= 1e-12);
  }
}

TEST_CASE("direction extraction") {
  Probe p;
  p.w = Eigen::Vector2d(3.0, 4.0);
  const auto d = probe_direction(p);
  CHECK(d.d_vec[0] == doctest::Approx(0.6));
  CHECK(d.d_vec[1] == doctest::Approx(0.8));
  CHECK(d.source == DirectionSource::kProbe);
  p.w *= 10.0;
  CHECK((probe_direction(p).d_vec - d.d_vec).norm() < 1e-15);
  p.w.setZero();
  CHECK(kind_of([&] { probe_direction(p); }) == ErrorKind::kPrecondition);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = random_unit_vector(64, seed, DirectionSource::kRandom);
    CHECK(std::abs(r.d_vec.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("probe and direction files round trip") {
  oracle::TempDir dir("probe");
  const auto p = train_probe(planted(50, 3, 1));
  save_probe(p, dir / "p.json");
  const auto back = load_probe(dir / "p.json");
  CHECK(back.w == p.w);
  CHECK(back.b == p.b);
  CHECK(back.hyperparams == p.hyperparams);
  CHECK(back.final_loss == p.final_loss);
  CHECK(load_direction(dir / "p.json").d_vec == probe_direction(p).d_vec);

  const auto r = random_unit_vector(3, 4, DirectionSource::kRandom);
  {
    std::ofstream out(dir / "d.json");
    out << to_json(r).dump();
  }
  const auto rd = load_direction(dir / "d.json");
  CHECK((rd.d_vec - r.d_vec).norm() < 1e-15);
  CHECK(rd.source == DirectionSource::kRandom);
}

TEST_CASE("planted direction is recovered") {
  Eigen::VectorXd u;
  const auto data = planted(2000, 64, 11, &u);
  const auto p = train_probe(data);
  CHECK(auroc(predict_scores(p, data.X), data.y) >= 0.97);
  CHECK(std::abs(probe_direction(p).d_vec.dot(u)) >= 0.9);
}
