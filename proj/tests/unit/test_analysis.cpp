#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ifprobe/analysis.hpp"
#include "ifprobe/error.hpp"
#include "ifprobe/repstore.hpp"
#include "oracles.hpp"

using namespace ifprobe;
using namespace ifprobe::analysis;

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

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(n, d);
  for (auto& x : X.reshaped()) x = g(rng);
  return X;
}

probe::Direction dir(Eigen::VectorXd v) { return probe::make_direction(v, probe::DirectionSource::kProbe); }

}  // namespace

TEST_CASE("pca on rank-one data") {
  Eigen::MatrixXd X(5, 2);
  for (int i = 0; i < 5; ++i) X.row(i) = Eigen::RowVector2d(1, 1) * (i - 1.5) / std::sqrt(2.0);
  const auto m = pca_fit(X, 2);
  CHECK(std::abs(m.components(0, 0)) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(std::abs(m.components(0, 1)) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(m.explained_variance[1] == 0.0);
  CHECK(m.rank_deficient);
}

TEST_CASE("pca on isotropic data") {
  const auto m = pca_fit(gaussian(100000, 2, 1), 2);
  CHECK(m.explained_variance[0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(m.explained_variance[1] == doctest::Approx(1.0).epsilon(0.05));
  CHECK_FALSE(m.rank_deficient);
}

TEST_CASE("pca invariants") {
  Eigen::MatrixXd X = gaussian(60, 8, 2);
  X.col(3) *= 5.0;
  X.col(1) += 0.5 * X.col(3);
  const auto m = pca_fit(X, 8);
  // Orthonormal rows, descending variance, positive largest entry.
  CHECK((m.components * m.components.transpose() - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-8);
  for (int i = 0; i + 1 < 8; ++i) CHECK(m.explained_variance[i] >= m.explained_variance[i + 1]);
  for (int i = 0; i < 8; ++i) {
    Eigen::Index arg;
    m.components.row(i).cwiseAbs().maxCoeff(&arg);
    CHECK(m.components(i, arg) > 0.0);
  }
  // Projected variance equals explained variance; projections are centered.
  const auto coords = pca_project(m, X);
  CHECK(coords.colwise().mean().norm() < 1e-10);
  for (int c = 0; c < 8; ++c) {
    const double var = (coords.col(c).array() - coords.col(c).mean()).square().sum() / 59.0;
    CHECK(std::abs(var - m.explained_variance[c]) < 1e-8);
  }
  // Full reconstruction.
  const auto back = pca_reconstruct(m, coords);
  CHECK((back - X).norm() / X.norm() <= 1e-8);
  // Train mean projects to zero.
  CHECK(pca_project(m, m.mean).norm() < 1e-12);
  // Explained variance matches the covariance eigenvalues of an independent computation.
  const Eigen::MatrixXd C = (X.rowwise() - X.colwise().mean()).transpose() * (X.rowwise() - X.colwise().mean()) / 59.0;
  CHECK(std::abs(C.trace() - m.explained_variance.sum()) < 1e-9);
}

TEST_CASE("pca projection is affine") {
  const auto m = pca_fit(gaussian(40, 5, 3), 3);
  const auto X1 = gaussian(10, 5, 4), X2 = gaussian(10, 5, 5);
  const double a = 0.3;
  const Eigen::MatrixXd lhs = pca_project(m, a * X1 + (1 - a) * X2);
  const Eigen::MatrixXd rhs = a * pca_project(m, X1) + (1 - a) * pca_project(m, X2);
  CHECK((lhs - rhs).norm() < 1e-10);
}

TEST_CASE("pca projects with the train mean") {
  const auto train = gaussian(50, 3, 6);
  Eigen::MatrixXd test = gaussian(20, 3, 7);
  test.rowwise() += Eigen::RowVector3d(4, -2, 1);
  const auto m = pca_fit(train, 2);
  const auto projected = pca_project(m, test);
  const Eigen::MatrixXd recentered = (test.rowwise() - test.colwise().mean()) * m.components.transpose();
  CHECK((projected - recentered).norm() > 1.0);
  const Eigen::MatrixXd expected = (test.rowwise() - m.mean) * m.components.transpose();
  CHECK((projected - expected).norm() < 1e-12);
}

TEST_CASE("pca argument errors") {
  CHECK(kind_of([] { pca_fit(gaussian(1, 3, 1), 1); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([] { pca_fit(gaussian(10, 3, 1), 4); }) == ErrorKind::kPrecondition);
  CHECK(kind_of([] { pca_fit(gaussian(10, 3, 1), 0); }) == ErrorKind::kPrecondition);
  const auto m = pca_fit(gaussian(10, 3, 1), 2);
  CHECK(kind_of([&] { pca_project(m, gaussian(2, 4, 1)); }) == ErrorKind::kDimensionMismatch);
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == 0.0);
  CHECK(cosine_similarity(Eigen::Vector2d(2, 0), Eigen::Vector2d(1, 0)) == 1.0);
  CHECK(std::abs(cosine_similarity(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0)) - 0.70710678) < 1e-8);
  CHECK(kind_of([] { cosine_similarity(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)); }) == ErrorKind::kPrecondition);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd a = gaussian(1, 6, rng()).transpose(), b = gaussian(1, 6, rng()).transpose();
    CHECK(cosine_similarity(a, b) == doctest::Approx(cosine_similarity(b, a)).epsilon(1e-14));
    CHECK(cosine_similarity(3.0 * a, 0.2 * b) == doctest::Approx(cosine_similarity(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("perturbation alignment") {
  const Eigen::Vector3d o(1, 2, 3);
  const auto d = dir(Eigen::Vector3d(0, 0, 1));
  PerturbationSet s{"p", PerturbationKind::kPhrasing, std::vector<Eigen::VectorXd>(5, o + d.d_vec), o};
  CHECK(*perturbation_alignment(s, d) == doctest::Approx(1.0));
  s.modified_reps.assign(5, o + Eigen::Vector3d(1, -1, 0));
  CHECK(*perturbation_alignment(s, d) == 0.0);
  s.modified_reps = {o + d.d_vec, o - d.d_vec};
  CHECK_FALSE(perturbation_alignment(s, d).has_value());

  // Translation invariance.
  s.modified_reps = {o + Eigen::Vector3d(0.3, 0, 1), o + Eigen::Vector3d(0, 0.2, 0.5)};
  const auto a = *perturbation_alignment(s, d);
  PerturbationSet t = s;
  const Eigen::Vector3d c(10, -7, 3);
  t.original_rep += c;
  for (auto& m : t.modified_reps) m += c;
  CHECK(*perturbation_alignment(t, d) == doctest::Approx(a).epsilon(1e-10));
}

TEST_CASE("sensitivity report grouping, order and missing kinds") {
  const auto d = dir(Eigen::Vector2d(1, 0));
  std::vector<PerturbationSet> sets;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d o(i, 1);
    sets.push_back({"p" + std::to_string(2 - i), PerturbationKind::kPhrasing, {o + Eigen::Vector2d(2, 0)}, o});
    sets.push_back({"p" + std::to_string(i), PerturbationKind::kTaskFamiliarity, {o + Eigen::Vector2d(0, 1)}, o});
  }
  const auto r = sensitivity_report(sets, d);
  REQUIRE(r.groups.size() == 2);
  CHECK(r.groups[0].kind == PerturbationKind::kTaskFamiliarity);
  CHECK(r.groups[1].kind == PerturbationKind::kPhrasing);
  CHECK(r.groups[0].values.size() == 3);
  CHECK(r.groups[1].values[0].original_id == "p0");
  CHECK(*r.groups[1].mean == doctest::Approx(1.0));
  CHECK(*r.groups[0].mean == 0.0);
  CHECK(r.missing_kinds == std::vector<PerturbationKind>{PerturbationKind::kInstructionDifficulty});

  auto shuffled = sets;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(to_json(sensitivity_report(shuffled, d)) == to_json(r));
  const auto csv = to_csv(r);
  CHECK(csv.rfind("kind,original_id,alignment\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(kind_of([&] { sensitivity_report({}, d); }) == ErrorKind::kPrecondition);
}

TEST_CASE("perturbation container round trip") {
  oracle::TempDir tmp("pert");
  std::vector<PerturbationSet> sets = {
      {"a", PerturbationKind::kPhrasing, {Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4)}, Eigen::Vector2d(0, 0)},
      {"a", PerturbationKind::kInstructionDifficulty, {Eigen::Vector2d(5, 6)}, Eigen::Vector2d(0, 0)},
      {"b", PerturbationKind::kTaskFamiliarity, {Eigen::Vector2d(-1, 0.5)}, Eigen::Vector2d(1, 1)}};
  repstore::write_container(perturbations_to_entries(sets), tmp / "p.ifrep");
  const auto entries = repstore::read_container(tmp / "p.ifrep");
  for (const auto& e : entries) {
    CHECK(e.meta.contains("original_id"));
    REQUIRE(e.meta.contains("is_original"));
    CHECK(e.meta.contains("kind") != e.meta["is_original"].get<bool>());
  }
  const auto back = read_perturbations(tmp / "p.ifrep");
  REQUIRE(back.size() == 3);
  const auto d = dir(Eigen::Vector2d(1, 1));
  CHECK(to_json(sensitivity_report(back, d)) == to_json(sensitivity_report(sets, d)));
}
