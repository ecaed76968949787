#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ifprobe/analysis.hpp"
#include "ifprobe/dataset.hpp"
#include "ifprobe/experiment.hpp"
#include "ifprobe/probe.hpp"
#include "ifprobe/verifier.hpp"

using namespace ifprobe;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(n, d);
  for (auto& x : X.reshaped()) x = g(rng);
  return X;
}

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> scores(n);
  std::vector<bool> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = g(rng);
    labels[i] = i % 2 == 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(probe::auroc(scores, labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(4)->Range(64, 65536)->Complexity(benchmark::oNLogN);

void BM_TrainProbe(benchmark::State& state) {
  const auto d = state.range(0);
  repstore::LabeledMatrix data;
  data.X = gaussian(500, d, 2);
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    data.rows.push_back("p" + std::to_string(i));
    data.y.push_back(data.X(i, 0) + 0.3 * data.X(i, d - 1) >= 0.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(probe::train_probe(data).final_loss);
}
BENCHMARK(BM_TrainProbe)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_CountOccurrences(benchmark::State& state) {
  std::string text;
  for (int i = 0; i < state.range(0); ++i) text += i % 7 ? "lorem ipsum syntax " : "Syntax-error ";
  for (auto _ : state) {
    benchmark::DoNotOptimize(verifier::count_occurrences("syntax", text, verifier::Boundary::kWord));
    benchmark::DoNotOptimize(verifier::count_occurrences("syntax", text, verifier::Boundary::kNone));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size() * 2));
}
BENCHMARK(BM_CountOccurrences)->Arg(100)->Arg(10000);

void BM_VerifyDataset(benchmark::State& state) {
  const auto data = experiment::synthetic_dataset(100);
  const std::string response = "PASS: [a] [b] [c] [d] river lantern meadow copper harbor. That is all for note 1.";
  for (auto _ : state) {
    for (const auto& p : data.prompts()) benchmark::DoNotOptimize(verifier::verify(p.instruction, response).passed);
  }
}
BENCHMARK(BM_VerifyDataset);

void BM_PcaFit(benchmark::State& state) {
  const auto X = gaussian(500, state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(analysis::pca_fit(X, 2).explained_variance[0]);
}
BENCHMARK(BM_PcaFit)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
