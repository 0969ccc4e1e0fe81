#include <benchmark/benchmark.h>

#include <vector>

#include "usqm/degrade.hpp"
#include "usqm/evalstats.hpp"
#include "usqm/features.hpp"
#include "usqm/fr_metric.hpp"
#include "usqm/gmm.hpp"
#include "usqm/nr_metric.hpp"
#include "usqm/phantom.hpp"
#include "usqm/random.hpp"

using namespace usqm;

namespace {

GrayImage phantom(std::size_t side, std::uint64_t seed, const char* organ = "thyroid") {
  return make_phantom(side, side, seed, phantom_style(organ));
}

void BM_ExtractTile(benchmark::State& state) {
  const BuiltinExtractor ex;
  const GrayImage img = phantom(kTileSize, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ex.extract(img, default_layers()));
}
BENCHMARK(BM_ExtractTile)->Unit(benchmark::kMillisecond);

void BM_StructuralDistance(benchmark::State& state) {
  Rng rng(2);
  TokenMatrix fx(196, 64), fy(196, 64);
  for (Eigen::Index i = 0; i < fx.size(); ++i) {
    fx.data()[i] = rng.normal();
    fy.data()[i] = rng.normal();
  }
  const int radius = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(structural_distance(fx, fy, 14, radius, 20.0));
}
BENCHMARK(BM_StructuralDistance)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMicrosecond);

void BM_UlpipsTiled(benchmark::State& state) {
  const BuiltinExtractor ex;
  const auto side = static_cast<std::size_t>(state.range(0));
  const GrayImage a = phantom(side, 3);
  const GrayImage b = apply(a, {DistortionKind::Speckle, 0.5, 4});
  for (auto _ : state) benchmark::DoNotOptimize(ulpips_tiled(a, b, FrConfig{}, ex));
}
BENCHMARK(BM_UlpipsTiled)->Arg(224)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_NrqScore(benchmark::State& state) {
  const BuiltinExtractor ex;
  std::vector<LabeledImage> train;
  for (int i = 0; i < 4; ++i) {
    train.push_back({phantom(336, 10 + i), "thyroid", ""});
    train.push_back({phantom(336, 20 + i, "kidney"), "kidney", ""});
  }
  BankFitConfig fc;
  fc.pca_dim = 8;
  fc.components = 2;
  const OrganModelBank bank = fit_bank(train, ex, fc).bank;
  const GrayImage img = phantom(448, 99);
  for (auto _ : state) benchmark::DoNotOptimize(nrq_score(img, bank, std::nullopt, ex));
}
BENCHMARK(BM_NrqScore)->Unit(benchmark::kMillisecond);

void BM_FitGmm(benchmark::State& state) {
  Rng rng(5);
  Eigen::MatrixXd x(2000, 16);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() + (i % 3);
  for (auto _ : state) benchmark::DoNotOptimize(fit_gmm(x, static_cast<std::size_t>(state.range(0)), 7));
}
BENCHMARK(BM_FitGmm)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_CalibrateToPsnr(benchmark::State& state) {
  const GrayImage img = phantom(224, 6);
  const auto kind = static_cast<DistortionKind>(state.range(0));
  state.SetLabel(to_string(kind));
  for (auto _ : state) benchmark::DoNotOptimize(calibrate_to_psnr(img, kind, 1, {22.0, 0.05, 48}));
}
BENCHMARK(BM_CalibrateToPsnr)
    ->DenseRange(0, static_cast<int>(DistortionKind::Elastic))
    ->Unit(benchmark::kMillisecond);

void BM_RankStatistics(benchmark::State& state) {
  Rng rng(7);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.uniform();
    b[i] = a[i] + 0.3 * rng.normal();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(spearman(a, b));
    benchmark::DoNotOptimize(kendall_tau(a, b));
  }
}
BENCHMARK(BM_RankStatistics)->Arg(100)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_BinomialTest(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(binomial_test_two_sided(393, 540));
}
BENCHMARK(BM_BinomialTest);

}  // namespace
BENCHMARK_MAIN();
