// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: usqm_acceptance [criterion-name ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "usqm/bank_store.hpp"
#include "usqm/degrade.hpp"
#include "usqm/evalstats.hpp"
#include "usqm/features.hpp"
#include "usqm/fr_metric.hpp"
#include "usqm/gmm.hpp"
#include "usqm/nr_metric.hpp"
#include "usqm/pca.hpp"
#include "usqm/phantom.hpp"
#include "usqm/protocols.hpp"
#include "usqm/random.hpp"
#include "usqm/study.hpp"

using namespace usqm;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

/// Collects failed checks; the first few are kept for the report line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (notes_.size() < 3) notes_.push_back(what);
  }
  bool ok() const { return failures_ == 0; }
  Verdict verdict(const std::string& summary) const {
    if (ok()) return {true, summary};
    std::string d = summary + "; " + std::to_string(failures_) + " failed check(s):";
    for (const auto& n : notes_) d += " [" + n + "]";
    return {false, d};
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const std::vector<std::string> kOrgans{"thyroid", "kidney", "liver", "breast"};

GrayImage random_phantom(Rng& rng, std::size_t side) {
  return make_phantom(side, side, rng.next_u64(), phantom_style(kOrgans[rng.below(kOrgans.size())]));
}

// ---------------------------------------------------------------------------

Verdict metric_identities() {
  const BuiltinExtractor ex;
  const FrConfig cfg;
  Rng rng(101);
  Checker c;
  double worst_self = 0.0, worst_loss = 0.0, worst_sym = 0.0;
  for (int i = 0; i < 50; ++i) {
    const GrayImage x = random_phantom(rng, 224);
    const GrayImage y = random_phantom(rng, 224);
    const double self = ulpips(x, x, cfg, ex).score;
    const double loss = token_loss(x, x, cfg, ex).value;
    const double sym = std::abs(ulpips(x, y, cfg, ex).score - ulpips(y, x, cfg, ex).score);
    worst_self = std::max(worst_self, std::abs(self));
    worst_loss = std::max(worst_loss, std::abs(loss));
    worst_sym = std::max(worst_sym, sym);
  }
  c.expect(worst_self <= 1e-12, "ulpips(x,x) = " + fmt("%.3g", worst_self));
  c.expect(worst_loss <= 1e-12, "token_loss(x,x) = " + fmt("%.3g", worst_loss));
  c.expect(worst_sym <= 1e-12, "asymmetry " + fmt("%.3g", worst_sym));
  return c.verdict("50 phantoms, max |d(x,x)| " + fmt("%.2g", worst_self) + ", max |loss(x,x)| " +
                   fmt("%.2g", worst_loss) + ", max asymmetry " + fmt("%.2g", worst_sym));
}

Verdict structural_oracle() {
  Rng rng(102);
  Checker c;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    TokenMatrix fx(9, 2), fy(9, 2);
    for (Eigen::Index i = 0; i < fx.size(); ++i) {
      fx.data()[i] = rng.uniform(-1.0, 1.0);
      fy.data()[i] = rng.uniform(-1.0, 1.0);
    }
    const int radius = static_cast<int>(rng.below(3));
    const double temperature = rng.uniform(0.5, 30.0);
    const double got = structural_distance(fx, fy, 3, radius, temperature);
    const double want =
        oracle::structural_distance(oracle::to_rows(fx), oracle::to_rows(fy), 3, radius, temperature);
    worst = std::max(worst, std::abs(got - want));
  }
  c.expect(worst <= 1e-10, "max error " + fmt("%.3g", worst));
  return c.verdict("200 cases on 3x3 grids with C=2, max error " + fmt("%.2g", worst));
}

Verdict gram_example() {
  TokenMatrix fx(1, 2), fy(1, 2);
  fx << 1.0, 0.0;
  fy << 0.0, 1.0;
  const double g = gram_distance(fx, fy);
  Checker c;
  c.expect(g == 0.25, "got " + fmt("%.17g", g));
  return c.verdict("one-hot T=1, C=2 gives " + fmt("%.17g", g));
}

Verdict gmm_correctness() {
  Rng rng(104);
  Checker c;
  double worst_density = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    DiagGmm m;
    m.weights.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) m.weights(i) = rng.uniform(0.05, 1.0);
    m.weights /= m.weights.sum();
    m.means.resize(k, d);
    m.variances.resize(k, d);
    for (Eigen::Index i = 0; i < m.means.size(); ++i) {
      m.means.data()[i] = rng.uniform(-2.0, 2.0);
      m.variances.data()[i] = rng.uniform(0.2, 3.0);
    }
    Eigen::VectorXd v(d);
    std::vector<double> vs(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) vs[static_cast<std::size_t>(j)] = v(j) = rng.uniform(-3.0, 3.0);
    worst_density = std::max(worst_density, std::abs(log_density(m, v) - oracle::log_density(m, vs)));
  }
  c.expect(worst_density <= 1e-8, "log_density error " + fmt("%.3g", worst_density));

  // EM traces on a corpus of mixtures with varied K, d and separation.
  std::size_t fits = 0, decreases = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const std::size_t true_k = 1 + rng.below(4);
    const Eigen::Index n = 150 + static_cast<Eigen::Index>(rng.below(150));
    Eigen::MatrixXd centers(static_cast<Eigen::Index>(true_k), d);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-4.0, 4.0);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto comp = static_cast<Eigen::Index>(rng.below(true_k));
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = centers(comp, j) + rng.uniform(0.3, 1.5) * rng.normal();
    }
    const std::size_t k = 1 + rng.below(4);
    const GmmFit fit = fit_gmm(x, k, rng.next_u64());
    ++fits;
    for (std::size_t t = 1; t < fit.trace.size(); ++t) {
      // Rounding in the E-step sum is the only admissible decrease.
      if (fit.trace[t] < fit.trace[t - 1] - 1e-12 * std::max(1.0, std::abs(fit.trace[t - 1]))) ++decreases;
    }
  }
  c.expect(decreases == 0, std::to_string(decreases) + " EM log-likelihood decreases");

  // K = 1 closed form.
  double worst_closed = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.below(200));
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-5.0, 5.0);
    const GmmFit fit = fit_gmm(x, 1, rng.next_u64());
    for (Eigen::Index j = 0; j < d; ++j) {
      long double mean = 0.0L, var = 0.0L;
      for (Eigen::Index i = 0; i < n; ++i) mean += x(i, j);
      mean /= n;
      for (Eigen::Index i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= n;
      worst_closed = std::max({worst_closed, std::abs(fit.model.means(0, j) - static_cast<double>(mean)),
                               std::abs(fit.model.variances(0, j) - static_cast<double>(var))});
    }
  }
  c.expect(worst_closed <= 1e-9, "K=1 error " + fmt("%.3g", worst_closed));
  return c.verdict("100 density models max error " + fmt("%.2g", worst_density) + "; " +
                   std::to_string(fits) + " EM fits, " + std::to_string(decreases) +
                   " decreases; K=1 max error " + fmt("%.2g", worst_closed));
}

Verdict pca_checks() {
  Rng rng(105);
  Checker c;
  double worst_recon = 0.0, worst_offdiag = 0.0, worst_diag = 0.0;
  bool ordered = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto dim = static_cast<Eigen::Index>(2 + rng.below(15));
    const Eigen::Index n = dim + 5 + static_cast<Eigen::Index>(rng.below(200));
    Eigen::MatrixXd mix(dim, dim);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    x = x * mix;
    x.rowwise() += Eigen::RowVectorXd::Constant(dim, rng.uniform(-3.0, 3.0));

    const PcaModel full = fit_pca(x, static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd v = x.row(i).transpose();
      worst_recon = std::max(worst_recon, (full.reconstruct(full.project(v)) - v).cwiseAbs().maxCoeff() /
                                              std::max(1.0, v.cwiseAbs().maxCoeff()));
    }
    const auto d = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(dim)));
    const PcaModel m = fit_pca(x, static_cast<std::size_t>(d));
    const Eigen::MatrixXd p = m.project_rows(x);
    const Eigen::MatrixXd centered = p.rowwise() - p.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    const double scale = std::max(m.variances(0), 1e-300);
    for (Eigen::Index i = 0; i < d; ++i) {
      worst_diag = std::max(worst_diag, std::abs(cov(i, i) - m.variances(i)) / scale);
      for (Eigen::Index j = 0; j < d; ++j) {
        if (i != j) worst_offdiag = std::max(worst_offdiag, std::abs(cov(i, j)) / scale);
      }
      if (i > 0 && m.variances(i) > m.variances(i - 1)) ordered = false;
    }
  }
  c.expect(worst_recon <= 1e-8, "reconstruction error " + fmt("%.3g", worst_recon));
  c.expect(worst_offdiag <= 1e-6, "off-diagonal covariance " + fmt("%.3g", worst_offdiag));
  c.expect(worst_diag <= 1e-6, "diagonal vs stored variances " + fmt("%.3g", worst_diag));
  c.expect(ordered, "variances increase somewhere");
  return c.verdict("20 fits: reconstruction " + fmt("%.2g", worst_recon) + ", off-diagonal " +
                   fmt("%.2g", worst_offdiag) + ", variance mismatch " + fmt("%.2g", worst_diag) +
                   ", ordering " + (ordered ? "nonincreasing" : "violated"));
}

Verdict worst_region() {
  Checker c;
  for (std::size_t n = 1; n <= 100; ++n) {
    const std::size_t want = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * n)));
    c.expect(worst_count(n) == want && want == oracle::kappa(n), "kappa(" + std::to_string(n) + ")");
  }
  Rng rng(106);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(120);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.below(4) == 0 ? std::round(rng.uniform(-5.0, 5.0)) : rng.uniform(-50.0, 5.0);
    const std::size_t kappa = worst_count(n);
    std::vector<std::size_t> idx;
    const double want = oracle::worst_mean(s, kappa, &idx);
    const WorstAggregate got = aggregate_worst(s, kappa);
    if (got.mean != want || got.indices != idx) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " aggregation mismatches");
  return c.verdict("kappa checked for N = 1..100; 500 aggregations, " + std::to_string(mismatches) +
                   " mismatches");
}

Verdict calibration() {
  const GrayImage img = make_phantom(224, 224, 7, phantom_style("thyroid"));
  Checker c;
  double worst_err = 0.0;
  int max_iter = 0;
  for (auto kind : default_distortions()) {
    for (double target : {20.0, 22.0, 25.0}) {
      const Calibration cal = calibrate_to_psnr(img, kind, 3, {target, 0.05, 48});
      const double measured = psnr(img, cal.image);
      const double err = std::abs(measured - target);
      worst_err = std::max(worst_err, err);
      max_iter = std::max(max_iter, cal.iterations);
      c.expect(cal.converged && err <= 0.1 && cal.iterations <= 48,
               std::string(to_string(kind)) + " @ " + fmt("%g", target) + " dB: " + fmt("%.3f", measured));
    }
    const auto sweep = severity_sweep(img, kind, 3, 6);
    bool mono = sweep.size() == 6;
    for (std::size_t i = 1; i < sweep.size(); ++i) mono = mono && sweep[i].psnr <= sweep[i - 1].psnr;
    c.expect(mono, std::string(to_string(kind)) + " sweep PSNR increases");
  }
  return c.verdict("8 kinds x {20, 22, 25} dB, max error " + fmt("%.3f", worst_err) + " dB, max " +
                   std::to_string(max_iter) + " iterations; sweeps nonincreasing");
}

Verdict rank_statistics() {
  Rng rng(108);
  Checker c;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const std::size_t levels = 2 + rng.below(6);
    auto draw = [&] {
      std::vector<double> v(n);
      for (auto& x : v) x = static_cast<double>(rng.below(levels));
      return v;
    };
    std::vector<double> a = draw(), b = draw();
    const bool a_const = std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; });
    const bool b_const = std::all_of(b.begin(), b.end(), [&](double x) { return x == b[0]; });
    if (!a_const && !b_const) {
      worst = std::max(worst, std::abs(spearman(a, b) - oracle::spearman(a, b)));
      worst = std::max(worst, std::abs(kendall_tau(a, b) - oracle::kendall_tau_b(a, b)));
    }
    std::vector<std::vector<double>> judges(2 + rng.below(4));
    for (auto& j : judges) j = draw();
    bool all_const = true;
    for (const auto& j : judges) {
      all_const = all_const && std::all_of(j.begin(), j.end(), [&](double x) { return x == j[0]; });
    }
    if (!all_const) worst = std::max(worst, std::abs(kendall_w(judges) - oracle::kendall_w(judges)));
  }
  c.expect(worst <= 1e-12, "rank statistic error " + fmt("%.3g", worst));
  const Interval ci = wilson_ci(393, 540, 0.95);
  c.expect(std::abs(ci.lo - 0.689) <= 0.001 && std::abs(ci.hi - 0.764) <= 0.001,
           "Wilson [" + fmt("%.4f", ci.lo) + ", " + fmt("%.4f", ci.hi) + "]");
  const double p = binomial_test_two_sided(393, 540, 0.5);
  c.expect(p < 1e-20, "binomial p " + fmt("%.3g", p));
  return c.verdict("1000 trials max error " + fmt("%.2g", worst) + "; Wilson 393/540 [" +
                   fmt("%.4f", ci.lo) + ", " + fmt("%.4f", ci.hi) + "]; binomial p " + fmt("%.3g", p));
}

Verdict nrq_end_to_end() {
  const BuiltinExtractor ex;
  std::vector<LabeledImage> train;
  for (int i = 0; i < 16; ++i) {
    train.push_back({make_phantom(512, 512, 1000 + 7 * i, phantom_style("thyroid")), "thyroid", ""});
    train.push_back({make_phantom(512, 512, 1001 + 7 * i, phantom_style("kidney")), "kidney", ""});
  }
  BankFitConfig fc;
  fc.seed = 5;
  const OrganModelBank bank = fit_bank(train, ex, fc).bank;

  std::vector<GrayImage> held_out;
  for (int h = 0; h < 3; ++h) {
    held_out.push_back(make_phantom(448, 448, 5000 + h, phantom_style("thyroid")));
    held_out.push_back(make_phantom(448, 448, 5010 + h, phantom_style("kidney")));
  }
  std::vector<double> clean;
  for (const auto& img : held_out) clean.push_back(nrq_score(img, bank, std::nullopt, ex).score);

  std::size_t separated = 0;
  std::string misses;
  for (auto kind : default_distortions()) {
    std::size_t below = 0;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      const GrayImage d = apply(held_out[i], {kind, distortion_info(kind).theta_max, 77});
      if (nrq_score(d, bank, std::nullopt, ex).score < clean[i]) ++below;
    }
    if (below == held_out.size()) {
      ++separated;
    } else {
      misses += std::string(misses.empty() ? "" : ", ") + to_string(kind) + " " + std::to_string(below) +
                "/" + std::to_string(held_out.size());
    }
  }
  Checker c;
  c.expect(separated >= 7, std::to_string(separated) + "/8 kinds separated");
  return c.verdict(std::to_string(separated) + "/8 kinds score below clean on all " +
                   std::to_string(held_out.size()) + " held-out images" +
                   (misses.empty() ? "" : " (missed: " + misses + ")"));
}

// Runs a command line twice and compares stdout and every file in the work
// directory after each run.
class DeterminismRun {
 public:
  explicit DeterminismRun(const oracle::TempDir& dir) : dir_(dir) {}

  void command(const std::string& label, const std::vector<std::string>& args) {
    std::ostringstream out1, err1, out2, err2;
    const int code1 = cli::run(args, out1, err1);
    const auto files1 = snapshot();
    const int code2 = cli::run(args, out2, err2);
    const auto files2 = snapshot();
    ++commands_;
    if (code1 != 0) {
      failures_.push_back(label + " exited " + std::to_string(code1) + ": " + err1.str());
    } else if (code2 != code1 || out1.str() != out2.str()) {
      failures_.push_back(label + " stdout differs");
    } else if (files1 != files2) {
      for (const auto& [path, bytes] : files1) {
        auto it = files2.find(path);
        if (it == files2.end() || it->second != bytes) {
          failures_.push_back(label + " changed " + fs::path(path).filename().string());
          break;
        }
      }
    }
    artifacts_ = files2.size();
  }

  std::size_t commands() const { return commands_; }
  std::size_t artifacts() const { return artifacts_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::map<std::string, std::string> snapshot() const {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir_.path())) {
      if (e.is_regular_file()) out[e.path().string()] = oracle::slurp(e.path().string());
    }
    return out;
  }

  const oracle::TempDir& dir_;
  std::size_t commands_ = 0;
  std::size_t artifacts_ = 0;
  std::vector<std::string> failures_;
};

Verdict determinism() {
  oracle::TempDir dir("usqm-determinism");
  DeterminismRun run(dir);
  const auto f = [&](const std::string& name) { return dir.file(name); };

  run.command("phantom", {"phantom", "--organ", "thyroid", "--seed", "1", "--out", f("img/a.png")});
  run.command("phantom", {"phantom", "--organ", "thyroid", "--seed", "2", "--out", f("img/b.png")});
  run.command("phantom", {"phantom", "--organ", "thyroid", "--height", "96", "--width", "96", "--seed",
                          "3", "--out", f("img/small.png")});
  std::string fit_manifest;
  for (int i = 0; i < 3; ++i) {
    for (const char* organ : {"thyroid", "kidney"}) {
      const std::string name = std::string("fit/") + organ + std::to_string(i) + ".png";
      run.command("phantom", {"phantom", "--organ", organ, "--height", "336", "--width", "336", "--seed",
                              std::to_string(40 + i + (organ[0] == 'k' ? 10 : 0)), "--out", f(name)});
      fit_manifest += nlohmann::json{{"path", f(name)}, {"organ", organ}}.dump() + "\n";
    }
  }
  std::ofstream(f("fit.jsonl")) << fit_manifest;

  run.command("degrade --target-psnr", {"degrade", f("img/small.png"), "--kind", "speckle", "--target-psnr",
                                        "22", "--seed", "4", "--out", f("deg/speckle.png"), "--manifest",
                                        f("deg/manifest.json")});
  run.command("degrade --theta", {"degrade", f("img/a.png"), "--kind", "elastic", "--theta", "6", "--seed",
                                  "4", "--out", f("deg/elastic.png"), "--manifest", f("deg/manifest.json")});
  run.command("degrade-suite", {"degrade-suite", f("img/small.png"), "--kinds",
                                "additive-gaussian,gaussian-blur,roi-shadow", "--targets", "20,25", "--seed",
                                "4", "--out-dir", f("suite"), "--manifest", f("suite/manifest.json")});
  run.command("sweep", {"sweep", f("img/small.png"), "--kind", "downsample", "--steps", "6", "--seed", "4",
                        "--out-dir", f("sweep"), "--manifest", f("sweep/manifest.json")});
  run.command("fr-score", {"fr-score", f("img/a.png"), f("deg/elastic.png")});
  run.command("token-loss", {"token-loss", f("img/a.png"), f("img/b.png")});
  run.command("features export", {"features", "export", f("img/a.png"), f("img/b.png"), "--out",
                                  f("features.usqf")});
  run.command("nrq fit", {"nrq", "fit", "--manifest", f("fit.jsonl"), "--pca-dim", "8", "--components",
                          "2", "--seed", "3", "--out", f("bank.bin")});
  run.command("nrq score", {"-j", "2", "nrq", "score", "--bank", f("bank.bin"), f("img/a.png"),
                            f("deg/elastic.png")});
  run.command("nrq score --organ", {"nrq", "score", "--bank", f("bank.bin"), "--organ", "thyroid",
                                    f("img/b.png")});

  std::ofstream(f("nr.csv")) << "image_id,organ,distortion,severity_rank,nrq\n"
                                "a,thyroid,speckle,0,-1\na,thyroid,speckle,1,-2\na,thyroid,speckle,2,-4\n";
  std::ofstream(f("seg.csv")) << "image_id,distortion,theta,metric_value,anchor_damage\n"
                                 "a,speckle,0,0.1,1\nb,speckle,0,0.3,2\nc,speckle,0,0.2,4\n";
  std::ofstream(f("organs.csv")) << "image_id,organ,distortion,theta,metric_value\n"
                                    "a,thyroid,speckle,1,0.2\na,thyroid,elastic,1,0.4\n"
                                    "a,kidney,speckle,1,0.3\na,kidney,elastic,1,0.1\n";
  run.command("eval nr-monotonicity", {"eval", "nr-monotonicity", f("nr.csv"), "--out-dir", f("reports")});
  run.command("eval task-anchor", {"eval", "task-anchor", f("seg.csv"), "--out-dir", f("reports")});
  run.command("eval cross-organ", {"eval", "cross-organ", f("organs.csv"), "--out-dir", f("reports")});

  const auto corpus = fixture::degradation_corpus(4);
  write_degradation_manifest(f("study/degradations.json"), corpus);
  run.command("study pairgen", {"study", "pairgen", "--degradations", f("study/degradations.json"),
                                "--pairs", "40", "--sanity-fraction", "0.1", "--duplicates", "2", "--seed",
                                "9", "--out", f("study/pairs.json")});
  {
    const auto m = read_pair_manifest(f("study/pairs.json"));
    std::ofstream resp(f("study/responses.jsonl"));
    Rng rng(9);
    for (const auto& p : m.pairs) {
      resp << response_to_json_line({p.pair_id, "r1", rng.below(2) ? "A" : "B", 1700000000000}) << "\n";
    }
    std::ofstream scores(f("study/scores.jsonl"));
    for (const auto& [path, s] : fixture::fake_scores(corpus)) {
      scores << nlohmann::json{{"path", path}, {"score", s}}.dump() << "\n";
    }
  }
  run.command("study analyze", {"study", "analyze", "--responses", f("study/responses.jsonl"), "--pairs",
                                f("study/pairs.json"), "--nrq-scores", f("study/scores.jsonl"), "--out-dir",
                                f("reports")});

  Checker c;
  for (const auto& failure : run.failures()) c.expect(false, failure);
  return c.verdict(std::to_string(run.commands()) + " command runs repeated, " +
                   std::to_string(run.artifacts()) + " artifacts byte-identical");
}

Verdict protocol_oracles() {
  oracle::TempDir dir("usqm-protocols");
  Checker c;
  {
    std::ofstream up(dir.file("perfect.csv")), down(dir.file("inverted.csv"));
    up << "image_id,distortion,theta,metric_value,anchor_damage\n";
    down << "image_id,distortion,theta,metric_value,anchor_damage\n";
    for (int i = 0; i < 12; ++i) {
      up << "i" << i << ",speckle," << 0.1 * i << "," << 0.5 * i << "," << 3 * i + 1 << "\n";
      down << "i" << i << ",speckle," << 0.1 * i << "," << 0.5 * i << "," << -2 * i << "\n";
    }
  }
  const auto ta = run_protocol(ProtocolKind::TaskAnchor, {dir.file("perfect.csv"), dir.file("inverted.csv")});
  const auto& perfect = ta.conditions.at(0).values;
  const auto& inverted = ta.conditions.at(1).values;
  c.expect(perfect.at("spearman_rho") == 1.0 && perfect.at("kendall_tau") == 1.0, "perfect anchor");
  c.expect(inverted.at("spearman_rho") == -1.0 && inverted.at("kendall_tau") == -1.0, "inverted anchor");

  {
    std::ofstream shared(dir.file("shared.csv")), reversed(dir.file("reversed.csv"));
    shared << "image_id,organ,distortion,theta,metric_value\n";
    reversed << "image_id,organ,distortion,theta,metric_value\n";
    for (int k = 0; k < 5; ++k) {
      for (const char* organ : {"thyroid", "kidney", "liver"}) {
        shared << "x," << organ << ",k" << k << ",1," << k << "\n";
      }
      reversed << "x,thyroid,k" << k << ",1," << k << "\n";
      reversed << "x,kidney,k" << k << ",1," << -k << "\n";
    }
  }
  const double w1 = run_protocol(ProtocolKind::CrossOrgan, {dir.file("shared.csv")}).aggregate.at("kendall_w");
  const double w0 = run_protocol(ProtocolKind::CrossOrgan, {dir.file("reversed.csv")}).aggregate.at("kendall_w");
  c.expect(w1 == 1.0, "shared ordering W = " + fmt("%.17g", w1));
  c.expect(w0 == 0.0, "reversed ordering W = " + fmt("%.17g", w0));

  {
    std::ofstream good(dir.file("falling.csv")), bad(dir.file("rising.csv"));
    good << "image_id,organ,distortion,severity_rank,nrq\n";
    bad << "image_id,organ,distortion,severity_rank,nrq\n";
    for (const char* organ : {"thyroid", "kidney"}) {
      for (int r = 0; r < 6; ++r) {
        good << "a," << organ << ",speckle," << r << "," << -1.5 * r << "\n";
        bad << "a," << organ << ",speckle," << r << "," << 2.0 * r << "\n";
      }
    }
  }
  const auto falling = run_protocol(ProtocolKind::NrMonotonicity, {dir.file("falling.csv")});
  const auto rising = run_protocol(ProtocolKind::NrMonotonicity, {dir.file("rising.csv")});
  c.expect(falling.aggregate.at("mean_spearman_rho") == -1.0 && falling.aggregate.at("mean_agreement") == 1.0,
           "falling NRQ");
  c.expect(rising.aggregate.at("mean_spearman_rho") == 1.0 && rising.aggregate.at("mean_agreement") == -1.0,
           "rising NRQ");
  return c.verdict("task-anchor rho/tau +1 and -1, cross-organ W " + fmt("%g", w1) + " and " + fmt("%g", w0) +
                   ", nr-monotonicity agreement +1 and -1");
}

struct Criterion {
  const char* name;
  double budget_seconds;  // 0 = no runtime limit
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"metric-identities", 60.0, metric_identities},
      {"structural-oracle", 0.0, structural_oracle},
      {"gram-example", 0.0, gram_example},
      {"gmm-correctness", 0.0, gmm_correctness},
      {"pca", 0.0, pca_checks},
      {"worst-region", 0.0, worst_region},
      {"degradation-calibration", 120.0, calibration},
      {"rank-statistics", 0.0, rank_statistics},
      {"nrq-end-to-end", 300.0, nrq_end_to_end},
      {"determinism", 0.0, determinism},
      {"protocol-oracles", 0.0, protocol_oracles},
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& s : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return s == c.name; })) {
      std::cerr << "unknown criterion '" << s << "'\n";
      return 2;
    }
  }
  std::size_t failed = 0, ran = 0;
  for (const auto& crit : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), crit.name) == selected.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = crit.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt("%.1f s", secs);
    if (crit.budget_seconds > 0.0) {
      timing += fmt(" of %.0f s budget", crit.budget_seconds);
      if (secs > crit.budget_seconds) {
        v.pass = false;
        v.detail += "; over the runtime budget";
      }
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS " : "FAIL ") << crit.name << ": " << v.detail << " (" << timing << ")"
              << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
