#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <optional>
#include <set>
#include <thread>

#include "usqm/bank_store.hpp"
#include "usqm/degrade.hpp"
#include "usqm/errors.hpp"
#include "usqm/features.hpp"
#include "usqm/fr_metric.hpp"
#include "usqm/hashing.hpp"
#include "usqm/log.hpp"
#include "usqm/nr_metric.hpp"
#include "usqm/phantom.hpp"
#include "usqm/protocols.hpp"
#include "usqm/study.hpp"
#include "usqm/study_server.hpp"

namespace usqm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Failure with an explicit exit code (used where the error kind is ambiguous).
struct ExitError : std::runtime_error {
  ExitError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return kExitIo;
    case ErrorKind::Shape:
    case ErrorKind::Range:
    case ErrorKind::Lookup:
    case ErrorKind::FingerprintMismatch: return kExitConfig;
    case ErrorKind::InsufficientData:
    case ErrorKind::UndefinedStatistic: return kExitInsufficient;
    case ErrorKind::Schema:
    case ErrorKind::CorruptModel:
    case ErrorKind::UnsupportedVersion: return kExitSchema;
    case ErrorKind::InternalBug: return kExitInternal;
  }
  return kExitInternal;
}

// ---------------------------------------------------------------------------
// Resolved configuration

struct Settings {
  std::string config_file;
  bool print_config = false;
  std::string extractor;
  std::string layers = default_layers().to_string();
  int radius = 3;
  double temperature = 20.0;
  double worst_fraction = kWorstFraction;
  std::string fingerprint_policy = "error";
  std::size_t jobs = 1;
  int verbose = 0;
  bool quiet = false;
};

struct Resolved {
  std::unique_ptr<FeatureExtractor> extractor;
  FrConfig fr;
  NrqConfig nrq;
  std::size_t jobs = 1;
  json config;
  std::string config_hash;
};

std::string default_extractor_spec() {
  if (const char* seed = std::getenv("USQM_SEED"); seed && *seed) {
    return std::string("builtin-seeded:") + seed;
  }
  return "builtin-seeded:" + std::to_string(kDefaultExtractorSeed);
}

/// Fills settings that were not given on the command line from the JSON config file.
void merge_config_file(Settings& s, const CLI::App& app) {
  if (s.config_file.empty()) return;
  const auto bytes = read_file(s.config_file);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, s.config_file + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::Schema, s.config_file + ": expected a JSON object");
  auto given = [&](const char* flag) { return app.count(flag) > 0; };
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "extractor") {
        if (!given("--extractor")) s.extractor = value.get<std::string>();
      } else if (key == "layers") {
        if (!given("--layers")) {
          s.layers = value.is_array() ? LayerSet(value.get<std::vector<int>>()).to_string()
                                      : value.get<std::string>();
        }
      } else if (key == "radius") {
        if (!given("--radius")) s.radius = value.get<int>();
      } else if (key == "temperature") {
        if (!given("--temperature")) s.temperature = value.get<double>();
      } else if (key == "worst_fraction") {
        if (!given("--worst-fraction")) s.worst_fraction = value.get<double>();
      } else if (key == "fingerprint_policy") {
        if (!given("--fingerprint-policy")) s.fingerprint_policy = value.get<std::string>();
      } else if (key == "jobs") {
        if (!given("--jobs")) s.jobs = value.get<std::size_t>();
      } else {
        fail(ErrorKind::Schema, s.config_file + ": unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, s.config_file + ": " + e.what());
  }
}

Resolved resolve(Settings s, const CLI::App& app) {
  merge_config_file(s, app);
  if (s.extractor.empty()) s.extractor = default_extractor_spec();
  Resolved r;
  r.extractor = make_extractor(s.extractor);
  r.fr.layers = parse_layer_set(s.layers);
  r.fr.radius = s.radius;
  r.fr.temperature = s.temperature;
  r.fr.validate(r.extractor->profile());
  if (!(s.worst_fraction > 0.0 && s.worst_fraction <= 1.0)) {
    fail(ErrorKind::Range, "--worst-fraction must lie in (0, 1]");
  }
  r.nrq.worst_fraction = s.worst_fraction;
  if (s.fingerprint_policy == "error") {
    r.nrq.fingerprint_policy = FingerprintPolicy::Error;
  } else if (s.fingerprint_policy == "warn") {
    r.nrq.fingerprint_policy = FingerprintPolicy::Warn;
  } else {
    fail(ErrorKind::Range, "--fingerprint-policy must be 'error' or 'warn'");
  }
  r.jobs = std::max<std::size_t>(1, s.jobs);
  // Everything that can change an output; --jobs only changes scheduling.
  r.config = {{"extractor", r.extractor->identity()},
              {"extractor_fingerprint", r.extractor->fingerprint()},
              {"layers", r.fr.layers.to_string()},
              {"radius", r.fr.radius},
              {"temperature", r.fr.temperature},
              {"worst_fraction", r.nrq.worst_fraction},
              {"fingerprint_policy", s.fingerprint_policy},
              {"version", USQM_VERSION}};
  r.config_hash = hash_string(r.config.dump());
  return r;
}

// ---------------------------------------------------------------------------
// Helpers

void emit(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

/// Applies fn to 0..n-1 on up to `jobs` threads; results keep input order and
/// the first failure (in input order) is rethrown.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, std::size_t jobs, F fn) {
  std::vector<std::optional<R>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(jobs, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<R> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*results[i]));
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm";
}

/// Files are taken as given; directories contribute their images in name order.
std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::is_directory(in, ec)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && is_image_file(e.path())) found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  return out;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + parent.string() + ": " + ec.message());
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

std::vector<DistortionKind> parse_kinds(const std::string& csv) {
  if (csv.empty() || csv == "all") return default_distortions();
  std::vector<DistortionKind> out;
  for (const auto& name : split_list(csv)) out.push_back(parse_distortion(name));
  return out;
}

std::string format_db(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Inserts or replaces (by output path) records in a degradation manifest.
void upsert_manifest(const std::string& path, const std::vector<DegradationRecord>& records) {
  std::vector<DegradationRecord> all;
  if (fs::exists(path)) all = read_degradation_manifest(path);
  for (const auto& r : records) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const DegradationRecord& e) { return e.output_path == r.output_path; });
    if (it == all.end()) {
      all.push_back(r);
    } else {
      *it = r;
    }
  }
  ensure_parent(path);
  write_degradation_manifest(path, all);
}

json record_json(const DegradationRecord& r) { return json::parse(to_json(r)); }

json breakdown_json(const FrBreakdown& b) {
  json layers = json::array();
  for (const auto& l : b.layers) {
    layers.push_back(
        {{"layer", l.layer}, {"ds", l.structural}, {"dg", l.gram}, {"d", l.total()}});
  }
  return layers;
}

// ---------------------------------------------------------------------------
// Commands

struct PairPaths {
  std::string first;
  std::string second;
};

int cmd_fr_score(const PairPaths& p, const Resolved& cfg, std::ostream& out) {
  const GrayImage ref = read_image(p.first);
  const GrayImage test = read_image(p.second);
  const TiledFrResult r = ulpips_tiled(ref, test, cfg.fr, *cfg.extractor);
  emit(out, {{"command", "fr-score"},
             {"reference", p.first},
             {"test", p.second},
             {"final", r.breakdown.score},
             {"layers", breakdown_json(r.breakdown)},
             {"provenance",
              {{"height", ref.height()},
               {"width", ref.width()},
               {"upscaled", r.upscaled},
               {"windows", r.windows},
               {"extractor", cfg.extractor->identity()},
               {"config_hash", cfg.config_hash}}}});
  return kExitOk;
}

int cmd_token_loss(const PairPaths& p, const Resolved& cfg, std::ostream& out) {
  const GrayImage recon = read_image(p.first);
  const GrayImage target = read_image(p.second);
  const TokenLossResult r = token_loss(recon, target, cfg.fr, *cfg.extractor);
  emit(out, {{"command", "token-loss"},
             {"reconstruction", p.first},
             {"target", p.second},
             {"value", r.value},
             {"provenance",
              {{"upscaled", r.upscaled},
               {"windows", r.windows},
               {"extractor", cfg.extractor->identity()},
               {"config_hash", cfg.config_hash}}}});
  return kExitOk;
}

struct NrqFitArgs {
  std::string manifest;
  std::string out;
  std::size_t pca_dim = 128;
  std::size_t components = 4;
  std::uint64_t seed = 0;
};

int cmd_nrq_fit(const NrqFitArgs& a, const Resolved& cfg, std::ostream& out) {
  const auto entries = read_fit_manifest(a.manifest);
  if (entries.empty()) fail(ErrorKind::InsufficientData, a.manifest + ": manifest lists no images");
  auto images = parallel_map<LabeledImage>(entries.size(), cfg.jobs, [&](std::size_t i) {
    return LabeledImage{read_image(entries[i].path), entries[i].organ, entries[i].path};
  });
  BankFitConfig fc;
  fc.layers = cfg.fr.layers;
  fc.pca_dim = a.pca_dim;
  fc.components = a.components;
  fc.seed = a.seed;
  BankFitResult fit;
  try {
    fit = fit_bank(images, *cfg.extractor, fc);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InsufficientData) throw;
    std::map<std::string, std::size_t> counts;
    for (const auto& en : entries) ++counts[en.organ];
    std::string organs;
    for (const auto& [o, n] : counts) organs += " " + o + "=" + std::to_string(n) + " images";
    fail(ErrorKind::InsufficientData, std::string(e.what()) + "; organs:" + organs);
  }
  ensure_parent(a.out);
  save_bank(fit.bank, a.out);
  json organs = json::array();
  for (const auto& r : fit.organs) {
    organs.push_back({{"organ", r.organ},
                      {"images", r.images},
                      {"patches", r.patches},
                      {"excluded", r.excluded},
                      {"reason", r.reason},
                      {"em_iterations", r.em_iterations},
                      {"converged", r.converged},
                      {"final_log_likelihood", r.final_log_likelihood},
                      {"reseeds", r.reseeds}});
  }
  emit(out, {{"command", "nrq fit"},
             {"bank", a.out},
             {"organs", organs},
             {"pooled_patches", fit.pooled_patches},
             {"pca_dim", a.pca_dim},
             {"components", a.components},
             {"bank_config_hash", fit.bank.config_hash},
             {"config_hash", cfg.config_hash}});
  return kExitOk;
}

struct NrqScoreArgs {
  std::string bank;
  std::vector<std::string> inputs;
  std::string organ;
};

int cmd_nrq_score(const NrqScoreArgs& a, const Resolved& cfg, std::ostream& out) {
  const OrganModelBank bank = load_bank(a.bank);
  std::optional<std::string> organ;
  if (!a.organ.empty()) {
    if (!bank.organs.contains(a.organ)) {
      std::string known;
      for (const auto& [o, g] : bank.organs) known += (known.empty() ? "" : ", ") + o;
      fail(ErrorKind::Lookup, "organ '" + a.organ + "' is not in the bank (known: " + known + ")");
    }
    organ = a.organ;
  }
  const auto paths = expand_inputs(a.inputs);
  if (paths.empty()) fail(ErrorKind::Io, "no input images");
  const auto lines = parallel_map<json>(paths.size(), cfg.jobs, [&](std::size_t i) {
    const NrqResult r = nrq_score(read_image(paths[i]), bank, organ, *cfg.extractor, cfg.nrq);
    json worst = json::array();
    for (std::size_t w : r.worst) {
      worst.push_back({{"row", r.origins[w].row},
                       {"col", r.origins[w].col},
                       {"log_likelihood", r.patch_scores[w]}});
    }
    return json{{"path", paths[i]},
                {"score", r.score},
                {"kappa", r.kappa},
                {"patches", r.patch_scores.size()},
                {"worst", worst},
                {"organ", r.organ.empty() ? json(nullptr) : json(r.organ)},
                {"upscaled", r.upscaled},
                {"config_hash", cfg.config_hash}};
  });
  for (const auto& l : lines) emit(out, l);
  return kExitOk;
}

struct DegradeArgs {
  std::string input;
  std::string kind;
  std::optional<double> target_psnr;
  std::optional<double> theta;
  double tolerance = 0.05;
  std::uint64_t seed = 0;
  std::string out;
  std::string manifest;
};

Calibration calibrate_or_exit(const GrayImage& img, DistortionKind kind, std::uint64_t seed,
                              const PsnrTarget& target) {
  try {
    return calibrate_to_psnr(img, kind, seed, target);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Range) throw ExitError(kExitUnreachable, e.what());
    throw;
  }
}

int cmd_degrade(const DegradeArgs& a, std::ostream& out) {
  const GrayImage img = read_image(a.input);
  const DistortionKind kind = parse_distortion(a.kind);
  DegradationRecord rec{a.input, to_string(kind), 0.0, a.seed, 0.0, a.out};
  json extra;
  std::optional<GrayImage> result;
  if (a.target_psnr) {
    Calibration c = calibrate_or_exit(img, kind, a.seed, {*a.target_psnr, a.tolerance, 48});
    if (!c.converged) {
      throw ExitError(kExitUnreachable,
                      std::string(to_string(kind)) + ": bisection did not reach " +
                          format_db(*a.target_psnr) + " dB within tolerance (closest " +
                          format_db(c.achieved_psnr) + " dB)");
    }
    rec.theta = c.theta;
    rec.achieved_psnr = c.achieved_psnr;
    extra = {{"target_psnr", *a.target_psnr}, {"iterations", c.iterations}};
    result.emplace(std::move(c.image));
  } else {
    result.emplace(apply(img, {kind, *a.theta, a.seed}));
    rec.theta = *a.theta;
    rec.achieved_psnr = psnr(img, *result);
  }
  ensure_parent(a.out);
  write_png(*result, a.out);
  if (!a.manifest.empty()) upsert_manifest(a.manifest, {rec});
  json row = record_json(rec);
  if (!extra.is_null()) row["calibration"] = extra;
  emit(out, row);
  return kExitOk;
}

struct SuiteArgs {
  std::vector<std::string> inputs;
  std::string kinds = "all";
  std::string targets = "20,22,25";
  double tolerance = 0.05;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string manifest;
  bool skip_unreachable = false;
};

int cmd_degrade_suite(const SuiteArgs& a, const Resolved& cfg, std::ostream& out) {
  const auto inputs = expand_inputs(a.inputs);
  const auto kinds = parse_kinds(a.kinds);
  std::vector<double> targets;
  for (const auto& t : split_list(a.targets)) {
    try {
      targets.push_back(std::stod(t));
    } catch (const std::exception&) {
      fail(ErrorKind::Range, "bad PSNR target '" + t + "'");
    }
  }
  if (inputs.empty() || targets.empty()) fail(ErrorKind::Range, "nothing to degrade");
  struct Job {
    std::size_t input;
    DistortionKind kind;
    double target;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (auto k : kinds) {
      for (double t : targets) jobs.push_back({i, k, t});
    }
  }
  std::vector<GrayImage> images;
  for (const auto& p : inputs) images.push_back(read_image(p));
  const auto rows = parallel_map<std::optional<DegradationRecord>>(
      jobs.size(), cfg.jobs, [&](std::size_t j) -> std::optional<DegradationRecord> {
        const Job& job = jobs[j];
        const std::string path =
            (fs::path(a.out_dir) / (fs::path(inputs[job.input]).stem().string() + "__" +
                                    to_string(job.kind) + "__" + format_db(job.target) + "dB.png"))
                .string();
        std::optional<Calibration> c;
        try {
          c.emplace(calibrate_or_exit(images[job.input], job.kind, a.seed, {job.target, a.tolerance, 48}));
          if (!c->converged) {
            throw ExitError(kExitUnreachable, std::string(to_string(job.kind)) +
                                                  ": no convergence at " + format_db(job.target) +
                                                  " dB for " + inputs[job.input]);
          }
        } catch (const ExitError& e) {
          if (!a.skip_unreachable) throw;
          log_warn(std::string("skipped: ") + e.what());
          return std::nullopt;
        }
        ensure_parent(path);
        write_png(c->image, path);
        return DegradationRecord{inputs[job.input], to_string(job.kind), c->theta, a.seed,
                                 c->achieved_psnr, path};
      });
  std::vector<DegradationRecord> records;
  for (const auto& r : rows) {
    if (!r) continue;
    records.push_back(*r);
    emit(out, record_json(*r));
  }
  if (!a.manifest.empty()) upsert_manifest(a.manifest, records);
  return kExitOk;
}

struct SweepArgs {
  std::string input;
  std::string kind;
  std::size_t steps = 6;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string manifest;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const GrayImage img = read_image(a.input);
  const DistortionKind kind = parse_distortion(a.kind);
  const auto steps = severity_sweep(img, kind, a.seed, a.steps);
  std::vector<DegradationRecord> records;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string path = (fs::path(a.out_dir) / (fs::path(a.input).stem().string() + "__" +
                                                     to_string(kind) + "__s" + std::to_string(i) +
                                                     ".png"))
                                 .string();
    ensure_parent(path);
    write_png(steps[i].image, path);
    DegradationRecord rec{a.input, to_string(kind), steps[i].theta, a.seed, steps[i].psnr, path};
    json row = record_json(rec);
    row["severity_rank"] = i;
    emit(out, row);
    records.push_back(std::move(rec));
  }
  if (!a.manifest.empty()) upsert_manifest(a.manifest, records);
  return kExitOk;
}

struct EvalArgs {
  std::string protocol;
  std::vector<std::string> inputs;
  std::string out_dir = ".";
  std::string name;
};

int write_report(const ProtocolReport& rep, const std::string& out_dir, const std::string& name,
                 std::ostream& out) {
  const std::string stem = name.empty() ? to_string(rep.kind) : name;
  const auto json_path = (fs::path(out_dir) / (stem + ".json")).string();
  const auto md_path = (fs::path(out_dir) / (stem + ".md")).string();
  ensure_parent(json_path);
  atomic_write(json_path, rep.to_json());
  atomic_write(md_path, rep.to_markdown());
  emit(out, {{"protocol", to_string(rep.kind)},
             {"aggregate", rep.aggregate},
             {"conditions", rep.conditions.size()},
             {"report_json", json_path},
             {"report_markdown", md_path},
             {"config_hash", rep.config_hash}});
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const ProtocolKind kind = parse_protocol(a.protocol);
  return write_report(run_protocol(kind, a.inputs), a.out_dir, a.name, out);
}

struct PairgenArgs {
  std::string degradations;
  PairGenConfig config;
  std::string out;
};

int cmd_pairgen(const PairgenArgs& a, std::ostream& out) {
  const auto records = read_degradation_manifest(a.degradations);
  const PairManifest m = pairgen(records, a.config);
  ensure_parent(a.out);
  write_pair_manifest(a.out, m);
  std::map<std::string, std::size_t> classes;
  for (const auto& p : m.pairs) ++classes[to_string(p.pair_class)];
  emit(out, {{"command", "study pairgen"},
             {"out", a.out},
             {"trials", m.pairs.size()},
             {"classes", classes},
             {"kind_pair_counts", m.kind_pair_counts},
             {"allocation", m.allocation}});
  return kExitOk;
}

struct ServeArgs {
  std::string pairs;
  std::string responses;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::optional<std::uint64_t> token_secret;
};

int cmd_serve(const ServeArgs& a, std::ostream& err) {
  StudyServer server(read_pair_manifest(a.pairs),
                     StudyServerOptions{a.responses, a.static_dir, a.token_secret});
  err << "usqm: serving study on http://" << a.host << ":" << a.port << "/\n";
  server.listen(a.host, a.port);
  return kExitOk;
}

struct AnalyzeArgs {
  std::string responses;
  std::string pairs;
  std::string nrq_scores;
  std::string out_dir = ".";
  std::string name = "afc-agreement";
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const auto rep =
      run_protocol(ProtocolKind::AfcAgreement, {a.responses, a.pairs, a.nrq_scores});
  return write_report(rep, a.out_dir, a.name, out);
}

struct ExportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_features_export(const ExportArgs& a, const Resolved& cfg, std::ostream& out) {
  const auto paths = expand_inputs(a.inputs);
  if (paths.empty()) fail(ErrorKind::Io, "no input images");
  const auto per_image = parallel_map<std::vector<FeatureRecord>>(
      paths.size(), cfg.jobs, [&](std::size_t i) {
        const auto [img, upscaled] = ensure_min_side(read_image(paths[i]));
        std::vector<FeatureRecord> recs;
        for (const auto& o : tile(img).origins) {
          const GrayImage t = crop(img, o, kTileSize, kTileSize);
          recs.push_back({tile_key(t), cfg.extractor->extract(t, cfg.fr.layers)});
        }
        return recs;
      });
  std::vector<FeatureRecord> records;
  std::set<std::string> seen;
  for (const auto& recs : per_image) {
    for (const auto& r : recs) {
      if (seen.insert(r.image_id).second) records.push_back(r);
    }
  }
  ensure_parent(a.out);
  write_feature_file(a.out, records);
  emit(out, {{"command", "features export"},
             {"out", a.out},
             {"images", paths.size()},
             {"records", records.size()},
             {"layers", cfg.fr.layers.to_string()},
             {"extractor", cfg.extractor->identity()},
             {"config_hash", cfg.config_hash}});
  return kExitOk;
}

struct PhantomArgs {
  std::string organ = "thyroid";
  std::size_t height = 224;
  std::size_t width = 224;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  if (a.height == 0 || a.width == 0) fail(ErrorKind::Range, "phantom size must be positive");
  const GrayImage img = make_phantom(a.height, a.width, a.seed, phantom_style(a.organ));
  ensure_parent(a.out);
  write_png(img, a.out);
  emit(out, {{"command", "phantom"},
             {"out", a.out},
             {"organ", a.organ},
             {"seed", a.seed},
             {"height", a.height},
             {"width", a.width}});
  return kExitOk;
}

const char* kExitCodeHelp =
    "Exit codes: 0 ok, 2 I/O, 3 shape/config/unknown name, 4 insufficient data,\n"
    "5 unreachable PSNR target, 6 schema/corrupt artifact, 70 internal error.";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-space quality assessment for ultrasound images.", "usqm"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", USQM_VERSION);

  Settings s;
  app.add_option("--config", s.config_file, "JSON config file; explicit flags take precedence");
  app.add_flag("--print-config", s.print_config, "Print the resolved config and its hash, then exit");
  app.add_option("--extractor", s.extractor,
                 "builtin-seeded[:SEED] or external:FEATURES_FILE (default seed from USQM_SEED)");
  app.add_option("--layers", s.layers, "Encoder layers, comma separated");
  app.add_option("--radius", s.radius, "Neighborhood radius in tokens");
  app.add_option("--temperature", s.temperature, "Similarity softmax temperature");
  app.add_option("--worst-fraction", s.worst_fraction, "Fraction of worst patches averaged by NRQ");
  app.add_option("--fingerprint-policy", s.fingerprint_policy,
                 "On bank/extractor mismatch: error or warn");
  app.add_option("--jobs,-j", s.jobs, "Images processed concurrently");
  app.add_flag("--verbose,-v", s.verbose, "More diagnostics (repeatable)");
  app.add_flag("--quiet,-q", s.quiet, "Only errors");

  std::function<int(const Resolved&)> action;

  PairPaths fr;
  auto* fr_cmd = app.add_subcommand("fr-score", "Full-reference distance between two images");
  fr_cmd->add_option("reference", fr.first)->required();
  fr_cmd->add_option("test", fr.second)->required();
  fr_cmd->callback([&] { action = [&](const Resolved& c) { return cmd_fr_score(fr, c, out); }; });

  PairPaths tl;
  auto* tl_cmd = app.add_subcommand("token-loss", "Token perceptual loss value");
  tl_cmd->add_option("reconstruction", tl.first)->required();
  tl_cmd->add_option("target", tl.second)->required();
  tl_cmd->callback([&] { action = [&](const Resolved& c) { return cmd_token_loss(tl, c, out); }; });

  auto* nrq = app.add_subcommand("nrq", "No-reference quality: fit a bank or score images");
  nrq->require_subcommand(1);
  NrqFitArgs nf;
  auto* nrq_fit = nrq->add_subcommand("fit", "Fit an organ model bank from clean images");
  nrq_fit->add_option("--manifest", nf.manifest, "JSON lines {path, organ}")->required();
  nrq_fit->add_option("--out", nf.out, "Bank file to write")->required();
  nrq_fit->add_option("--pca-dim", nf.pca_dim, "PCA dimension");
  nrq_fit->add_option("--components", nf.components, "GMM components per organ");
  nrq_fit->add_option("--seed", nf.seed, "EM initialization seed");
  nrq_fit->callback([&] { action = [&](const Resolved& c) { return cmd_nrq_fit(nf, c, out); }; });
  NrqScoreArgs ns;
  auto* nrq_score_cmd = nrq->add_subcommand("score", "Score images (JSON line per image)");
  nrq_score_cmd->add_option("--bank", ns.bank)->required();
  nrq_score_cmd->add_option("--organ", ns.organ, "Organ-aware scoring; default is the uniform mixture");
  nrq_score_cmd->add_option("inputs", ns.inputs, "Images or directories")->required();
  nrq_score_cmd->callback(
      [&] { action = [&](const Resolved& c) { return cmd_nrq_score(ns, c, out); }; });

  DegradeArgs dg;
  auto* dg_cmd = app.add_subcommand("degrade", "Apply one distortion at a theta or a PSNR target");
  dg_cmd->add_option("input", dg.input)->required();
  dg_cmd->add_option("--kind", dg.kind)->required();
  auto* target_opt = dg_cmd->add_option("--target-psnr", dg.target_psnr, "Target PSNR in dB");
  auto* theta_opt = dg_cmd->add_option("--theta", dg.theta, "Severity");
  target_opt->excludes(theta_opt);
  dg_cmd->add_option("--tolerance", dg.tolerance, "PSNR tolerance in dB");
  dg_cmd->add_option("--seed", dg.seed);
  dg_cmd->add_option("--out", dg.out)->required();
  dg_cmd->add_option("--manifest", dg.manifest, "Degradation manifest to update");
  dg_cmd->callback([&] {
    if (!dg.target_psnr && !dg.theta) {
      throw CLI::ValidationError("degrade", "one of --target-psnr or --theta is required");
    }
    action = [&](const Resolved&) { return cmd_degrade(dg, out); };
  });

  SuiteArgs su;
  auto* su_cmd = app.add_subcommand("degrade-suite", "PSNR-matched variants for many kinds and targets");
  su_cmd->add_option("inputs", su.inputs)->required();
  su_cmd->add_option("--kinds", su.kinds, "Comma separated kinds or 'all'");
  su_cmd->add_option("--targets", su.targets, "Comma separated PSNR targets in dB");
  su_cmd->add_option("--tolerance", su.tolerance);
  su_cmd->add_option("--seed", su.seed);
  su_cmd->add_option("--out-dir", su.out_dir)->required();
  su_cmd->add_option("--manifest", su.manifest, "Degradation manifest to update");
  su_cmd->add_flag("--skip-unreachable", su.skip_unreachable, "Warn instead of failing");
  su_cmd->callback(
      [&] { action = [&](const Resolved& c) { return cmd_degrade_suite(su, c, out); }; });

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Evenly spaced severities of one kind");
  sw_cmd->add_option("input", sw.input)->required();
  sw_cmd->add_option("--kind", sw.kind)->required();
  sw_cmd->add_option("--steps", sw.steps);
  sw_cmd->add_option("--seed", sw.seed);
  sw_cmd->add_option("--out-dir", sw.out_dir)->required();
  sw_cmd->add_option("--manifest", sw.manifest);
  sw_cmd->callback([&] { action = [&](const Resolved&) { return cmd_sweep(sw, out); }; });

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Run an evaluation protocol and write its report");
  ev_cmd->add_option("protocol", ev.protocol,
                     "task-anchor | cross-organ | nr-monotonicity | afc-agreement")
      ->required();
  ev_cmd->add_option("inputs", ev.inputs)->required();
  ev_cmd->add_option("--out-dir", ev.out_dir);
  ev_cmd->add_option("--name", ev.name, "Report file stem (default: protocol name)");
  ev_cmd->callback([&] { action = [&](const Resolved&) { return cmd_eval(ev, out); }; });

  auto* study = app.add_subcommand("study", "Two-alternative forced choice study");
  study->require_subcommand(1);
  PairgenArgs pg;
  auto* pg_cmd = study->add_subcommand("pairgen", "Build the blinded pair manifest");
  pg_cmd->add_option("--degradations", pg.degradations)->required();
  pg_cmd->add_option("--pairs", pg.config.pairs, "Cross-degradation pairs");
  pg_cmd->add_option("--sanity-fraction", pg.config.sanity_fraction);
  pg_cmd->add_option("--duplicates", pg.config.duplicates);
  pg_cmd->add_option("--seed", pg.config.seed);
  pg_cmd->add_option("--tolerance", pg.config.psnr_tolerance, "PSNR match tolerance in dB");
  pg_cmd->add_option("--sanity-min-gap", pg.config.sanity_min_gap, "dB");
  pg_cmd->add_option("--out", pg.out)->required();
  pg_cmd->callback([&] { action = [&](const Resolved&) { return cmd_pairgen(pg, out); }; });
  ServeArgs sv;
  auto* sv_cmd = study->add_subcommand("serve", "Serve the study API and UI");
  sv_cmd->add_option("--pairs", sv.pairs)->required();
  sv_cmd->add_option("--responses", sv.responses)->required();
  sv_cmd->add_option("--host", sv.host);
  sv_cmd->add_option("--port", sv.port);
  sv_cmd->add_option("--static", sv.static_dir, "Built UI assets mounted at /");
  sv_cmd->add_option("--token-secret", sv.token_secret, "Fixes the image tokens (testing)");
  sv_cmd->callback([&] { action = [&](const Resolved&) { return cmd_serve(sv, err); }; });
  AnalyzeArgs an;
  auto* an_cmd = study->add_subcommand("analyze", "Agreement of NRQ with reader choices");
  an_cmd->add_option("--responses", an.responses)->required();
  an_cmd->add_option("--pairs", an.pairs)->required();
  an_cmd->add_option("--nrq-scores", an.nrq_scores, "Output of `nrq score`")->required();
  an_cmd->add_option("--out-dir", an.out_dir);
  an_cmd->add_option("--name", an.name);
  an_cmd->callback([&] { action = [&](const Resolved&) { return cmd_analyze(an, out); }; });

  auto* features = app.add_subcommand("features", "External feature files");
  features->require_subcommand(1);
  ExportArgs ex;
  auto* ex_cmd = features->add_subcommand("export", "Write tile tokens for later external use");
  ex_cmd->add_option("inputs", ex.inputs)->required();
  ex_cmd->add_option("--out", ex.out)->required();
  ex_cmd->callback(
      [&] { action = [&](const Resolved& c) { return cmd_features_export(ex, c, out); }; });

  PhantomArgs ph;
  auto* ph_cmd = app.add_subcommand("phantom", "Write a synthetic speckle phantom");
  ph_cmd->add_option("--organ", ph.organ, "thyroid | kidney | liver | breast");
  ph_cmd->add_option("--height", ph.height);
  ph_cmd->add_option("--width", ph.width);
  ph_cmd->add_option("--seed", ph.seed);
  ph_cmd->add_option("--out", ph.out)->required();
  ph_cmd->callback([&] { action = [&](const Resolved&) { return cmd_phantom(ph, out); }; });

  for (auto* sub : {fr_cmd, tl_cmd, nrq, nrq_fit, nrq_score_cmd, dg_cmd, su_cmd, sw_cmd, ev_cmd,
                    study, pg_cmd, sv_cmd, an_cmd, features, ex_cmd, ph_cmd}) {
    sub->fallthrough();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  const bool wants_config = std::find(args.begin(), args.end(), "--print-config") != args.end();
  if (wants_config) app.require_subcommand(0, 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    set_log_level(s.quiet ? LogLevel::Quiet
                          : s.verbose >= 2 ? LogLevel::Debug
                          : s.verbose == 1 ? LogLevel::Info
                                           : LogLevel::Warn);
    const Resolved cfg = resolve(s, app);
    if (s.print_config) {
      emit(out, {{"config", cfg.config}, {"config_hash", cfg.config_hash}});
      return kExitOk;
    }
    return action(cfg);
  } catch (const ExitError& e) {
    err << "usqm: error: " << e.what() << '\n';
    return e.code;
  } catch (const Error& e) {
    err << "usqm: error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "usqm: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace usqm::cli
