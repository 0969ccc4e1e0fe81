#include "usqm/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "json_records.hpp"
#include "usqm/errors.hpp"
#include "usqm/hashing.hpp"
#include "usqm/log.hpp"
#include "usqm/random.hpp"

namespace usqm {

using nlohmann::json;

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::string pair_key(const std::string& a, const std::string& b) {
  return a < b ? a + "|" + b : b + "|" + a;
}

std::string canonical_path(const std::string& p) {
  std::error_code ec;
  auto c = std::filesystem::weakly_canonical(p, ec);
  return ec ? p : c.string();
}

}  // namespace

const char* to_string(PairClass c) {
  switch (c) {
    case PairClass::CrossDegradation: return "cross-degradation";
    case PairClass::Sanity: return "sanity-same-degradation-diff-psnr";
    case PairClass::Duplicate: return "duplicate";
  }
  return "unknown";
}

PairClass parse_pair_class(const std::string& s) {
  for (auto c : {PairClass::CrossDegradation, PairClass::Sanity, PairClass::Duplicate}) {
    if (s == to_string(c)) return c;
  }
  fail(ErrorKind::Schema, "unknown pair class '" + s + "'");
}

const PairRecord* PairManifest::find(const std::string& pair_id) const {
  for (const auto& p : pairs) {
    if (p.pair_id == pair_id) return &p;
  }
  return nullptr;
}

PairManifest pairgen(const std::vector<DegradationRecord>& degradations,
                     const PairGenConfig& config) {
  if (config.psnr_tolerance <= 0.0) fail(ErrorKind::Range, "pairgen: tolerance must be > 0");
  if (config.sanity_fraction < 0.0 || config.sanity_fraction > 1.0) {
    fail(ErrorKind::Range, "pairgen: sanity fraction outside [0, 1]");
  }
  // Group by source, preserving manifest order.
  std::vector<std::string> sources;
  std::map<std::string, std::vector<std::size_t>> by_source;
  std::map<std::string, std::size_t> per_kind;
  for (std::size_t i = 0; i < degradations.size(); ++i) {
    const auto& r = degradations[i];
    if (!by_source.contains(r.source)) sources.push_back(r.source);
    by_source[r.source].push_back(i);
    ++per_kind[r.kind];
  }

  using Candidate = std::pair<std::size_t, std::size_t>;
  std::vector<Candidate> cross, sanity;
  std::map<std::string, std::size_t> available;
  for (const auto& s : sources) {
    const auto& idx = by_source[s];
    for (std::size_t x = 0; x < idx.size(); ++x) {
      for (std::size_t y = x + 1; y < idx.size(); ++y) {
        const auto& a = degradations[idx[x]];
        const auto& b = degradations[idx[y]];
        if (!std::isfinite(a.achieved_psnr) || !std::isfinite(b.achieved_psnr)) continue;
        const double gap = std::abs(a.achieved_psnr - b.achieved_psnr);
        if (a.kind != b.kind && gap <= config.psnr_tolerance) {
          cross.emplace_back(idx[x], idx[y]);
          ++available[pair_key(a.kind, b.kind)];
        } else if (a.kind == b.kind && gap >= config.sanity_min_gap) {
          sanity.emplace_back(idx[x], idx[y]);
        }
      }
    }
  }

  const auto n_sanity =
      static_cast<std::size_t>(std::floor(config.sanity_fraction * config.pairs + 0.5));
  if (cross.size() < config.pairs || sanity.size() < n_sanity ||
      config.duplicates > config.pairs) {
    std::ostringstream os;
    os << "pairgen: requested " << config.pairs << " cross pairs, " << n_sanity
       << " sanity pairs and " << config.duplicates << " duplicates; available "
       << cross.size() << " cross and " << sanity.size() << " sanity. Records per kind:";
    for (const auto& [k, n] : per_kind) os << " " << k << "=" << n;
    os << ". Matched pairs per kind pair:";
    for (const auto& [k, n] : available) os << " " << k << "=" << n;
    fail(ErrorKind::InsufficientData, os.str());
  }

  Rng rng(derive_seed(config.seed, 0x2afc));
  shuffle(cross, rng);
  shuffle(sanity, rng);
  cross.resize(config.pairs);
  sanity.resize(n_sanity);

  PairManifest m;
  m.config = config;
  std::vector<PairRecord> trials;
  for (const auto& [i, j] : cross) {
    PairRecord p;
    p.pair_class = PairClass::CrossDegradation;
    p.a = degradations[i];
    p.b = degradations[j];
    ++m.kind_pair_counts[pair_key(p.a.kind, p.b.kind)];
    trials.push_back(std::move(p));
  }
  for (const auto& [i, j] : sanity) {
    PairRecord p;
    p.pair_class = PairClass::Sanity;
    p.a = degradations[i];
    p.b = degradations[j];
    trials.push_back(std::move(p));
  }
  shuffle(trials, rng);
  for (std::size_t i = 0; i < trials.size(); ++i) trials[i].pair_id = std::to_string(i);

  // Duplicates repeat distinct cross pairs somewhere after their original.
  std::vector<std::size_t> cross_positions;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].pair_class == PairClass::CrossDegradation) cross_positions.push_back(i);
  }
  shuffle(cross_positions, rng);
  cross_positions.resize(config.duplicates);
  for (const std::size_t src : cross_positions) {
    PairRecord dup = trials[src];
    dup.pair_class = PairClass::Duplicate;
    dup.duplicate_of = dup.pair_id;
    dup.pair_id.clear();
    std::size_t orig = 0;
    while (trials[orig].pair_id != dup.duplicate_of) ++orig;
    const std::size_t pos = orig + 1 + rng.below(trials.size() - orig);
    trials.insert(trials.begin() + static_cast<std::ptrdiff_t>(pos), std::move(dup));
  }
  // Public ids follow presentation order so they reveal nothing about the class.
  std::map<std::string, std::string> renamed;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "p%04zu", i + 1);
    if (!trials[i].pair_id.empty()) renamed[trials[i].pair_id] = id;
    trials[i].pair_id = id;
  }
  for (auto& p : trials) {
    if (!p.duplicate_of.empty()) p.duplicate_of = renamed.at(p.duplicate_of);
  }
  // Presentation order is drawn last and independently of pair content.
  Rng order_rng(derive_seed(config.seed, 0x51de));
  for (auto& p : trials) p.swapped = order_rng.uniform() < 0.5;
  m.pairs = std::move(trials);
  return m;
}

std::string pair_manifest_to_json(const PairManifest& m) {
  json pairs = json::array();
  for (const auto& p : m.pairs) {
    json j{{"pair_id", p.pair_id},
           {"class", to_string(p.pair_class)},
           {"a", detail::degradation_to_json(p.a)},
           {"b", detail::degradation_to_json(p.b)},
           {"swapped", p.swapped}};
    if (!p.duplicate_of.empty()) j["duplicate_of"] = p.duplicate_of;
    pairs.push_back(std::move(j));
  }
  json cfg{{"pairs", m.config.pairs},
           {"sanity_fraction", m.config.sanity_fraction},
           {"duplicates", m.config.duplicates},
           {"seed", m.config.seed},
           {"psnr_tolerance", m.config.psnr_tolerance},
           {"sanity_min_gap", m.config.sanity_min_gap}};
  json out{{"format", "usqm-pairs/1"},
           {"config", cfg},
           {"allocation", m.allocation},
           {"kind_pair_counts", m.kind_pair_counts},
           {"pairs", pairs}};
  return out.dump(2) + "\n";
}

PairManifest pair_manifest_from_json(const std::string& text, const std::string& origin) {
  PairManifest m;
  try {
    const json j = json::parse(text);
    if (j.value("format", std::string()) != "usqm-pairs/1") {
      fail(ErrorKind::Schema, origin + ": not a usqm-pairs/1 manifest");
    }
    const auto& c = j.at("config");
    m.config.pairs = c.at("pairs").get<std::size_t>();
    m.config.sanity_fraction = c.at("sanity_fraction").get<double>();
    m.config.duplicates = c.at("duplicates").get<std::size_t>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.psnr_tolerance = c.at("psnr_tolerance").get<double>();
    m.config.sanity_min_gap = c.at("sanity_min_gap").get<double>();
    m.allocation = j.at("allocation").get<std::string>();
    m.kind_pair_counts = j.at("kind_pair_counts").get<std::map<std::string, std::size_t>>();
    for (const auto& p : j.at("pairs")) {
      PairRecord r;
      r.pair_id = p.at("pair_id").get<std::string>();
      r.pair_class = parse_pair_class(p.at("class").get<std::string>());
      r.a = detail::degradation_from_json(p.at("a"));
      r.b = detail::degradation_from_json(p.at("b"));
      r.swapped = p.at("swapped").get<bool>();
      r.duplicate_of = p.value("duplicate_of", std::string());
      m.pairs.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, origin + ": " + e.what());
  }
  return m;
}

void write_pair_manifest(const std::string& path, const PairManifest& manifest) {
  atomic_write(path, pair_manifest_to_json(manifest));
}

PairManifest read_pair_manifest(const std::string& path) {
  const auto bytes = read_file(path);
  return pair_manifest_from_json(std::string(bytes.begin(), bytes.end()), path);
}

std::string response_to_json_line(const ResponseRecord& r) {
  return json{{"pair_id", r.pair_id}, {"reader", r.reader}, {"choice", r.choice},
              {"unix_ms", r.unix_ms}}
             .dump() +
         "\n";
}

std::vector<ResponseRecord> read_responses(const std::string& path) {
  std::vector<ResponseRecord> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const json j = json::parse(lines[i]);
      ResponseRecord r{j.at("pair_id").get<std::string>(), j.at("reader").get<std::string>(),
                       j.at("choice").get<std::string>(), j.at("unix_ms").get<std::int64_t>()};
      if (r.choice != "A" && r.choice != "B") throw std::runtime_error("choice must be A or B");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) {
        log_warn(path + ": ignoring incomplete final line");
        break;
      }
      fail(ErrorKind::Schema, path + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, double> read_nrq_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::map<std::string, double> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out[canonical_path(j.at("path").get<std::string>())] = j.at("score").get<double>();
    } catch (const std::exception& e) {
      fail(ErrorKind::Schema, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

AgreementReport analyze(const std::vector<ResponseRecord>& responses,
                        const PairManifest& manifest,
                        const std::map<std::string, double>& nrq_scores) {
  std::map<std::string, double> scores;
  for (const auto& [p, s] : nrq_scores) scores[canonical_path(p)] = s;
  auto score_of = [&](const DegradationRecord& r) {
    const auto it = scores.find(canonical_path(r.output_path));
    if (it == scores.end()) {
      fail(ErrorKind::Schema, "no NRQ score for image " + r.output_path);
    }
    return it->second;
  };
  auto chosen = [](const PairRecord& p, const ResponseRecord& r) -> const DegradationRecord& {
    return r.choice == "A" ? p.left() : p.right();
  };

  AgreementReport rep;
  // (reader, pair_id) -> chosen image path, for duplicate consistency.
  std::map<std::pair<std::string, std::string>, std::string> picks;
  for (const auto& r : responses) {
    const PairRecord* p = manifest.find(r.pair_id);
    if (!p) fail(ErrorKind::Schema, "response for unknown pair '" + r.pair_id + "'");
    if (r.choice != "A" && r.choice != "B") {
      fail(ErrorKind::Schema, "response for '" + r.pair_id + "' has invalid choice");
    }
    const auto& pick = chosen(*p, r);
    picks[{r.reader, r.pair_id}] = pick.output_path;
    switch (p->pair_class) {
      case PairClass::CrossDegradation: {
        const double sa = score_of(p->a);
        const double sb = score_of(p->b);
        if (sa == sb) {
          ++rep.nrq_ties;
          break;
        }
        const auto& predicted = sa > sb ? p->a : p->b;
        ++rep.cross_trials;
        if (predicted.output_path == pick.output_path) ++rep.cross_agree;
        break;
      }
      case PairClass::Sanity: {
        const auto& better = p->a.achieved_psnr > p->b.achieved_psnr ? p->a : p->b;
        ++rep.sanity_trials;
        if (better.output_path == pick.output_path) ++rep.sanity_correct;
        break;
      }
      case PairClass::Duplicate:
        break;
    }
  }
  for (const auto& r : responses) {
    const PairRecord* p = manifest.find(r.pair_id);
    if (p->pair_class != PairClass::Duplicate) continue;
    const auto orig = picks.find({r.reader, p->duplicate_of});
    if (orig == picks.end()) continue;
    ++rep.duplicate_checks;
    if (orig->second == chosen(*p, r).output_path) ++rep.duplicate_consistent;
  }
  if (rep.cross_trials > 0) {
    rep.accuracy = static_cast<double>(rep.cross_agree) / static_cast<double>(rep.cross_trials);
    rep.ci = wilson_ci(rep.cross_agree, rep.cross_trials, 0.95);
    rep.p_value = binomial_test_two_sided(rep.cross_agree, rep.cross_trials, 0.5);
  }
  if (rep.sanity_trials > 0) {
    rep.sanity_accuracy =
        static_cast<double>(rep.sanity_correct) / static_cast<double>(rep.sanity_trials);
  }
  if (rep.duplicate_checks > 0) {
    rep.consistency = static_cast<double>(rep.duplicate_consistent) /
                      static_cast<double>(rep.duplicate_checks);
  }
  rep.consistency_flag = rep.duplicate_consistent < rep.duplicate_checks;
  return rep;
}

}  // namespace usqm
