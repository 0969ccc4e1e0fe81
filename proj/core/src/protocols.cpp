#include "usqm/protocols.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>

#include "usqm/errors.hpp"
#include "usqm/evalstats.hpp"
#include "usqm/hashing.hpp"
#include "usqm/study.hpp"

namespace usqm {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Header-indexed CSV reader; each row is handed to `fn(field)` accessors.
class CsvTable {
 public:
  CsvTable(const std::string& path, const std::vector<std::string>& required) : path_(path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto fields = split_csv(line);
      if (!have_header) {
        for (std::size_t i = 0; i < fields.size(); ++i) columns_[fields[i]] = i;
        for (const auto& r : required) {
          if (!columns_.contains(r)) {
            fail(ErrorKind::Schema,
                 path + ":" + std::to_string(lineno) + ": missing column '" + r + "'");
          }
        }
        width_ = fields.size();
        have_header = true;
        continue;
      }
      if (fields.size() != width_) {
        fail(ErrorKind::Schema, path + ":" + std::to_string(lineno) + ": expected " +
                                    std::to_string(width_) + " fields, found " +
                                    std::to_string(fields.size()));
      }
      rows_.push_back(std::move(fields));
      lines_.push_back(lineno);
    }
    if (!have_header) fail(ErrorKind::Schema, path + ": empty file (no header)");
  }

  std::size_t size() const { return rows_.size(); }

  const std::string& text(std::size_t row, const std::string& col) const {
    const auto& v = rows_[row][columns_.at(col)];
    if (v.empty()) bad(row, col, "empty value");
    return v;
  }

  double number(std::size_t row, const std::string& col) const {
    const auto& v = text(row, col);
    double out = 0.0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
      bad(row, col, "not a finite number: '" + v + "'");
    }
    return out;
  }

 private:
  [[noreturn]] void bad(std::size_t row, const std::string& col, const std::string& why) const {
    fail(ErrorKind::Schema,
         path_ + ":" + std::to_string(lines_[row]) + ": column '" + col + "': " + why);
  }

  std::string path_;
  std::map<std::string, std::size_t> columns_;
  std::size_t width_ = 0;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Runs `fn`, prefixing statistic errors with the condition name.
template <typename F>
auto in_condition(const std::string& name, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "condition '" + name + "': " + e.what());
  }
}

std::string config_hash(ProtocolKind kind, const std::vector<InputProvenance>& inputs) {
  Fnv1a h;
  h.update(std::string_view(to_string(kind)));
  for (const auto& in : inputs) {
    h.update(std::string_view(in.role)).update(std::string_view(in.hash));
  }
  return h.hex();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

const char* to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::TaskAnchor: return "task-anchor";
    case ProtocolKind::CrossOrgan: return "cross-organ";
    case ProtocolKind::NrMonotonicity: return "nr-monotonicity";
    case ProtocolKind::AfcAgreement: return "afc-agreement";
  }
  return "unknown";
}

ProtocolKind parse_protocol(const std::string& s) {
  for (auto k : {ProtocolKind::TaskAnchor, ProtocolKind::CrossOrgan,
                 ProtocolKind::NrMonotonicity, ProtocolKind::AfcAgreement}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::Lookup, "unknown protocol '" + s +
                              "' (expected task-anchor, cross-organ, nr-monotonicity or "
                              "afc-agreement)");
}

std::vector<AnchorRow> read_anchor_csv(const std::string& path) {
  const CsvTable t(path, {"image_id", "distortion", "theta", "metric_value", "anchor_damage"});
  std::vector<AnchorRow> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = {t.text(i, "image_id"), t.text(i, "distortion"), t.number(i, "theta"),
              t.number(i, "metric_value"), t.number(i, "anchor_damage")};
  }
  return out;
}

std::vector<OrganMetricRow> read_organ_metric_csv(const std::string& path) {
  const CsvTable t(path, {"image_id", "organ", "distortion", "theta", "metric_value"});
  std::vector<OrganMetricRow> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = {t.text(i, "image_id"), t.text(i, "organ"), t.text(i, "distortion"),
              t.number(i, "theta"), t.number(i, "metric_value")};
  }
  return out;
}

std::vector<NrScoreRow> read_nr_score_csv(const std::string& path) {
  const CsvTable t(path, {"image_id", "organ", "distortion", "severity_rank", "nrq"});
  std::vector<NrScoreRow> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = {t.text(i, "image_id"), t.text(i, "organ"), t.text(i, "distortion"),
              t.number(i, "severity_rank"), t.number(i, "nrq")};
  }
  return out;
}

ProtocolReport task_anchor(const std::vector<std::string>& anchor_names,
                           const std::vector<std::vector<AnchorRow>>& anchors) {
  if (anchor_names.size() != anchors.size()) fail(ErrorKind::Shape, "anchor name count mismatch");
  if (anchors.empty()) fail(ErrorKind::InsufficientData, "task-anchor: no anchors");
  ProtocolReport rep;
  rep.kind = ProtocolKind::TaskAnchor;
  std::vector<double> rhos, taus;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    std::vector<double> metric, damage;
    for (const auto& r : anchors[a]) {
      metric.push_back(r.metric_value);
      damage.push_back(r.anchor_damage);
    }
    ConditionStats c{anchor_names[a], metric.size(), {}};
    c.values["spearman_rho"] = in_condition(c.name, [&] { return spearman(metric, damage); });
    c.values["kendall_tau"] = in_condition(c.name, [&] { return kendall_tau(metric, damage); });
    rhos.push_back(c.values["spearman_rho"]);
    taus.push_back(c.values["kendall_tau"]);
    rep.conditions.push_back(std::move(c));
  }
  rep.aggregate["mean_spearman_rho"] = mean(rhos);
  rep.aggregate["mean_kendall_tau"] = mean(taus);
  rep.aggregate["median_kendall_tau"] = quantile(taus, 0.5);
  return rep;
}

ProtocolReport cross_organ(const std::vector<OrganMetricRow>& rows) {
  // organ -> distortion -> values
  std::map<std::string, std::map<std::string, std::vector<double>>> cells;
  std::set<std::string> distortions;
  for (const auto& r : rows) {
    cells[r.organ][r.distortion].push_back(r.metric_value);
    distortions.insert(r.distortion);
  }
  if (cells.size() < 2) fail(ErrorKind::InsufficientData, "cross-organ: need at least 2 organs");
  if (distortions.size() < 2) {
    fail(ErrorKind::InsufficientData, "cross-organ: need at least 2 distortions");
  }
  std::vector<std::vector<double>> rankings;
  std::map<std::string, std::vector<double>> per_distortion;
  for (const auto& [organ, by_kind] : cells) {
    std::vector<double> judge;
    for (const auto& d : distortions) {
      const auto it = by_kind.find(d);
      if (it == by_kind.end()) {
        fail(ErrorKind::Schema, "cross-organ: organ '" + organ + "' has no rows for distortion '" +
                                    d + "'");
      }
      judge.push_back(mean(it->second));
      per_distortion[d].push_back(judge.back());
    }
    rankings.push_back(std::move(judge));
  }
  ProtocolReport rep;
  rep.kind = ProtocolKind::CrossOrgan;
  std::vector<double> iqrs;
  for (const auto& d : distortions) {
    const auto& v = per_distortion[d];
    ConditionStats c{d, v.size(), {}};
    c.values["iqr"] = iqr(v);
    c.values["median"] = quantile(v, 0.5);
    iqrs.push_back(c.values["iqr"]);
    rep.conditions.push_back(std::move(c));
  }
  rep.aggregate["kendall_w"] = in_condition("all organs", [&] { return kendall_w(rankings); });
  rep.aggregate["organs"] = static_cast<double>(cells.size());
  rep.aggregate["mean_iqr"] = mean(iqrs);
  return rep;
}

ProtocolReport nr_monotonicity(const std::vector<NrScoreRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.organ, r.distortion}];
    g.first.push_back(r.nrq);
    g.second.push_back(r.severity_rank);
  }
  if (groups.empty()) fail(ErrorKind::InsufficientData, "nr-monotonicity: no rows");
  ProtocolReport rep;
  rep.kind = ProtocolKind::NrMonotonicity;
  std::vector<double> rhos;
  for (const auto& [key, g] : groups) {
    ConditionStats c{key.first + "/" + key.second, g.first.size(), {}};
    const double rho = in_condition(c.name, [&] { return spearman(g.first, g.second); });
    c.values["spearman_rho"] = rho;
    c.values["agreement"] = -rho;
    rhos.push_back(rho);
    rep.conditions.push_back(std::move(c));
  }
  rep.aggregate["mean_spearman_rho"] = mean(rhos);
  rep.aggregate["mean_agreement"] = -mean(rhos);
  return rep;
}

ProtocolReport run_protocol(ProtocolKind kind, const std::vector<std::string>& inputs) {
  if (inputs.empty()) fail(ErrorKind::InsufficientData, "no input files");
  std::vector<InputProvenance> prov;
  auto note = [&](const std::string& role, const std::string& path) {
    prov.push_back({role, path, hash_file(path)});
  };
  ProtocolReport rep;
  switch (kind) {
    case ProtocolKind::TaskAnchor: {
      std::vector<std::string> names;
      std::vector<std::vector<AnchorRow>> anchors;
      for (const auto& p : inputs) {
        names.push_back(std::filesystem::path(p).stem().string());
        anchors.push_back(read_anchor_csv(p));
        note("anchor", p);
      }
      rep = task_anchor(names, anchors);
      break;
    }
    case ProtocolKind::CrossOrgan: {
      std::vector<OrganMetricRow> rows;
      for (const auto& p : inputs) {
        auto r = read_organ_metric_csv(p);
        rows.insert(rows.end(), r.begin(), r.end());
        note("metric-scores", p);
      }
      rep = cross_organ(rows);
      break;
    }
    case ProtocolKind::NrMonotonicity: {
      std::vector<NrScoreRow> rows;
      for (const auto& p : inputs) {
        auto r = read_nr_score_csv(p);
        rows.insert(rows.end(), r.begin(), r.end());
        note("nr-scores", p);
      }
      rep = nr_monotonicity(rows);
      break;
    }
    case ProtocolKind::AfcAgreement: {
      if (inputs.size() != 3) {
        fail(ErrorKind::Shape,
             "afc-agreement expects responses.jsonl, pairs.json and nrq-scores.jsonl");
      }
      const auto responses = read_responses(inputs[0]);
      const auto manifest = read_pair_manifest(inputs[1]);
      const auto scores = read_nrq_scores(inputs[2]);
      note("responses", inputs[0]);
      note("pair-manifest", inputs[1]);
      note("nrq-scores", inputs[2]);
      const auto a = analyze(responses, manifest, scores);
      rep.kind = ProtocolKind::AfcAgreement;
      ConditionStats cross{"cross-degradation", a.cross_trials, {}};
      cross.values["agree"] = static_cast<double>(a.cross_agree);
      cross.values["accuracy"] = a.accuracy;
      cross.values["wilson_lo"] = a.ci.lo;
      cross.values["wilson_hi"] = a.ci.hi;
      cross.values["binomial_p"] = a.p_value;
      cross.values["nrq_ties_excluded"] = static_cast<double>(a.nrq_ties);
      ConditionStats sanity{"sanity", a.sanity_trials, {}};
      sanity.values["correct"] = static_cast<double>(a.sanity_correct);
      sanity.values["accuracy"] = a.sanity_accuracy;
      ConditionStats dup{"duplicate", a.duplicate_checks, {}};
      dup.values["consistent"] = static_cast<double>(a.duplicate_consistent);
      dup.values["consistency"] = a.consistency;
      dup.values["flagged"] = a.consistency_flag ? 1.0 : 0.0;
      rep.conditions = {cross, sanity, dup};
      rep.aggregate["accuracy"] = a.accuracy;
      rep.aggregate["wilson_lo"] = a.ci.lo;
      rep.aggregate["wilson_hi"] = a.ci.hi;
      rep.aggregate["binomial_p"] = a.p_value;
      break;
    }
  }
  rep.inputs = std::move(prov);
  rep.config_hash = config_hash(kind, rep.inputs);
  return rep;
}

std::string ProtocolReport::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions) {
    conds.push_back({{"name", c.name}, {"n", c.n}, {"stats", c.values}});
  }
  json ins = json::array();
  for (const auto& i : inputs) ins.push_back({{"role", i.role}, {"path", i.path}, {"hash", i.hash}});
  json j{{"protocol", to_string(kind)},
         {"conditions", conds},
         {"aggregate", aggregate},
         {"provenance",
          {{"inputs", ins}, {"config_hash", config_hash}, {"quantile_method", quantile_method}}}};
  return j.dump(2) + "\n";
}

std::string ProtocolReport::to_markdown() const {
  std::set<std::string> keys;
  for (const auto& c : conditions) {
    for (const auto& [k, v] : c.values) keys.insert(k);
  }
  std::ostringstream os;
  os << "# " << to_string(kind) << "\n\n";
  os << "Config hash: `" << config_hash << "`. Quantiles: " << quantile_method << ".\n\n";
  os << "| condition | n |";
  for (const auto& k : keys) os << ' ' << k << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < keys.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& c : conditions) {
    os << "| " << c.name << " | " << c.n << " |";
    for (const auto& k : keys) {
      const auto it = c.values.find(k);
      os << ' ' << (it == c.values.end() ? std::string("") : fmt(it->second)) << " |";
    }
    os << '\n';
  }
  os << "\n| aggregate | value |\n|---|---|\n";
  for (const auto& [k, v] : aggregate) os << "| " << k << " | " << fmt(v) << " |\n";
  os << "\n## Inputs\n\n";
  for (const auto& i : inputs) os << "- " << i.role << ": `" << i.path << "` (" << i.hash << ")\n";
  return os.str();
}

}  // namespace usqm
