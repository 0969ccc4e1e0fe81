#pragma once

#include <map>
#include <string>
#include <vector>

namespace usqm {

enum class ProtocolKind { TaskAnchor, CrossOrgan, NrMonotonicity, AfcAgreement };
const char* to_string(ProtocolKind k);
ProtocolKind parse_protocol(const std::string& s);

// Input rows. CSV files carry a header line naming these columns (any order).

/// image_id, distortion, theta, metric_value, anchor_damage
struct AnchorRow {
  std::string image_id;
  std::string distortion;
  double theta = 0.0;
  double metric_value = 0.0;
  double anchor_damage = 0.0;
};

/// image_id, organ, distortion, theta, metric_value
struct OrganMetricRow {
  std::string image_id;
  std::string organ;
  std::string distortion;
  double theta = 0.0;
  double metric_value = 0.0;
};

/// image_id, organ, distortion, severity_rank, nrq
struct NrScoreRow {
  std::string image_id;
  std::string organ;
  std::string distortion;
  double severity_rank = 0.0;
  double nrq = 0.0;
};

std::vector<AnchorRow> read_anchor_csv(const std::string& path);
std::vector<OrganMetricRow> read_organ_metric_csv(const std::string& path);
std::vector<NrScoreRow> read_nr_score_csv(const std::string& path);

struct ConditionStats {
  std::string name;
  std::size_t n = 0;
  std::map<std::string, double> values;
};

struct InputProvenance {
  std::string role;
  std::string path;
  std::string hash;
};

struct ProtocolReport {
  ProtocolKind kind = ProtocolKind::TaskAnchor;
  std::vector<ConditionStats> conditions;
  std::map<std::string, double> aggregate;
  std::vector<InputProvenance> inputs;
  std::string quantile_method = "inclusive-linear (type 7)";
  std::string config_hash;

  std::string to_json() const;
  std::string to_markdown() const;
};

// Drivers over in-memory rows; `anchor_names[i]` labels `anchors[i]`.
ProtocolReport task_anchor(const std::vector<std::string>& anchor_names,
                           const std::vector<std::vector<AnchorRow>>& anchors);
ProtocolReport cross_organ(const std::vector<OrganMetricRow>& rows);
ProtocolReport nr_monotonicity(const std::vector<NrScoreRow>& rows);

/// File-level entry point.
///   task-anchor:     one CSV per anchor (anchor name = file stem)
///   cross-organ:     one or more CSVs, concatenated
///   nr-monotonicity: one or more CSVs, concatenated
///   afc-agreement:   responses.jsonl, pairs.json, nrq-scores.jsonl
/// Schema violations raise Schema errors naming file and line.
ProtocolReport run_protocol(ProtocolKind kind, const std::vector<std::string>& inputs);

}  // namespace usqm
