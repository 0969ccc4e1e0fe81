#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usqm/bank_store.hpp"
#include "usqm/evalstats.hpp"

namespace usqm {

enum class PairClass { CrossDegradation, Sanity, Duplicate };
const char* to_string(PairClass c);
PairClass parse_pair_class(const std::string& s);

/// One 2AFC trial. `swapped` decides presentation: left shows `a` unless swapped.
struct PairRecord {
  std::string pair_id;
  PairClass pair_class = PairClass::CrossDegradation;
  DegradationRecord a;
  DegradationRecord b;
  bool swapped = false;
  std::string duplicate_of;  // only for duplicates

  const DegradationRecord& left() const noexcept { return swapped ? b : a; }
  const DegradationRecord& right() const noexcept { return swapped ? a : b; }
};

struct PairGenConfig {
  std::size_t pairs = 540;          // cross-degradation pairs
  double sanity_fraction = 0.0;     // sanity pairs = round(fraction * pairs)
  std::size_t duplicates = 1;       // repeats of earlier cross pairs
  std::uint64_t seed = 0;
  double psnr_tolerance = 0.1;      // dB, for "matched" PSNR
  double sanity_min_gap = 1.0;      // dB between the two sanity variants
};

struct PairManifest {
  PairGenConfig config;
  std::string allocation = "every-reader-every-pair";
  std::vector<PairRecord> pairs;  // presentation order
  std::map<std::string, std::size_t> kind_pair_counts;  // "kindA|kindB" over cross pairs

  const PairRecord* find(const std::string& pair_id) const;
};

/// Throws InsufficientData (with per-kind counts) when the manifest cannot
/// supply the requested number of matched pairs.
PairManifest pairgen(const std::vector<DegradationRecord>& degradations,
                     const PairGenConfig& config);

std::string pair_manifest_to_json(const PairManifest& manifest);
PairManifest pair_manifest_from_json(const std::string& text, const std::string& origin);
void write_pair_manifest(const std::string& path, const PairManifest& manifest);
PairManifest read_pair_manifest(const std::string& path);

/// One line of the append-only response log.
struct ResponseRecord {
  std::string pair_id;
  std::string reader;
  std::string choice;  // "A" (left) or "B" (right), as presented
  std::int64_t unix_ms = 0;
};
std::string response_to_json_line(const ResponseRecord& r);
/// A malformed final line (interrupted write) is skipped with a warning;
/// malformed lines elsewhere are schema errors.
std::vector<ResponseRecord> read_responses(const std::string& path);

/// NRQ scores keyed by image path, read from `usqm nrq score` JSON lines
/// ({"path": ..., "score": ...}).
std::map<std::string, double> read_nrq_scores(const std::string& path);

struct AgreementReport {
  std::size_t cross_trials = 0;     // cross responses with a usable NRQ prediction
  std::size_t cross_agree = 0;
  std::size_t nrq_ties = 0;         // excluded from the denominator
  double accuracy = 0.0;
  Interval ci;
  double p_value = 1.0;
  std::size_t sanity_trials = 0;
  std::size_t sanity_correct = 0;
  double sanity_accuracy = 0.0;
  std::size_t duplicate_checks = 0;
  std::size_t duplicate_consistent = 0;
  double consistency = 1.0;
  bool consistency_flag = false;  // some duplicate answered inconsistently
};

/// Responses must all map to manifest pairs (Schema error otherwise).
AgreementReport analyze(const std::vector<ResponseRecord>& responses,
                        const PairManifest& manifest,
                        const std::map<std::string, double>& nrq_scores);

}  // namespace usqm
