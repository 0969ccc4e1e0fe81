#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "usqm/features.hpp"
#include "usqm/nr_metric.hpp"

namespace usqm {

// Bank file layout (all integers and floats little-endian):
//   "USQMBANK" | u32 header length | JSON header | float32 blocks
// The header lists every block (name, element count) in file order:
//   pca.mean[D], pca.components[d*D], pca.variances[d], then per organ in
//   header order: <organ>.weights[K], <organ>.means[K*d], <organ>.variances[K*d].
inline constexpr const char* kBankMagic = "USQMBANK";

struct ArtifactHeader {
  std::string magic;
  std::string version;
  std::int64_t created = 0;
  std::string config_hash;
  std::string fingerprint;
};

std::vector<unsigned char> encode_bank(const OrganModelBank& bank);
/// Validates bank invariants after decoding. `origin` names the source in errors.
OrganModelBank decode_bank(std::span<const unsigned char> bytes,
                           const std::string& origin = "<memory>");
ArtifactHeader read_bank_header(const std::string& path);

void save_bank(const OrganModelBank& bank, const std::string& path);
OrganModelBank load_bank(const std::string& path);

// External feature file: "USQF1" then, per image until EOF:
//   u32 id length | id bytes | u16 layer count |
//   per layer: u16 layer index | u32 T | u32 C | T*C float32 (row-major)
inline constexpr const char* kFeatureMagic = "USQF1";

struct FeatureRecord {
  std::string image_id;
  TokenFeatures features;
};

std::vector<unsigned char> encode_feature_records(std::span<const FeatureRecord> records);
std::vector<FeatureRecord> decode_feature_records(std::span<const unsigned char> bytes,
                                                  const std::string& origin = "<memory>");
void write_feature_file(const std::string& path, std::span<const FeatureRecord> records);
std::vector<FeatureRecord> read_feature_file(const std::string& path);

/// One line of a fitting manifest: {"path": ..., "organ": ...}.
struct FitManifestEntry {
  std::string path;
  std::string organ;
};
std::vector<FitManifestEntry> read_fit_manifest(const std::string& path);
void write_fit_manifest(const std::string& path, std::span<const FitManifestEntry> entries);

/// One entry of degradations.json.
struct DegradationRecord {
  std::string source;
  std::string kind;
  double theta = 0.0;
  std::uint64_t seed = 0;
  double achieved_psnr = 0.0;  // +inf encoded as the string "inf"
  std::string output_path;

  friend bool operator==(const DegradationRecord&, const DegradationRecord&) = default;
};
/// Single-line JSON object, the same shape as a manifest entry.
std::string to_json(const DegradationRecord& record);
std::vector<DegradationRecord> read_degradation_manifest(const std::string& path);
void write_degradation_manifest(const std::string& path,
                                std::span<const DegradationRecord> records);

/// Writes to a sibling temp file then renames over the destination.
void atomic_write(const std::string& path, std::span<const unsigned char> bytes);
void atomic_write(const std::string& path, const std::string& text);
std::vector<unsigned char> read_file(const std::string& path);

}  // namespace usqm
