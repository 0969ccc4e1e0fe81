#include "usqm/bank_store.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "json_records.hpp"
#include "usqm/errors.hpp"

namespace usqm {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Little-endian byte writer / checked reader

class ByteWriter {
 public:
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      fail(ErrorKind::CorruptModel, origin_ + ": truncated while reading " + what + " (need " +
                                        std::to_string(n) + " bytes, have " +
                                        std::to_string(remaining()) + ")");
    }
  }
  std::string raw(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const std::string& what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(get(4, what)); }
  double f32(const std::string& what) {
    const auto bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }

 private:
  std::uint64_t get(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const unsigned char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

template <typename M>
void write_block(ByteWriter& w, const M& m) {
  // Row-major element order regardless of Eigen storage.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
  }
}

template <typename M>
void read_block(ByteReader& rd, M& m, const std::string& name) {
  rd.need(static_cast<std::size_t>(m.size()) * 4, "block '" + name + "'");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rd.f32(name);
  }
}

json header_json(const OrganModelBank& bank) {
  const auto d_in = bank.pca.input_dim();
  const auto d = bank.pca.output_dim();
  const auto k = bank.organs.begin()->second.components();
  json blocks = json::array();
  blocks.push_back({{"name", "pca.mean"}, {"count", d_in}});
  blocks.push_back({{"name", "pca.components"}, {"count", d * d_in}});
  blocks.push_back({{"name", "pca.variances"}, {"count", d}});
  json organs = json::array();
  for (const auto& [name, g] : bank.organs) {
    organs.push_back(name);
    blocks.push_back({{"name", name + ".weights"}, {"count", k}});
    blocks.push_back({{"name", name + ".means"}, {"count", k * d}});
    blocks.push_back({{"name", name + ".variances"}, {"count", k * d}});
  }
  return json{{"magic", kBankMagic},
              {"version", bank.version},
              {"created", bank.created},
              {"config_hash", bank.config_hash},
              {"extractor_fingerprint", bank.fingerprint},
              {"layers", bank.layers.indices()},
              {"tile_size", bank.tile_size},
              {"stride", bank.stride},
              {"input_dim", d_in},
              {"d", d},
              {"K", k},
              {"organs", organs},
              {"blocks", blocks}};
}

json parse_header(ByteReader& rd, const std::string& origin) {
  const std::string magic = rd.raw(std::strlen(kBankMagic), "magic");
  if (magic != kBankMagic) fail(ErrorKind::CorruptModel, origin + ": not a bank file (bad magic)");
  const auto len = rd.u32("header length");
  const std::string text = rd.raw(len, "header");
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptModel, origin + ": header is not valid JSON: " + e.what());
  }
  const std::string version = h.value("version", std::string());
  if (version != kBankVersion) {
    fail(ErrorKind::UnsupportedVersion, origin + ": unsupported bank version '" + version +
                                            "' (this build reads " + kBankVersion + ")");
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Files

void atomic_write(const std::string& path, std::span<const unsigned char> bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) fail(ErrorKind::Io, "cannot write " + tmp);
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size() &&
                    std::fflush(f) == 0 && ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) {
      std::remove(tmp.c_str());
      fail(ErrorKind::Io, "short write to " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    std::remove(tmp.c_str());
    fail(ErrorKind::Io, "cannot move " + tmp + " to " + path + ": " + ec.message());
  }
}

void atomic_write(const std::string& path, const std::string& text) {
  atomic_write(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Banks

std::vector<unsigned char> encode_bank(const OrganModelBank& bank) {
  validate_bank(bank);
  const std::string header = header_json(bank).dump();
  ByteWriter w;
  w.raw(kBankMagic);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw(header);
  write_block(w, bank.pca.mean);
  write_block(w, bank.pca.components);
  write_block(w, bank.pca.variances);
  for (const auto& [name, g] : bank.organs) {
    write_block(w, g.weights);
    write_block(w, g.means);
    write_block(w, g.variances);
  }
  return w.take();
}

OrganModelBank decode_bank(std::span<const unsigned char> bytes, const std::string& origin) {
  ByteReader rd(bytes, origin);
  const json h = parse_header(rd, origin);
  OrganModelBank bank;
  std::size_t d_in = 0, d = 0, k = 0;
  std::vector<std::string> organs;
  try {
    bank.version = h.at("version").get<std::string>();
    bank.created = h.at("created").get<std::int64_t>();
    bank.config_hash = h.at("config_hash").get<std::string>();
    bank.fingerprint = h.at("extractor_fingerprint").get<std::string>();
    bank.layers = LayerSet(h.at("layers").get<std::vector<int>>());
    bank.tile_size = h.at("tile_size").get<std::size_t>();
    bank.stride = h.at("stride").get<std::size_t>();
    d_in = h.at("input_dim").get<std::size_t>();
    d = h.at("d").get<std::size_t>();
    k = h.at("K").get<std::size_t>();
    organs = h.at("organs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptModel, origin + ": header field missing or mistyped: " + e.what());
  }
  if (organs.empty()) fail(ErrorKind::CorruptModel, origin + ": header lists no organs");
  const auto di = static_cast<Eigen::Index>(d_in);
  const auto dd = static_cast<Eigen::Index>(d);
  const auto kk = static_cast<Eigen::Index>(k);

  bank.pca.mean.resize(di);
  bank.pca.components.resize(dd, di);
  bank.pca.variances.resize(dd);
  read_block(rd, bank.pca.mean, "pca.mean");
  read_block(rd, bank.pca.components, "pca.components");
  read_block(rd, bank.pca.variances, "pca.variances");
  for (const auto& name : organs) {
    DiagGmm g;
    g.weights.resize(kk);
    g.means.resize(kk, dd);
    g.variances.resize(kk, dd);
    read_block(rd, g.weights, name + ".weights");
    read_block(rd, g.means, name + ".means");
    read_block(rd, g.variances, name + ".variances");
    if (!bank.organs.emplace(name, std::move(g)).second) {
      fail(ErrorKind::CorruptModel, origin + ": duplicate organ '" + name + "'");
    }
  }
  if (!rd.at_end()) {
    fail(ErrorKind::CorruptModel, origin + ": " + std::to_string(rd.remaining()) +
                                      " trailing bytes after the last block");
  }
  try {
    validate_bank(bank);
  } catch (const Error& e) {
    fail(e.kind(), origin + ": " + e.what());
  }
  return bank;
}

ArtifactHeader read_bank_header(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader rd(bytes, path);
  const json h = parse_header(rd, path);
  return {h.value("magic", std::string()), h.value("version", std::string()),
          h.value("created", std::int64_t{0}), h.value("config_hash", std::string()),
          h.value("extractor_fingerprint", std::string())};
}

void save_bank(const OrganModelBank& bank, const std::string& path) {
  atomic_write(path, encode_bank(bank));
}

OrganModelBank load_bank(const std::string& path) { return decode_bank(read_file(path), path); }

// ---------------------------------------------------------------------------
// Feature files

std::vector<unsigned char> encode_feature_records(std::span<const FeatureRecord> records) {
  ByteWriter w;
  w.raw(kFeatureMagic);
  for (const auto& rec : records) {
    w.u32(static_cast<std::uint32_t>(rec.image_id.size()));
    w.raw(rec.image_id);
    w.u16(static_cast<std::uint16_t>(rec.features.layers.size()));
    for (std::size_t i = 0; i < rec.features.layers.size(); ++i) {
      const auto& m = rec.features.tokens[i];
      w.u16(static_cast<std::uint16_t>(rec.features.layers[i]));
      w.u32(static_cast<std::uint32_t>(m.rows()));
      w.u32(static_cast<std::uint32_t>(m.cols()));
      write_block(w, m);
    }
  }
  return w.take();
}

std::vector<FeatureRecord> decode_feature_records(std::span<const unsigned char> bytes,
                                                  const std::string& origin) {
  ByteReader rd(bytes, origin);
  if (rd.remaining() < 5 || rd.raw(5, "magic") != kFeatureMagic) {
    fail(ErrorKind::Schema, origin + ": not a feature file (bad magic)");
  }
  std::vector<FeatureRecord> out;
  try {
    while (!rd.at_end()) {
      FeatureRecord rec;
      const auto id_len = rd.u32("image id length");
      rec.image_id = rd.raw(id_len, "image id");
      const auto layers = rd.u16("layer count");
      for (std::uint16_t i = 0; i < layers; ++i) {
        const int layer = rd.u16("layer index");
        const auto t = rd.u32("token count");
        const auto c = rd.u32("channel count");
        TokenMatrix m(t, c);
        read_block(rd, m, rec.image_id + " layer " + std::to_string(layer));
        rec.features.layers.push_back(layer);
        rec.features.tokens.push_back(std::move(m));
      }
      out.push_back(std::move(rec));
    }
  } catch (const Error& e) {
    fail(ErrorKind::Schema, e.what());
  }
  return out;
}

void write_feature_file(const std::string& path, std::span<const FeatureRecord> records) {
  atomic_write(path, encode_feature_records(records));
}

std::vector<FeatureRecord> read_feature_file(const std::string& path) {
  return decode_feature_records(read_file(path), path);
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<FitManifestEntry> read_fit_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<FitManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      FitManifestEntry e{j.at("path").get<std::string>(), j.at("organ").get<std::string>()};
      if (e.organ.empty()) throw std::runtime_error("empty organ");
      if (std::filesystem::path(e.path).is_relative()) e.path = (base / e.path).string();
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      fail(ErrorKind::Schema, path + ":" + std::to_string(lineno) +
                                  ": expected {\"path\": ..., \"organ\": ...}: " + ex.what());
    }
  }
  return out;
}

void write_fit_manifest(const std::string& path, std::span<const FitManifestEntry> entries) {
  std::string text;
  for (const auto& e : entries) text += json{{"path", e.path}, {"organ", e.organ}}.dump() + "\n";
  atomic_write(path, text);
}

std::vector<DegradationRecord> read_degradation_manifest(const std::string& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, path + ": invalid JSON: " + e.what());
  }
  if (!j.is_array()) fail(ErrorKind::Schema, path + ": expected a JSON array of degradations");
  std::vector<DegradationRecord> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    try {
      out.push_back(detail::degradation_from_json(e));
    } catch (const json::exception& ex) {
      fail(ErrorKind::Schema, path + ": entry " + std::to_string(i) + ": " + ex.what());
    }
  }
  return out;
}

std::string to_json(const DegradationRecord& record) {
  return detail::degradation_to_json(record).dump();
}

void write_degradation_manifest(const std::string& path,
                                std::span<const DegradationRecord> records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(detail::degradation_to_json(r));
  atomic_write(path, arr.dump(2) + "\n");
}

}  // namespace usqm
