#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "oracles.hpp"
#include "usqm/bank_store.hpp"
#include "usqm/random.hpp"

using namespace usqm;

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

OrganModelBank sample_bank() {
  Rng rng(77);
  const Eigen::Index big = 6, d = 3, k = 2;
  OrganModelBank bank;
  bank.fingerprint = "abc123";
  bank.layers = {3, 11};
  bank.config_hash = "cfg";
  bank.created = 1700000000;
  bank.pca.mean = Eigen::VectorXd::NullaryExpr(big, [&] { return f32(rng.normal()); });
  bank.pca.components = Eigen::MatrixXd::Identity(d, big);
  bank.pca.variances = Eigen::Vector3d(f32(2.5), f32(1.25), f32(0.1));
  for (const char* organ : {"thyroid", "kidney"}) {
    DiagGmm g;
    g.weights = Eigen::Vector2d(0.25, 0.75);
    g.means = Eigen::MatrixXd::NullaryExpr(k, d, [&] { return f32(rng.normal()); });
    g.variances = Eigen::MatrixXd::NullaryExpr(k, d, [&] { return f32(rng.uniform(0.1, 2.0)); });
    bank.organs.emplace(organ, g);
  }
  return bank;
}

void expect_same(const OrganModelBank& a, const OrganModelBank& b) {
  EXPECT_EQ(a.version, b.version);
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  EXPECT_EQ(a.layers, b.layers);
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_EQ(a.created, b.created);
  EXPECT_EQ(a.tile_size, b.tile_size);
  EXPECT_EQ(a.stride, b.stride);
  EXPECT_TRUE(a.pca.mean == b.pca.mean);
  EXPECT_TRUE(a.pca.components == b.pca.components);
  EXPECT_TRUE(a.pca.variances == b.pca.variances);
  ASSERT_EQ(a.organs.size(), b.organs.size());
  for (const auto& [name, g] : a.organs) {
    const auto& h = b.organs.at(name);
    EXPECT_TRUE(g.weights == h.weights);
    EXPECT_TRUE(g.means == h.means);
    EXPECT_TRUE(g.variances == h.variances);
  }
}

std::uint32_t header_length(const std::vector<unsigned char>& bytes) {
  return bytes[8] | bytes[9] << 8 | bytes[10] << 16 | static_cast<std::uint32_t>(bytes[11]) << 24;
}

void put_f32(std::vector<unsigned char>& bytes, std::size_t at, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<unsigned char>(u >> (8 * i));
}

}  // namespace

TEST(Bank, RoundTripIsBitExact) {
  const auto bank = sample_bank();
  const auto bytes = encode_bank(bank);
  expect_same(bank, decode_bank(bytes));
  EXPECT_EQ(encode_bank(decode_bank(bytes)), bytes);

  oracle::TempDir dir;
  save_bank(bank, dir.file("b.usqm"));
  expect_same(bank, load_bank(dir.file("b.usqm")));
  const auto h = read_bank_header(dir.file("b.usqm"));
  EXPECT_EQ(h.magic, "USQMBANK");
  EXPECT_EQ(h.version, "usqm-bank/1");
  EXPECT_EQ(h.fingerprint, "abc123");
  EXPECT_EQ(h.created, 1700000000);
}

TEST(Bank, LayoutFollowsHeaderBlockList) {
  const auto bytes = encode_bank(sample_bank());
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "USQMBANK");
  const auto len = header_length(bytes);
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + len));
  EXPECT_EQ(header["version"], "usqm-bank/1");
  EXPECT_EQ(header["d"], 3);
  EXPECT_EQ(header["K"], 2);
  std::size_t floats = 0;
  std::vector<std::string> names;
  for (const auto& b : header["blocks"]) {
    names.push_back(b["name"]);
    floats += b["count"].get<std::size_t>();
  }
  EXPECT_EQ(names.front(), "pca.mean");
  EXPECT_EQ(names[3], header["organs"][0].get<std::string>() + ".weights");
  EXPECT_EQ(bytes.size(), 12 + len + 4 * floats);
  // First float of the mean block, little-endian.
  float first = 0;
  std::memcpy(&first, &bytes[12 + len], 4);
  EXPECT_EQ(static_cast<double>(first), sample_bank().pca.mean(0));
}

TEST(Bank, TruncationNamesTheBlock) {
  const auto bytes = encode_bank(sample_bank());
  for (std::size_t cut : {4ul, 10ul, 40ul, bytes.size() - 1}) {
    std::vector<unsigned char> part(bytes.begin(), bytes.begin() + cut);
    EXPECT_EQ(oracle::error_kind([&] { decode_bank(part, "part.bank"); }), ErrorKind::CorruptModel) << cut;
  }
  try {
    decode_bank(std::vector<unsigned char>(bytes.begin(), bytes.end() - 2), "x.bank");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("x.bank"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("variances"), std::string::npos) << e.what();
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(longer); }), ErrorKind::CorruptModel);
}

TEST(Bank, InvariantViolationsAreCorrupt) {
  const auto bytes = encode_bank(sample_bank());
  const std::size_t blocks = 12 + header_length(bytes);
  const std::size_t weights = blocks + 4 * (6 + 18 + 3);

  auto bad = bytes;
  put_f32(bad, weights, 0.9f);  // weights now sum to 1.65
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(bad); }), ErrorKind::CorruptModel);

  bad = bytes;
  put_f32(bad, weights + 4 * (2 + 6), 1e-9f);  // first variance below the floor
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(bad); }), ErrorKind::CorruptModel);

  bad = bytes;
  put_f32(bad, blocks + 4 * 6, 0.5f);  // components no longer orthonormal
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(bad); }), ErrorKind::CorruptModel);

  bad = bytes;
  put_f32(bad, blocks, std::numeric_limits<float>::quiet_NaN());
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(bad); }), ErrorKind::CorruptModel);

  bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(oracle::error_kind([&] { decode_bank(bad); }), ErrorKind::CorruptModel);
}

TEST(Bank, NewerVersionIsRejected) {
  auto bytes = encode_bank(sample_bank());
  std::string text(bytes.begin(), bytes.end());
  const auto at = text.find("usqm-bank/1");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 10] = '2';
  try {
    decode_bank(bytes, "future.bank");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedVersion);
    EXPECT_NE(std::string(e.what()).find("usqm-bank/2"), std::string::npos);
  }
}

TEST(Bank, MissingFileIsIo) {
  EXPECT_EQ(oracle::error_kind([] { load_bank("/nonexistent/x.bank"); }), ErrorKind::Io);
}

TEST(FeatureFile, MatchesHandEncodedBytes) {
  TokenMatrix m(2, 1);
  m << 1.0, -2.0;
  const std::vector<FeatureRecord> recs{{"ab", {{7}, {m}}}};
  const auto bytes = encode_feature_records(recs);
  const std::vector<unsigned char> expected{
      'U', 'S', 'Q', 'F', '1',                    // magic
      2, 0, 0, 0, 'a', 'b',                       // id
      1, 0,                                       // layer count
      7, 0, 2, 0, 0, 0, 1, 0, 0, 0,               // layer, T, C
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};  // 1.0f, -2.0f
  EXPECT_EQ(bytes, expected);
}

TEST(FeatureFile, RoundTripAndTruncation) {
  Rng rng(3);
  std::vector<FeatureRecord> recs;
  for (int i = 0; i < 3; ++i) {
    TokenFeatures f;
    for (int l : {2, 5}) {
      f.layers.push_back(l);
      f.tokens.push_back(TokenMatrix::NullaryExpr(9, 4, [&] { return f32(rng.normal()); }));
    }
    recs.push_back({"img" + std::to_string(i), f});
  }
  oracle::TempDir dir;
  write_feature_file(dir.file("f.usqf"), recs);
  const auto back = read_feature_file(dir.file("f.usqf"));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].image_id, recs[i].image_id);
    EXPECT_EQ(back[i].features.layers, recs[i].features.layers);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_TRUE(back[i].features.tokens[l] == recs[i].features.tokens[l]);
  }
  const auto bytes = encode_feature_records(recs);
  EXPECT_EQ(oracle::error_kind([&] {
              decode_feature_records(std::vector<unsigned char>(bytes.begin(), bytes.end() - 3));
            }),
            ErrorKind::Schema);
  EXPECT_EQ(oracle::error_kind([] { decode_feature_records(std::vector<unsigned char>{'U', 'S'}); }),
            ErrorKind::Schema);
}

TEST(Manifests, FitManifestRoundTrip) {
  oracle::TempDir dir;
  const std::vector<FitManifestEntry> entries{{"/a/b.png", "thyroid"}, {"c d.png", "kidney"}};
  write_fit_manifest(dir.file("m.jsonl"), entries);
  const auto back = read_fit_manifest(dir.file("m.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].path, "/a/b.png");
  EXPECT_EQ(back[1].path, dir.file("c d.png"));
  EXPECT_EQ(back[1].organ, "kidney");

  std::ofstream(dir.file("bad.jsonl")) << "{\"path\": \"a.png\", \"organ\": \"x\"}\n{\"path\": 3}\n";
  try {
    read_fit_manifest(dir.file("bad.jsonl"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Schema);
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Manifests, DegradationManifestRoundTripWithInfinitePsnr) {
  oracle::TempDir dir;
  const std::vector<DegradationRecord> recs{
      {"a.png", "speckle", 0.25, 3, 21.97, "out/a__speckle.png"},
      {"a.png", "elastic", 0.0, 1, std::numeric_limits<double>::infinity(), "out/a__elastic.png"}};
  write_degradation_manifest(dir.file("d.json"), recs);
  EXPECT_EQ(read_degradation_manifest(dir.file("d.json")), recs);
  EXPECT_NE(oracle::slurp(dir.file("d.json")).find("\"inf\""), std::string::npos);
  const auto line = nlohmann::json::parse(to_json(recs[0]));
  EXPECT_EQ(line["kind"], "speckle");
  EXPECT_EQ(line["seed"], 3);

  std::ofstream(dir.file("bad.json")) << "[{\"source\": \"a\"}]";
  EXPECT_EQ(oracle::error_kind([&] { read_degradation_manifest(dir.file("bad.json")); }), ErrorKind::Schema);
}

TEST(AtomicWrite, ReplacesWholeFile) {
  oracle::TempDir dir;
  atomic_write(dir.file("x.txt"), std::string("long original contents"));
  atomic_write(dir.file("x.txt"), std::string("new"));
  EXPECT_EQ(oracle::slurp(dir.file("x.txt")), "new");
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path()), {}), 1);
  const std::string under_file = dir.file("x.txt") + "/y";
  EXPECT_EQ(oracle::error_kind([&] { atomic_write(under_file, std::string("a")); }), ErrorKind::Io);
}
