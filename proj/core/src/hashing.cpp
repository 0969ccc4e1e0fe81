#include "usqm/hashing.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "usqm/errors.hpp"
#include "usqm/random.hpp"

namespace usqm {

namespace {
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
}

Fnv1a& Fnv1a::update(std::span<const unsigned char> bytes) noexcept {
  for (unsigned char b : bytes) {
    state_ ^= b;
    state_ *= kFnvPrime;
  }
  return *this;
}

Fnv1a& Fnv1a::update(std::string_view s) noexcept {
  return update(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

Fnv1a& Fnv1a::update_u64(std::uint64_t v) noexcept {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  return update(buf);
}

std::string Fnv1a::hex() const { return hex64(state_); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_string(std::string_view s) { return Fnv1a().update(s).hex(); }

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  Fnv1a h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    h.update(std::span(reinterpret_cast<const unsigned char*>(buf.data()), n));
  }
  return h.hex();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) noexcept {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Range: return "range";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::UndefinedStatistic: return "undefined-statistic";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::CorruptModel: return "corrupt-model";
    case ErrorKind::UnsupportedVersion: return "unsupported-version";
    case ErrorKind::FingerprintMismatch: return "fingerprint-mismatch";
    case ErrorKind::InternalBug: return "internal-bug";
  }
  return "unknown";
}

}  // namespace usqm
