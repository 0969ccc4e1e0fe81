#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace usqm {

/// 64-bit FNV-1a, used for fingerprints and config hashes (not security).
class Fnv1a {
 public:
  Fnv1a& update(std::span<const unsigned char> bytes) noexcept;
  Fnv1a& update(std::string_view s) noexcept;
  Fnv1a& update_u64(std::uint64_t v) noexcept;
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);
std::string hash_string(std::string_view s);
std::string hash_file(const std::string& path);

}  // namespace usqm
