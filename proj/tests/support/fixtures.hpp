#pragma once

// Synthetic corpora shared by study and protocol tests.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "usqm/bank_store.hpp"
#include "usqm/degrade.hpp"
#include "usqm/study.hpp"

namespace usqm::fixture {

/// Every (source, default kind, target) combination, with achieved PSNR
/// within a few hundredths of the target.
inline std::vector<DegradationRecord> degradation_corpus(std::size_t sources,
                                                         const std::vector<double>& targets = {20, 22, 25}) {
  std::vector<DegradationRecord> out;
  for (std::size_t s = 0; s < sources; ++s) {
    const std::string src = "/data/clean/img" + std::to_string(s) + ".png";
    std::size_t k = 0;
    for (auto kind : default_distortions()) {
      for (double t : targets) {
        const double jitter = 0.01 * static_cast<double>((s + 3 * k) % 5) - 0.02;
        char name[160];
        std::snprintf(name, sizeof name, "/data/deg/img%zu__%s__%gdB.png", s, to_string(kind), t);
        out.push_back({src, to_string(kind), 0.1 * static_cast<double>(k + 1), 7, t + jitter, name});
      }
      ++k;
    }
  }
  return out;
}

/// Deterministic stand-in for NRQ: a fixed function of the output path.
inline std::map<std::string, double> fake_scores(const std::vector<DegradationRecord>& records) {
  std::map<std::string, double> out;
  for (const auto& r : records) {
    std::size_t h = std::hash<std::string>{}(r.output_path);
    out[r.output_path] = static_cast<double>(h % 100000) / 100.0;
  }
  return out;
}

}  // namespace usqm::fixture
