#pragma once

#include <cmath>
#include <json.hpp>
#include <limits>

#include "usqm/bank_store.hpp"

namespace usqm::detail {

inline nlohmann::json degradation_to_json(const DegradationRecord& r) {
  nlohmann::json p = std::isinf(r.achieved_psnr) ? nlohmann::json("inf")
                                                 : nlohmann::json(r.achieved_psnr);
  return {{"source", r.source}, {"kind", r.kind},     {"theta", r.theta},
          {"seed", r.seed},     {"achieved_psnr", p}, {"output_path", r.output_path}};
}

/// Throws nlohmann::json exceptions on missing or mistyped fields.
inline DegradationRecord degradation_from_json(const nlohmann::json& e) {
  DegradationRecord r;
  r.source = e.at("source").get<std::string>();
  r.kind = e.at("kind").get<std::string>();
  r.theta = e.at("theta").get<double>();
  r.seed = e.at("seed").get<std::uint64_t>();
  const auto& p = e.at("achieved_psnr");
  r.achieved_psnr = p.is_string() && p.get<std::string>() == "inf"
                        ? std::numeric_limits<double>::infinity()
                        : p.get<double>();
  r.output_path = e.at("output_path").get<std::string>();
  return r;
}

}  // namespace usqm::detail
