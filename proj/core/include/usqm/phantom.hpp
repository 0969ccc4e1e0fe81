#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "usqm/image.hpp"

namespace usqm {

/// Texture statistics of a synthetic "organ". Different presets give
/// distinguishable clean manifolds for tests and demos.
struct PhantomStyle {
  double speckle_sigma = 1.2;     // correlation length of the speckle field, pixels
  double brightness = 0.45;       // mean tissue echogenicity
  double inclusion_contrast = 0.5;
  int inclusions = 3;
  double attenuation = 0.6;       // fractional brightness loss from top to bottom
  double log_compression = 0.5;   // 0 = linear envelope, 1 = strong log compression
};

/// Built-in presets: "thyroid", "kidney", "liver", "breast". Unknown names throw a lookup error.
PhantomStyle phantom_style(const std::string& name);

/// Speckled B-mode-like phantom: smooth echogenicity map with elliptical
/// inclusions, depth attenuation and multiplicative Rayleigh speckle.
GrayImage make_phantom(std::size_t height, std::size_t width, std::uint64_t seed,
                       const PhantomStyle& style = {});

}  // namespace usqm
