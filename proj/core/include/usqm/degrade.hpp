#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "usqm/image.hpp"

namespace usqm {

enum class DistortionKind {
  AdditiveGaussian,
  Speckle,
  GaussianBlur,
  Downsample,
  RoiShadow,
  SpecularClip,
  ScanlineMissing,
  Elastic,
  ClutterHaze,  // optional, not part of the default eight
};

enum class DistortionGroup { NoiseTexture, BlurResolution, UltrasoundArtifact, Geometric };

struct DistortionInfo {
  DistortionKind kind;
  const char* name;
  DistortionGroup group;
  double theta_min;  // identity
  double theta_max;  // maximum damage
  bool in_default_suite;
};

const DistortionInfo& distortion_info(DistortionKind kind);
const std::vector<DistortionInfo>& distortion_registry();
/// The eight kinds used by default protocols, in registry order.
std::vector<DistortionKind> default_distortions();
DistortionKind parse_distortion(const std::string& name);  // throws Lookup
const char* to_string(DistortionKind kind);
const char* to_string(DistortionGroup group);

struct DegradationSpec {
  DistortionKind kind = DistortionKind::AdditiveGaussian;
  double theta = 0.0;
  std::uint64_t seed = 0;
  // Shadow shape, as fractions of the image extent.
  double shadow_axis_y = 0.30;
  double shadow_axis_x = 0.22;
  double shadow_falloff = 0.15;
};

/// Applies one distortion. theta == theta_min returns the input unchanged.
/// Random fields depend only on (seed, image size), never on theta.
/// Throws Range when theta lies outside the kind's bounds.
GrayImage apply(const GrayImage& img, const DegradationSpec& spec);

struct PsnrTarget {
  double target_db = 20.0;
  double tolerance_db = 0.05;
  int max_iterations = 48;
};

struct Calibration {
  double theta = 0.0;
  double achieved_psnr = 0.0;
  int iterations = 0;
  bool converged = false;
  GrayImage image;
};

/// Bisection on theta over [theta_min, theta_max] until the PSNR against the
/// clean input is within tolerance of the target. Throws Range when the target
/// is unreachable (PSNR at theta_max still above it) or not finite.
Calibration calibrate_to_psnr(const GrayImage& img, DistortionKind kind, std::uint64_t seed,
                              const PsnrTarget& target);

struct SweepStep {
  double theta = 0.0;
  double psnr = 0.0;
  GrayImage image;
};

/// n evenly spaced severities from theta_min to theta_max. Throws InternalBug
/// if PSNR increases along the sweep.
std::vector<SweepStep> severity_sweep(const GrayImage& img, DistortionKind kind,
                                      std::uint64_t seed, std::size_t n);

}  // namespace usqm
