#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace usqm {

/// Single-channel image with intensities in [0, 1], stored row-major.
/// Values are clamped on construction; non-finite inputs become 0.
class GrayImage {
 public:
  GrayImage(std::size_t height, std::size_t width, double fill = 0.0);
  GrayImage(std::size_t height, std::size_t width, std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t row, std::size_t col) const noexcept {
    return data_[row * width_ + col];
  }
  std::span<const double> pixels() const noexcept { return data_; }

  bool same_shape(const GrayImage& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> data_;
};

struct TileOrigin {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

/// Overlapping square tiles covering an image. The last origin on each axis
/// is clamped to (extent - tile_size) so the border is always covered.
struct TileGrid {
  std::size_t tile_size = 224;
  std::size_t stride = 112;
  std::vector<std::size_t> row_origins;
  std::vector<std::size_t> col_origins;
  std::vector<TileOrigin> origins;  // row-major product of the two axes

  std::size_t count() const noexcept { return origins.size(); }
};

inline constexpr std::size_t kTileSize = 224;
inline constexpr std::size_t kTileStride = 112;

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double mse(const GrayImage& a, const GrayImage& b);

/// 10*log10(1/MSE) with MAX = 1. Returns kPsnrIdentical when MSE == 0.
double psnr(const GrayImage& a, const GrayImage& b);

/// Origins along one axis of length `extent`.
std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t tile_size,
                                      std::size_t stride);

TileGrid tile(std::size_t height, std::size_t width,
              std::size_t tile_size = kTileSize, std::size_t stride = kTileStride);
TileGrid tile(const GrayImage& img, std::size_t tile_size = kTileSize,
              std::size_t stride = kTileStride);

GrayImage crop(const GrayImage& img, TileOrigin origin, std::size_t height,
               std::size_t width);

/// Half-pixel-centred bilinear resampling with edge clamping.
GrayImage resize_bilinear(const GrayImage& img, std::size_t out_h, std::size_t out_w);

/// Upscales so that the short side is at least `min_side`, preserving aspect.
/// The bool is true when a resize happened.
std::pair<GrayImage, bool> ensure_min_side(const GrayImage& img,
                                           std::size_t min_side = kTileSize);

// File I/O. Only 8-bit (or lower) grayscale PNG and PGM are accepted.
GrayImage read_image(const std::string& path);
void write_png(const GrayImage& img, const std::string& path);

/// Quantizes to 8 bits the same way write_png does.
std::vector<unsigned char> to_bytes(const GrayImage& img);
GrayImage from_bytes(std::size_t height, std::size_t width,
                     std::span<const unsigned char> bytes);

}  // namespace usqm
