#include <png.h>

#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "usqm/errors.hpp"
#include "usqm/image.hpp"

namespace usqm {
namespace {

bool has_suffix(std::string s, const std::string& suffix) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GrayImage read_png(const std::string& path) {
  const auto bytes = slurp(path);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorKind::Io, path + ": not a readable PNG (" + image.message + ")");
  }
  const auto native = image.format;
  if (native & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    fail(ErrorKind::Io, path + ": color or alpha PNG rejected; expected 8-bit grayscale");
  }
  if (native & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    fail(ErrorKind::Io, path + ": 16-bit PNG rejected; expected 8-bit grayscale");
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    fail(ErrorKind::Io, path + ": PNG decode failed (" + image.message + ")");
  }
  return from_bytes(image.height, image.width, buf);
}

// Binary (P5) and ASCII (P2) graymaps with maxval <= 255.
GrayImage read_pgm(const std::string& path) {
  const auto bytes = slurp(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      fail(ErrorKind::Io, path + ": malformed PGM header");
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
    fail(ErrorKind::Io, path + ": not a grayscale PGM (P2/P5); color PPM is rejected");
  }
  const bool binary = bytes[1] == '5';
  pos = 2;
  const std::size_t w = read_uint();
  const std::size_t h = read_uint();
  const std::size_t maxval = read_uint();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    fail(ErrorKind::Io, path + ": unsupported PGM dimensions or maxval");
  }
  std::vector<double> data(w * h);
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + w * h) fail(ErrorKind::Io, path + ": truncated PGM raster");
    for (std::size_t i = 0; i < w * h; ++i) {
      data[i] = static_cast<double>(bytes[pos + i]) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < w * h; ++i) {
      data[i] = static_cast<double>(read_uint()) / static_cast<double>(maxval);
    }
  }
  return GrayImage(h, w, std::move(data));
}

}  // namespace

GrayImage read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path);
  if (has_suffix(path, ".pgm")) return read_pgm(path);
  return read_png(path);
}

void write_png(const GrayImage& img, const std::string& path) {
  const auto bytes = to_bytes(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;

  const std::string tmp = path + ".tmp";
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, bytes.data(), 0, nullptr)) {
    fail(ErrorKind::Io, "cannot write " + path + " (" + image.message + ")");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace usqm
