#include "mlbviz/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mlbviz::image_io {

namespace {

std::uint8_t to_byte(double unit) { return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0)); }

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

std::uint8_t saliency_level(double v) {
  const double clamped = std::clamp(v, -3.0, 3.0);
  return static_cast<std::uint8_t>(std::lround((clamped + 3.0) / 6.0 * 255.0));
}

GrayImage saliency_to_gray(const Tensor& map) {
  if (map.rank() != 2) throw std::invalid_argument("saliency_to_gray: expected an H×W map");
  GrayImage img{map.dim(1), map.dim(0), {}};
  img.pixels.reserve(map.size());
  for (double v : map.data()) img.pixels.push_back(saliency_level(v));
  return img;
}

GrayImage probability_to_gray(const Tensor& map) {
  if (map.rank() != 2) throw std::invalid_argument("probability_to_gray: expected an H×W map");
  const double peak = max_abs(map);
  GrayImage img{map.dim(1), map.dim(0), {}};
  img.pixels.reserve(map.size());
  for (double v : map.data()) img.pixels.push_back(peak > 0.0 ? to_byte(v / peak) : 0);
  return img;
}

GrayImage upsample(const GrayImage& image, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample: factor must be positive");
  GrayImage out{image.width * factor, image.height * factor, {}};
  out.pixels.resize(out.width * out.height);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      out.pixels[y * out.width + x] = image.pixels[(y / factor) * image.width + x / factor];
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  write_bytes(path, "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n", image.pixels);
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw std::invalid_argument("write_ppm: expected a 3×H×W tensor");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  std::vector<std::uint8_t> body;
  body.reserve(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) body.push_back(to_byte(rgb.at(c, y, x)));
    }
  }
  write_bytes(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", body);
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (header_token(in) != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(in));
    h = std::stoul(header_token(in));
    maxval = std::stoul(header_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw std::runtime_error(path.string() + ": expected maxval 255 and positive extents");
  std::vector<unsigned char> body(3 * w * h);
  in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (in.gcount() != static_cast<std::streamsize>(body.size())) throw std::runtime_error(path.string() + ": truncated PPM");
  Tensor out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = body[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return out;
}

}  // namespace mlbviz::image_io
