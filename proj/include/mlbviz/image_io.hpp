#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mlbviz/tensor.hpp"

namespace mlbviz::image_io {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Saliency to gray levels: clamp to [-3, 3], then round((v + 3) / 6 · 255).
std::uint8_t saliency_level(double v);
GrayImage saliency_to_gray(const Tensor& map);

// Probability map to gray levels relative to its maximum: round(255 · p / max p).
GrayImage probability_to_gray(const Tensor& map);

// Nearest-neighbor upsampling by an integer factor.
GrayImage upsample(const GrayImage& image, std::size_t factor);

// Binary P5, maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Binary P6, maxval 255, from a 3×H×W tensor with values in [0, 1].
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

// Reads a binary P6 with maxval 255 into a 3×H×W tensor scaled to [0, 1].
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace mlbviz::image_io
