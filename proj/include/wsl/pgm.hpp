#pragma once

// 8-bit binary PGM (P5) output for human-viewable maps.

#include "wsl/localization.hpp"
#include "wsl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wsl {

struct Gray8 {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> pixels;
};

// Linear map of [lo, hi] onto 0..255 with clipping; lo == hi gives zeros.
Gray8 to_gray(const Tensor& map, double lo, double hi);
Gray8 to_gray_minmax(const Tensor& map);
// Input image in [0,1] blended 50/50 with the min-max normalized |saliency|.
Gray8 saliency_overlay(const Tensor& image, const Tensor& saliency);
// 1-px outlines at 255.
void draw_boxes(Gray8& img, const std::vector<BoundingBox>& boxes);

std::vector<std::uint8_t> encode_pgm(const Gray8& img);
void write_pgm(const Gray8& img, const std::filesystem::path& path);

} // namespace wsl
