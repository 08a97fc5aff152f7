#pragma once

// Saliency post-processing: |s| -> 5x5 Gaussian blur -> Isodata threshold ->
// closing -> 8-connected components -> tight bounding boxes.

#include "wsl/tensor.hpp"

#include <filesystem>
#include <vector>

namespace wsl {

struct BoundingBox {
    std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0; // inclusive
    std::size_t area_px = 0;                             // component pixels
    std::size_t component_id = 0;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct LocalizationConfig {
    double blur_sigma = 1.0;
    double min_area_frac = 0.001;

    void validate() const;
};

// Separable normalized 5-tap Gaussian with reflect-101 borders (dcb|abcd|cba).
Tensor gaussian_blur5(const Tensor& map, double sigma);
std::vector<double> gaussian_taps5(double sigma);

struct DegenerateThreshold : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// T0 = mean; T <- (mean{x <= T} + mean{x > T}) / 2 until the step is below
// 1e-9 or 500 iterations. DegenerateThreshold on a constant map.
double isodata_threshold(const Tensor& map);

Tensor dilate3(const Tensor& mask);
Tensor erode3(const Tensor& mask); // pixels outside the image count as background
Tensor morph_close(const Tensor& mask);

struct Components {
    std::vector<std::size_t> labels; // 0 background, 1..n in raster order of first pixel
    std::vector<std::size_t> areas;  // areas[k - 1] for label k
    std::size_t count() const { return areas.size(); }
};

Components connected_components(const Tensor& mask);

std::vector<BoundingBox> extract_boxes(const Tensor& saliency, const LocalizationConfig& cfg);
// Tight boxes of every component of a binary mask, no area filter, raster order.
std::vector<BoundingBox> component_boxes(const Tensor& mask);

std::string format_boxes(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w);
void write_boxes(const std::vector<BoundingBox>& boxes, std::size_t h, std::size_t w, const std::filesystem::path& path);
std::vector<BoundingBox> read_boxes(const std::filesystem::path& path, std::size_t* h = nullptr, std::size_t* w = nullptr);

} // namespace wsl
