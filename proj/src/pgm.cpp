#include "wsl/pgm.hpp"

#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wsl {

Gray8 to_gray(const Tensor& map, double lo, double hi) {
    require_rank(map, 2, "to_gray");
    Gray8 g{map.dim(0), map.dim(1), std::vector<std::uint8_t>(map.size(), 0)};
    if (!(hi > lo)) return g;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double v = std::clamp((map[i] - lo) / (hi - lo), 0.0, 1.0);
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return g;
}

Gray8 to_gray_minmax(const Tensor& map) {
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    return to_gray(map, *lo, *hi);
}

Gray8 saliency_overlay(const Tensor& image, const Tensor& saliency) {
    require_rank(image, 2, "saliency_overlay");
    if (image.dims() != saliency.dims()) throw ShapeError("saliency_overlay: image and saliency dims differ");
    Tensor mag(saliency.dims());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::fabs(saliency[i]);
    const auto [lo, hi] = std::minmax_element(mag.data().begin(), mag.data().end());
    Tensor blend(image.dims());
    for (std::size_t i = 0; i < blend.size(); ++i) {
        const double s = *hi > *lo ? (mag[i] - *lo) / (*hi - *lo) : 0.0;
        blend[i] = 0.5 * std::clamp(image[i], 0.0, 1.0) + 0.5 * s;
    }
    return to_gray(blend, 0.0, 1.0);
}

void draw_boxes(Gray8& img, const std::vector<BoundingBox>& boxes) {
    auto set = [&](std::size_t r, std::size_t c) {
        if (r < img.h && c < img.w) img.pixels[r * img.w + c] = 255;
    };
    for (const auto& b : boxes) {
        for (std::size_t c = b.col0; c <= b.col1; ++c) {
            set(b.row0, c);
            set(b.row1, c);
        }
        for (std::size_t r = b.row0; r <= b.row1; ++r) {
            set(r, b.col0);
            set(r, b.col1);
        }
    }
}

std::vector<std::uint8_t> encode_pgm(const Gray8& img) {
    const std::string header = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

void write_pgm(const Gray8& img, const std::filesystem::path& path) { write_file_bytes(path, encode_pgm(img)); }

} // namespace wsl
