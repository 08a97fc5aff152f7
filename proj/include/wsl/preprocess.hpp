#pragma once

#include "wsl/tensor.hpp"

#include <cstdint>
#include <random>

namespace wsl {

using Rng = std::mt19937_64;

// splitmix64 finalizer over (seed, index); used to derive independent
// per-sample / per-patient streams from one global seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

struct NormalizationConfig {
    double window_width = 1.0; // Q
    double step = 0.5;         // S
    std::size_t bin_count = 256;

    void validate() const;
};

struct WindowChoice {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

// Picks the sliding window [min + k*S, min + k*S + Q] holding the most
// pixels (smallest start on ties). Counts come from a bin_count histogram
// over [min, max]; a bin belongs to a window when its center lies inside.
WindowChoice choose_window(const Tensor& raw, const NormalizationConfig& cfg);

// Clips to the chosen window and maps it linearly onto [0, 1]. A constant
// image maps to all zeros.
Tensor sliding_window_normalize(const Tensor& raw, const NormalizationConfig& cfg);

struct AugmentConfig {
    double crop_scale_min = 0.7;
    double crop_scale_max = 1.0;
    double rotate_deg_max = 25.0;
    double flip_prob = 0.5;
    double contrast_min = 0.5;
    double contrast_max = 1.5;
    std::size_t output_size = 64;

    void validate() const;
};

// One concrete draw of the four augmentations.
struct AugmentParams {
    double scale = 1.0;
    double theta_deg = 0.0;
    bool flip = false;
    double contrast = 1.0;
};

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng);

// Applies, in order: center square crop (side = scale * min(H, W)) with a
// bilinear resize to size x size, rotation about the center (bilinear, zero
// fill), optional left-right flip, contrast multiply then clip to [0, 1].
Tensor apply_augment(const Tensor& img, std::size_t size, const AugmentParams& p);

Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng);

// Individual stages, exposed for testing and reuse.
Tensor center_crop_resize(const Tensor& img, double scale, std::size_t size);
Tensor rotate(const Tensor& img, double theta_deg);
Tensor flip_lr(const Tensor& img);
Tensor adjust_contrast(const Tensor& img, double factor);

// Bilinear resample of a [h,w] map to [H,W] with pixel-center alignment and
// edge clamping.
Tensor resize_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w);

} // namespace wsl
