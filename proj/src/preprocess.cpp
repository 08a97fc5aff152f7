#include "wsl/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace wsl {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void NormalizationConfig::validate() const {
    if (!(window_width > 0.0) || !(step > 0.0)) throw ContractError("normalization: Q and S must be positive");
    if (step > window_width) throw ContractError("normalization: step S must not exceed window width Q");
    if (bin_count < 2) throw ContractError("normalization: bin_count must be >= 2");
}

WindowChoice choose_window(const Tensor& raw, const NormalizationConfig& cfg) {
    cfg.validate();
    const auto [mn_it, mx_it] = std::minmax_element(raw.data().begin(), raw.data().end());
    const double mn = *mn_it, mx = *mx_it;
    if (mn == mx) return {mn, mn + cfg.window_width, raw.size()};

    const double width = (mx - mn) / static_cast<double>(cfg.bin_count);
    std::vector<std::size_t> hist(cfg.bin_count, 0);
    for (double v : raw.data()) {
        auto b = static_cast<std::size_t>((v - mn) / width);
        hist[std::min(b, cfg.bin_count - 1)]++;
    }

    WindowChoice best{mn, mn + cfg.window_width, 0};
    bool have = false;
    for (std::size_t k = 0;; ++k) {
        const double lo = mn + static_cast<double>(k) * cfg.step;
        if (lo > mx) break;
        const double hi = lo + cfg.window_width;
        std::size_t count = 0;
        for (std::size_t b = 0; b < cfg.bin_count; ++b) {
            const double center = mn + (static_cast<double>(b) + 0.5) * width;
            if (center >= lo && center <= hi) count += hist[b];
        }
        if (!have || count > best.count) {
            best = {lo, hi, count};
            have = true;
        }
    }
    return best;
}

Tensor sliding_window_normalize(const Tensor& raw, const NormalizationConfig& cfg) {
    require_rank(raw, 2, "sliding_window_normalize");
    const auto [mn_it, mx_it] = std::minmax_element(raw.data().begin(), raw.data().end());
    if (*mn_it == *mx_it) {
        cfg.validate();
        return Tensor(raw.dims());
    }
    const WindowChoice w = choose_window(raw, cfg);
    Tensor out(raw.dims());
    const double span = w.hi - w.lo;
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (std::clamp(raw[i], w.lo, w.hi) - w.lo) / span;
    return out;
}

void AugmentConfig::validate() const {
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
        throw ContractError("augment: need 0 < crop_scale_min <= crop_scale_max <= 1");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ContractError("augment: flip_prob must be in [0,1]");
    if (!(contrast_min <= contrast_max)) throw ContractError("augment: contrast_min must not exceed contrast_max");
    if (rotate_deg_max < 0.0) throw ContractError("augment: rotate_deg_max must be >= 0");
    if (output_size < 1) throw ContractError("augment: output_size must be positive");
}

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    AugmentParams p;
    p.scale = cfg.crop_scale_min + (cfg.crop_scale_max - cfg.crop_scale_min) * u01(rng);
    p.theta_deg = -cfg.rotate_deg_max + 2.0 * cfg.rotate_deg_max * u01(rng);
    p.flip = u01(rng) < cfg.flip_prob;
    p.contrast = cfg.contrast_min + (cfg.contrast_max - cfg.contrast_min) * u01(rng);
    return p;
}

namespace {

// Bilinear sample at continuous pixel coordinates (pixel (r, c) centered at
// (r, c)). Outside pixels read as zero.
double sample_zero(const Tensor& img, double y, double x) {
    const auto h = static_cast<std::ptrdiff_t>(img.dim(0)), w = static_cast<std::ptrdiff_t>(img.dim(1));
    const double fy = std::floor(y), fx = std::floor(x);
    const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
    const double dy = y - fy, dx = x - fx;
    auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        if (r < 0 || c < 0 || r >= h || c >= w) return 0.0;
        return img[static_cast<std::size_t>(r * w + c)];
    };
    double v = 0.0;
    v += (1.0 - dy) * (1.0 - dx) * px(y0, x0);
    if (dx != 0.0) v += (1.0 - dy) * dx * px(y0, x0 + 1);
    if (dy != 0.0) v += dy * (1.0 - dx) * px(y0 + 1, x0);
    if (dy != 0.0 && dx != 0.0) v += dy * dx * px(y0 + 1, x0 + 1);
    return v;
}

double sample_clamped(const Tensor& img, double y, double x) {
    const double h = static_cast<double>(img.dim(0) - 1), w = static_cast<double>(img.dim(1) - 1);
    y = std::clamp(y, 0.0, h);
    x = std::clamp(x, 0.0, w);
    const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, img.dim(0) - 1), x1 = std::min(x0 + 1, img.dim(1) - 1);
    const double dy = y - static_cast<double>(y0), dx = x - static_cast<double>(x0);
    const std::size_t cols = img.dim(1);
    const double top = img[y0 * cols + x0] + dx * (img[y0 * cols + x1] - img[y0 * cols + x0]);
    const double bot = img[y1 * cols + x0] + dx * (img[y1 * cols + x1] - img[y1 * cols + x0]);
    return top + dy * (bot - top);
}

} // namespace

Tensor resize_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
    require_rank(map, 2, "resize_bilinear");
    Tensor out({out_h, out_w});
    const double sy = static_cast<double>(map.dim(0)) / static_cast<double>(out_h);
    const double sx = static_cast<double>(map.dim(1)) / static_cast<double>(out_w);
    for (std::size_t r = 0; r < out_h; ++r)
        for (std::size_t c = 0; c < out_w; ++c)
            out.at(r, c) = sample_clamped(map, (static_cast<double>(r) + 0.5) * sy - 0.5,
                                          (static_cast<double>(c) + 0.5) * sx - 0.5);
    return out;
}

Tensor center_crop_resize(const Tensor& img, double scale, std::size_t size) {
    require_rank(img, 2, "center_crop_resize");
    const double h = static_cast<double>(img.dim(0)), w = static_cast<double>(img.dim(1));
    const double side = scale * std::min(h, w);
    const double cy = (h - 1.0) / 2.0, cx = (w - 1.0) / 2.0;
    const double step = side / static_cast<double>(size);
    const double half = static_cast<double>(size) / 2.0;
    Tensor out({size, size});
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c)
            out.at(r, c) = sample_clamped(img, cy + (static_cast<double>(r) + 0.5 - half) * step,
                                          cx + (static_cast<double>(c) + 0.5 - half) * step);
    return out;
}

Tensor rotate(const Tensor& img, double theta_deg) {
    require_rank(img, 2, "rotate");
    const double t = theta_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(t), sn = std::sin(t);
    const double cy = (static_cast<double>(img.dim(0)) - 1.0) / 2.0;
    const double cx = (static_cast<double>(img.dim(1)) - 1.0) / 2.0;
    Tensor out(img.dims());
    for (std::size_t r = 0; r < img.dim(0); ++r)
        for (std::size_t c = 0; c < img.dim(1); ++c) {
            // Inverse map: output point rotated back by -theta.
            const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
            const double sy = cy + cs * dy - sn * dx;
            const double sx = cx + sn * dy + cs * dx;
            out.at(r, c) = sample_zero(img, sy, sx);
        }
    return out;
}

Tensor flip_lr(const Tensor& img) {
    require_rank(img, 2, "flip_lr");
    Tensor out(img.dims());
    const std::size_t w = img.dim(1);
    for (std::size_t r = 0; r < img.dim(0); ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = img.at(r, w - 1 - c);
    return out;
}

Tensor adjust_contrast(const Tensor& img, double factor) {
    Tensor out(img.dims());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::clamp(img[i] * factor, 0.0, 1.0);
    return out;
}

Tensor apply_augment(const Tensor& img, std::size_t size, const AugmentParams& p) {
    require_rank(img, 2, "augment");
    if (img.dim(0) < 2 || img.dim(1) < 2) throw ShapeError("augment: image must be at least 2x2");
    Tensor x = (p.scale == 1.0 && img.dim(0) == size && img.dim(1) == size) ? img
                                                                              : center_crop_resize(img, p.scale, size);
    if (p.theta_deg != 0.0) x = rotate(x, p.theta_deg);
    if (p.flip) x = flip_lr(x);
    return adjust_contrast(x, p.contrast);
}

Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    return apply_augment(img, cfg.output_size, sample_augment(cfg, rng));
}

} // namespace wsl
