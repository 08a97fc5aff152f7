#include "oracles.hpp"
#include "wsl/preprocess.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace wsl;

namespace {

// Best [a, a + Q] over a = min + kS by exact pixel counts, smallest a on ties.
std::pair<double, double> exhaustive_window(const std::vector<double>& v, double q, double s) {
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    double best_a = lo;
    std::size_t best = 0;
    for (double a = lo; a <= hi; a += s) {
        std::size_t n = 0;
        for (double x : v) n += x >= a && x <= a + q;
        if (n > best) {
            best = n;
            best_a = a;
        }
    }
    return {best_a, best_a + q};
}

} // namespace

TEST_SUITE("preprocess") {

TEST_CASE("sliding window picks the densest range") {
    std::vector<double> v;
    for (int i = 0; i < 90; ++i) v.push_back(100.0 * i / 89.0);
    v[45] = 50.0;
    for (int i = 0; i < 10; ++i) v.push_back(1000.0);
    const Tensor raw({10, 10}, v);
    NormalizationConfig cfg;
    cfg.window_width = 100.0;
    cfg.step = 50.0;

    const auto [a, b] = exhaustive_window(v, 100.0, 50.0);
    CHECK(a == 0.0);
    CHECK(b == 100.0);
    const WindowChoice w = choose_window(raw, cfg);
    CHECK(w.lo == doctest::Approx(a));
    CHECK(w.hi == doctest::Approx(b));

    const Tensor n = sliding_window_normalize(raw, cfg);
    CHECK(n[45] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(n[99] == 1.0);
    CHECK(n[0] == 0.0);
}

TEST_CASE("normalization edge cases") {
    NormalizationConfig cfg;
    cfg.window_width = 10.0;
    cfg.step = 2.0;
    const Tensor raw({2, 3}, {2.0, 3.0, 4.5, 5.0, 6.0, 8.0});
    const Tensor n = sliding_window_normalize(raw, cfg);
    for (std::size_t i = 0; i < raw.size(); ++i) CHECK(n[i] == doctest::Approx((raw[i] - 2.0) / 10.0).epsilon(1e-12));

    const Tensor c = sliding_window_normalize(Tensor({4, 4}, 3.3), cfg);
    for (double x : c.data()) CHECK(x == 0.0);

    NormalizationConfig bad;
    bad.step = 2.0;
    bad.window_width = 1.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("normalization properties") {
    std::mt19937_64 rng(20);
    NormalizationConfig cfg;
    cfg.window_width = 40.0;
    cfg.step = 10.0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor raw = oracle::random_tensor({12, 12}, rng, -50.0, 150.0);
        for (std::size_t i = 0; i < 60; ++i) raw[i] = 20.0 + 0.3 * static_cast<double>(i % 40);
        const Tensor n = sliding_window_normalize(raw, cfg);
        std::vector<std::size_t> order(raw.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto i, auto j) { return raw[i] < raw[j]; });
        for (std::size_t k = 0; k < order.size(); ++k) {
            CHECK(n[order[k]] >= 0.0);
            CHECK(n[order[k]] <= 1.0);
            if (k > 0) CHECK(n[order[k - 1]] <= n[order[k]]);
        }
        Tensor shifted = raw;
        for (auto& x : shifted.data()) x += 256.0;
        const WindowChoice w0 = choose_window(raw, cfg), w1 = choose_window(shifted, cfg);
        CHECK(w1.lo - 256.0 == doctest::Approx(w0.lo).epsilon(1e-12));
        CHECK(w1.count == w0.count);
    }
}

TEST_CASE("augmentation stages") {
    std::mt19937_64 rng(21);
    const Tensor img = oracle::random_tensor({16, 16}, rng, 0.0, 1.0);
    CHECK(apply_augment(img, 16, AugmentParams{}) == img);

    const Tensor wide = oracle::random_tensor({12, 20}, rng, 0.0, 1.0);
    const Tensor r = apply_augment(wide, 8, AugmentParams{});
    CHECK(r.dims() == Dims{8, 8});

    CHECK(flip_lr(flip_lr(img)) == img);
    CHECK(flip_lr(img).at(3, 0) == img.at(3, 15));

    const Tensor c = adjust_contrast(Tensor({2, 2}, 0.8), 1.5);
    for (double x : c.data()) CHECK(x == 1.0);

    AugmentParams p;
    p.contrast = 1.5;
    CHECK(apply_augment(Tensor({4, 4}, 0.8), 4, p)[5] == 1.0);
}

TEST_CASE("rotation round trip keeps the interior") {
    Tensor img({40, 40});
    // Bilinear sampling reproduces affine content exactly.
    for (std::size_t r = 0; r < 40; ++r)
        for (std::size_t c = 0; c < 40; ++c) img.at(r, c) = 0.2 + 0.01 * double(r) + 0.005 * double(c);
    for (double theta : {-25.0, 7.5, 20.0}) {
        const Tensor back = rotate(rotate(img, theta), -theta);
        const double diag = std::sqrt(2.0) * 40.0;
        const auto band = static_cast<std::size_t>(std::ceil(std::abs(theta) * diag / 90.0)) + 2;
        double worst = 0.0;
        for (std::size_t r = band; r + band < 40; ++r)
            for (std::size_t c = band; c + band < 40; ++c) worst = std::max(worst, std::abs(back.at(r, c) - img.at(r, c)));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("random augmentation") {
    std::mt19937_64 rng(23);
    const Tensor img = oracle::random_tensor({24, 24}, rng, 0.0, 1.0);
    AugmentConfig cfg;
    cfg.output_size = 16;
    Rng a(5), b(5);
    const Tensor x = augment(img, cfg, a);
    CHECK(x == augment(img, cfg, b));
    CHECK(x.dims() == Dims{16, 16});
    for (double v : x.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Rng c(9);
    for (int i = 0; i < 200; ++i) {
        const AugmentParams p = sample_augment(cfg, c);
        CHECK(p.scale >= 0.7);
        CHECK(p.scale <= 1.0);
        CHECK(std::abs(p.theta_deg) <= 25.0);
        CHECK(p.contrast >= 0.5);
        CHECK(p.contrast <= 1.5);
    }
    AugmentConfig bad;
    bad.crop_scale_min = 0.0;
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("seed mixing") {
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(0, 0) != mix_seed(0, 1));
}

}
