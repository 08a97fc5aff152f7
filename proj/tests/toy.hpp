#pragma once

// Small two-class image sets and a matching network for fast training tests.

#include "oracles.hpp"
#include "wsl/model.hpp"

namespace toy {

inline std::vector<wsl::Sample> samples(std::size_t n, std::size_t size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<wsl::Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        wsl::Tensor img = oracle::random_tensor({size, size}, rng, 0.0, 0.3);
        const int label = static_cast<int>(i % 2);
        if (label == 1)
            for (std::size_t r = 2; r < 6; ++r)
                for (std::size_t c = 2; c < 6; ++c) img.at(r, c) = 0.9;
        out.push_back({img, label});
    }
    return out;
}

inline wsl::NetworkConfig config() {
    wsl::NetworkConfig c;
    c.input_size = 16;
    c.blocks = {4, 6, 6};
    c.head_levels = {2, 3};
    c.num_classes = 2;
    c.lr = 1e-3;
    c.batch_size = 4;
    c.max_iters = 60;
    c.val_every = 10;
    return c;
}

inline wsl::ModelState trained(std::uint64_t seed = 1) {
    wsl::TrainOptions opts;
    opts.seed = seed;
    opts.augment = false;
    return wsl::train(wsl::build(config(), seed), samples(16, 16, seed), {}, wsl::Tensor({2}, 1.0), opts).best;
}

} // namespace toy
