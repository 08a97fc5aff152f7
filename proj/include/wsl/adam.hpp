#pragma once

#include "wsl/tensor.hpp"

#include <cstdint>
#include <vector>

namespace wsl {

// Adam with bias correction. One moment pair per parameter tensor.
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;

    // Zero moments shaped like params.
    static AdamState for_params(const std::vector<Tensor>& params, double lr, double beta1, double beta2, double eps);
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
// p <- p - lr * m_hat / (sqrt(v_hat) + eps), with hats bias-corrected at t = step + 1.
void adam_step(AdamState& state, std::vector<Tensor>& params, const std::vector<Tensor>& grads);

} // namespace wsl
