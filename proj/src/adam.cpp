#include "wsl/adam.hpp"

#include <cmath>

namespace wsl {

AdamState AdamState::for_params(const std::vector<Tensor>& params, double lr, double beta1, double beta2,
                                double eps) {
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    for (const auto& p : params) {
        s.m.emplace_back(p.dims());
        s.v.emplace_back(p.dims());
    }
    return s;
}

void adam_step(AdamState& state, std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw ShapeError("adam_step: parameter, gradient and moment counts differ");
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        const Tensor& g = grads[k];
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        if (p.dims() != g.dims() || p.dims() != m.dims() || p.dims() != v.dims())
            throw ShapeError("adam_step: dims mismatch for parameter " + std::to_string(k));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
    ++state.step;
}

} // namespace wsl
