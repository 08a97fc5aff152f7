#pragma once

// Central finite differences against backward() on a whole classifier.
// The focal factor is frozen at the unperturbed parameters, matching the
// detached gradient the loss defines.

#include "oracles.hpp"
#include "wsl/model.hpp"

#include <cmath>

namespace gradcheck {

using wsl::Tensor;

struct Result {
    std::size_t checked = 0;
    std::size_t skipped = 0; // perturbation crossed a ReLU or max-pool switch
    double max_rel = 0.0;
};

inline double surrogate(const wsl::ModelState& m, const Tensor& image, int label, double coef, std::uint64_t* sig) {
    wsl::Tape tape;
    const wsl::Var x = tape.constant(image);
    const auto f = wsl::forward_on_tape(m, tape, x, wsl::ParamMode::Constant);
    if (sig) *sig = tape.branch_signature();
    const Tensor s = tape.value(f.scores);
    const auto lp = oracle::log_softmax_ld({s.data().begin(), s.data().end()});
    return coef * static_cast<double>(lp[static_cast<std::size_t>(label)]);
}

// Relative error |a - n| / max(|a|, |n|, floor).
inline Result check(wsl::ModelState m, const Tensor& image, int label, const Tensor& weights, double gamma,
                    double h = 1e-5, double floor = 1e-4) {
    wsl::Tape tape;
    const wsl::Var x = tape.constant(image);
    const auto f = wsl::forward_on_tape(m, tape, x, wsl::ParamMode::Trainable);
    const wsl::Var loss = wsl::focal_loss_term(tape, f.scores, label, weights, gamma, 1);
    const std::uint64_t base_sig = tape.branch_signature();
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (auto p : f.params) grads.push_back(tape.grad(p));

    const Tensor s = tape.value(f.scores);
    const auto lp = oracle::log_softmax_ld({s.data().begin(), s.data().end()});
    const double p_c = std::exp(static_cast<double>(lp[static_cast<std::size_t>(label)]));
    const double coef = -weights[static_cast<std::size_t>(label)] * std::pow(1.0 - p_c, gamma);

    Result r;
    for (std::size_t k = 0; k < m.params.size(); ++k)
        for (std::size_t i = 0; i < m.params[k].size(); ++i) {
            const double keep = m.params[k][i];
            std::uint64_t sp = 0, sm = 0;
            m.params[k][i] = keep + h;
            const double lp_plus = surrogate(m, image, label, coef, &sp);
            m.params[k][i] = keep - h;
            const double lp_minus = surrogate(m, image, label, coef, &sm);
            m.params[k][i] = keep;
            if (sp != base_sig || sm != base_sig) {
                ++r.skipped;
                continue;
            }
            const double numeric = (lp_plus - lp_minus) / (2.0 * h);
            const double analytic = grads[k][i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            r.max_rel = std::max(r.max_rel, std::abs(analytic - numeric) / denom);
            ++r.checked;
        }
    return r;
}

} // namespace gradcheck
