#pragma once

// Class activation maps and integrated-gradients saliency per head level,
// fused into a signed joint map by a pixel-wise product.

#include "wsl/model.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace wsl {

struct AttributionConfig {
    int steps = 25;            // m
    std::optional<int> target; // predicted class when empty

    void validate() const;
};

struct CamMaps {
    std::vector<std::size_t> levels;
    std::vector<Tensor> raw;        // [H,W] per level
    std::vector<Tensor> normalized; // min-max to [0,1]; constant maps become 0
};

CamMaps cam(const ModelState& model, const Tensor& image, int class_id);

// Scalar score built on a tape from an input variable.
using ScoreFn = std::function<Var(Tape&, Var)>;

// Right-endpoint Riemann integrated gradients:
// phi_i = (x_i - x'_i) / m * sum_{n=1..m} dS(x' + (n/m)(x - x'))/dx_i.
Tensor integrated_gradients(const Tensor& x, const Tensor& baseline, int steps, const ScoreFn& score);

// IG of the level-l pre-softmax score s^l[c] from a zero baseline; [H,W].
Tensor integrated_gradients(const ModelState& model, const Tensor& image, std::size_t level, int class_id, int steps);

// s^l[c] evaluated directly.
double level_score(const ModelState& model, const Tensor& image, std::size_t level, int class_id);

struct SaliencyBundle {
    int target = 0;
    std::vector<std::size_t> levels;
    std::vector<Tensor> level_maps; // signed [H,W]
    Tensor joint;                   // product over levels, ascending
    std::vector<double> residuals;  // sum(phi) - (S(x) - S(0)) per level
    std::vector<double> score_deltas;
};

// Pixel-wise product of the level maps in the given order.
Tensor joint_map(const std::vector<Tensor>& level_maps);

SaliencyBundle joint_saliency(const ModelState& model, const Tensor& image, const AttributionConfig& cfg);

// Writes <stem>_level<l>.wst per level, <stem>_joint.wst and a
// <stem>_saliency.txt sidecar with the target and residuals. Returns the
// written paths.
std::vector<std::filesystem::path> save_bundle(const SaliencyBundle& bundle, const std::filesystem::path& dir,
                                               const std::string& stem);

} // namespace wsl
