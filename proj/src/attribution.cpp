#include "wsl/attribution.hpp"

#include "wsl/kernels.hpp"
#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace wsl {

void AttributionConfig::validate() const {
    if (steps < 1) throw ContractError("attribution: steps must be >= 1");
}

namespace {

Tensor as_chw(const Tensor& image) {
    if (image.rank() == 2) return image.reshaped({1, image.dim(0), image.dim(1)});
    return image;
}

std::size_t level_slot(const ModelState& model, std::size_t level) {
    const auto& hl = model.config.head_levels;
    const auto it = std::find(hl.begin(), hl.end(), level);
    if (it == hl.end()) throw ContractError("level " + std::to_string(level) + " has no head");
    return static_cast<std::size_t>(it - hl.begin());
}

void check_class(const ModelState& model, int class_id) {
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= model.config.num_classes)
        throw ContractError("class id " + std::to_string(class_id) + " out of range");
}

Tensor min_max(const Tensor& m) {
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    Tensor out(m.dims());
    if (*hi > *lo)
        for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - *lo) / (*hi - *lo);
    return out;
}

// Gradient sums over the path for several scalar scores sharing one forward
// pass. roots(tape, input) returns one root per score.
std::vector<Tensor> path_gradient_sums(const Tensor& x, const Tensor& baseline, int steps,
                                       const std::function<std::vector<Var>(Tape&, Var)>& roots) {
    if (steps < 1) throw ContractError("integrated_gradients: steps must be >= 1");
    if (x.dims() != baseline.dims()) throw ShapeError("integrated_gradients: baseline dims differ from input");
    const auto m = static_cast<std::size_t>(steps);
    std::vector<std::vector<Tensor>> per_step(m);
#pragma omp parallel for schedule(dynamic) if (workers() > 1)
    for (std::size_t n = 1; n <= m; ++n) {
        const double alpha = static_cast<double>(n) / static_cast<double>(m);
        Tensor point(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) point[i] = baseline[i] + alpha * (x[i] - baseline[i]);
        Tape tape;
        const Var in = tape.input(std::move(point));
        for (Var r : roots(tape, in)) {
            tape.backward(r);
            per_step[n - 1].push_back(tape.grad(in));
        }
    }
    std::vector<Tensor> sums = std::move(per_step[0]);
    for (std::size_t n = 1; n < m; ++n)
        for (std::size_t k = 0; k < sums.size(); ++k)
            for (std::size_t i = 0; i < sums[k].size(); ++i) sums[k][i] += per_step[n][k][i];
    return sums;
}

Tensor finish_ig(const Tensor& sum, const Tensor& x, const Tensor& baseline, int steps) {
    Tensor phi(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) phi[i] = (x[i] - baseline[i]) * (sum[i] / static_cast<double>(steps));
    return phi;
}

} // namespace

CamMaps cam(const ModelState& model, const Tensor& image, int class_id) {
    check_class(model, class_id);
    const ForwardOutput out = forward(model, image);
    const std::size_t n = model.config.input_size;
    CamMaps maps;
    maps.levels = out.levels;
    for (const auto& sm : out.score_maps) {
        const std::size_t h = sm.dim(1), w = sm.dim(2);
        Tensor plane({h, w});
        std::copy_n(sm.ptr() + static_cast<std::size_t>(class_id) * h * w, h * w, plane.ptr());
        maps.raw.push_back(resize_bilinear(plane, n, n));
        maps.normalized.push_back(min_max(maps.raw.back()));
    }
    return maps;
}

Tensor integrated_gradients(const Tensor& x, const Tensor& baseline, int steps, const ScoreFn& score) {
    const auto sums =
        path_gradient_sums(x, baseline, steps, [&](Tape& t, Var in) { return std::vector<Var>{score(t, in)}; });
    return finish_ig(sums[0], x, baseline, steps);
}

Tensor integrated_gradients(const ModelState& model, const Tensor& image, std::size_t level, int class_id, int steps) {
    check_class(model, class_id);
    const std::size_t slot = level_slot(model, level);
    const Tensor x = as_chw(image);
    const auto c = static_cast<std::size_t>(class_id);
    const Tensor phi = integrated_gradients(x, Tensor(x.dims()), steps, [&](Tape& t, Var in) {
        const TapeForward f = forward_on_tape(model, t, in, ParamMode::Constant, level);
        return pick(t, f.level_scores[slot], c);
    });
    return phi.reshaped({x.dim(1), x.dim(2)});
}

double level_score(const ModelState& model, const Tensor& image, std::size_t level, int class_id) {
    check_class(model, class_id);
    const std::size_t slot = level_slot(model, level);
    Tape tape;
    const Var in = tape.constant(as_chw(image));
    const TapeForward f = forward_on_tape(model, tape, in, ParamMode::Constant, level);
    return tape.value(f.level_scores[slot])[static_cast<std::size_t>(class_id)];
}

SaliencyBundle joint_saliency(const ModelState& model, const Tensor& image, const AttributionConfig& cfg) {
    cfg.validate();
    if (model.config.head_levels.size() < 2) throw ContractError("joint_saliency: model needs at least 2 head levels");
    const Tensor x = as_chw(image);
    SaliencyBundle b;
    b.target = cfg.target ? *cfg.target : predict(model, x).label;
    check_class(model, b.target);
    b.levels = model.config.head_levels;
    const auto c = static_cast<std::size_t>(b.target);
    const Tensor zero(x.dims());

    const auto sums = path_gradient_sums(x, zero, cfg.steps, [&](Tape& t, Var in) {
        const TapeForward f = forward_on_tape(model, t, in, ParamMode::Constant);
        std::vector<Var> roots;
        for (auto s : f.level_scores) roots.push_back(pick(t, s, c));
        return roots;
    });
    const ForwardOutput at_x = forward(model, x), at_zero = forward(model, zero);
    const std::size_t h = x.dim(1), w = x.dim(2);
    for (std::size_t l = 0; l < b.levels.size(); ++l) {
        Tensor phi = finish_ig(sums[l], x, zero, cfg.steps).reshaped({h, w});
        const double delta = at_x.level_scores[l][c] - at_zero.level_scores[l][c];
        double total = 0.0;
        for (double v : phi.data()) total += v;
        b.residuals.push_back(total - delta);
        b.score_deltas.push_back(delta);
        b.level_maps.push_back(std::move(phi));
    }
    b.joint = joint_map(b.level_maps);
    return b;
}

Tensor joint_map(const std::vector<Tensor>& level_maps) {
    if (level_maps.empty()) throw ContractError("joint_map: no level maps");
    Tensor joint = level_maps[0];
    for (std::size_t l = 1; l < level_maps.size(); ++l) {
        if (level_maps[l].dims() != joint.dims()) throw ShapeError("joint_map: level maps differ in dims");
        for (std::size_t i = 0; i < joint.size(); ++i) joint[i] *= level_maps[l][i];
    }
    return joint;
}

std::vector<std::filesystem::path> save_bundle(const SaliencyBundle& bundle, const std::filesystem::path& dir,
                                               const std::string& stem) {
    std::vector<std::filesystem::path> paths;
    for (std::size_t l = 0; l < bundle.levels.size(); ++l) {
        paths.push_back(dir / (stem + "_level" + std::to_string(bundle.levels[l]) + ".wst"));
        save_tensor(bundle.level_maps[l], paths.back());
    }
    paths.push_back(dir / (stem + "_joint.wst"));
    save_tensor(bundle.joint, paths.back());
    std::ostringstream os;
    os << "target = " << bundle.target << '\n';
    for (std::size_t l = 0; l < bundle.levels.size(); ++l)
        os << "level" << bundle.levels[l] << ".score_delta = " << format_double(bundle.score_deltas[l]) << '\n'
           << "level" << bundle.levels[l] << ".residual = " << format_double(bundle.residuals[l]) << '\n';
    const std::string text = os.str();
    paths.push_back(dir / (stem + "_saliency.txt"));
    write_file_bytes(paths.back(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return paths;
}

} // namespace wsl
