#include "wsl/autodiff.hpp"

#include "wsl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace wsl {

namespace {

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
    if (a.dims() != b.dims())
        throw ShapeError(std::string(what) + ": dims " + dims_string(a.dims()) + " vs " + dims_string(b.dims()));
}

} // namespace

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::param(const Tensor& value) {
    Node n;
    n.external = &value;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::constant_ref(const Tensor& value) {
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value(); }

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.grad.empty()) return n.grad;
    return Tensor(n.value().dims());
}

void Tape::accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        n.grad = g;
        return;
    }
    double* dst = n.grad.ptr();
    const double* src = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate(Var v, Tensor&& g) {
    Node& n = nodes_[v.id];
    if (n.requires_grad && n.grad.empty()) n.grad = std::move(g);
    else accumulate(v, static_cast<const Tensor&>(g));
}

Tensor Tape::take_grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value().dims());
    return std::move(n.grad);
}

void Tape::accumulate(Var v, std::size_t index, double g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Tensor(n.value().dims());
    n.grad[index] += g;
}

void Tape::mix_signature(std::uint64_t word) {
    signature_ ^= word;
    signature_ *= 0x100000001b3ULL;
}

void Tape::backward(Var root) {
    if (root.id >= nodes_.size()) throw ContractError("backward: root is not on this tape");
    if (nodes_[root.id].value().size() != 1)
        throw ContractError("backward: root must be a scalar, got dims " + dims_string(nodes_[root.id].value().dims()));
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Tensor(nodes_[root.id].value().dims(), 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.backward) continue;
        // Callbacks only touch earlier nodes; nodes_ is not resized here.
        n.backward(*this, n.grad);
        n.grad = Tensor();
    }
}

Var conv2d(Tape& t, Var input, Var kernel, std::size_t stride, std::size_t pad) {
    const Tensor& x = t.value(input);
    const Tensor& w = t.value(kernel);
    const auto geom = conv_geometry(x.dims(), w.dims(), stride, pad);
    const bool rg = t.requires_grad(input) || t.requires_grad(kernel);
    return t.record(kernels::conv2d(x, w, stride, pad), rg, [input, kernel, geom](Tape& tp, Tensor& g) {
        if (tp.requires_grad(input)) tp.accumulate(input, kernels::conv2d_grad_input(g, tp.value(kernel), geom));
        if (tp.requires_grad(kernel)) tp.accumulate(kernel, kernels::conv2d_grad_kernel(g, tp.value(input), geom));
    });
}

Var add_channel_bias(Tape& t, Var x, Var bias) {
    Tensor out = t.value(x);
    kernels::add_channel_bias(out, t.value(bias));
    const bool rg = t.requires_grad(x) || t.requires_grad(bias);
    return t.record(std::move(out), rg, [x, bias](Tape& tp, Tensor& g) {
        if (tp.requires_grad(bias)) tp.accumulate(bias, kernels::channel_sum(g));
        tp.accumulate(x, std::move(g));
    });
}

Var relu(Tape& t, Var x) {
    const Tensor& in = t.value(x);
    Tensor out(in.dims());
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const bool on = in[i] > 0.0;
        out[i] = on ? in[i] : 0.0;
        word = (word << 1) | static_cast<std::uint64_t>(on);
        if ((i & 63) == 63) {
            t.mix_signature(word);
            word = 0;
        }
    }
    t.mix_signature(word);
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, Tensor& g) {
        const Tensor& in = tp.value(x);
        for (std::size_t i = 0; i < in.size(); ++i)
            if (!(in[i] > 0.0)) g[i] = 0.0;
        tp.accumulate(x, std::move(g));
    });
}

namespace {

Var record_pool(Tape& t, Var x, PoolResult r) {
    for (auto idx : r.argmax) t.mix_signature(idx);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(r.argmax));
    return t.record(std::move(r.out), t.requires_grad(x), [x, argmax](Tape& tp, Tensor& g) {
        Tensor dx(tp.value(x).dims());
        for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
        tp.accumulate(x, dx);
    });
}

} // namespace

Var maxpool2d(Tape& t, Var x, std::size_t size, std::size_t stride) {
    return record_pool(t, x, kernels::maxpool2d(t.value(x), size, stride));
}

Var global_max_pool(Tape& t, Var x) { return record_pool(t, x, kernels::global_max_pool(t.value(x))); }

Var add(Tape& t, Var a, Var b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    require_same_dims(va, vb, "add");
    Tensor out(va.dims());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.record(std::move(out), rg, [a, b](Tape& tp, Tensor& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, std::move(g));
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    require_same_dims(va, vb, "mul");
    Tensor out(va.dims());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.record(std::move(out), rg, [a, b](Tape& tp, Tensor& g) {
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor da(va.dims());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * vb[i];
            tp.accumulate(a, da);
        }
        if (tp.requires_grad(b)) {
            Tensor db(vb.dims());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * va[i];
            tp.accumulate(b, db);
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    Tensor out = t.value(a);
    for (auto& v : out.data()) v *= c;
    return t.record(std::move(out), t.requires_grad(a), [a, c](Tape& tp, Tensor& g) {
        for (auto& v : g.data()) v *= c;
        tp.accumulate(a, std::move(g));
    });
}

Var sum(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    double s = 0.0;
    for (double v : va.data()) s += v;
    return t.record(Tensor::scalar(s), t.requires_grad(a), [a](Tape& tp, Tensor& g) {
        tp.accumulate(a, Tensor(tp.value(a).dims(), g[0]));
    });
}

Tensor log_softmax(const Tensor& scores) {
    require_rank(scores, 1, "log_softmax");
    if (scores.size() < 2) throw ShapeError("log_softmax: need at least 2 scores");
    const double mx = *std::max_element(scores.data().begin(), scores.data().end());
    double z = 0.0;
    for (double s : scores.data()) z += std::exp(s - mx);
    const double lse = mx + std::log(z);
    Tensor out(scores.dims());
    for (std::size_t k = 0; k < scores.size(); ++k) out[k] = scores[k] - lse;
    return out;
}

Var log_softmax(Tape& t, Var scores) {
    Tensor out = log_softmax(t.value(scores));
    const Var self{t.size()};
    return t.record(std::move(out), t.requires_grad(scores), [scores, self](Tape& tp, Tensor& g) {
        // d out_k / d s_j = [k == j] - softmax_j
        const Tensor& ls = tp.value(self);
        double gsum = 0.0;
        for (double v : g.data()) gsum += v;
        Tensor ds(ls.dims());
        for (std::size_t j = 0; j < ls.size(); ++j) ds[j] = g[j] - std::exp(ls[j]) * gsum;
        tp.accumulate(scores, ds);
    });
}

Var pick(Tape& t, Var a, std::size_t k) {
    const Tensor& va = t.value(a);
    if (k >= va.size()) throw ShapeError("pick: index " + std::to_string(k) + " out of range");
    return t.record(Tensor::scalar(va[k]), t.requires_grad(a),
                    [a, k](Tape& tp, Tensor& g) { tp.accumulate(a, k, g[0]); });
}

} // namespace wsl
