#include "wsl/kernels.hpp"

#include <cmath>

namespace wsl {

ConvGeometry conv_geometry(const Dims& input, const Dims& kernel, std::size_t stride, std::size_t pad) {
    if (input.size() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + dims_string(input));
    if (kernel.size() != 4)
        throw ShapeError("conv2d: kernel must be [C_out,C_in,kH,kW], got " + dims_string(kernel));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (kernel[1] != input[0])
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                         std::to_string(input[0]));
    ConvGeometry g{input[0], input[1], input[2], kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
    if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
        throw ShapeError("conv2d: kernel " + dims_string(kernel) + " larger than padded input " + dims_string(input));
    g.out_h = (g.h + 2 * pad - g.kh) / stride + 1;
    g.out_w = (g.w + 2 * pad - g.kw) / stride + 1;
    return g;
}

namespace reference {

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
    const auto g = conv_geometry(input.dims(), kernel.dims(), stride, pad);
    Tensor out({g.c_out, g.out_h, g.out_w});
    for (std::size_t co = 0; co < g.c_out; ++co)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                double acc = 0.0;
                for (std::size_t ci = 0; ci < g.c_in; ++ci)
                    for (std::size_t ky = 0; ky < g.kh; ++ky)
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            const double v = (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                                              ix >= static_cast<std::ptrdiff_t>(g.w))
                                                 ? 0.0
                                                 : input.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                            acc = std::fma(kernel[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx], v, acc);
                        }
                out.at(co, oy, ox) = acc;
            }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& g) {
    Tensor dx({g.c_in, g.h, g.w});
    for (std::size_t co = 0; co < g.c_out; ++co)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const double d = grad_out.at(co, oy, ox);
                for (std::size_t ci = 0; ci < g.c_in; ++ci)
                    for (std::size_t ky = 0; ky < g.kh; ++ky)
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                                ix >= static_cast<std::ptrdiff_t>(g.w))
                                continue;
                            dx.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                                kernel[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx] * d;
                        }
            }
    return dx;
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g) {
    Tensor dw({g.c_out, g.c_in, g.kh, g.kw});
    for (std::size_t co = 0; co < g.c_out; ++co)
        for (std::size_t ci = 0; ci < g.c_in; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy)
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                                ix >= static_cast<std::ptrdiff_t>(g.w))
                                continue;
                            acc += grad_out.at(co, oy, ox) *
                                   input.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                        }
                    dw[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
    return dw;
}

PoolResult maxpool2d(const Tensor& input, std::size_t size, std::size_t stride) {
    require_rank(input, 3, "maxpool2d");
    if (size < 1 || stride < 1) throw ShapeError("maxpool2d: size and stride must be >= 1");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h < size || w < size) throw ShapeError("maxpool2d: window larger than input " + dims_string(input.dims()));
    const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
    PoolResult r{Tensor({c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow)};
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (ch * h + oy * stride) * w + ox * stride;
                for (std::size_t dy = 0; dy < size; ++dy)
                    for (std::size_t dx = 0; dx < size; ++dx) {
                        const std::size_t idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        if (input[idx] > input[best]) best = idx;
                    }
                const std::size_t o = (ch * oh + oy) * ow + ox;
                r.out[o] = input[best];
                r.argmax[o] = static_cast<std::uint32_t>(best);
            }
    return r;
}

PoolResult global_max_pool(const Tensor& input) {
    require_rank(input, 3, "global_max_pool");
    const std::size_t c = input.dim(0), plane = input.dim(1) * input.dim(2);
    PoolResult r{Tensor({c}), std::vector<std::uint32_t>(c)};
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ch * plane;
        for (std::size_t i = 0; i < plane; ++i)
            if (input[ch * plane + i] > input[best]) best = ch * plane + i;
        r.out[ch] = input[best];
        r.argmax[ch] = static_cast<std::uint32_t>(best);
    }
    return r;
}

} // namespace reference
} // namespace wsl
