#include "wsl/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#ifdef _OPENMP
#include <omp.h>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace wsl {

namespace {

int g_workers = 1;

// Kernels parallelize only when not already inside a parallel region.
bool parallel_here() {
#ifdef _OPENMP
    return g_workers > 1 && omp_get_level() == 0;
#else
    return false;
#endif
}

constexpr std::size_t kChannelBlock = 8;

struct Padded {
    std::vector<double> buf;
    const double* data;
    std::size_t h, w;
};

Padded pad_planes(const Tensor& in, std::size_t pad) {
    const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    if (pad == 0) return {{}, in.ptr(), h, w};
    const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
    Padded p{std::vector<double>(c * hp * wp, 0.0), nullptr, hp, wp};
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(in.ptr() + (ch * h + y) * w, w, p.buf.data() + (ch * hp + y + pad) * wp + pad);
    p.data = p.buf.data();
    return p;
}

// Read-only view of a convolution kernel: the weight for output channel o,
// input channel ci and tap (ky, kx) is base(o)[ci * sc + ky * sy + kx * sx].
// Lets the input-gradient pass read the flipped, transposed kernel in place.
struct WeightView {
    const double* data;
    std::ptrdiff_t so, sc, sy, sx, origin;
    std::size_t c_out, c_in, kh, kw;
    const double* base(std::size_t o) const { return data + origin + static_cast<std::ptrdiff_t>(o) * so; }
};

WeightView plain_view(const Tensor& k) {
    const auto kh = static_cast<std::ptrdiff_t>(k.dim(2)), kw = static_cast<std::ptrdiff_t>(k.dim(3));
    const auto ci = static_cast<std::ptrdiff_t>(k.dim(1));
    return {k.ptr(), ci * kh * kw, kh * kw, kw, 1, 0, k.dim(0), k.dim(1), k.dim(2), k.dim(3)};
}

// Kernel [C_out,C_in,kH,kW] seen as [C_in,C_out,kH,kW] with both spatial axes
// reversed.
WeightView flipped_view(const Tensor& k) {
    const auto kh = static_cast<std::ptrdiff_t>(k.dim(2)), kw = static_cast<std::ptrdiff_t>(k.dim(3));
    const auto ci = static_cast<std::ptrdiff_t>(k.dim(1));
    return {k.ptr(), kh * kw, ci * kh * kw, -kw, -1, kh * kw - 1, k.dim(1), k.dim(0), k.dim(2), k.dim(3)};
}

#if defined(__AVX512F__)
// Register tile: 8 output channels x (8 * NV) output columns.
template <int NV>
inline void conv_tile_avx512(const double* row0, std::size_t plane, std::size_t wp, std::size_t xs,
                             const WeightView& wv, std::size_t co0, __mmask8 tail_mask,
                             __m512d (&acc)[kChannelBlock][NV]) {
    const double* wb[kChannelBlock];
    for (std::size_t j = 0; j < kChannelBlock; ++j) wb[j] = wv.base(std::min(co0 + j, wv.c_out - 1));
    for (auto& r : acc)
        for (auto& v : r) v = _mm512_setzero_pd();
    for (std::size_t ci = 0; ci < wv.c_in; ++ci) {
        for (std::size_t ky = 0; ky < wv.kh; ++ky) {
            const double* row = row0 + ci * plane + ky * wp;
            const std::ptrdiff_t woff = static_cast<std::ptrdiff_t>(ci) * wv.sc + static_cast<std::ptrdiff_t>(ky) * wv.sy;
            for (std::size_t kx = 0; kx < wv.kw; ++kx) {
                const double* src = row + kx * xs;
                __m512d x[NV];
                for (int v = 0; v + 1 < NV; ++v) x[v] = _mm512_loadu_pd(src + 8 * v);
                x[NV - 1] = _mm512_maskz_loadu_pd(tail_mask, src + 8 * (NV - 1));
                const std::ptrdiff_t off = woff + static_cast<std::ptrdiff_t>(kx) * wv.sx;
                for (std::size_t j = 0; j < kChannelBlock; ++j) {
                    const __m512d wj = _mm512_set1_pd(wb[j][off]);
                    for (int v = 0; v < NV; ++v) acc[j][v] = _mm512_fmadd_pd(wj, x[v], acc[j][v]);
                }
            }
        }
    }
}
#endif

} // namespace

void set_workers(int n) {
    g_workers = std::max(1, n);
#ifdef _OPENMP
    omp_set_num_threads(g_workers);
#endif
}

int workers() { return g_workers; }

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace kernels {

namespace {

// Stride-1 outputs are computed over the flattened padded grid: output
// (oy, ox) sits at q = oy * Wp + ox and reads input at q + ky * Wp + kx, so a
// tile of consecutive q is contiguous regardless of the row width. Columns
// ox >= out_w are computed and discarded.
Tensor conv2d_view(const Tensor& input, const WeightView& wv, std::size_t stride, std::size_t pad) {
    const std::size_t h = input.dim(1), w = input.dim(2);
    if (h + 2 * pad < wv.kh || w + 2 * pad < wv.kw) throw ShapeError("conv2d: kernel larger than padded input");
    const std::size_t out_h = (h + 2 * pad - wv.kh) / stride + 1, out_w = (w + 2 * pad - wv.kw) / stride + 1;
    const Padded p = pad_planes(input, pad);
    const std::size_t blocks = (wv.c_out + kChannelBlock - 1) / kChannelBlock;
    const std::size_t plane = p.h * p.w;
    Tensor out({wv.c_out, out_h, out_w});
    double* o = out.ptr();

#if defined(__AVX512F__)
    constexpr std::size_t kTile = 16;
    if (stride == 1 && out_w < kTile) {
        // Narrow planes: gather every tap into a row of positions padded to
        // a whole tile, so no computed column is wasted.
        const std::size_t positions = out_h * out_w;
        const std::size_t row = (positions + kTile - 1) / kTile * kTile;
        const std::size_t taps = wv.c_in * wv.kh * wv.kw;
        std::vector<double> cols(taps * row, 0.0);
        for (std::size_t ci = 0; ci < wv.c_in; ++ci)
            for (std::size_t ky = 0; ky < wv.kh; ++ky)
                for (std::size_t kx = 0; kx < wv.kw; ++kx) {
                    double* dst = cols.data() + ((ci * wv.kh + ky) * wv.kw + kx) * row;
                    for (std::size_t oy = 0; oy < out_h; ++oy)
                        std::copy_n(p.data + ci * plane + (oy + ky) * p.w + kx, out_w, dst + oy * out_w);
                }
        const std::size_t chunks = row / kTile;
        const std::size_t work = blocks * chunks;
#pragma omp parallel for schedule(static) if (parallel_here())
        for (std::size_t item = 0; item < work; ++item) {
            const std::size_t b = item / chunks, q0 = (item % chunks) * kTile;
            const std::size_t co0 = b * kChannelBlock;
            const std::size_t nb = std::min(kChannelBlock, wv.c_out - co0);
            __m512d acc[kChannelBlock][2];
            conv_tile_avx512<2>(cols.data() + q0, wv.kh * wv.kw * row, wv.kw * row, row, wv, co0, 0xff, acc);
            alignas(64) double tile[kChannelBlock][kTile];
            for (std::size_t j = 0; j < nb; ++j) {
                _mm512_store_pd(tile[j], acc[j][0]);
                _mm512_store_pd(tile[j] + 8, acc[j][1]);
            }
            const std::size_t n = std::min(kTile, positions - q0);
            for (std::size_t j = 0; j < nb; ++j) std::copy_n(tile[j], n, o + (co0 + j) * positions + q0);
        }
        return out;
    }
    if (stride == 1) {
        const std::size_t flat = (out_h - 1) * p.w + out_w;
        const std::size_t chunks = (flat + kTile - 1) / kTile;
        const std::size_t work = blocks * chunks;
#pragma omp parallel for schedule(static) if (parallel_here())
        for (std::size_t item = 0; item < work; ++item) {
            const std::size_t b = item / chunks, q0 = (item % chunks) * kTile;
            const std::size_t co0 = b * kChannelBlock;
            const std::size_t nb = std::min(kChannelBlock, wv.c_out - co0);
            const std::size_t n = std::min(kTile, flat - q0);
            alignas(64) double tile[kChannelBlock][kTile];
            if (n > 8) {
                __m512d acc[kChannelBlock][2];
                conv_tile_avx512<2>(p.data + q0, plane, p.w, 1, wv, co0,
                                    static_cast<__mmask8>((1u << (n - 8)) - 1u), acc);
                for (std::size_t j = 0; j < nb; ++j) {
                    _mm512_store_pd(tile[j], acc[j][0]);
                    _mm512_store_pd(tile[j] + 8, acc[j][1]);
                }
            } else {
                __m512d acc[kChannelBlock][1];
                conv_tile_avx512<1>(p.data + q0, plane, p.w, 1, wv, co0, static_cast<__mmask8>((1u << n) - 1u),
                                    acc);
                for (std::size_t j = 0; j < nb; ++j) _mm512_store_pd(tile[j], acc[j][0]);
            }
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t oy = (q0 + t) / p.w, ox = (q0 + t) % p.w;
                if (ox >= out_w) continue;
                for (std::size_t j = 0; j < nb; ++j) o[((co0 + j) * out_h + oy) * out_w + ox] = tile[j][t];
            }
        }
        return out;
    }
#endif

    const std::size_t rows = wv.c_out * out_h;
#pragma omp parallel for schedule(static) if (parallel_here())
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t co = r / out_h, oy = r % out_h;
        const double* wb = wv.base(co);
        const double* prow = p.data + oy * stride * p.w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double acc = 0.0;
            for (std::size_t ci = 0; ci < wv.c_in; ++ci)
                for (std::size_t ky = 0; ky < wv.kh; ++ky)
                    for (std::size_t kx = 0; kx < wv.kw; ++kx) {
                        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(ci) * wv.sc +
                                                   static_cast<std::ptrdiff_t>(ky) * wv.sy +
                                                   static_cast<std::ptrdiff_t>(kx) * wv.sx;
                        acc = std::fma(wb[off], prow[ci * plane + ky * p.w + ox * stride + kx], acc);
                    }
            o[(co * out_h + oy) * out_w + ox] = acc;
        }
    }
    return out;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
    conv_geometry(input.dims(), kernel.dims(), stride, pad);
    return conv2d_view(input, plain_view(kernel), stride, pad);
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& g) {
    if (g.stride == 1 && g.pad < g.kh && g.pad < g.kw && g.kh == g.kw) {
        // Stride-1 input gradient is a full correlation of the output gradient
        // with the spatially flipped, channel-transposed kernel.
        return conv2d_view(grad_out, flipped_view(kernel), 1, g.kh - 1 - g.pad);
    }
    return reference::conv2d_grad_input(grad_out, kernel, g);
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g) {
    if (g.stride != 1) return reference::conv2d_grad_kernel(grad_out, input, g);
    const Padded p = pad_planes(input, g.pad);
    const std::size_t plane = p.h * p.w;
    const std::size_t ow = g.out_w, oh = g.out_h;
    // Output gradient re-laid on the flattened padded grid (zeros in the
    // discarded columns) so every tap is a contiguous dot product.
    const std::size_t flat = (oh - 1) * p.w + ow;
    std::vector<double> dflat(g.c_out * flat, 0.0);
    for (std::size_t co = 0; co < g.c_out; ++co)
        for (std::size_t oy = 0; oy < oh; ++oy)
            std::copy_n(grad_out.ptr() + (co * oh + oy) * ow, ow, dflat.data() + co * flat + oy * p.w);

    Tensor dw({g.c_out, g.c_in, g.kh, g.kw});
    constexpr std::size_t kRowBlock = 4;
    const std::size_t co_blocks = (g.c_out + kRowBlock - 1) / kRowBlock;
    const std::size_t work = co_blocks * g.c_in;

#pragma omp parallel for schedule(static) if (parallel_here())
    for (std::size_t item = 0; item < work; ++item) {
        const std::size_t cb = item / g.c_in, ci = item % g.c_in;
        const std::size_t co0 = cb * kRowBlock;
        const std::size_t nb = std::min(kRowBlock, g.c_out - co0);
        const double* pin = p.data + ci * plane;
        const double* d[kRowBlock];
        for (std::size_t j = 0; j < kRowBlock; ++j) d[j] = dflat.data() + (co0 + std::min(j, nb - 1)) * flat;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
#if defined(__AVX512F__)
            if (g.kw == 3) {
                // 4 output channels x 3 horizontal taps share each load.
                __m512d acc[kRowBlock][3];
                for (auto& r : acc)
                    for (auto& v : r) v = _mm512_setzero_pd();
                const double* src = pin + ky * p.w;
                for (std::size_t q = 0; q < flat; q += 8) {
                    const std::size_t n = std::min<std::size_t>(8, flat - q);
                    const auto mask = static_cast<__mmask8>((1u << n) - 1u);
                    __m512d x[3];
                    for (int t = 0; t < 3; ++t) x[t] = _mm512_maskz_loadu_pd(mask, src + q + t);
                    for (std::size_t j = 0; j < kRowBlock; ++j) {
                        const __m512d dv = _mm512_maskz_loadu_pd(mask, d[j] + q);
                        for (int t = 0; t < 3; ++t) acc[j][t] = _mm512_fmadd_pd(dv, x[t], acc[j][t]);
                    }
                }
                for (std::size_t j = 0; j < nb; ++j)
                    for (std::size_t t = 0; t < 3; ++t)
                        dw[(((co0 + j) * g.c_in + ci) * g.kh + ky) * g.kw + t] = _mm512_reduce_add_pd(acc[j][t]);
                continue;
            }
#endif
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double acc[kRowBlock] = {};
                const double* src = pin + ky * p.w + kx;
                for (std::size_t j = 0; j < kRowBlock; ++j)
                    for (std::size_t q = 0; q < flat; ++q) acc[j] += d[j][q] * src[q];
                for (std::size_t j = 0; j < nb; ++j) dw[(((co0 + j) * g.c_in + ci) * g.kh + ky) * g.kw + kx] = acc[j];
            }
        }
    }
    return dw;
}

void add_channel_bias(Tensor& x, const Tensor& bias) {
    require_rank(x, 3, "add_channel_bias");
    if (bias.size() != x.dim(0)) throw ShapeError("add_channel_bias: bias length does not match channels");
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < x.dim(0); ++c) {
        double* p = x.ptr() + c * plane;
        const double b = bias[c];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

Tensor channel_sum(const Tensor& x) {
    require_rank(x, 3, "channel_sum");
    const std::size_t plane = x.dim(1) * x.dim(2);
    Tensor s({x.dim(0)});
    for (std::size_t c = 0; c < x.dim(0); ++c) {
        double acc = 0.0;
        const double* p = x.ptr() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        s[c] = acc;
    }
    return s;
}

PoolResult maxpool2d(const Tensor& input, std::size_t size, std::size_t stride) {
    require_rank(input, 3, "maxpool2d");
    if (size < 1 || stride < 1) throw ShapeError("maxpool2d: size and stride must be >= 1");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h < size || w < size) throw ShapeError("maxpool2d: window larger than input " + dims_string(input.dims()));
    const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
    PoolResult r{Tensor({c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow)};
    const double* in = input.ptr();

#pragma omp parallel for schedule(static) if (parallel_here() && c > 1)
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (ch * h + oy * stride) * w + ox * stride;
                double bv = in[best];
                for (std::size_t dy = 0; dy < size; ++dy) {
                    const std::size_t base = (ch * h + oy * stride + dy) * w + ox * stride;
                    for (std::size_t dx = 0; dx < size; ++dx)
                        if (in[base + dx] > bv) {
                            bv = in[base + dx];
                            best = base + dx;
                        }
                }
                const std::size_t o = (ch * oh + oy) * ow + ox;
                r.out[o] = bv;
                r.argmax[o] = static_cast<std::uint32_t>(best);
            }
    return r;
}

PoolResult global_max_pool(const Tensor& input) { return reference::global_max_pool(input); }

} // namespace kernels
} // namespace wsl
