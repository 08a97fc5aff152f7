#pragma once

// Raw numeric kernels behind the autodiff ops.
//
// Two implementations share these signatures:
//   wsl::kernels    OpenMP-parallel, register-blocked (used by the library)
//   wsl::reference  serial nested loops (kept for tests and benchmarks)
//
// Convolution forward accumulates every output in the fixed order
// C_in (outer), kH, kW (inner), starting from 0.0, so both implementations
// agree bitwise. Gradient kernels have no fixed order across implementations.

#include "wsl/tensor.hpp"

#include <cstdint>
#include <vector>

namespace wsl {

struct ConvGeometry {
    std::size_t c_in, h, w;
    std::size_t c_out, kh, kw;
    std::size_t stride, pad;
    std::size_t out_h, out_w;
};

// Validates shapes and computes output extents. Throws ShapeError.
ConvGeometry conv_geometry(const Dims& input, const Dims& kernel, std::size_t stride, std::size_t pad);

struct PoolResult {
    Tensor out;
    // Flat index into the input of the element that produced each output.
    std::vector<std::uint32_t> argmax;
};

namespace kernels {

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& g);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g);

// Adds bias[c] to every element of channel c, in place.
void add_channel_bias(Tensor& x, const Tensor& bias);
Tensor channel_sum(const Tensor& x);

PoolResult maxpool2d(const Tensor& input, std::size_t size, std::size_t stride);
PoolResult global_max_pool(const Tensor& input);

} // namespace kernels

namespace reference {

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& g);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g);
PoolResult maxpool2d(const Tensor& input, std::size_t size, std::size_t stride);
PoolResult global_max_pool(const Tensor& input);

} // namespace reference

// Number of OpenMP workers used by parallel regions (1 when built without OpenMP).
void set_workers(int n);
int workers();

// Keeps freed activation buffers in the heap instead of returning them to
// the OS, which avoids page-fault churn on every forward/backward pass.
void tune_allocator();

} // namespace wsl
