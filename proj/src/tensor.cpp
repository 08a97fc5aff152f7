#include "wsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace wsl {

std::size_t dims_product(const Dims& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::string dims_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(dims_product(dims_), fill) {
    for (auto d : dims_)
        if (d == 0) throw ShapeError("tensor dims must be positive: " + dims_string(dims_));
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    for (auto d : dims_)
        if (d == 0) throw ShapeError("tensor dims must be positive: " + dims_string(dims_));
    if (data_.size() != dims_product(dims_))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match dims " +
                         dims_string(dims_));
}

Tensor Tensor::reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size())
        throw ShapeError("cannot reshape " + dims_string(dims_) + " to " + dims_string(dims));
    return Tensor(std::move(dims), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() &&
           (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         dims_string(t.dims()));
}

} // namespace wsl
