#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsl {

// Error categories shared by every module.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

using Dims = std::vector<std::size_t>;

std::size_t dims_product(const Dims& dims);
std::string dims_string(const Dims& dims);

// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims, double fill = 0.0);
    Tensor(Dims dims, std::vector<double> data);

    static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
    static Tensor scalar(double v) { return Tensor(Dims{1}, std::vector<double>{v}); }

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D and 3-D row-major accessors.
    double& at(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
    double& at(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * dims_[1] + r) * dims_[2] + c];
    }
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * dims_[1] + r) * dims_[2] + c];
    }

    Tensor reshaped(Dims dims) const;
    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    Dims dims_;
    std::vector<double> data_;
};

// Bitwise equality (distinguishes -0.0 and NaN payloads).
bool bitwise_equal(const Tensor& a, const Tensor& b);

void require_rank(const Tensor& t, std::size_t rank, const char* what);

} // namespace wsl
