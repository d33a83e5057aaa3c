#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bnpp/errors.hpp"
#include "bnpp/rng.hpp"

namespace bnpp {

// Dense real-valued N-dimensional array, row-major (NCHW for feature
// maps, OCHW for weights). Storage and accumulation are double
// precision throughout. Tensors are immutable from the caller's point
// of view once an operation returns them; sharing across threads for
// reading is safe.
class DenseTensor {
public:
    DenseTensor() = default;

    // Zero-filled tensor. Extents must all be >= 1.
    explicit DenseTensor(std::vector<std::size_t> shape);

    static DenseTensor from(std::vector<std::size_t> shape, std::vector<double> values);

    static DenseTensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    double operator[](std::size_t flat) const { return data_[flat]; }
    double& operator[](std::size_t flat) { return data_[flat]; }

    // Flat offset of a 3-D index; shape must have rank 3.
    std::size_t offset3(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * shape_[1] + j) * shape_[2] + k;
    }

    bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// i.i.d. standard normal samples; bit-identical for identical seeds.
DenseTensor randn(const std::vector<std::size_t>& shape, Rng& rng);

enum class Elementwise { add, sub, mul };

// Element-wise op. `b` must either match `a`'s shape or be broadcastable
// to it by unit extents (same rank, each extent equal or 1).
DenseTensor elementwise(const DenseTensor& a, const DenseTensor& b, Elementwise op);

enum class Reduce { sum, mean, l1norm };

double reduce(const DenseTensor& a, Reduce op);

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace bnpp
