#include "bnpp/tensor.hpp"

#include <cmath>
#include <string>

namespace bnpp {

namespace {

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape) {
    const std::size_t n = shape_numel(shape);
    shape_ = std::move(shape);
    data_.assign(n, 0.0);
}

DenseTensor DenseTensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    const std::size_t n = shape_numel(shape);
    if (values.size() != n) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    DenseTensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

DenseTensor DenseTensor::full(std::vector<std::size_t> shape, double value) {
    DenseTensor t(std::move(shape));
    for (double& x : t.data_) x = value;
    return t;
}

bool DenseTensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

DenseTensor randn(const std::vector<std::size_t>& shape, Rng& rng) {
    DenseTensor t(shape);
    for (double& x : t.data()) x = rng.normal();
    return t;
}

DenseTensor elementwise(const DenseTensor& a, const DenseTensor& b, Elementwise op) {
    if (b.ndim() != a.ndim()) {
        throw ShapeError("elementwise rank mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    for (std::size_t d = 0; d < a.ndim(); ++d) {
        if (b.shape()[d] != a.shape()[d] && b.shape()[d] != 1) {
            throw ShapeError("operand " + shape_str(b.shape()) +
                             " is not broadcastable to " + shape_str(a.shape()));
        }
    }

    DenseTensor out(a.shape());
    const std::size_t rank = a.ndim();
    std::vector<std::size_t> idx(rank, 0);
    std::span<const double> av = a.data();
    std::span<const double> bv = b.data();
    std::span<double> ov = out.data();

    // b's stride is zero along broadcast (unit) axes.
    std::vector<std::size_t> bstride(rank, 0);
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
        bstride[d] = (b.shape()[d] == 1) ? 0 : s;
        s *= b.shape()[d];
    }

    std::size_t boff = 0;
    for (std::size_t flat = 0; flat < a.numel(); ++flat) {
        const double x = av[flat];
        const double y = bv[boff];
        switch (op) {
            case Elementwise::add: ov[flat] = x + y; break;
            case Elementwise::sub: ov[flat] = x - y; break;
            case Elementwise::mul: ov[flat] = x * y; break;
        }
        // Advance the multi-index and b's offset in lockstep.
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            boff += bstride[d];
            if (idx[d] < a.shape()[d]) break;
            boff -= bstride[d] * a.shape()[d];
            idx[d] = 0;
        }
    }
    return out;
}

double reduce(const DenseTensor& a, Reduce op) {
    if (a.numel() == 0) throw ShapeError("reduce over empty tensor");
    double acc = 0.0;
    for (double x : a.data()) {
        acc += (op == Reduce::l1norm) ? std::fabs(x) : x;
    }
    if (op == Reduce::mean) acc /= static_cast<double>(a.numel());
    return acc;
}

}  // namespace bnpp
