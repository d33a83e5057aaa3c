#include "bnpp/bitpack.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace bnpp {

int sign(double x) {
    if (std::isnan(x)) throw ValueError("sign of NaN is undefined");
    return x > 0.0 ? 1 : -1;
}

namespace {

std::uint64_t tail_mask(std::size_t n_bits_in_last_word) {
    return n_bits_in_last_word == 0 ? ~std::uint64_t{0}
                                    : (~std::uint64_t{0} >> (64 - n_bits_in_last_word));
}

}  // namespace

PackedTensor PackedTensor::zeros(std::vector<std::size_t> logical_shape) {
    const std::size_t n = shape_numel(logical_shape);
    PackedTensor p;
    p.rows_ = logical_shape.size() >= 2 ? logical_shape[0] : 1;
    p.cols_ = n / p.rows_;
    p.words_per_row_ = (p.cols_ + 63) / 64;
    p.words_.assign(p.rows_ * p.words_per_row_, 0);
    p.shape_ = std::move(logical_shape);
    return p;
}

PackedTensor PackedTensor::pack(const DenseTensor& t) {
    PackedTensor p = zeros(t.shape());
    std::span<const double> v = t.data();
    std::size_t flat = 0;
    for (std::size_t r = 0; r < p.rows_; ++r) {
        for (std::size_t c = 0; c < p.cols_; ++c, ++flat) {
            if (sign(v[flat]) > 0) p.set_bit(r, c);
        }
    }
    return p;
}

PackedTensor PackedTensor::from_words(std::vector<std::size_t> logical_shape,
                                      std::vector<std::uint64_t> words) {
    PackedTensor p = zeros(std::move(logical_shape));
    if (words.size() != p.words_.size()) {
        throw FormatError("packed payload has " + std::to_string(words.size()) +
                          " words, expected " + std::to_string(p.words_.size()));
    }
    const std::uint64_t mask = tail_mask(p.cols_ & 63);
    for (std::size_t r = 0; r < p.rows_; ++r) {
        if ((words[(r + 1) * p.words_per_row_ - 1] & ~mask) != 0) {
            throw FormatError("nonzero padding bits in packed row " + std::to_string(r));
        }
    }
    p.words_ = std::move(words);
    return p;
}

DenseTensor PackedTensor::unpack() const {
    DenseTensor t(shape_);
    std::span<double> v = t.data();
    std::size_t flat = 0;
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c, ++flat) {
            v[flat] = bit(r, c) ? 1.0 : -1.0;
        }
    }
    return t;
}

PackedTensor PackedTensor::complement() const {
    PackedTensor p = *this;
    const std::uint64_t mask = tail_mask(cols_ & 63);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t w = 0; w < words_per_row_; ++w) {
            std::uint64_t& word = p.words_[r * words_per_row_ + w];
            word = ~word;
            if (w + 1 == words_per_row_) word &= mask;
        }
    }
    return p;
}

std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                      std::size_t n) {
    const std::size_t full_words = n / 64;
    std::int64_t matches = 0;
    for (std::size_t w = 0; w < full_words; ++w) {
        matches += std::popcount(~(a[w] ^ b[w]));
    }
    const std::size_t tail = n & 63;
    if (tail != 0) {
        matches += std::popcount(~(a[full_words] ^ b[full_words]) & tail_mask(tail));
    }
    return 2 * matches - static_cast<std::int64_t>(n);
}

std::int64_t xnor_dot(const PackedTensor& a, std::size_t row_a, const PackedTensor& b,
                      std::size_t row_b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("xnor_dot row length mismatch: " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    }
    return xnor_dot(a.row(row_a), b.row(row_b), a.cols());
}

double storage_ratio(const ConvSpec& spec, unsigned real_bits) {
    spec.validate();
    const double n = static_cast<double>(spec.o * spec.field());
    const double real_bytes = n * real_bits / 8.0;
    const double packed_bytes = n / 8.0;
    return real_bytes / packed_bytes;
}

}  // namespace bnpp
