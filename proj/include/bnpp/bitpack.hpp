#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bnpp/conv_spec.hpp"
#include "bnpp/tensor.hpp"

namespace bnpp {

// sign(x): +1 if x > 0, -1 otherwise (zero and negative zero map to -1).
// NaN is rejected.
int sign(double x);

// Sign-binarized tensor stored one bit per element in 64-bit words.
//
// Layout: the leading logical axis indexes rows (a 1-D tensor is a single
// row); the remaining axes flatten row-major into the row's bit string,
// so the innermost axis varies fastest. bit = 1 encodes +1, bit = 0
// encodes -1. Each row starts on a word boundary; trailing pad bits in
// a row's last word are kept at 0 (the -1 encoding) and are masked out
// of every dot product. Immutable after construction; safe to share
// across threads.
class PackedTensor {
public:
    static PackedTensor pack(const DenseTensor& t);

    // Reassemble from a serialized payload. Rejects nonzero pad bits.
    static PackedTensor from_words(std::vector<std::size_t> logical_shape,
                                   std::vector<std::uint64_t> words);

    // Empty rows x cols matrix (all bits 0), for incremental assembly.
    static PackedTensor zeros(std::vector<std::size_t> logical_shape);

    const std::vector<std::size_t>& logical_shape() const { return shape_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t words_per_row() const { return words_per_row_; }
    std::size_t pad_bits() const { return words_per_row_ * 64 - cols_; }

    std::span<const std::uint64_t> words() const { return words_; }
    std::span<std::uint64_t> words() { return words_; }
    std::span<const std::uint64_t> row(std::size_t r) const {
        return {words_.data() + r * words_per_row_, words_per_row_};
    }

    bool bit(std::size_t r, std::size_t c) const {
        return (words_[r * words_per_row_ + (c >> 6)] >> (c & 63)) & 1u;
    }
    void set_bit(std::size_t r, std::size_t c) {
        words_[r * words_per_row_ + (c >> 6)] |= std::uint64_t{1} << (c & 63);
    }

    // Dense +-1 tensor with the original logical shape.
    DenseTensor unpack() const;

    // All logical bits flipped; pad bits stay 0.
    PackedTensor complement() const;

    std::size_t payload_bytes() const { return words_.size() * sizeof(std::uint64_t); }

private:
    PackedTensor() = default;

    std::vector<std::size_t> shape_;
    std::size_t rows_ = 0, cols_ = 0, words_per_row_ = 0;
    std::vector<std::uint64_t> words_;
};

// Sum of a_i * b_i over n +-1 elements: 2 * popcount(XNOR) - n, with the
// final word masked so pad bits never contribute.
std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                      std::size_t n);

// Row-to-row variant; both tensors must have equal row length.
std::int64_t xnor_dot(const PackedTensor& a, std::size_t row_a, const PackedTensor& b,
                      std::size_t row_b);

// Real-valued-bytes over packed-bytes for a layer's weights, at the given
// real element width. Word padding is excluded, so the ratio is exact.
double storage_ratio(const ConvSpec& spec, unsigned real_bits = 64);

}  // namespace bnpp
