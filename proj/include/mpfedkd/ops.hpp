#pragma once

// Differentiable ops over Var. Every op validates shapes, records its output
// on the tape of its first input, and raises NumericError on NaN/Inf output.

#include <cstddef>
#include <span>
#include <vector>

#include "mpfedkd/tensor.hpp"

namespace mpfedkd::ad {

Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var neg(const Var& a);

// x[n×k] + bias[k], bias broadcast over rows.
Var add_row(const Var& x, const Var& bias);
// x[n×k] - row[k], row broadcast over rows.
Var sub_row(const Var& x, const Var& row);

Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

// Row-wise softmax of logits/tau over the trailing axis of a [n×C] tensor.
Var softmax_t(const Var& logits, double tau);
Var log_softmax_t(const Var& logits, double tau);

// out[i] = x[i, labels[i]] for x[n×C].
Var gather(const Var& x, std::span<const int> labels);
Var select_rows(const Var& x, std::span<const std::size_t> rows);

// Packs scalars into a vector of length parts.size().
Var stack(std::span<const Var> scalars);
Var logsumexp(const Var& v);

Var reshape(const Var& a, Shape shape);

// Valid (no padding), stride-1 2-D convolution. Input rows hold one
// channel-major image each: [n × channels·height·width]. Weights are
// [out_channels × channels·kernel·kernel], bias [out_channels]. Output is
// [n × out_channels·(height-kernel+1)·(width-kernel+1)].
struct ConvGeometry {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t kernel = 1;
    std::size_t out_channels = 1;

    std::size_t out_height() const { return height - kernel + 1; }
    std::size_t out_width() const { return width - kernel + 1; }
};

Var conv2d(const Var& input, const Var& weight, const Var& bias, const ConvGeometry& geom);

// Plain (tape-free) helpers.
Tensor softmax_rows(const Tensor& logits, double tau);
Tensor log_softmax_rows(const Tensor& logits, double tau);

}  // namespace mpfedkd::ad
