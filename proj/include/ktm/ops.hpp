#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ktm/tensor.hpp"

namespace ktm {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// a: m x k, b: k x n.
Tensor matmul(const Tensor& a, const Tensor& b);
// x: R x C, bias: C.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x: R x in, weight: in x out, bias (optional): out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

// Batched products over the leading axis.
// a: N x L x D, b: N x D x M -> N x L x M
Tensor bmm(const Tensor& a, const Tensor& b);
// a: N x L x D, b: N x M x D -> N x L x M (a . b^T)
Tensor bmm_nt(const Tensor& a, const Tensor& b);

// Softmax over the last axis with max-subtraction.
Tensor softmax(const Tensor& x);
// allowed has x.numel() entries; disallowed entries get exactly zero weight.
// A row with nothing allowed comes out all-zero.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> allowed);

inline constexpr double kLayerNormEps = 1e-5;
// Normalises over the last axis (population variance).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor sigmoid(const Tensor& x);

// Inverted dropout; identity when !training or p == 0. Throws ConfigError
// unless 0 <= p < 1.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

// Gathers rows of a 2-D table. Throws std::out_of_range on a bad index.
Tensor index_rows(const Tensor& table, std::span<const std::size_t> rows);
// x: R x C scaled row-wise by s (R values, any shape with R elements).
Tensor row_scale(const Tensor& x, const Tensor& s);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

// x: (B*L) x C. Takes columns [col_start, col_start + heads*head_dim) and
// lays them out as (B*heads) x L x head_dim with n = b*heads + h.
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads,
                   std::size_t head_dim, std::size_t col_start = 0);
// Inverse of split_heads: (B*heads) x L x head_dim -> (B*L) x (heads*head_dim).
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

// Mean binary cross-entropy with probabilities clamped to [eps, 1-eps];
// the sum is divided by `normalizer` (defaults to the number of targets).
inline constexpr double kBceEps = 1e-12;
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets, double normalizer = 0.0);

}  // namespace ktm
