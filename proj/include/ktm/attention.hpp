#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ktm/tensor.hpp"

namespace ktm {

enum class AttentionVariant { Vanilla, Monotonic, Convolutional, MonoConv };

std::string to_string(AttentionVariant v);
// Accepts vanilla, mono, conv, monoconv.
AttentionVariant parse_attention_variant(const std::string& name);

struct AttentionOptions {
  AttentionVariant variant = AttentionVariant::MonoConv;
  std::size_t heads = 8;
  std::size_t kernel = 9;       // LConv width, odd
  bool literal_decay = false;   // softmax(-delta*d*qk/sqrt(Dk)) instead of exp(-delta*d)*qk/sqrt(Dk)
  bool causal = false;          // gamma and decayed weights restricted to keys t' <= t
  bool distance_grad = false;   // let gradients flow through gamma into d
};

// How the heads are divided between the attention (MA or vanilla) branch and
// the span-based dynamic convolution branch.
struct BranchLayout {
  std::size_t attn_heads = 0;
  std::size_t conv_heads = 0;
  std::size_t head_dim = 0;
  std::size_t attn_width() const { return attn_heads * head_dim; }
  std::size_t conv_width() const { return conv_heads * head_dim; }
};

// Throws ConfigError when hidden is not divisible by the head count or the
// MonoConv split is uneven.
BranchLayout branch_layout(const AttentionOptions& options, std::size_t hidden);

// One encoder layer's attention weights. Absent tensors stay undefined.
struct AttentionParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // hidden x hidden, hidden
  Tensor delta_raw;                               // [attn_heads], monotonic variants only
  Tensor w_kernel, b_kernel;                      // conv_width x (conv_heads*kernel), conv variants only
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
// softplus^-1, used to initialise delta_raw from a target delta.
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

// ---- per-head primitives; tensors are N x L x D with N = batch*heads ----

// Key mask expanded to N x L x L from per-position validity (batch x len).
std::vector<std::uint8_t> attention_mask(const std::vector<std::uint8_t>& valid, std::size_t batch,
                                         std::size_t len, std::size_t heads, bool causal);

// softmax over allowed keys of q.k / sqrt(D).
Tensor gamma_weights(const Tensor& q, const Tensor& k, const std::vector<std::uint8_t>& allowed);

// d[t,tau] = |t - tau| * sum_{t' = min(t,tau)+1}^{max(t,tau)} gamma[t,t'].
Tensor context_distance(const Tensor& gamma);

// Decayed scores, head index = n % heads, delta = softplus(delta_raw).
//   default: exp(-delta * d) * raw
//   literal: -delta * d * raw
Tensor decay_scores(const Tensor& raw, const Tensor& distance, const Tensor& delta_raw, std::size_t heads,
                    bool literal);

// out[i] = sum_j kernels[i,j] * x[i + j - (k-1)/2], zero outside [0, L).
Tensor lconv(const Tensor& x, const Tensor& kernels);

Tensor vanilla_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<std::uint8_t>& allowed, Tensor* weights_out = nullptr);

// Monotonic attention for the N = batch*heads stack. `allowed` is the plain
// key mask, `gamma_allowed` the one used when estimating distances.
Tensor monotonic_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& delta_raw,
                           std::size_t heads, const std::vector<std::uint8_t>& allowed,
                           const std::vector<std::uint8_t>& gamma_allowed, bool literal, bool distance_grad,
                           Tensor* weights_out = nullptr);

// ---- block-level ----

struct AttentionTrace {
  Tensor attn_branch;   // (B*L) x attn_width, before concatenation
  Tensor conv_branch;   // (B*L) x conv_width, before concatenation
  Tensor combined;      // [attn ; conv] before W_O
  Tensor attn_weights;  // (B*attn_heads) x L x L post-softmax
  std::size_t attn_heads = 0;
};

// Span-based dynamic convolution on (B*L) x width projections.
Tensor span_dynamic_conv(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w_kernel,
                         const Tensor& b_kernel, std::size_t batch, std::size_t len, std::size_t heads,
                         std::size_t kernel, const std::vector<std::uint8_t>& valid);

// Multi-head attention on z: (B*L) x hidden; returns (B*L) x hidden after W_O.
Tensor attend(const Tensor& z, std::size_t batch, std::size_t len, const std::vector<std::uint8_t>& valid,
              const AttentionParams& params, const AttentionOptions& options, AttentionTrace* trace = nullptr);

// Long-format CSV (layer,sequence,head,query,key,weight) of weights N x L x L.
std::string format_attention_csv(const Tensor& weights, std::size_t batch, std::size_t heads, std::size_t layer,
                                 const std::vector<std::uint8_t>& valid);

}  // namespace ktm
