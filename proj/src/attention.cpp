#include "ktm/attention.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ktm/ops.hpp"

namespace ktm {

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::Vanilla: return "vanilla";
    case AttentionVariant::Monotonic: return "mono";
    case AttentionVariant::Convolutional: return "conv";
    case AttentionVariant::MonoConv: return "monoconv";
  }
  return "?";
}

AttentionVariant parse_attention_variant(const std::string& name) {
  if (name == "vanilla") return AttentionVariant::Vanilla;
  if (name == "mono") return AttentionVariant::Monotonic;
  if (name == "conv") return AttentionVariant::Convolutional;
  if (name == "monoconv") return AttentionVariant::MonoConv;
  throw ConfigError("unknown attention variant '" + name + "' (vanilla|mono|conv|monoconv)");
}

BranchLayout branch_layout(const AttentionOptions& options, std::size_t hidden) {
  if (options.heads == 0) throw ConfigError("attention: head count must be positive");
  if (hidden % options.heads != 0) {
    throw ConfigError("attention: hidden size " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(options.heads) + " heads");
  }
  if (options.kernel % 2 == 0) throw ConfigError("attention: convolution kernel size must be odd");
  BranchLayout layout;
  layout.head_dim = hidden / options.heads;
  switch (options.variant) {
    case AttentionVariant::Vanilla:
    case AttentionVariant::Monotonic:
      layout.attn_heads = options.heads;
      break;
    case AttentionVariant::Convolutional:
      layout.conv_heads = options.heads;
      break;
    case AttentionVariant::MonoConv:
      if (options.heads % 2 != 0) throw ConfigError("attention: monoconv needs an even head count");
      layout.attn_heads = options.heads / 2;
      layout.conv_heads = options.heads / 2;
      break;
  }
  return layout;
}

std::vector<std::uint8_t> attention_mask(const std::vector<std::uint8_t>& valid, std::size_t batch,
                                         std::size_t len, std::size_t heads, bool causal) {
  if (valid.size() != batch * len) throw ShapeError("attention_mask: validity size != batch*len");
  std::vector<std::uint8_t> mask(batch * heads * len * len, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::uint8_t* m = mask.data() + (b * heads + h) * len * len;
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t tau = 0; tau < len; ++tau) {
          m[t * len + tau] = valid[b * len + tau] && (!causal || tau <= t);
        }
      }
    }
  }
  return mask;
}

Tensor gamma_weights(const Tensor& q, const Tensor& k, const std::vector<std::uint8_t>& allowed) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  return masked_softmax(scale(bmm_nt(q, k), inv_sqrt), allowed);
}

Tensor context_distance(const Tensor& gamma) {
  if (gamma.rank() != 3 || gamma.dim(1) != gamma.dim(2)) {
    throw ShapeError("context_distance: expected N x L x L, got " + shape_str(gamma.shape()));
  }
  const auto n_mat = gamma.dim(0), len = gamma.dim(1);
  auto gd = gamma.data();
  std::vector<double> out(gamma.numel());
  std::vector<double> prefix(len + 1);
  for (std::size_t n = 0; n < n_mat; ++n) {
    for (std::size_t t = 0; t < len; ++t) {
      const double* row = gd.data() + (n * len + t) * len;
      // prefix[j] = sum_{i < j} row[i]
      prefix[0] = 0.0;
      for (std::size_t i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + row[i];
      double* o = out.data() + (n * len + t) * len;
      for (std::size_t tau = 0; tau < len; ++tau) {
        const auto lo = std::min(t, tau), hi = std::max(t, tau);
        // sum over t' in (lo, hi]
        o[tau] = static_cast<double>(hi - lo) * (prefix[hi + 1] - prefix[lo + 1]);
      }
    }
  }
  return Tensor::make_result(gamma.shape(), std::move(out), {gamma}, [n_mat, len](detail::Node& self) {
    auto* p = self.parents[0].get();
    std::vector<double> w(len), below(len + 1);
    for (std::size_t n = 0; n < n_mat; ++n) {
      for (std::size_t t = 0; t < len; ++t) {
        const double* g = self.grad.data() + (n * len + t) * len;
        for (std::size_t tau = 0; tau < len; ++tau) {
          w[tau] = g[tau] * static_cast<double>(t > tau ? t - tau : tau - t);
        }
        // below[j] = sum_{tau < j} w[tau]
        below[0] = 0.0;
        for (std::size_t tau = 0; tau < len; ++tau) below[tau + 1] = below[tau] + w[tau];
        double* pg = p->grad.data() + (n * len + t) * len;
        for (std::size_t i = 0; i < len; ++i) {
          // i <= t: contributes to keys tau < i; i > t: keys tau >= i.
          pg[i] += i <= t ? below[i] : below[len] - below[i];
        }
      }
    }
  });
}

Tensor decay_scores(const Tensor& raw, const Tensor& distance, const Tensor& delta_raw, std::size_t heads,
                    bool literal) {
  if (raw.shape() != distance.shape() || raw.rank() != 3) throw ShapeError("decay_scores: raw/distance shape");
  if (delta_raw.numel() != heads || heads == 0 || raw.dim(0) % heads != 0) {
    throw ShapeError("decay_scores: delta must hold one value per head");
  }
  const auto n_mat = raw.dim(0), per = raw.dim(1) * raw.dim(2);
  auto rd = raw.data(), dd = distance.data(), pd = delta_raw.data();
  std::vector<double> out(raw.numel());
  for (std::size_t n = 0; n < n_mat; ++n) {
    const double delta = softplus(pd[n % heads]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      out[i] = literal ? -delta * dd[i] * rd[i] : std::exp(-delta * dd[i]) * rd[i];
    }
  }
  return Tensor::make_result(
      raw.shape(), std::move(out), {raw, distance, delta_raw}, [n_mat, per, heads, literal](detail::Node& self) {
        auto* pr = self.parents[0].get();
        auto* pdist = self.parents[1].get();
        auto* pdelta = self.parents[2].get();
        for (std::size_t n = 0; n < n_mat; ++n) {
          const double x = pdelta->data[n % heads];
          const double delta = softplus(x);
          const double ddelta_dx = 1.0 / (1.0 + std::exp(-x));
          double g_delta = 0.0;
          for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const double g = self.grad[i];
            const double r = pr->data[i], d = pdist->data[i];
            if (literal) {
              if (pr->requires_grad) pr->grad[i] += g * (-delta * d);
              if (pdist->requires_grad) pdist->grad[i] += g * (-delta * r);
              g_delta += g * (-d * r);
            } else {
              const double e = std::exp(-delta * d);
              if (pr->requires_grad) pr->grad[i] += g * e;
              if (pdist->requires_grad) pdist->grad[i] += g * (-delta * e * r);
              g_delta += g * (-d * e * r);
            }
          }
          if (pdelta->requires_grad) pdelta->grad[n % heads] += g_delta * ddelta_dx;
        }
      });
}

Tensor lconv(const Tensor& x, const Tensor& kernels) {
  if (x.rank() != 3 || kernels.rank() != 3 || x.dim(0) != kernels.dim(0) || x.dim(1) != kernels.dim(1)) {
    throw ShapeError("lconv: expected x N x L x D and kernels N x L x k");
  }
  const auto n_mat = x.dim(0), len = x.dim(1), width = x.dim(2), k = kernels.dim(2);
  if (k % 2 == 0) throw ConfigError("lconv: kernel size must be odd");
  const auto half = static_cast<std::ptrdiff_t>((k - 1) / 2);
  auto xd = x.data(), kd = kernels.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t n = 0; n < n_mat; ++n) {
    for (std::size_t i = 0; i < len; ++i) {
      double* o = out.data() + (n * len + i) * width;
      const double* kern = kd.data() + (n * len + i) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* row = xd.data() + (n * len + static_cast<std::size_t>(src)) * width;
        for (std::size_t c = 0; c < width; ++c) o[c] += kern[j] * row[c];
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, kernels}, [n_mat, len, width, k, half](detail::Node& self) {
    auto* px = self.parents[0].get();
    auto* pk = self.parents[1].get();
    for (std::size_t n = 0; n < n_mat; ++n) {
      for (std::size_t i = 0; i < len; ++i) {
        const double* g = self.grad.data() + (n * len + i) * width;
        for (std::size_t j = 0; j < k; ++j) {
          const auto src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(j) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t s = n * len + static_cast<std::size_t>(src);
          const std::size_t ki = (n * len + i) * k + j;
          if (px->requires_grad) {
            const double kv = pk->data[ki];
            double* gx = px->grad.data() + s * width;
            for (std::size_t c = 0; c < width; ++c) gx[c] += kv * g[c];
          }
          if (pk->requires_grad) {
            const double* row = px->data.data() + s * width;
            double acc = 0.0;
            for (std::size_t c = 0; c < width; ++c) acc += g[c] * row[c];
            pk->grad[ki] += acc;
          }
        }
      }
    }
  });
}

Tensor vanilla_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<std::uint8_t>& allowed, Tensor* weights_out) {
  auto w = gamma_weights(q, k, allowed);
  if (weights_out) *weights_out = w;
  return bmm(w, v);
}

Tensor monotonic_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& delta_raw,
                           std::size_t heads, const std::vector<std::uint8_t>& allowed,
                           const std::vector<std::uint8_t>& gamma_allowed, bool literal, bool distance_grad,
                           Tensor* weights_out) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  auto raw = scale(bmm_nt(q, k), inv_sqrt);
  Tensor distance;
  if (distance_grad) {
    distance = context_distance(masked_softmax(raw, gamma_allowed));
  } else {
    NoGradGuard no_grad;
    distance = context_distance(masked_softmax(raw.detach(), gamma_allowed));
  }
  auto w = masked_softmax(decay_scores(raw, distance, delta_raw, heads, literal), allowed);
  if (weights_out) *weights_out = w;
  return bmm(w, v);
}

namespace {

// Zeroes padded rows of an N x L x D stack (N = batch*heads).
Tensor zero_padding_rows(const Tensor& x, const std::vector<std::uint8_t>& valid, std::size_t batch,
                         std::size_t heads) {
  const auto len = x.dim(1), width = x.dim(2);
  std::vector<double> m(x.numel(), 1.0);
  bool any_pad = false;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      if (valid[b * len + t]) continue;
      any_pad = true;
      for (std::size_t h = 0; h < heads; ++h) {
        std::fill_n(m.data() + ((b * heads + h) * len + t) * width, width, 0.0);
      }
    }
  }
  if (!any_pad) return x;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

}  // namespace

Tensor span_dynamic_conv(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w_kernel,
                         const Tensor& b_kernel, std::size_t batch, std::size_t len, std::size_t heads,
                         std::size_t kernel, const std::vector<std::uint8_t>& valid) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) throw ShapeError("span_dynamic_conv: Q/K/V shapes differ");
  if (kernel % 2 == 0) throw ConfigError("span_dynamic_conv: kernel size must be odd");
  const auto width = q.dim(1);
  if (heads == 0 || width % heads != 0) throw ShapeError("span_dynamic_conv: width not divisible by heads");
  // Per-position, per-head kernels from softmax(W(Q (.) K)).
  auto logits = linear(mul(q, k), w_kernel, b_kernel);  // (B*L) x (heads*kernel)
  auto kernels = softmax(split_heads(logits, batch, len, heads, kernel));
  auto values = zero_padding_rows(split_heads(v, batch, len, heads, width / heads), valid, batch, heads);
  return merge_heads(lconv(values, kernels), batch, heads);
}

Tensor attend(const Tensor& z, std::size_t batch, std::size_t len, const std::vector<std::uint8_t>& valid,
              const AttentionParams& params, const AttentionOptions& options, AttentionTrace* trace) {
  const auto hidden = z.dim(1);
  const auto layout = branch_layout(options, hidden);
  auto q = linear(z, params.w_q, params.b_q);
  auto k = linear(z, params.w_k, params.b_k);
  auto v = linear(z, params.w_v, params.b_v);

  Tensor attn_out, conv_out, weights;
  if (layout.attn_heads > 0) {
    const auto h = layout.attn_heads, dk = layout.head_dim;
    auto qh = split_heads(q, batch, len, h, dk);
    auto kh = split_heads(k, batch, len, h, dk);
    auto vh = split_heads(v, batch, len, h, dk);
    Tensor heads_out;
    if (options.variant == AttentionVariant::Vanilla) {
      heads_out = vanilla_attention(qh, kh, vh, attention_mask(valid, batch, len, h, false), &weights);
    } else {
      const auto mask = attention_mask(valid, batch, len, h, options.causal);
      heads_out = monotonic_attention(qh, kh, vh, params.delta_raw, h, mask, mask, options.literal_decay,
                                      options.distance_grad, &weights);
    }
    attn_out = merge_heads(heads_out, batch, h);
  }
  if (layout.conv_heads > 0) {
    const auto start = layout.attn_width(), width = layout.conv_width();
    conv_out = span_dynamic_conv(slice_cols(q, start, width), slice_cols(k, start, width),
                                 slice_cols(v, start, width), params.w_kernel, params.b_kernel, batch, len,
                                 layout.conv_heads, options.kernel, valid);
  }
  Tensor combined;
  if (attn_out.defined() && conv_out.defined()) {
    combined = concat_cols(attn_out, conv_out);
  } else {
    combined = attn_out.defined() ? attn_out : conv_out;
  }
  if (trace) {
    trace->attn_branch = attn_out;
    trace->conv_branch = conv_out;
    trace->combined = combined;
    trace->attn_weights = weights;
    trace->attn_heads = layout.attn_heads;
  }
  return linear(combined, params.w_o, params.b_o);
}

std::string format_attention_csv(const Tensor& weights, std::size_t batch, std::size_t heads, std::size_t layer,
                                 const std::vector<std::uint8_t>& valid) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,sequence,head,query,key,weight\n";
  if (!weights.defined()) return os.str();
  const auto len = weights.dim(1);
  auto wd = weights.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < len; ++t) {
        if (!valid[b * len + t]) continue;
        for (std::size_t tau = 0; tau < len; ++tau) {
          if (!valid[b * len + tau]) continue;
          os << layer << ',' << b << ',' << h << ',' << t << ',' << tau << ','
             << wd[((b * heads + h) * len + t) * len + tau] << '\n';
        }
      }
    }
  }
  return os.str();
}

}  // namespace ktm
