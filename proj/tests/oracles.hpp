#pragma once

// Independent scalar-loop reference implementations. They share no code with
// the library and work on plain row-major vectors for a single head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ktm::oracle {

using Vec = std::vector<double>;
using Mask = std::vector<std::uint8_t>;

// Softmax of row t of scores over allowed[t*L + j]; zero where disallowed.
inline Vec masked_softmax_rows(const Vec& scores, const Mask& allowed, std::size_t L) {
  Vec out(L * L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < L; ++j) {
      if (allowed.empty() || allowed[t * L + j]) {
        mx = std::max(mx, scores[t * L + j]);
        any = true;
      }
    }
    if (!any) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (allowed.empty() || allowed[t * L + j]) z += std::exp(scores[t * L + j] - mx);
    }
    for (std::size_t j = 0; j < L; ++j) {
      if (allowed.empty() || allowed[t * L + j]) out[t * L + j] = std::exp(scores[t * L + j] - mx) / z;
    }
  }
  return out;
}

inline Vec scaled_dots(const Vec& q, const Vec& k, std::size_t L, std::size_t D) {
  Vec s(L * L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < L; ++j) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += q[t * D + d] * k[j * D + d];
      s[t * L + j] = acc / std::sqrt(static_cast<double>(D));
    }
  }
  return s;
}

// gamma[t, t'] = softmax over allowed t' of q_t . k_t' / sqrt(D).
inline Vec gamma(const Vec& q, const Vec& k, const Mask& allowed, std::size_t L, std::size_t D) {
  return masked_softmax_rows(scaled_dots(q, k, L, D), allowed, L);
}

// d[t, tau] = |t - tau| * sum_{t' = min+1}^{max} gamma[t, t'].
inline Vec distance(const Vec& g, std::size_t L) {
  Vec d(L * L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t tau = 0; tau < L; ++tau) {
      const std::size_t lo = std::min(t, tau), hi = std::max(t, tau);
      double acc = 0.0;
      for (std::size_t tp = lo + 1; tp <= hi; ++tp) acc += g[t * L + tp];
      d[t * L + tau] = static_cast<double>(hi - lo) * acc;
    }
  }
  return d;
}

// Single-head attention. mono=false gives vanilla scaled dot product.
inline Vec attention(const Vec& q, const Vec& k, const Vec& v, const Mask& allowed, std::size_t L, std::size_t D,
                     bool mono, double delta, bool literal, Vec* weights = nullptr) {
  Vec s = scaled_dots(q, k, L, D);
  if (mono) {
    const Vec d = distance(masked_softmax_rows(s, allowed, L), L);
    for (std::size_t i = 0; i < L * L; ++i) s[i] = literal ? -delta * d[i] * s[i] : std::exp(-delta * d[i]) * s[i];
  }
  const Vec w = masked_softmax_rows(s, allowed, L);
  if (weights) *weights = w;
  Vec out(L * D, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < L; ++j) {
      for (std::size_t d = 0; d < D; ++d) out[t * D + d] += w[t * L + j] * v[j * D + d];
    }
  }
  return out;
}

// out[i] = sum_{j=1..k} kernels[i, j] * x[i + j - ceil((k+1)/2)], zero padded.
inline Vec lconv(const Vec& x, const Vec& kernels, std::size_t L, std::size_t D, std::size_t k) {
  Vec out(L * D, 0.0);
  const long centre = static_cast<long>((k + 2) / 2);  // ceil((k+1)/2)
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 1; j <= k; ++j) {
      const long src = static_cast<long>(i) + static_cast<long>(j) - centre;
      if (src < 0 || src >= static_cast<long>(L)) continue;
      for (std::size_t d = 0; d < D; ++d) out[i * D + d] += kernels[i * k + (j - 1)] * x[src * D + d];
    }
  }
  return out;
}

// Span dynamic convolution for one sequence. q, k, v are L x W with W split
// into H heads; w is W x (H*kk), b has H*kk entries; padded rows of v count
// as zero.
inline Vec sdc(const Vec& q, const Vec& k, const Vec& v, const Vec& w, const Vec& b, const Mask& valid,
               std::size_t L, std::size_t W, std::size_t H, std::size_t kk) {
  const std::size_t D = W / H;
  Vec out(L * W, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    Vec kernels(L * kk, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      Vec logit(kk, 0.0);
      for (std::size_t j = 0; j < kk; ++j) {
        double acc = b[h * kk + j];
        for (std::size_t c = 0; c < W; ++c) acc += q[t * W + c] * k[t * W + c] * w[c * (H * kk) + h * kk + j];
        logit[j] = acc;
      }
      const double mx = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double l : logit) z += std::exp(l - mx);
      for (std::size_t j = 0; j < kk; ++j) kernels[t * kk + j] = std::exp(logit[j] - mx) / z;
    }
    Vec x(L * D, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      if (!valid.empty() && !valid[t]) continue;
      for (std::size_t d = 0; d < D; ++d) x[t * D + d] = v[t * W + h * D + d];
    }
    const Vec y = lconv(x, kernels, L, D, kk);
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < D; ++d) out[t * W + h * D + d] = y[t * D + d];
    }
  }
  return out;
}

// Fraction of (positive, negative) pairs ranked correctly, ties one half.
inline double auc(const Vec& s, const Vec& y) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      pairs += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

inline double rmse(const Vec& s, const Vec& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += (s[i] - y[i]) * (s[i] - y[i]);
  return std::sqrt(acc / static_cast<double>(s.size()));
}

inline double bce(const Vec& p, const Vec& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double c = std::min(std::max(p[i], 1e-12), 1.0 - 1e-12);
    acc += -(y[i] * std::log(c) + (1.0 - y[i]) * std::log(1.0 - c));
  }
  return acc / static_cast<double>(p.size());
}

}  // namespace ktm::oracle
