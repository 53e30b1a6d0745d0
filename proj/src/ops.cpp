#include "ktm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ktm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

detail::Node* grad_target(detail::Node& self, std::size_t i) {
  auto* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* p = grad_target(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (auto* p = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
    if (auto* p = grad_target(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto* pa = self.parents[0].get();
    auto* pb = self.parents[1].get();
    if (pa->requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({1}, {s}, {a}, [](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (auto& g : p->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto* pa = self.parents[0].get();
    auto* pb = self.parents[1].get();
    CMap g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MMap(pa->grad.data(), m, k).noalias() += g * CMap(pb->data.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MMap(pb->grad.data(), k, n).noalias() += CMap(pa->data.data(), m, k).transpose() * g;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (bias.numel() != cols) throw ShapeError("add_bias: bias length != columns");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [rows, cols](detail::Node& self) {
    if (auto* p = grad_target(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
    if (auto* p = grad_target(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) p->grad[c] += self.grad[r * cols + c];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.dim(0), l = a.dim(1), d = a.dim(2), m = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != d) {
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(batch * l * m);
  for (std::size_t n = 0; n < batch; ++n) {
    MMap(out.data() + n * l * m, l, m).noalias() =
        CMap(a.data().data() + n * l * d, l, d) * CMap(b.data().data() + n * d * m, d, m);
  }
  return Tensor::make_result({batch, l, m}, std::move(out), {a, b}, [batch, l, d, m](detail::Node& self) {
    auto* pa = self.parents[0].get();
    auto* pb = self.parents[1].get();
    for (std::size_t n = 0; n < batch; ++n) {
      CMap g(self.grad.data() + n * l * m, l, m);
      if (pa->requires_grad) {
        MMap(pa->grad.data() + n * l * d, l, d).noalias() +=
            g * CMap(pb->data.data() + n * d * m, d, m).transpose();
      }
      if (pb->requires_grad) {
        MMap(pb->grad.data() + n * d * m, d, m).noalias() +=
            CMap(pa->data.data() + n * l * d, l, d).transpose() * g;
      }
    }
  });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm_nt");
  require_rank(b, 3, "bmm_nt");
  const auto batch = a.dim(0), l = a.dim(1), d = a.dim(2), m = b.dim(1);
  if (b.dim(0) != batch || b.dim(2) != d) {
    throw ShapeError("bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(batch * l * m);
  for (std::size_t n = 0; n < batch; ++n) {
    MMap(out.data() + n * l * m, l, m).noalias() =
        CMap(a.data().data() + n * l * d, l, d) * CMap(b.data().data() + n * m * d, m, d).transpose();
  }
  return Tensor::make_result({batch, l, m}, std::move(out), {a, b}, [batch, l, d, m](detail::Node& self) {
    auto* pa = self.parents[0].get();
    auto* pb = self.parents[1].get();
    for (std::size_t n = 0; n < batch; ++n) {
      CMap g(self.grad.data() + n * l * m, l, m);
      if (pa->requires_grad) {
        MMap(pa->grad.data() + n * l * d, l, d).noalias() += g * CMap(pb->data.data() + n * m * d, m, d);
      }
      if (pb->requires_grad) {
        MMap(pb->grad.data() + n * m * d, m, d).noalias() +=
            g.transpose() * CMap(pa->data.data() + n * l * d, l, d);
      }
    }
  });
}

namespace {

Tensor softmax_impl(const Tensor& x, const std::uint8_t* allowed) {
  if (x.rank() == 0 || x.numel() == 0) return x;
  const auto cols = x.shape().back();
  const auto rows = x.numel() / cols;
  auto xd = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* o = out.data() + r * cols;
    const std::uint8_t* ok = allowed ? allowed + r * cols : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!ok || ok[c]) mx = std::max(mx, in[c]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!ok || ok[c]) {
        o[c] = std::exp(in[c] - mx);
        z += o[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, cols](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* pg = p->grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) pg[c] += y[c] * (g[c] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> allowed) {
  if (allowed.size() != x.numel()) throw ShapeError("masked_softmax: mask size mismatch");
  return softmax_impl(x, allowed.data());
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const auto cols = x.shape().back();
  if (cols == 0) throw ShapeError("layer_norm: empty last axis");
  if (gain.numel() != cols || bias.numel() != cols) throw ShapeError("layer_norm: gain/bias length mismatch");
  const auto rows = x.numel() / cols;
  auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gd[c] + bd[c];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto* px = self.parents[0].get();
        auto* pg = self.parents[1].get();
        auto* pb = self.parents[2].get();
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * cols;
          const double* h = xhat.data() + r * cols;
          if (pg->requires_grad || pb->requires_grad) {
            for (std::size_t c = 0; c < cols; ++c) {
              if (pg->requires_grad) pg->grad[c] += g[c] * h[c];
              if (pb->requires_grad) pb->grad[c] += g[c];
            }
          }
          if (px->requires_grad) {
            double sum_gh = 0.0, sum_ghh = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double gh = g[c] * pg->data[c];
              sum_gh += gh;
              sum_ghh += gh * h[c];
            }
            double* dx = px->grad.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
              const double gh = g[c] * pg->data[c];
              dx[c] += inv_std[r] * (gh - inv_n * sum_gh - h[c] * inv_n * sum_ghh);
            }
          }
        }
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) {
    if (v < 0.0) v *= slope;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [slope](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p->grad[i] += self.grad[i] * (p->data[i] < 0.0 ? slope : 1.0);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      p->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = u(rng) >= p ? keep_scale : 0.0;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor[i];
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [factor = std::move(factor)](detail::Node& self) {
                               auto* px = self.parents[0].get();
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 px->grad[i] += self.grad[i] * factor[i];
                               }
                             });
}

Tensor index_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "index_rows");
  const auto n_rows = table.dim(0), cols = table.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (auto r : idx) {
    if (r >= n_rows) {
      throw std::out_of_range("index_rows: index " + std::to_string(r) + " outside table of " +
                              std::to_string(n_rows) + " rows");
    }
  }
  std::vector<double> out(idx.size() * cols);
  auto td = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(td.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  const std::size_t n_out = idx.size();
  return Tensor::make_result({n_out, cols}, std::move(out), {table},
                             [cols, idx = std::move(idx)](detail::Node& self) {
                               auto* p = self.parents[0].get();
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 const double* g = self.grad.data() + i * cols;
                                 double* dst = p->grad.data() + idx[i] * cols;
                                 for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c];
                               }
                             });
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
  require_rank(x, 2, "row_scale");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (s.numel() != rows) throw ShapeError("row_scale: scale length != rows");
  auto xd = x.data(), sd = s.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] * sd[r];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, s}, [rows, cols](detail::Node& self) {
    auto* px = self.parents[0].get();
    auto* ps = self.parents[1].get();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * cols;
      if (px->requires_grad) {
        for (std::size_t c = 0; c < cols; ++c) px->grad[r * cols + c] += g[c] * ps->data[r];
      }
      if (ps->requires_grad) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += g[c] * px->data[r * cols + c];
        ps->grad[r] += acc;
      }
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const auto rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  if (b.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
  const auto cols = ca + cb;
  std::vector<double> out(rows * cols);
  auto ad = a.data(), bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * ca, ca, out.data() + r * cols);
    std::copy_n(bd.data() + r * cb, cb, out.data() + r * cols + ca);
  }
  return Tensor::make_result({rows, cols}, std::move(out), {a, b}, [rows, ca, cb, cols](detail::Node& self) {
    auto* pa = self.parents[0].get();
    auto* pb = self.parents[1].get();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * cols;
      if (pa->requires_grad) {
        for (std::size_t c = 0; c < ca; ++c) pa->grad[r * ca + c] += g[c];
      }
      if (pb->requires_grad) {
        for (std::size_t c = 0; c < cb; ++c) pb->grad[r * cb + c] += g[ca + c];
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const auto rows = x.dim(0), cols = x.dim(1);
  if (start + count > cols) throw ShapeError("slice_cols: range outside columns");
  std::vector<double> out(rows * count);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xd.data() + r * cols + start, count, out.data() + r * count);
  return Tensor::make_result({rows, count}, std::move(out), {x}, [rows, cols, start, count](detail::Node& self) {
    auto* p = self.parents[0].get();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) p->grad[r * cols + start + c] += self.grad[r * count + c];
    }
  });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads,
                   std::size_t head_dim, std::size_t col_start) {
  require_rank(x, 2, "split_heads");
  const auto cols = x.dim(1);
  if (x.dim(0) != batch * len) throw ShapeError("split_heads: rows != batch*len");
  if (col_start + heads * head_dim > cols) throw ShapeError("split_heads: head columns exceed width");
  std::vector<double> out(batch * heads * len * head_dim);
  auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < len; ++t) {
        const double* src = xd.data() + (b * len + t) * cols + col_start + h * head_dim;
        double* dst = out.data() + ((b * heads + h) * len + t) * head_dim;
        std::copy_n(src, head_dim, dst);
      }
    }
  }
  return Tensor::make_result(
      {batch * heads, len, head_dim}, std::move(out), {x},
      [batch, len, heads, head_dim, cols, col_start](detail::Node& self) {
        auto* p = self.parents[0].get();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < len; ++t) {
              double* dst = p->grad.data() + (b * len + t) * cols + col_start + h * head_dim;
              const double* g = self.grad.data() + ((b * heads + h) * len + t) * head_dim;
              for (std::size_t c = 0; c < head_dim; ++c) dst[c] += g[c];
            }
          }
        }
      });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (x.dim(0) != batch * heads) throw ShapeError("merge_heads: leading dim != batch*heads");
  const auto len = x.dim(1), head_dim = x.dim(2);
  const auto cols = heads * head_dim;
  std::vector<double> out(batch * len * cols);
  auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < len; ++t) {
        std::copy_n(xd.data() + ((b * heads + h) * len + t) * head_dim, head_dim,
                    out.data() + (b * len + t) * cols + h * head_dim);
      }
    }
  }
  return Tensor::make_result({batch * len, cols}, std::move(out), {x},
                             [batch, len, heads, head_dim, cols](detail::Node& self) {
                               auto* p = self.parents[0].get();
                               for (std::size_t b = 0; b < batch; ++b) {
                                 for (std::size_t h = 0; h < heads; ++h) {
                                   for (std::size_t t = 0; t < len; ++t) {
                                     const double* g = self.grad.data() + (b * len + t) * cols + h * head_dim;
                                     double* dst = p->grad.data() + ((b * heads + h) * len + t) * head_dim;
                                     for (std::size_t c = 0; c < head_dim; ++c) dst[c] += g[c];
                                   }
                                 }
                               }
                             });
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets, double normalizer) {
  if (probs.numel() != targets.size()) throw ShapeError("binary_cross_entropy: length mismatch");
  if (targets.empty()) throw ShapeError("binary_cross_entropy: no targets");
  const double denom = normalizer > 0.0 ? normalizer : static_cast<double>(targets.size());
  std::vector<double> y(targets.begin(), targets.end());
  auto pd = probs.data();
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(pd[i], kBceEps, 1.0 - kBceEps);
    total -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return Tensor::make_result({1}, {total / denom}, {probs}, [denom, y = std::move(y)](detail::Node& self) {
    auto* p = self.parents[0].get();
    const double g = self.grad[0] / denom;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double raw = p->data[i];
      if (raw < kBceEps || raw > 1.0 - kBceEps) continue;  // clamped: flat
      p->grad[i] += g * (raw - y[i]) / (raw * (1.0 - raw));
    }
  });
}

}  // namespace ktm
