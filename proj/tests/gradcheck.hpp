#pragma once

// Central finite-difference gradient checking shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ktm/ops.hpp"
#include "ktm/tensor.hpp"

namespace ktm::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "param[i]" of the largest relative error
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Checks d/dp of sum(w * f()) for fixed random weights w, where f rebuilds its
// graph from the current values of `params` on every call. At most
// `max_per_param` entries of each parameter are probed (all when 0).
inline GradCheckResult check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                       std::uint64_t seed, std::size_t max_per_param = 0, double h = 1e-4,
                                       double floor = 1e-3) {
  std::mt19937_64 rng(seed);
  Tensor out = f();
  std::vector<double> w(out.numel());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : w) x = u(rng);
  const Tensor weights = Tensor::from(out.shape(), w);

  for (auto& p : params) p.zero_grad();
  sum(mul(out, weights)).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  auto eval = [&] {
    NoGradGuard guard;
    const Tensor y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y.data()[i];
    return s;
  };

  GradCheckResult r;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_param && idx.size() > max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_param);
    }
    for (auto i : idx) {
      auto data = p.mutable_data();
      const double orig = data[i];
      data[i] = orig + h;
      const double plus = eval();
      data[i] = orig - h;
      const double minus = eval();
      data[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return r;
}

}  // namespace ktm::testing
