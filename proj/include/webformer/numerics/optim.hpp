#pragma once

#include <cmath>
#include <functional>

#include "webformer/numerics/tensor.hpp"

namespace webformer::num {

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then clears the
/// gradients. Parameters whose gradient is zero and whose moments are zero
/// stay exactly where they are.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  const long long t = ++store.step();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.eps);
  for (auto& p : store.params()) {
    T* w = p.value.data();
    T* g = p.grad.data();
    T* m = p.m.data();
    T* v = p.v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      g[i] = T(0);
    }
  }
}

/// Central difference (f(x+h) - f(x-h)) / 2h for one coordinate of `param`.
/// The coordinate is restored afterwards.
template <typename T>
T finite_diff_grad(const std::function<T()>& loss, Param<T>& param, std::size_t index, T h = T(1e-4)) {
  T& x = param.value[index];
  const T saved = x;
  x = saved + h;
  const T up = loss();
  x = saved - h;
  const T down = loss();
  x = saved;
  return (up - down) / (T(2) * h);
}

/// Same oracle for a plain scalar function.
template <typename T>
T finite_diff_grad(const std::function<T(T)>& f, T x, T h = T(1e-4)) {
  return (f(x + h) - f(x - h)) / (T(2) * h);
}

}  // namespace webformer::num
