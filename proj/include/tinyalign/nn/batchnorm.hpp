#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign::nn {

template <class T>
using Plane = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstPlane = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;  // buffers, never on the tape
  Tensor<T> running_var;

  bool defined() const { return gamma.defined(); }
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization over NCHW. In training mode the batch
/// statistics normalize the input and the running buffers are updated in
/// place (unbiased variance); otherwise the running buffers are used.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormParams<T>& p, bool training, BatchNormOptions opt = {}) {
  if (x.dim() != 4 || p.gamma.numel() != x.size(1))
    fail(ErrorKind::shape, "batch_norm: input " + shape_str(x.shape()) + " vs " + std::to_string(p.gamma.numel()) +
                               " channels");
  const std::size_t N = x.size(0), C = x.size(1), plane = x.size(2) * x.size(3);
  const std::size_t count = N * plane;
  if (training && count < 2) fail(ErrorKind::shape, "batch_norm: need more than one value per channel in training");

  auto plane_of = [C, plane](const T* base, std::size_t n, std::size_t c) {
    return ConstPlane<T>(base + (n * C + c) * plane, static_cast<Eigen::Index>(plane));
  };
  std::vector<T> mean(C), inv_std(C);
  const T eps = static_cast<T>(opt.eps);
  const auto xd = x.data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += plane_of(xd.data(), n, c).template cast<double>().sum();
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) v += (plane_of(xd.data(), n, c).template cast<double>() - m).square().sum();
      const double var = v / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const T mom = static_cast<T>(opt.momentum);
      p.running_mean[c] = (T(1) - mom) * p.running_mean[c] + mom * static_cast<T>(m);
      p.running_var[c] = (T(1) - mom) * p.running_var[c] +
                         mom * static_cast<T>(var * static_cast<double>(count) / static_cast<double>(count - 1));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = p.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(p.running_var[c] + eps);
    }
  }

  Tape<T>* tape = tinyalign::detail::recording(x, p.gamma, p.beta);
  Tensor<T> out = tinyalign::detail::make_output<T>(x.shape(), tape);
  auto yd = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = p.gamma[c] * inv_std[c];
      const T shift = p.beta[c] - mean[c] * scale;
      Plane<T>(yd.data() + (n * C + c) * plane, static_cast<Eigen::Index>(plane)) = plane_of(xd.data(), n, c) * scale + shift;
    }
  tinyalign::detail::check_finite(out, "batch_norm");

  if (tape) {
    tape->record([plane_of, training, N, C, plane, count, mean = std::move(mean), inv_std = std::move(inv_std), x = x.impl(),
                  g = p.gamma.impl(), b = p.beta.impl(), o = out.impl()] {
      if (!tinyalign::detail::reached(o)) return;
      const T* dy = o->grad.data();
      const T* xd = x->data.data();
      if (g->requires_grad) g->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          const auto g_ = plane_of(dy, n, c);
          sum_dy += g_.sum();
          sum_dy_xhat += (g_ * (plane_of(xd, n, c) - mean[c])).sum() * inv_std[c];
        }
        if (g->requires_grad) g->grad[c] += sum_dy_xhat;
        if (b->requires_grad) b->grad[c] += sum_dy;
        if (!x->requires_grad) continue;
        const T scale = g->data[c] * inv_std[c];
        const T inv_count = T(1) / static_cast<T>(count);
        for (std::size_t n = 0; n < N; ++n) {
          Plane<T> dx(x->grad.data() + (n * C + c) * plane, static_cast<Eigen::Index>(plane));
          if (training) {
            const T k = inv_std[c] * inv_count * sum_dy_xhat;
            dx += scale * (plane_of(dy, n, c) - inv_count * sum_dy - (plane_of(xd, n, c) - mean[c]) * k);
          } else {
            dx += scale * plane_of(dy, n, c);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace tinyalign::nn
