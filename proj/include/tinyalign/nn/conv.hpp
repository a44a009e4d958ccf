#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign::nn {

enum class Activation { none, relu6 };

struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = false;
  Activation activation = Activation::none;

  bool depthwise() const { return groups == in_channels && groups == out_channels; }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0)
      fail(ErrorKind::config, "conv: zero-sized spec field");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      fail(ErrorKind::config, "conv: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                                  " not divisible by groups " + std::to_string(groups));
  }

  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }

  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * padding < kernel) fail(ErrorKind::shape, "conv: input extent smaller than kernel");
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

/// 3x3 "same"-padded convolution spec.
inline ConvSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride = 1, std::size_t groups = 1) {
  return ConvSpec{in, out, 3, stride, 1, groups, false, Activation::none};
}

inline ConvSpec conv1x1(std::size_t in, std::size_t out) {
  return ConvSpec{in, out, 1, 1, 0, 1, false, Activation::none};
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t batch, in_h, in_w, out_h, out_w;
};

// Unfolds one group of one sample into (cin_g * k * k) x (out_h * out_w).
template <class T>
void im2col(const T* x, std::size_t channels, const ConvSpec& s, const ConvGeometry& g, T* col) {
  const std::size_t k = s.kernel;
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + iy * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t channels, const ConvSpec& s, const ConvGeometry& g, T* dx) {
  const std::size_t k = s.kernel;
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dxc = dx + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* dst = dxc + iy * g.in_w;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Output columns [lo, hi) whose tap at kernel column kx lands inside the row.
inline void valid_columns(long kx, long stride, long pad, long in_w, long out_w, long& lo, long& hi) {
  lo = std::max(0L, (pad - kx + stride - 1) / stride);
  hi = std::min(out_w, (in_w - 1 + pad - kx) / stride + 1);
  if (hi < lo) hi = lo;
}

template <class T>
using StridedRow = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>>;
template <class T>
using MutStridedRow = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>>;
template <class T>
using Row = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstRow = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Tap-major loops: each (ky, kx) tap is an axpy over a row segment.
template <class T>
void depthwise_forward(const T* x, const T* w, T* y, std::size_t channels, const ConvSpec& s, const ConvGeometry& g) {
  const long k = static_cast<long>(s.kernel);
  const long ih = static_cast<long>(g.in_h), iw = static_cast<long>(g.in_w);
  const long oh = static_cast<long>(g.out_h), ow = static_cast<long>(g.out_w);
  const long pad = static_cast<long>(s.padding), stride = static_cast<long>(s.stride);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    const T* wc = w + c * s.kernel * s.kernel;
    T* yc = y + c * g.out_h * g.out_w;
    std::fill(yc, yc + oh * ow, T(0));
    for (long kx = 0; kx < k; ++kx) {
      long lo, hi;
      valid_columns(kx, stride, pad, iw, ow, lo, hi);
      if (hi <= lo) continue;
      for (long ky = 0; ky < k; ++ky) {
        const T wv = wc[ky * k + kx];
        for (long oy = 0; oy < oh; ++oy) {
          const long iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          Row<T> out(yc + oy * ow + lo, hi - lo);
          const T* src = xc + iy * iw + lo * stride - pad + kx;
          if (stride == 1)
            out += wv * ConstRow<T>(src, hi - lo);
          else
            out += wv * StridedRow<T>(src, hi - lo, Eigen::InnerStride<>(stride));
        }
      }
    }
  }
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, std::size_t channels, const ConvSpec& s,
                        const ConvGeometry& g) {
  const long k = static_cast<long>(s.kernel);
  const long ih = static_cast<long>(g.in_h), iw = static_cast<long>(g.in_w);
  const long oh = static_cast<long>(g.out_h), ow = static_cast<long>(g.out_w);
  const long pad = static_cast<long>(s.padding), stride = static_cast<long>(s.stride);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    const T* wc = w + c * s.kernel * s.kernel;
    const T* dyc = dy + c * g.out_h * g.out_w;
    T* dxc = dx ? dx + c * g.in_h * g.in_w : nullptr;
    T* dwc = dw ? dw + c * s.kernel * s.kernel : nullptr;
    for (long kx = 0; kx < k; ++kx) {
      long lo, hi;
      valid_columns(kx, stride, pad, iw, ow, lo, hi);
      if (hi <= lo) continue;
      for (long ky = 0; ky < k; ++ky) {
        const T wv = wc[ky * k + kx];
        T acc = T(0);
        for (long oy = 0; oy < oh; ++oy) {
          const long iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          const long off = iy * iw + lo * stride - pad + kx;
          ConstRow<T> grad(dyc + oy * ow + lo, hi - lo);
          if (stride == 1) {
            if (dxc) Row<T>(dxc + off, hi - lo) += wv * grad;
            if (dwc) acc += (grad * ConstRow<T>(xc + off, hi - lo)).sum();
          } else {
            if (dxc) MutStridedRow<T>(dxc + off, hi - lo, Eigen::InnerStride<>(stride)) += wv * grad;
            if (dwc) acc += (grad * StridedRow<T>(xc + off, hi - lo, Eigen::InnerStride<>(stride))).sum();
          }
        }
        if (dwc) dwc[ky * k + kx] += acc;
      }
    }
  }
}

}  // namespace detail

/// Grouped 2-D convolution over NCHW input. `weight` is
/// [out, in/groups, k, k]; `bias` may be undefined. The ConvSpec activation
/// field is not applied here (see conv_unit in blocks.hpp).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  spec.validate();
  if (x.dim() != 4 || x.size(1) != spec.in_channels)
    fail(ErrorKind::shape, "conv2d: input " + shape_str(x.shape()) + " does not match in_channels " +
                               std::to_string(spec.in_channels));
  if (weight.shape() != spec.weight_shape())
    fail(ErrorKind::shape, "conv2d: weight " + shape_str(weight.shape()) + ", expected " +
                               shape_str(spec.weight_shape()));
  if (bias.defined() && bias.numel() != spec.out_channels) fail(ErrorKind::shape, "conv2d: bias size mismatch");

  const detail::ConvGeometry geo{x.size(0), x.size(2), x.size(3), spec.out_extent(x.size(2)),
                                 spec.out_extent(x.size(3))};
  Tape<T>* tape = tinyalign::detail::recording(x, weight, bias);
  Tensor<T> out = tinyalign::detail::make_output<T>({geo.batch, spec.out_channels, geo.out_h, geo.out_w}, tape);

  const std::size_t cin_g = spec.in_channels / spec.groups;
  const std::size_t cout_g = spec.out_channels / spec.groups;
  const std::size_t kk = cin_g * spec.kernel * spec.kernel;
  const std::size_t plane = geo.out_h * geo.out_w;
  const std::size_t in_plane = geo.in_h * geo.in_w;
  const bool pointwise = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;
  const bool dw = spec.depthwise() && cin_g == 1;

  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  T* yd = out.data().data();
  std::vector<T> col(pointwise || dw ? 0 : kk * plane);
  for (std::size_t n = 0; n < geo.batch; ++n) {
    const T* xn = xd + n * spec.in_channels * in_plane;
    T* yn = yd + n * spec.out_channels * plane;
    if (dw) {
      detail::depthwise_forward(xn, wd, yn, spec.in_channels, spec, geo);
      continue;
    }
    for (std::size_t g = 0; g < spec.groups; ++g) {
      const T* xg = xn + g * cin_g * in_plane;
      const T* src = xg;
      if (!pointwise) {
        detail::im2col(xg, cin_g, spec, geo, col.data());
        src = col.data();
      }
      detail::ConstMapMatrix<T> W(wd + g * cout_g * kk, cout_g, kk);
      detail::ConstMapMatrix<T> C(src, kk, plane);
      detail::MapMatrix<T> Y(yn + g * cout_g * plane, cout_g, plane);
      Y.noalias() = W * C;
    }
  }
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t n = 0; n < geo.batch; ++n)
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        T* yc = yd + (n * spec.out_channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) yc[i] += b[c];
      }
  }
  tinyalign::detail::check_finite(out, "conv2d");

  if (tape) {
    tape->record([spec, geo, cin_g, cout_g, kk, plane, in_plane, pointwise, dw, x = x.impl(), w = weight.impl(),
                  b = bias.defined() ? bias.impl() : nullptr, o = out.impl()] {
      if (!tinyalign::detail::reached(o)) return;
      const T* dy = o->grad.data();
      T* dx = nullptr;
      T* dwt = nullptr;
      if (x->requires_grad) {
        x->ensure_grad();
        dx = x->grad.data();
      }
      if (w->requires_grad) {
        w->ensure_grad();
        dwt = w->grad.data();
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (std::size_t n = 0; n < geo.batch; ++n)
          for (std::size_t c = 0; c < spec.out_channels; ++c) {
            const T* g = dy + (n * spec.out_channels + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += g[i];
            b->grad[c] += acc;
          }
      }
      if (!dx && !dwt) return;
      std::vector<T> col(pointwise || dw ? 0 : kk * plane);
      std::vector<T> dcol(pointwise || dw || !dx ? 0 : kk * plane);
      for (std::size_t n = 0; n < geo.batch; ++n) {
        const T* xn = x->data.data() + n * spec.in_channels * in_plane;
        const T* dyn = dy + n * spec.out_channels * plane;
        T* dxn = dx ? dx + n * spec.in_channels * in_plane : nullptr;
        if (dw) {
          detail::depthwise_backward(xn, w->data.data(), dyn, dxn, dwt, spec.in_channels, spec, geo);
          continue;
        }
        for (std::size_t g = 0; g < spec.groups; ++g) {
          const T* xg = xn + g * cin_g * in_plane;
          detail::ConstMapMatrix<T> dY(dyn + g * cout_g * plane, cout_g, plane);
          if (dwt) {
            const T* src = xg;
            if (!pointwise) {
              detail::im2col(xg, cin_g, spec, geo, col.data());
              src = col.data();
            }
            detail::ConstMapMatrix<T> C(src, kk, plane);
            detail::MapMatrix<T> dW(dwt + g * cout_g * kk, cout_g, kk);
            dW.noalias() += dY * C.transpose();
          }
          if (dxn) {
            detail::ConstMapMatrix<T> W(w->data.data() + g * cout_g * kk, cout_g, kk);
            if (pointwise) {
              detail::MapMatrix<T> dX(dxn + g * cin_g * in_plane, kk, plane);
              dX.noalias() += W.transpose() * dY;
            } else {
              detail::MapMatrix<T> dC(dcol.data(), kk, plane);
              dC.noalias() = W.transpose() * dY;
              detail::col2im(dcol.data(), cin_g, spec, geo, dxn + g * cin_g * in_plane);
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const ConvSpec& spec) {
  return conv2d(x, weight, Tensor<T>{}, spec);
}

}  // namespace tinyalign::nn
