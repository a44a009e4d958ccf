#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign::nn {

/// Axis-aligned box in normalized feature coordinates: (0,0) is the top-left
/// corner of the map and (1,1) the bottom-right corner, so feature cell k is
/// centered at (k + 0.5) / extent.
struct RoiBox {
  std::size_t batch = 0;
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
};

namespace detail {

struct BilinearTap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

// Normalized coordinate -> two taps along one axis, clamped to the map.
inline BilinearTap bilinear_tap(double normalized, std::size_t extent) {
  double f = normalized * static_cast<double>(extent) - 0.5;
  f = std::clamp(f, 0.0, static_cast<double>(extent - 1));
  const auto lo = static_cast<std::size_t>(std::floor(f));
  const std::size_t hi = std::min(lo + 1, extent - 1);
  const double frac = f - static_cast<double>(lo);
  return {lo, hi, 1.0 - frac, frac};
}

inline void check_box(const RoiBox& b, std::size_t batch) {
  if (!(b.x1 > b.x0) || !(b.y1 > b.y0)) fail(ErrorKind::invalid_argument, "roi_align: degenerate box");
  if (b.x1 <= 0.0 || b.y1 <= 0.0 || b.x0 >= 1.0 || b.y0 >= 1.0)
    fail(ErrorKind::invalid_argument, "roi_align: box does not intersect the feature map");
  if (b.batch >= batch) fail(ErrorKind::shape, "roi_align: box batch index out of range");
}

}  // namespace detail

/// Crops an out_size x out_size grid from every box with one bilinear sample
/// per output cell at the cell center, in continuous coordinates (no
/// quantization). Sample points beyond the map use edge-clamped support.
/// Returns [boxes, C, out_size, out_size]; differentiable w.r.t. features
/// only, box positions are constants.
template <class T>
Tensor<T> roi_align(const Tensor<T>& features, const std::vector<RoiBox>& boxes, std::size_t out_size) {
  if (features.dim() != 4) fail(ErrorKind::shape, "roi_align: features must be NCHW");
  if (out_size == 0) fail(ErrorKind::invalid_argument, "roi_align: out_size must be positive");
  const std::size_t N = features.size(0), C = features.size(1), H = features.size(2), W = features.size(3);
  for (const auto& b : boxes) detail::check_box(b, N);

  const std::size_t S = out_size;
  // Taps per box: S along x then S along y.
  std::vector<detail::BilinearTap> taps;
  taps.reserve(boxes.size() * 2 * S);
  for (const auto& b : boxes) {
    for (std::size_t k = 0; k < S; ++k)
      taps.push_back(detail::bilinear_tap(b.x0 + (static_cast<double>(k) + 0.5) * (b.x1 - b.x0) / S, W));
    for (std::size_t k = 0; k < S; ++k)
      taps.push_back(detail::bilinear_tap(b.y0 + (static_cast<double>(k) + 0.5) * (b.y1 - b.y0) / S, H));
  }

  Tape<T>* tape = tinyalign::detail::recording(features);
  Tensor<T> out = tinyalign::detail::make_output<T>({boxes.size(), C, S, S}, tape);
  const T* fd = features.data().data();
  T* od = out.data().data();
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const detail::BilinearTap* tx = &taps[r * 2 * S];
    const detail::BilinearTap* ty = tx + S;
    for (std::size_t c = 0; c < C; ++c) {
      const T* f = fd + (boxes[r].batch * C + c) * H * W;
      T* o = od + (r * C + c) * S * S;
      for (std::size_t oy = 0; oy < S; ++oy) {
        const auto& y = ty[oy];
        for (std::size_t ox = 0; ox < S; ++ox) {
          const auto& x = tx[ox];
          const double v = y.w_lo * (x.w_lo * f[y.lo * W + x.lo] + x.w_hi * f[y.lo * W + x.hi]) +
                           y.w_hi * (x.w_lo * f[y.hi * W + x.lo] + x.w_hi * f[y.hi * W + x.hi]);
          o[oy * S + ox] = static_cast<T>(v);
        }
      }
    }
  }

  if (tape) {
    tape->record([S, C, H, W, taps = std::move(taps), boxes, f = features.impl(), o = out.impl()] {
      if (!tinyalign::detail::reached(o)) return;
      f->ensure_grad();
      for (std::size_t r = 0; r < boxes.size(); ++r) {
        const detail::BilinearTap* tx = &taps[r * 2 * S];
        const detail::BilinearTap* ty = tx + S;
        for (std::size_t c = 0; c < C; ++c) {
          T* g = f->grad.data() + (boxes[r].batch * C + c) * H * W;
          const T* go = o->grad.data() + (r * C + c) * S * S;
          for (std::size_t oy = 0; oy < S; ++oy) {
            const auto& y = ty[oy];
            for (std::size_t ox = 0; ox < S; ++ox) {
              const auto& x = tx[ox];
              const double d = go[oy * S + ox];
              g[y.lo * W + x.lo] += static_cast<T>(d * y.w_lo * x.w_lo);
              g[y.lo * W + x.hi] += static_cast<T>(d * y.w_lo * x.w_hi);
              g[y.hi * W + x.lo] += static_cast<T>(d * y.w_hi * x.w_lo);
              g[y.hi * W + x.hi] += static_cast<T>(d * y.w_hi * x.w_hi);
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace tinyalign::nn
