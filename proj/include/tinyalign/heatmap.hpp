#pragma once

// Heatmap codec: Gaussian ground-truth synthesis, expected-value decoding,
// the distance-weighted pixelwise sigmoid cross entropy, the auxiliary
// coordinate L2 loss and the inter-pupil NME metric.
//
// Grid convention: pixel (i, j) has continuous coordinate (i, j), i along the
// width (x, column) and j along the height (y, row), origin at the first
// pixel. A tensor of logits is laid out [..., H, W] row-major, so element
// (row j, column i) sits at j * W + i.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/landmarks.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {

enum class HeatmapNorm { sigmoid, softmax };

struct GroundTruthHeatmap {
  std::vector<double> values;  // size x size, row-major
  std::size_t size = 0;
  double sigma = 0.0;
  Point center;
  bool outside = false;  // center lies off the grid; the Gaussian is truncated
};

/// value(i, j) = exp(-((i - cx)^2 + (j - cy)^2) / (2 sigma^2)), peak 1.
inline GroundTruthHeatmap make_gt_heatmap(Point center, std::size_t size, double sigma) {
  if (size < 2) fail(ErrorKind::invalid_argument, "gt heatmap: size must be at least 2");
  if (!(sigma > 0.0)) fail(ErrorKind::invalid_argument, "gt heatmap: sigma must be positive");
  GroundTruthHeatmap gt;
  gt.size = size;
  gt.sigma = sigma;
  gt.center = center;
  const double hi = static_cast<double>(size - 1);
  gt.outside = center.x < 0.0 || center.y < 0.0 || center.x > hi || center.y > hi;
  gt.values.resize(size * size);
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t j = 0; j < size; ++j)
    for (std::size_t i = 0; i < size; ++i) {
      const double dx = static_cast<double>(i) - center.x;
      const double dy = static_cast<double>(j) - center.y;
      gt.values[j * size + i] = std::exp(-(dx * dx + dy * dy) / denom);
    }
  return gt;
}

/// Writes ground-truth heatmaps for a batch into an [N, L, size, size]
/// tensor; `centers` is [N, L, 2] in heatmap units.
template <class T>
Tensor<T> make_gt_batch(const Tensor<T>& centers, std::size_t size, double sigma) {
  if (centers.dim() != 3 || centers.size(2) != 2) fail(ErrorKind::shape, "gt batch: centers must be [N, L, 2]");
  const std::size_t N = centers.size(0), L = centers.size(1);
  Tensor<T> out({N, L, size, size});
  for (std::size_t k = 0; k < N * L; ++k) {
    const auto gt = make_gt_heatmap({centers[2 * k], centers[2 * k + 1]}, size, sigma);
    std::transform(gt.values.begin(), gt.values.end(), out.data().begin() + k * size * size,
                   [](double v) { return static_cast<T>(v); });
  }
  return out;
}

/// Expected grid coordinate under the normalized activations of each
/// heatmap. Input [N, L, H, W] logits, output [N, L, 2] as (x, y) in heatmap
/// units. With sigmoid normalization rho = sigmoid(z) / sum(sigmoid(z)).
/// Both normalizations are evaluated relative to the largest activation (log
/// domain for sigmoid), so very negative logits lose no precision; only an
/// all -inf heatmap has no distribution and is an error.
template <class T>
Tensor<T> soft_argmax(const Tensor<T>& logits, HeatmapNorm norm = HeatmapNorm::sigmoid) {
  if (logits.dim() != 4) fail(ErrorKind::shape, "soft_argmax: logits must be [N, L, H, W]");
  const std::size_t N = logits.size(0), L = logits.size(1), H = logits.size(2), W = logits.size(3);
  const std::size_t plane = H * W;
  Tape<T>* tape = detail::recording(logits);
  Tensor<T> out = detail::make_output<T>({N, L, 2}, tape);
  std::vector<T> act(logits.numel());
  std::vector<T> total(N * L);
  const T* z = logits.data().data();
  for (std::size_t k = 0; k < N * L; ++k) {
    const T* zk = z + k * plane;
    T* ak = act.data() + k * plane;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = zk[i];
      const double l = norm == HeatmapNorm::softmax ? v : detail::log_sigmoid(v);
      ak[i] = static_cast<T>(l);
      top = std::max(top, l);
    }
    if (!std::isfinite(top)) fail(ErrorKind::numeric, "soft_argmax: activation mass underflow");
    double s = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t j = 0; j < H; ++j)
      for (std::size_t i = 0; i < W; ++i) {
        const double a = std::exp(static_cast<double>(ak[j * W + i]) - top);
        ak[j * W + i] = static_cast<T>(a);
        s += a;
        sx += a * static_cast<double>(i);
        sy += a * static_cast<double>(j);
      }
    total[k] = static_cast<T>(s);
    out[2 * k] = static_cast<T>(sx / s);
    out[2 * k + 1] = static_cast<T>(sy / s);
  }
  if (tape) {
    tape->record([norm, N, L, H, W, act = std::move(act), total = std::move(total), x = logits.impl(),
                  o = out.impl()] {
      if (!detail::reached(o)) return;
      x->ensure_grad();
      const std::size_t plane = H * W;
      for (std::size_t k = 0; k < N * L; ++k) {
        const T gx = o->grad[2 * k], gy = o->grad[2 * k + 1];
        const T px = o->data[2 * k], py = o->data[2 * k + 1];
        const T* ak = act.data() + k * plane;
        const T* zk = x->data.data() + k * plane;
        T* gk = x->grad.data() + k * plane;
        for (std::size_t j = 0; j < H; ++j)
          for (std::size_t i = 0; i < W; ++i) {
            // d(coord)/d(z_ij) = (pos_ij - coord) * rho_ij * (1 - sigmoid(z_ij)) for sigmoid,
            // (pos_ij - coord) * rho_ij for softmax.
            const T rho = ak[j * W + i] / total[k];
            const T d = gx * (static_cast<T>(i) - px) + gy * (static_cast<T>(j) - py);
            const T tail = norm == HeatmapNorm::sigmoid ? T(1) - detail::sigmoid_scalar(zk[j * W + i]) : T(1);
            gk[j * W + i] += d * rho * tail;
          }
      }
    });
  }
  return out;
}

/// w = ((i - gx)^2 + (j - gy)^2) * 2 / (W^2 + H^2)
inline double heatmap_weight(double i, double j, Point gt, std::size_t W, std::size_t H) {
  const double di = i - gt.x, dj = j - gt.y;
  return (di * di + dj * dj) * 2.0 / static_cast<double>(W * W + H * H);
}

/// (1/N) sum_n sum_l sum_ij BCE(sigmoid(z), target) * w with the ground
/// truth heatmap as the BCE target. BCE is evaluated in its log-sum-exp form
/// on the logit, which is finite for any logit.
/// logits and targets are [N, L, H, W]; gt_coords is [N, L, 2] in heatmap units.
template <class T>
Tensor<T> heatmap_loss(const Tensor<T>& logits, const Tensor<T>& targets, const Tensor<T>& gt_coords) {
  if (logits.dim() != 4 || logits.shape() != targets.shape())
    fail(ErrorKind::shape, "heatmap_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                               shape_str(targets.shape()));
  const std::size_t N = logits.size(0), L = logits.size(1), H = logits.size(2), W = logits.size(3);
  if (gt_coords.shape() != Shape{N, L, 2}) fail(ErrorKind::shape, "heatmap_loss: gt_coords must be [N, L, 2]");
  const std::size_t plane = H * W;

  std::vector<T> weight(logits.numel());
  double loss = 0.0;
  const T* z = logits.data().data();
  const T* g = targets.data().data();
  for (std::size_t k = 0; k < N * L; ++k) {
    const Point c{static_cast<double>(gt_coords[2 * k]), static_cast<double>(gt_coords[2 * k + 1])};
    double acc = 0.0;
    for (std::size_t j = 0; j < H; ++j)
      for (std::size_t i = 0; i < W; ++i) {
        const std::size_t idx = k * plane + j * W + i;
        const double w = heatmap_weight(static_cast<double>(i), static_cast<double>(j), c, W, H);
        weight[idx] = static_cast<T>(w);
        const double v = z[idx];
        const double bce = std::max(v, 0.0) - v * static_cast<double>(g[idx]) + std::log1p(std::exp(-std::abs(v)));
        acc += bce * w;
      }
    loss += acc;
  }
  loss /= static_cast<double>(N);
  if (!std::isfinite(loss)) fail(ErrorKind::numeric, "heatmap_loss: non-finite loss");

  Tape<T>* tape = detail::recording(logits);
  Tensor<T> out = detail::make_output<T>({}, tape);
  out[0] = static_cast<T>(loss);
  if (tape) {
    tape->record([N, weight = std::move(weight), t = targets.impl(), x = logits.impl(), o = out.impl()] {
      if (!detail::reached(o)) return;
      x->ensure_grad();
      const T scale = o->grad[0] / static_cast<T>(N);
      for (std::size_t i = 0; i < weight.size(); ++i)
        x->grad[i] += scale * weight[i] * (detail::sigmoid_scalar(x->data[i]) - t->data[i]);
    });
  }
  return out;
}

/// Mean over batch and landmarks of the squared Euclidean distance between
/// [N, L, 2] coordinate tensors.
template <class T>
Tensor<T> l2_coord_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape() || pred.dim() != 3 || pred.size(2) != 2)
    fail(ErrorKind::shape, "l2_coord_loss: shapes " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const Tensor<T> d = sub(pred, gt);
  return mean(sum(mul(d, d), {2}));
}

/// Mean point-to-point distance over the subset divided by the inter-pupil
/// distance of `gt`, in percent. Pupils are the centroids of the layout's
/// eye rings.
inline double nme(const std::vector<Point>& pred, const std::vector<Point>& gt, const LandmarkLayout& layout,
                  Subset subset = Subset::all) {
  if (pred.size() != gt.size() || gt.size() != layout.size())
    fail(ErrorKind::data, "nme: landmark count mismatch");
  const double ipd = inter_pupil_distance(gt, layout);
  if (!(ipd > 0.0)) fail(ErrorKind::data, "nme: zero inter-pupil distance");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!layout.in_subset(i, subset)) continue;
    total += distance(pred[i], gt[i]);
    ++count;
  }
  if (count == 0) return 0.0;
  return 100.0 * total / static_cast<double>(count) / ipd;
}

inline double nme(const LandmarkSet& pred, const LandmarkSet& gt, const LandmarkLayout& layout,
                  Subset subset = Subset::all) {
  return nme(pred.points, gt.points, layout, subset);
}

}  // namespace tinyalign
