#pragma once

// 8-bit interleaved images plus the resampling used by the model input path
// and augmentation.
//
// Pixel coordinates are 0-based with pixel k centered at k. A crop box is
// given in corner coordinates where the image spans [0, W] x [0, H], so a
// pixel coordinate p corresponds to corner coordinate p + 0.5.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/landmarks.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * channels]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * channels]; }
  bool empty() const { return width == 0 || height == 0; }
  bool operator==(const Image&) const = default;
};

/// Axis-aligned box in corner coordinates.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }
};

inline double iou(const Box& a, const Box& b) {
  const Box inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double i = inter.degenerate() ? 0.0 : inter.area();
  const double u = a.area() + b.area() - i;
  return u > 0.0 ? i / u : 0.0;
}

/// Bilinear sample of one channel at pixel coordinate (x, y), clamped to the
/// image.
inline double sample_bilinear(const Image& img, double x, double y, std::size_t c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = (1 - fx) * img.at(x0, y0)[c] + fx * img.at(x1, y0)[c];
  const double bot = (1 - fx) * img.at(x0, y1)[c] + fx * img.at(x1, y1)[c];
  return (1 - fy) * top + fy * bot;
}

/// Bilinear crop of `box` resized to size x size, written as a [3, size,
/// size] float block in [0, 1]. Grayscale sources are replicated; an alpha
/// channel is ignored.
template <class T>
void crop_to_chw(const Image& img, const Box& box, std::size_t size, T* out) {
  if (img.empty()) fail(ErrorKind::invalid_argument, "crop: empty image");
  if (box.degenerate()) fail(ErrorKind::invalid_argument, "crop: degenerate box");
  const std::size_t plane = size * size;
  for (std::size_t v = 0; v < size; ++v) {
    const double y = box.y0 + (static_cast<double>(v) + 0.5) * box.height() / static_cast<double>(size) - 0.5;
    for (std::size_t u = 0; u < size; ++u) {
      const double x = box.x0 + (static_cast<double>(u) + 0.5) * box.width() / static_cast<double>(size) - 0.5;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = img.channels >= 3 ? c : 0;
        out[c * plane + v * size + u] = static_cast<T>(sample_bilinear(img, x, y, src) / 255.0);
      }
    }
  }
}

inline Box full_box(const Image& img) { return {0.0, 0.0, static_cast<double>(img.width), static_cast<double>(img.height)}; }

/// Pixel coordinate -> normalized coordinate within `box`.
inline Point to_box_normalized(Point p, const Box& box) {
  return {(p.x + 0.5 - box.x0) / box.width(), (p.y + 0.5 - box.y0) / box.height()};
}

/// Normalized coordinate within `box` -> pixel coordinate.
inline Point from_box_normalized(Point n, const Box& box) {
  return {box.x0 + n.x * box.width() - 0.5, box.y0 + n.y * box.height() - 0.5};
}

/// 2x3 affine map on pixel coordinates: p' = A p + t.
struct Affine {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point apply(Point p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }

  Affine inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) fail(ErrorKind::invalid_argument, "affine: singular transform");
    const double a = m[4] / det, b = -m[1] / det, d = -m[3] / det, e = m[0] / det;
    return {{a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])}};
  }

  /// Rotation by `radians` and isotropic `scale` about `center`, then `shift`.
  static Affine similarity(Point center, double radians, double scale, Point shift = {}) {
    const double c = std::cos(radians) * scale, s = std::sin(radians) * scale;
    return {{c, -s, center.x - c * center.x + s * center.y + shift.x, s, c, center.y - s * center.x - c * center.y + shift.y}};
  }
};

/// Resamples `img` so that output pixel p shows input pixel inverse(p).
inline Image warp_affine(const Image& img, const Affine& forward) {
  const Affine inv = forward.inverse();
  Image out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(sample_bilinear(img, s.x, s.y, c), 0.0, 255.0)));
    }
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      std::copy_n(img.at(img.width - 1 - x, y), img.channels, out.at(x, y));
  return out;
}

inline Image to_rgba(const Image& img) {
  if (img.channels == 4) return img;
  Image out(img.width, img.height, 4, 255);
  for (std::size_t i = 0; i < img.width * img.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 4 + c] = img.pixels[i * img.channels + (img.channels >= 3 ? c : 0)];
  return out;
}

}  // namespace tinyalign
