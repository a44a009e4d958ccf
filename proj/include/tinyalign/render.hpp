#pragma once

// Makeup rendering: part masks from landmark loops and sequential alpha
// blending in sRGB.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/landmarks.hpp"

namespace tinyalign {

struct ProductSpec {
  Part part = Part::upper_lip;
  std::array<std::uint8_t, 3> color{0, 0, 0};
  double opacity = 1.0;
  double feather_radius = 0.0;  // pixels

  void validate() const {
    if (!(opacity >= 0.0 && opacity <= 1.0)) fail(ErrorKind::invalid_argument, "product: opacity must be in [0, 1]");
    if (!(feather_radius >= 0.0) || !std::isfinite(feather_radius))
      fail(ErrorKind::invalid_argument, "product: feather radius must be a non-negative number");
  }
};

/// Frame-sized alpha map in [0, 1].
struct PartMask {
  std::size_t width = 0, height = 0;
  std::vector<float> alpha;

  PartMask() = default;
  PartMask(std::size_t w, std::size_t h) : width(w), height(h), alpha(w * h, 0.0f) {}
  float at(std::size_t x, std::size_t y) const { return alpha[y * width + x]; }
  double area() const {
    double s = 0;
    for (float a : alpha) s += a;
    return s;
  }
};

inline constexpr std::size_t kCatmullRomSubdivisions = 8;

/// Closed uniform Catmull-Rom curve through `ctrl`, sampled at
/// `subdivisions` points per segment (the control points included).
inline std::vector<Point> catmull_rom_closed(const std::vector<Point>& ctrl,
                                             std::size_t subdivisions = kCatmullRomSubdivisions) {
  const std::size_t n = ctrl.size();
  std::vector<Point> out;
  if (n < 3 || subdivisions == 0) return ctrl;
  out.reserve(n * subdivisions);
  for (std::size_t i = 0; i < n; ++i) {
    const Point p0 = ctrl[(i + n - 1) % n], p1 = ctrl[i], p2 = ctrl[(i + 1) % n], p3 = ctrl[(i + 2) % n];
    for (std::size_t k = 0; k < subdivisions; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(subdivisions);
      const double t2 = t * t, t3 = t2 * t;
      auto blend = [&](double a, double b, double c, double d) {
        return 0.5 * (2 * b + (-a + c) * t + (2 * a - 5 * b + 4 * c - d) * t2 + (-a + 3 * b - 3 * c + d) * t3);
      };
      out.push_back({blend(p0.x, p1.x, p2.x, p3.x), blend(p0.y, p1.y, p2.y, p3.y)});
    }
  }
  return out;
}

inline double polygon_area(const std::vector<Point>& poly) {
  double a = 0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) a += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
  return 0.5 * a;
}

/// The smoothed outline of `part` for pixel-coordinate landmarks.
inline std::vector<Point> part_polygon(const std::vector<Point>& landmarks, const LandmarkLayout& layout, Part part) {
  const auto it = layout.parts.find(part);
  if (it == layout.parts.end()) fail(ErrorKind::invalid_argument, std::string("layout has no loop for ") + to_string(part));
  if (landmarks.size() != layout.size()) fail(ErrorKind::invalid_argument, "landmark count does not match the layout");
  std::vector<Point> ctrl;
  for (auto i : it->second) {
    if (!std::isfinite(landmarks[i].x) || !std::isfinite(landmarks[i].y))
      fail(ErrorKind::invalid_argument, "non-finite landmark");
    ctrl.push_back(landmarks[i]);
  }
  // Collinear or coincident control points enclose no area.
  double extent = 0;
  for (const auto& p : ctrl)
    for (const auto& q : ctrl) extent = std::max(extent, distance(p, q));
  if (ctrl.size() < 3 || !(std::abs(polygon_area(ctrl)) > 1e-9 * std::max(1.0, extent * extent)))
    fail(ErrorKind::invalid_argument, std::string("degenerate polygon for ") + to_string(part));
  return catmull_rom_closed(ctrl);
}

namespace detail {

inline double distance_to_segment(Point a, Point b, Point q) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp(((q.x - a.x) * dx + (q.y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(q.x - a.x - t * dx, q.y - a.y - t * dy);
}

}  // namespace detail

/// Rasterizes a closed polygon (pixel centers at integer coordinates, even-odd
/// rule). Outside pixels within `feather` of an edge get 1 - distance/feather.
inline PartMask rasterize_polygon(const std::vector<Point>& poly, std::size_t width, std::size_t height, double feather) {
  PartMask m(width, height);
  if (poly.size() < 3 || width == 0 || height == 0) return m;
  double x0 = poly[0].x, x1 = x0, y0 = poly[0].y, y1 = y0;
  for (const auto& p : poly) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  auto clamp_index = [](double v, std::size_t n) {
    return static_cast<long>(std::clamp(v, -1.0, static_cast<double>(n)));
  };
  const long ry0 = std::max(0L, clamp_index(std::ceil(y0 - feather), height));
  const long ry1 = std::min(static_cast<long>(height) - 1, clamp_index(std::floor(y1 + feather), height));
  const long rx0 = std::max(0L, clamp_index(std::ceil(x0 - feather), width));
  const long rx1 = std::min(static_cast<long>(width) - 1, clamp_index(std::floor(x1 + feather), width));

  std::vector<double> xs;
  for (long y = ry0; y <= ry1; ++y) {
    const double fy = static_cast<double>(y);
    xs.clear();
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const Point a = poly[i], b = poly[j];
      if ((a.y > fy) != (b.y > fy)) xs.push_back((b.x - a.x) * (fy - a.y) / (b.y - a.y) + a.x);
    }
    std::sort(xs.begin(), xs.end());
    float* row = m.alpha.data() + static_cast<std::size_t>(y) * width;
    // A pixel is inside when an odd number of crossings lie strictly to its right.
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const long a = std::max(rx0, static_cast<long>(std::ceil(xs[k])));
      long b = static_cast<long>(std::ceil(xs[k + 1])) - 1;
      b = std::min(b, rx1);
      for (long x = a; x <= b; ++x) row[x] = 1.0f;
    }
    if (feather > 0)
      for (long x = rx0; x <= rx1; ++x) {
        if (row[x] == 1.0f) continue;
        const Point q{static_cast<double>(x), fy};
        double d = 1e300;
        for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
          d = std::min(d, detail::distance_to_segment(poly[j], poly[i], q));
        if (d < feather) row[x] = static_cast<float>(1.0 - d / feather);
      }
  }
  return m;
}

inline PartMask build_part_mask(const std::vector<Point>& landmarks, const LandmarkLayout& layout, Part part,
                                std::size_t width, std::size_t height, double feather_radius) {
  if (!(feather_radius >= 0.0)) fail(ErrorKind::invalid_argument, "feather radius must be non-negative");
  return rasterize_polygon(part_polygon(landmarks, layout, part), width, height, feather_radius);
}

/// Composites products in order: out = (1 - a) * base + a * color with
/// a = opacity * mask alpha, per RGB channel. Alpha channels pass through.
inline Image blend(const Image& frame, const std::vector<std::pair<PartMask, ProductSpec>>& layers) {
  if (frame.channels < 3) fail(ErrorKind::invalid_argument, "blend: frame must be RGB or RGBA");
  for (const auto& [mask, product] : layers) {
    product.validate();
    if (mask.width != frame.width || mask.height != frame.height)
      fail(ErrorKind::invalid_argument, "blend: mask size does not match the frame");
  }
  Image out = frame;
  const std::size_t n = frame.width * frame.height;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t* px = out.pixels.data() + i * frame.channels;
    double c[3] = {static_cast<double>(px[0]), static_cast<double>(px[1]), static_cast<double>(px[2])};
    bool touched = false;
    for (const auto& [mask, product] : layers) {
      const double a = product.opacity * mask.alpha[i];
      if (a == 0.0) continue;
      touched = true;
      for (int k = 0; k < 3; ++k) c[k] = (1.0 - a) * c[k] + a * product.color[static_cast<std::size_t>(k)];
    }
    if (touched)
      for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0, 255.0)));
  }
  return out;
}

/// Masks and blends every product for one frame.
inline Image render_makeup(const Image& frame, const std::vector<Point>& landmarks, const LandmarkLayout& layout,
                           const std::vector<ProductSpec>& products) {
  std::vector<std::pair<PartMask, ProductSpec>> layers;
  for (const auto& p : products) {
    p.validate();
    layers.emplace_back(build_part_mask(landmarks, layout, p.part, frame.width, frame.height, p.feather_radius), p);
  }
  return blend(frame, layers);
}

}  // namespace tinyalign
