#pragma once

// Schematic face generator for the 65-point layout. Faces are built in a
// local frame measured in units of the head's vertical semi-axis: the head
// ellipse is centered at the origin, x points to image right and y down.
// Every landmark is an exact point of the rendered geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tinyalign/data.hpp"
#include "tinyalign/errors.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/landmarks.hpp"

namespace tinyalign {

using Rgb = std::array<double, 3>;

/// Face shape in the local frame.
struct FaceShape {
  double aspect = 0.8;  // head x semi-axis / y semi-axis
  double eye_x = 0.30;
  double eye_y = -0.12;
  double eye_rx = 0.13;
  double eye_ry = 0.055;
  double iris_r = 0.045;
  double brow_y = -0.32;
  double brow_arch = 0.05;
  double nose_top = -0.08;
  double nose_tip = 0.22;
  double nose_half_width = 0.16;
  double mouth_y = 0.5;
  double mouth_half_width = 0.23;
  double lip_upper = 0.07;
  double lip_lower = 0.09;
  double mouth_open = 0.02;
  double smile = 0.0;
};

struct SyntheticFaceParams {
  std::uint64_t seed = 0;  // drives texture and noise
  std::size_t width = 128;
  std::size_t height = 128;
  FaceShape shape;
  Point center{64, 47};  // head center, pixels
  double scale = 54;     // pixels per local unit
  double rotation = 0;   // radians
  Rgb background{0.35, 0.4, 0.45};
  Rgb skin{0.85, 0.68, 0.55};
  Rgb lips{0.7, 0.3, 0.35};
  Rgb brows{0.25, 0.18, 0.12};
  Rgb iris{0.2, 0.3, 0.45};
  double shading = 0.1;  // left-right brightness gradient on the head
  double noise = 0.02;   // Gaussian pixel noise std, [0, 1] units
};

/// Landmarks of `shape` in the local frame, face65 order.
inline std::vector<Point> local_landmarks(const FaceShape& s) {
  using namespace tinyalign::face65;
  std::vector<Point> p(kCount);
  for (std::size_t k = 0; k < kBrowPoints; ++k) {
    const double t = -1.0 + 2.0 * static_cast<double>(k) / (kBrowPoints - 1);
    const double y = s.brow_y - s.brow_arch * (1 - t * t);
    // Left brow runs outer -> inner, right brow inner -> outer; both left to right.
    p[kLeftBrow + k] = {-s.eye_x + 0.15 * t - 0.01, y};
    p[kRightBrow + k] = {s.eye_x + 0.15 * t + 0.01, y};
  }
  for (std::size_t k = 0; k < kEyePoints; ++k) {
    const double a = std::numbers::pi + static_cast<double>(k) * std::numbers::pi / 4;
    const Point d{s.eye_rx * std::cos(a), s.eye_ry * std::sin(a)};
    p[kLeftEye + k] = {-s.eye_x + d.x, s.eye_y + d.y};
    p[kRightEye + k] = {s.eye_x + d.x, s.eye_y + d.y};
  }
  for (std::size_t k = 0; k < 4; ++k)
    p[kNoseBridge + k] = {0.0, s.nose_top + (s.nose_tip - s.nose_top) * static_cast<double>(k) / 3};
  const double base_x[6] = {-1.0, -0.62, -0.25, 0.25, 0.62, 1.0};
  const double base_y[6] = {-0.02, 0.03, 0.05, 0.05, 0.03, -0.02};
  for (std::size_t k = 0; k < 6; ++k) p[kNoseBase + k] = {base_x[k] * s.nose_half_width, s.nose_tip + base_y[k]};

  const double w = s.mouth_half_width, my = s.mouth_y;
  auto lift = [&](double t) { return -s.smile * t * t; };
  for (std::size_t k = 0; k < kOuterLipPoints; ++k) {
    double t, y;
    if (k <= 7) {
      t = -1.0 + 2.0 * static_cast<double>(k) / 7;
      // Slight dip at the philtrum gives the upper lip a bow.
      y = my - s.lip_upper * (1 - t * t) * (1 - 0.35 * std::exp(-t * t / 0.02));
    } else {
      t = 1.0 - 2.0 * static_cast<double>(k - 7) / 7;
      y = my + s.lip_lower * (1 - t * t);
    }
    p[kOuterLip + k] = {t * w, y + lift(t)};
  }
  for (std::size_t k = 0; k < kInnerLipPoints; ++k) {
    double t, y;
    if (k <= 4) {
      t = -1.0 + 2.0 * static_cast<double>(k) / 4;
      y = my - 0.5 * s.mouth_open * (1 - t * t);
    } else {
      t = 1.0 - 2.0 * static_cast<double>(k - 4) / 4;
      y = my + 0.5 * s.mouth_open * (1 - t * t);
    }
    p[kInnerLip + k] = {0.8 * t * w, y + lift(0.8 * t)};
  }
  p[kLeftJaw] = {-0.8660254037844386 * s.aspect, 0.5};
  p[kChin] = {0.0, 1.0};
  p[kRightJaw] = {0.8660254037844386 * s.aspect, 0.5};
  return p;
}

/// Local frame -> pixel coordinates.
inline Affine face_transform(const SyntheticFaceParams& f) {
  const double c = std::cos(f.rotation) * f.scale, s = std::sin(f.rotation) * f.scale;
  return {{c, -s, f.center.x, s, c, f.center.y}};
}

namespace detail {

inline bool inside_polygon(const std::vector<Point>& poly, Point q) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point a = poly[i], b = poly[j];
    if ((a.y > q.y) != (b.y > q.y) && q.x < (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

inline double segment_distance(Point a, Point b, Point q) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((q.x - a.x) * dx + (q.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(q.x - a.x - t * dx, q.y - a.y - t * dy);
}

inline double polyline_distance(const std::vector<Point>& line, Point q) {
  double d = 1e300;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) d = std::min(d, segment_distance(line[i], line[i + 1], q));
  return d;
}

inline void mix(Rgb& c, const Rgb& over, double a) {
  for (int i = 0; i < 3; ++i) c[i] = (1 - a) * c[i] + a * over[i];
}

}  // namespace detail

/// Renders the face with 4x4 supersampling plus Gaussian noise.
inline AnnotatedSample generate_synthetic(const SyntheticFaceParams& f) {
  using namespace tinyalign::face65;
  if (f.width == 0 || f.height == 0) fail(ErrorKind::invalid_argument, "synthetic: empty frame");
  if (!(f.scale > 0)) fail(ErrorKind::invalid_argument, "synthetic: scale must be positive");
  const FaceShape& s = f.shape;
  const auto local = local_landmarks(s);
  const Affine to_pixel = face_transform(f);
  const Affine to_local = to_pixel.inverse();

  const LandmarkLayout layout = LandmarkLayout::face65();
  auto loop = [&](Part part) {
    std::vector<Point> poly;
    for (auto i : layout.parts.at(part)) poly.push_back(local[i]);
    return poly;
  };
  const auto upper_lip = loop(Part::upper_lip), lower_lip = loop(Part::lower_lip);
  std::vector<Point> mouth_gap(local.begin() + kInnerLip, local.begin() + kInnerLip + kInnerLipPoints);
  std::vector<Point> brow_l(local.begin() + kLeftBrow, local.begin() + kLeftBrow + kBrowPoints);
  std::vector<Point> brow_r(local.begin() + kRightBrow, local.begin() + kRightBrow + kBrowPoints);
  std::vector<Point> nose_base(local.begin() + kNoseBase, local.begin() + kNoseBase + 6);
  const Rgb mouth_dark{0.25, 0.08, 0.1}, sclera{0.95, 0.95, 0.93}, pupil{0.05, 0.05, 0.05};
  const Rgb nose_shadow{f.skin[0] * 0.7, f.skin[1] * 0.6, f.skin[2] * 0.6};

  auto shade = [&](Point q) {
    Rgb c = f.background;
    const double head = (q.x / s.aspect) * (q.x / s.aspect) + q.y * q.y;
    if (head <= 1.0) {
      c = f.skin;
      const double g = 1.0 + f.shading * q.x;
      for (auto& v : c) v *= g;
    } else if (std::abs(q.x) < 0.45 * s.aspect && q.y > 0.8 && q.y < 1.6) {
      c = {f.skin[0] * 0.8, f.skin[1] * 0.75, f.skin[2] * 0.75};  // neck
    }
    if (head > 1.0) return c;
    for (double ex : {-s.eye_x, s.eye_x}) {
      const double dx = (q.x - ex) / s.eye_rx, dy = (q.y - s.eye_y) / s.eye_ry;
      const double r = dx * dx + dy * dy;
      if (r <= 1.0) {
        c = sclera;
        const double ir = std::hypot(q.x - ex, q.y - s.eye_y);
        if (ir <= s.iris_r) c = ir <= 0.4 * s.iris_r ? pupil : f.iris;
      } else if (r <= 1.25) {
        c = {0.2, 0.12, 0.1};  // lash line
      }
    }
    if (q.y < s.brow_y + 0.06 &&
        std::min(detail::polyline_distance(brow_l, q), detail::polyline_distance(brow_r, q)) < 0.022)
      c = f.brows;
    if (std::abs(q.x) > s.nose_half_width + 0.05 && std::abs(q.x) > s.mouth_half_width + 0.02) return c;
    if (detail::polyline_distance({local[kNoseBridge], local[kNoseBridge + 3]}, q) < 0.008) detail::mix(c, nose_shadow, 0.5);
    if (std::abs(q.y - s.nose_tip) < 0.1) {
      if (detail::polyline_distance(nose_base, q) < 0.012) c = nose_shadow;
      for (double nx : {-0.5, 0.5}) {
        const double dx = (q.x - nx * s.nose_half_width) / 0.035, dy = (q.y - s.nose_tip - 0.02) / 0.018;
        if (dx * dx + dy * dy <= 1.0) c = mouth_dark;
      }
    }
    if (std::abs(q.y - s.mouth_y) < 0.25) {
      if (detail::inside_polygon(upper_lip, q) || detail::inside_polygon(lower_lip, q)) c = f.lips;
      if (detail::inside_polygon(mouth_gap, q)) c = mouth_dark;
    }
    return c;
  };

  std::mt19937_64 rng(f.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  AnnotatedSample out;
  out.image = Image(f.width, f.height, 3);
  constexpr int kSub = 4;
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const Point px{static_cast<double>(x) + (sx + 0.5) / kSub - 0.5, static_cast<double>(y) + (sy + 0.5) / kSub - 0.5};
          const Rgb c = shade(to_local.apply(px));
          for (int i = 0; i < 3; ++i) acc[i] += c[i];
        }
      for (int i = 0; i < 3; ++i) {
        const double v = acc[i] / (kSub * kSub) + f.noise * noise(rng);
        out.image.at(x, y)[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  out.points.reserve(local.size());
  for (const auto& p : local) out.points.push_back(to_pixel.apply(p));
  out.contour = layout.contour;
  out.source = "synthetic:" + std::to_string(f.seed);
  return out;
}

/// Framing and variation ranges for random faces.
struct SyntheticRanges {
  double margin = 0.25;        // crop margin as a fraction of the landmark box diagonal
  double scale_jitter = 0.10;  // relative
  double translation = 0.05;   // fraction of the frame
  double rotation_deg = 15.0;
  double shape_jitter = 1.0;   // 0 gives the mean face
  double noise_max = 0.04;
};

/// Center (local frame) and side of the square box that frames `shape` the
/// way the tracker crops: landmark bounding box expanded by margin times its
/// diagonal on every side, then squared.
inline std::pair<Point, double> framing(const FaceShape& shape, double margin) {
  const auto pts = local_landmarks(shape);
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  const double diag = std::hypot(x1 - x0, y1 - y0);
  const double side = std::max(x1 - x0, y1 - y0) + 2 * margin * diag;
  return {{(x0 + x1) / 2, (y0 + y1) / 2}, side};
}

/// A deterministic random face framed in a width x height image.
inline SyntheticFaceParams random_face_params(std::uint64_t seed, std::size_t width = 128, std::size_t height = 128,
                                              const SyntheticRanges& r = {}) {
  std::mt19937_64 rng(derive_seed(seed, 0x5f3e));
  std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.0, 1.0);
  SyntheticFaceParams f;
  f.seed = derive_seed(seed, 0xa11c);
  f.width = width;
  f.height = height;
  FaceShape& s = f.shape;
  const double j = r.shape_jitter;
  s.aspect = 0.8 + 0.07 * j * u(rng);
  s.eye_x *= 1 + 0.1 * j * u(rng);
  s.eye_y += 0.03 * j * u(rng);
  s.eye_rx *= 1 + 0.15 * j * u(rng);
  s.eye_ry *= 1 + 0.25 * j * u(rng);
  s.iris_r = std::min(s.iris_r * (1 + 0.15 * j * u(rng)), 0.9 * s.eye_ry + 0.01);
  s.brow_y += 0.04 * j * u(rng);
  s.brow_arch *= 1 + 0.5 * j * u(rng);
  s.nose_tip += 0.04 * j * u(rng);
  s.nose_half_width *= 1 + 0.15 * j * u(rng);
  s.mouth_y += 0.05 * j * u(rng);
  s.mouth_half_width *= 1 + 0.15 * j * u(rng);
  s.lip_upper *= 1 + 0.3 * j * u(rng);
  s.lip_lower *= 1 + 0.3 * j * u(rng);
  s.mouth_open = 0.005 + 0.05 * j * p(rng);
  s.smile = 0.03 * j * u(rng);

  auto color = [&](Rgb base, double spread) {
    for (auto& v : base) v = std::clamp(v + spread * u(rng), 0.0, 1.0);
    return base;
  };
  f.background = color({0.5, 0.5, 0.5}, 0.4);
  const double tone = 0.35 * u(rng);
  f.skin = color({0.8 + tone * 0.5, 0.62 + tone * 0.6, 0.5 + tone * 0.6}, 0.05);
  f.lips = color({0.65, 0.3, 0.33}, 0.12);
  f.brows = color({0.25, 0.18, 0.12}, 0.1);
  f.iris = color({0.3, 0.3, 0.35}, 0.2);
  f.shading = 0.15 * u(rng);
  f.noise = r.noise_max * p(rng);

  const auto [mid, side] = framing(s, r.margin);
  const double frame = static_cast<double>(std::min(width, height));
  f.scale = frame / side * (1 + r.scale_jitter * u(rng));
  f.rotation = r.rotation_deg * std::numbers::pi / 180.0 * u(rng);
  const double c = std::cos(f.rotation) * f.scale, sn = std::sin(f.rotation) * f.scale;
  // Place the box center at the frame center, then shift.
  f.center = {(static_cast<double>(width) - 1) / 2 - (c * mid.x - sn * mid.y) + r.translation * frame * u(rng),
              (static_cast<double>(height) - 1) / 2 - (sn * mid.x + c * mid.y) + r.translation * frame * u(rng)};
  return f;
}

/// `count` random faces from consecutive derived seeds.
inline std::vector<AnnotatedSample> synthetic_dataset(std::size_t count, std::uint64_t seed, std::size_t size = 128,
                                                      const SyntheticRanges& r = {}) {
  std::vector<AnnotatedSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_synthetic(random_face_params(derive_seed(seed, i), size, size, r)));
  return out;
}

}  // namespace tinyalign
