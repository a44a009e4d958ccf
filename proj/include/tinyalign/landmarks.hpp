#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tinyalign/errors.hpp"

namespace tinyalign {

struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

enum class Subset { inner, contour, all };

/// Facial parts the renderer knows how to paint.
enum class Part : unsigned char { upper_lip, lower_lip, left_cheek, right_cheek, left_eyelid, right_eyelid };

inline constexpr std::array<Part, 6> kAllParts = {Part::upper_lip,  Part::lower_lip,   Part::left_cheek,
                                                  Part::right_cheek, Part::left_eyelid, Part::right_eyelid};

inline const char* to_string(Part p) {
  switch (p) {
    case Part::upper_lip: return "upper_lip";
    case Part::lower_lip: return "lower_lip";
    case Part::left_cheek: return "left_cheek";
    case Part::right_cheek: return "right_cheek";
    case Part::left_eyelid: return "left_eyelid";
    case Part::right_eyelid: return "right_eyelid";
  }
  return "?";
}

/// Semantics of a landmark index space: subset tags, the horizontal-flip
/// permutation, the eye rings whose centroids define the pupils, and the
/// closed index loops outlining each paintable part.
struct LandmarkLayout {
  std::string name;
  std::vector<bool> contour;
  std::vector<std::size_t> flip;
  std::vector<std::size_t> left_eye;
  std::vector<std::size_t> right_eye;
  std::map<Part, std::vector<std::size_t>> parts;

  std::size_t size() const { return contour.size(); }

  std::size_t count(Subset s) const {
    if (s == Subset::all) return size();
    const auto c = static_cast<std::size_t>(std::count(contour.begin(), contour.end(), true));
    return s == Subset::contour ? c : size() - c;
  }

  bool in_subset(std::size_t i, Subset s) const {
    return s == Subset::all || (s == Subset::contour) == static_cast<bool>(contour[i]);
  }

  void validate() const {
    const std::size_t n = size();
    if (flip.size() != n) fail(ErrorKind::config, "layout " + name + ": flip table size mismatch");
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (flip[i] >= n || seen[flip[i]]) fail(ErrorKind::config, "layout " + name + ": flip table is not a permutation");
      seen[flip[i]] = true;
      if (flip[flip[i]] != i) fail(ErrorKind::config, "layout " + name + ": flip table is not an involution");
    }
    auto check = [&](const std::vector<std::size_t>& idx, const char* what) {
      for (auto i : idx)
        if (i >= n) fail(ErrorKind::config, "layout " + name + ": " + what + " index out of range");
    };
    check(left_eye, "left eye");
    check(right_eye, "right eye");
    for (const auto& [part, loop] : parts) check(loop, to_string(part));
  }

  /// 65 points: 62 inner (brows, eyes, nose, lips) + 3 sparse contour points.
  static LandmarkLayout face65();
  /// The 68-point iBUG/300W annotation (0-based).
  static LandmarkLayout ibug68();
  static LandmarkLayout by_name(const std::string& name);
  /// n unnamed inner points with an identity flip; points 0 and 1 stand in
  /// for the pupils.
  static LandmarkLayout generic(std::size_t n) {
    LandmarkLayout g;
    g.name = "generic";
    g.contour.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) g.flip.push_back(i);
    g.left_eye = {0};
    g.right_eye = {n > 1 ? std::size_t{1} : std::size_t{0}};
    return g;
  }
};

/// Index ranges of the 65-point layout.
namespace face65 {
inline constexpr std::size_t kBrowPoints = 7;
inline constexpr std::size_t kEyePoints = 8;
inline constexpr std::size_t kLeftBrow = 0;
inline constexpr std::size_t kRightBrow = 7;
inline constexpr std::size_t kLeftEye = 14;
inline constexpr std::size_t kRightEye = 22;
inline constexpr std::size_t kNoseBridge = 30;  // 4 points on the midline, last is the tip
inline constexpr std::size_t kNoseBase = 34;    // 6 points, 3 left then 3 right
inline constexpr std::size_t kOuterLip = 40;    // 14-point ring from the left corner, upper first
inline constexpr std::size_t kOuterLipPoints = 14;
inline constexpr std::size_t kInnerLip = 54;    // 8-point ring, same convention
inline constexpr std::size_t kInnerLipPoints = 8;
inline constexpr std::size_t kLeftJaw = 62;
inline constexpr std::size_t kChin = 63;
inline constexpr std::size_t kRightJaw = 64;
inline constexpr std::size_t kCount = 65;
}  // namespace face65

inline LandmarkLayout LandmarkLayout::face65() {
  using namespace tinyalign::face65;
  LandmarkLayout l;
  l.name = "face65";
  l.contour.assign(kCount, false);
  l.contour[kLeftJaw] = l.contour[kChin] = l.contour[kRightJaw] = true;
  l.flip.resize(kCount);
  std::iota(l.flip.begin(), l.flip.end(), std::size_t{0});
  for (std::size_t k = 0; k < kBrowPoints; ++k) {
    l.flip[kLeftBrow + k] = kRightBrow + (kBrowPoints - 1 - k);
    l.flip[kRightBrow + (kBrowPoints - 1 - k)] = kLeftBrow + k;
  }
  // Eye rings start at the image-left corner and run over the top; the
  // mirror of ring index k is (4 - k) mod 8 in the other eye.
  for (std::size_t k = 0; k < kEyePoints; ++k) {
    const std::size_t m = (kEyePoints + 4 - k) % kEyePoints;
    l.flip[kLeftEye + k] = kRightEye + m;
    l.flip[kRightEye + m] = kLeftEye + k;
  }
  for (std::size_t k = 0; k < 6; ++k) l.flip[kNoseBase + k] = kNoseBase + 5 - k;
  for (std::size_t k = 0; k < kOuterLipPoints; ++k) l.flip[kOuterLip + k] = kOuterLip + (kOuterLipPoints + 7 - k) % kOuterLipPoints;
  for (std::size_t k = 0; k < kInnerLipPoints; ++k) l.flip[kInnerLip + k] = kInnerLip + (kInnerLipPoints + 4 - k) % kInnerLipPoints;
  l.flip[kLeftJaw] = kRightJaw;
  l.flip[kRightJaw] = kLeftJaw;

  for (std::size_t k = 0; k < kEyePoints; ++k) {
    l.left_eye.push_back(kLeftEye + k);
    l.right_eye.push_back(kRightEye + k);
  }

  auto outer = [](std::size_t k) { return kOuterLip + k % kOuterLipPoints; };
  auto inner = [](std::size_t k) { return kInnerLip + k % kInnerLipPoints; };
  std::vector<std::size_t> upper, lower;
  for (std::size_t k = 0; k <= 7; ++k) upper.push_back(outer(k));
  for (std::size_t k = 5; k-- > 0;) upper.push_back(inner(k));
  for (std::size_t k = 7; k <= 14; ++k) lower.push_back(outer(k));
  for (std::size_t k : {0, 7, 6, 5, 4}) lower.push_back(inner(k));
  l.parts[Part::upper_lip] = upper;
  l.parts[Part::lower_lip] = lower;

  l.parts[Part::left_cheek] = {kLeftEye + 7, kLeftEye + 6, kNoseBase + 0, kOuterLip + 0, kLeftJaw};
  l.parts[Part::right_cheek] = {kRightEye + 5, kRightJaw, kOuterLip + 7, kNoseBase + 5, kRightEye + 6};

  std::vector<std::size_t> left_lid, right_lid;
  for (std::size_t k = 0; k <= 4; ++k) left_lid.push_back(kLeftEye + k);
  for (std::size_t k = kBrowPoints; k-- > 0;) left_lid.push_back(kLeftBrow + k);
  for (std::size_t k = 0; k <= 4; ++k) right_lid.push_back(kRightEye + k);
  for (std::size_t k = kBrowPoints; k-- > 0;) right_lid.push_back(kRightBrow + k);
  l.parts[Part::left_eyelid] = left_lid;
  l.parts[Part::right_eyelid] = right_lid;
  return l;
}

inline LandmarkLayout LandmarkLayout::ibug68() {
  LandmarkLayout l;
  l.name = "ibug68";
  l.contour.assign(68, false);
  for (std::size_t i = 0; i < 17; ++i) l.contour[i] = true;
  l.flip.resize(68);
  std::iota(l.flip.begin(), l.flip.end(), std::size_t{0});
  auto pair = [&](std::size_t a, std::size_t b) {
    l.flip[a] = b;
    l.flip[b] = a;
  };
  for (std::size_t i = 0; i < 8; ++i) pair(i, 16 - i);
  for (std::size_t i = 0; i < 5; ++i) pair(17 + i, 26 - i);
  pair(31, 35);
  pair(32, 34);
  pair(36, 45);
  pair(37, 44);
  pair(38, 43);
  pair(39, 42);
  pair(40, 47);
  pair(41, 46);
  pair(48, 54);
  pair(49, 53);
  pair(50, 52);
  pair(55, 59);
  pair(56, 58);
  pair(60, 64);
  pair(61, 63);
  pair(65, 67);
  l.left_eye = {36, 37, 38, 39, 40, 41};
  l.right_eye = {42, 43, 44, 45, 46, 47};
  l.parts[Part::upper_lip] = {48, 49, 50, 51, 52, 53, 54, 64, 63, 62, 61, 60};
  l.parts[Part::lower_lip] = {54, 55, 56, 57, 58, 59, 48, 60, 67, 66, 65, 64};
  l.parts[Part::left_cheek] = {41, 40, 31, 48, 3, 2, 1};
  l.parts[Part::right_cheek] = {46, 15, 14, 13, 54, 35, 47};
  l.parts[Part::left_eyelid] = {36, 37, 38, 39, 21, 20, 19, 18, 17};
  l.parts[Part::right_eyelid] = {42, 43, 44, 45, 26, 25, 24, 23, 22};
  return l;
}

inline LandmarkLayout LandmarkLayout::by_name(const std::string& name) {
  if (name == "face65") return face65();
  if (name == "ibug68") return ibug68();
  fail(ErrorKind::config, "unknown landmark layout: " + name);
}

/// L points plus their inner/contour tags. Coordinates are normalized image
/// coordinates unless a function says otherwise.
struct LandmarkSet {
  std::vector<Point> points;
  std::vector<bool> contour;

  std::size_t size() const { return points.size(); }
  bool operator==(const LandmarkSet&) const = default;
};

inline LandmarkSet make_landmark_set(std::vector<Point> pts, const LandmarkLayout& layout) {
  if (pts.size() != layout.size())
    fail(ErrorKind::data, "landmark count " + std::to_string(pts.size()) + " does not match layout " + layout.name);
  return {std::move(pts), layout.contour};
}

inline Point centroid(const std::vector<Point>& pts, const std::vector<std::size_t>& idx) {
  Point c;
  for (auto i : idx) {
    c.x += pts.at(i).x;
    c.y += pts.at(i).y;
  }
  c.x /= static_cast<double>(idx.size());
  c.y /= static_cast<double>(idx.size());
  return c;
}

inline double inter_pupil_distance(const std::vector<Point>& pts, const LandmarkLayout& layout) {
  return distance(centroid(pts, layout.left_eye), centroid(pts, layout.right_eye));
}

/// Applies the layout's flip permutation (index remap only).
inline std::vector<Point> remap_flip(const std::vector<Point>& pts, const LandmarkLayout& layout) {
  std::vector<Point> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[layout.flip[i]] = pts[i];
  return out;
}

}  // namespace tinyalign
