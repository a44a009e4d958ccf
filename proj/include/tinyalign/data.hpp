#pragma once

// Annotated samples, .pts parsing, the JSON-lines manifest, augmentation and
// dataset splitting. Landmarks here are in pixel coordinates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tinyalign/errors.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/landmarks.hpp"

namespace tinyalign {

struct AnnotatedSample {
  Image image;
  std::vector<Point> points;  // pixel coordinates, never clamped
  std::vector<bool> contour;
  std::string source;

  /// Per point: true when it lies outside the image.
  std::vector<bool> outside() const {
    std::vector<bool> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
      out[i] = points[i].x < -0.5 || points[i].y < -0.5 || points[i].x > static_cast<double>(image.width) - 0.5 ||
               points[i].y > static_cast<double>(image.height) - 0.5;
    return out;
  }
};

/// Parses the 300-W .pts format and converts its 1-based coordinates to
/// 0-based pixel coordinates.
inline std::vector<Point> parse_pts(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    lines.push_back(line.substr(b, e - b + 1));
  }
  auto header = [&](std::size_t i, const std::string& key) {
    if (i >= lines.size() || lines[i].rfind(key, 0) != 0) fail(ErrorKind::data, "pts: expected '" + key + "' header");
    return lines[i].substr(key.size());
  };
  if (header(0, "version:").find_first_not_of(" \t") == std::string::npos) fail(ErrorKind::data, "pts: empty version");
  std::size_t n = 0;
  {
    std::istringstream is(header(1, "n_points:"));
    std::string rest;
    if (!(is >> n) || (is >> rest)) fail(ErrorKind::data, "pts: malformed n_points");
  }
  if (lines.size() < 3 || lines[2] != "{") fail(ErrorKind::data, "pts: expected '{'");
  std::vector<Point> pts;
  std::size_t i = 3;
  for (; i < lines.size() && lines[i] != "}"; ++i) {
    std::istringstream is(lines[i]);
    Point p;
    std::string rest;
    if (!(is >> p.x >> p.y) || (is >> rest)) fail(ErrorKind::data, "pts: malformed point line " + std::to_string(i + 1));
    pts.push_back({p.x - 1.0, p.y - 1.0});
  }
  if (i == lines.size()) fail(ErrorKind::data, "pts: missing '}'");
  if (i + 1 != lines.size()) fail(ErrorKind::data, "pts: content after '}'");
  if (pts.size() != n)
    fail(ErrorKind::data, "pts: n_points is " + std::to_string(n) + " but " + std::to_string(pts.size()) + " points follow");
  return pts;
}

/// One manifest line: {"image_path": ..., "points": [[x, y], ...], "tags": ["inner" | "contour", ...]}.
struct ManifestEntry {
  std::string image_path;
  std::vector<Point> points;
  std::vector<bool> contour;
};

inline ManifestEntry parse_manifest_line(const std::string& line) {
  ManifestEntry e;
  try {
    const auto j = nlohmann::json::parse(line);
    e.image_path = j.at("image_path").get<std::string>();
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) fail(ErrorKind::data, "manifest: point must be [x, y]");
      e.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (j.contains("tags")) {
      for (const auto& t : j.at("tags")) {
        const auto s = t.get<std::string>();
        if (s != "inner" && s != "contour") fail(ErrorKind::data, "manifest: unknown tag " + s);
        e.contour.push_back(s == "contour");
      }
      if (e.contour.size() != e.points.size()) fail(ErrorKind::data, "manifest: tags and points differ in length");
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::data, std::string("manifest: ") + ex.what());
  }
  return e;
}

inline std::string manifest_line(const ManifestEntry& e) {
  nlohmann::json j;
  j["image_path"] = e.image_path;
  auto pts = nlohmann::json::array();
  for (const auto& p : e.points) pts.push_back({p.x, p.y});
  j["points"] = pts;
  if (!e.contour.empty()) {
    auto tags = nlohmann::json::array();
    for (bool c : e.contour) tags.push_back(c ? "contour" : "inner");
    j["tags"] = tags;
  }
  return j.dump();
}

/// Reads a manifest; relative image paths are resolved against its folder.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto e = parse_manifest_line(line);
    if (std::filesystem::path(e.image_path).is_relative()) e.image_path = (base / e.image_path).string();
    out.push_back(std::move(e));
  }
  return out;
}

/// One random augmentation. The default value is the identity.
struct AugmentDraw {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double shift_x = 0.0, shift_y = 0.0;  // fractions of the image size
  bool flip = false;
  double brightness = 0.0;  // added, in [0, 1] intensity units
  double contrast = 1.0;

  bool geometric_identity() const { return rotation == 0.0 && scale == 1.0 && shift_x == 0.0 && shift_y == 0.0; }
};

struct AugmentRanges {
  double rotation_deg = 20.0;
  double scale = 0.1;
  double translation = 0.05;
  double flip_probability = 0.5;
  double brightness = 0.1;
  double contrast = 0.15;
};

inline AugmentDraw draw_augment(std::uint64_t seed, const AugmentRanges& r = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.0, 1.0);
  AugmentDraw d;
  d.rotation = u(rng) * r.rotation_deg * std::numbers::pi / 180.0;
  d.scale = 1.0 + u(rng) * r.scale;
  d.shift_x = u(rng) * r.translation;
  d.shift_y = u(rng) * r.translation;
  d.flip = p(rng) < r.flip_probability;
  d.brightness = u(rng) * r.brightness;
  d.contrast = 1.0 + u(rng) * r.contrast;
  return d;
}

/// The pixel-coordinate map applied to landmarks (flip excluded).
inline Affine augment_transform(const AugmentDraw& d, std::size_t width, std::size_t height) {
  const Point center{(static_cast<double>(width) - 1) / 2, (static_cast<double>(height) - 1) / 2};
  return Affine::similarity(center, d.rotation, d.scale,
                            {d.shift_x * static_cast<double>(width), d.shift_y * static_cast<double>(height)});
}

/// Applies `d` to image and landmarks together. Flips remap indices with the
/// layout's table.
inline AnnotatedSample apply_augment(const AnnotatedSample& s, const AugmentDraw& d, const LandmarkLayout& layout) {
  AnnotatedSample out = s;
  if (!d.geometric_identity()) {
    const Affine a = augment_transform(d, s.image.width, s.image.height);
    out.image = warp_affine(s.image, a);
    for (auto& p : out.points) p = a.apply(p);
  }
  if (d.flip) {
    if (layout.size() != out.points.size()) fail(ErrorKind::data, "augment: layout does not match the sample");
    out.image = flip_horizontal(out.image);
    for (auto& p : out.points) p.x = static_cast<double>(s.image.width) - 1.0 - p.x;
    out.points = remap_flip(out.points, layout);
  }
  if (d.brightness != 0.0 || d.contrast != 1.0) {
    for (auto& v : out.image.pixels) {
      const double x = (v / 255.0 - 0.5) * d.contrast + 0.5 + d.brightness;
      v = static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

inline AnnotatedSample augment(const AnnotatedSample& s, std::uint64_t seed, const LandmarkLayout& layout,
                               const AugmentRanges& r = {}) {
  return apply_augment(s, draw_augment(seed, r), layout);
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Deterministic shuffled partition of [0, n).
inline Split split(std::size_t n, double train_ratio, double val_ratio, std::uint64_t seed) {
  if (train_ratio < 0 || val_ratio < 0 || std::abs(train_ratio + val_ratio - 1.0) > 1e-9)
    fail(ErrorKind::config, "split: ratios must be non-negative and sum to 1");
  if (n == 0) fail(ErrorKind::data, "split: empty dataset");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  if ((train_ratio > 0 && s.train.empty()) || (val_ratio > 0 && s.val.empty()))
    fail(ErrorKind::data, "split: a partition with a positive ratio is empty");
  return s;
}

/// Mixes a base seed with up to two indices (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

}  // namespace tinyalign
