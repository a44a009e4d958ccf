#pragma once

// Temporal tracking: each frame is cropped to the box derived from the
// previous frame's landmarks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/landmarks.hpp"

namespace tinyalign {

inline constexpr double kTrackMargin = 0.25;

struct TrackState {
  std::vector<Point> landmarks;  // frame pixels, empty before the first frame
  std::optional<Box> box;
  std::size_t staleness = 0;  // frames since the box was last seeded

  static TrackState seeded(const Box& b) {
    TrackState s;
    s.box = b;
    return s;
  }
};

inline Box clamp_box(const Box& b, std::size_t width, std::size_t height) {
  return {std::clamp(b.x0, 0.0, static_cast<double>(width)), std::clamp(b.y0, 0.0, static_cast<double>(height)),
          std::clamp(b.x1, 0.0, static_cast<double>(width)), std::clamp(b.y1, 0.0, static_cast<double>(height))};
}

/// Square box around the landmarks' bounding box, padded by `margin` times its
/// diagonal on every side, in corner coordinates.
inline Box landmark_box(const std::vector<Point>& pts, double margin = kTrackMargin) {
  if (pts.empty()) fail(ErrorKind::invalid_argument, "landmark_box: no landmarks");
  double x0 = pts[0].x, x1 = x0, y0 = pts[0].y, y1 = y0;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double diag = std::hypot(x1 - x0, y1 - y0);
  const double half = (std::max(x1 - x0, y1 - y0) + 2 * margin * diag) / 2;
  const double cx = (x0 + x1) / 2 + 0.5, cy = (y0 + y1) / 2 + 0.5;
  return {cx - half, cy - half, cx + half, cy + half};
}

/// One tracking step. `net.predict(frame, box)` must return landmarks
/// normalized within `box`. Throws tracking_lost when the state has no box or
/// the box misses the frame; the state is left untouched in that case.
template <class Net>
std::vector<Point> track(Net& net, const Image& frame, TrackState& state) {
  if (frame.empty()) fail(ErrorKind::invalid_argument, "track: empty frame");
  if (!state.box) fail(ErrorKind::tracking_lost, "track: no face box, seed the tracker");
  const Box crop = clamp_box(*state.box, frame.width, frame.height);
  if (crop.degenerate()) fail(ErrorKind::tracking_lost, "track: face box left the frame");
  std::vector<Point> pts = net.predict(frame, crop);
  for (auto& p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail(ErrorKind::numeric, "track: non-finite landmark");
    p = from_box_normalized(p, crop);
  }
  const Box next = clamp_box(landmark_box(pts), frame.width, frame.height);
  if (next.degenerate()) fail(ErrorKind::tracking_lost, "track: landmarks collapsed");
  state.landmarks = pts;
  state.box = next;
  ++state.staleness;
  return pts;
}

}  // namespace tinyalign
