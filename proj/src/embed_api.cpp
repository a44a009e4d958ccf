#include "tinyalign/embed_api.h"

#include <cstring>
#include <new>
#include <string>

#include "tinyalign/model.hpp"
#include "tinyalign/render.hpp"
#include "tinyalign/serialize.hpp"
#include "tinyalign/track.hpp"

using namespace tinyalign;

struct ta_session {
  AlignNet<float> net;
  LandmarkLayout layout;
  TrackState state;
  std::string error;
};

namespace {

int32_t code_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::format:
    case ErrorKind::config: return TA_ERR_FORMAT;
    case ErrorKind::checksum: return TA_ERR_CHECKSUM;
    case ErrorKind::tracking_lost: return TA_ERR_TRACKING_LOST;
    case ErrorKind::numeric: return TA_ERR_NUMERIC;
    default: return TA_ERR_INVALID_ARGUMENT;
  }
}

template <class F>
int32_t guarded(ta_session* s, F&& f) {
  try {
    f();
    if (s) s->error.clear();
    return TA_OK;
  } catch (const Error& e) {
    if (s) s->error = e.what();
    return code_of(e.kind());
  } catch (const std::bad_alloc&) {
    if (s) s->error = "out of memory";
    return TA_ERR_INVALID_ARGUMENT;
  }
}

Image frame_of(const uint8_t* rgba, uint32_t width, uint32_t height) {
  if (!rgba || width == 0 || height == 0) fail(ErrorKind::invalid_argument, "frame must be non-empty");
  Image img(width, height, 4);
  std::memcpy(img.pixels.data(), rgba, img.pixels.size());
  return img;
}

std::vector<Point> landmarks_of(const ta_session& s, const float* p, size_t n) {
  if (!p || n != 2 * s.layout.size()) fail(ErrorKind::invalid_argument, "landmark array must hold 2L floats");
  std::vector<Point> out(s.layout.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p[2 * i], p[2 * i + 1]};
  return out;
}

std::vector<ProductSpec> products_of(const uint8_t* p, size_t n) {
  if (n % TA_PRODUCT_RECORD_SIZE != 0) fail(ErrorKind::invalid_argument, "product list length is not a multiple of 6");
  if (n > 0 && !p) fail(ErrorKind::invalid_argument, "null product list");
  std::vector<ProductSpec> out;
  for (size_t i = 0; i < n; i += TA_PRODUCT_RECORD_SIZE) {
    if (p[i] >= kAllParts.size()) fail(ErrorKind::invalid_argument, "unknown part id " + std::to_string(p[i]));
    ProductSpec ps;
    ps.part = kAllParts[p[i]];
    ps.color = {p[i + 1], p[i + 2], p[i + 3]};
    ps.opacity = p[i + 4] / 255.0;
    ps.feather_radius = p[i + 5];
    out.push_back(ps);
  }
  return out;
}

}  // namespace

extern "C" {

int32_t ta_session_create(const uint8_t* model, size_t model_len, ta_session** out, uint32_t* num_landmarks,
                          uint32_t* input_size) {
  if (!out) return TA_ERR_INVALID_ARGUMENT;
  *out = nullptr;
  if (!model) return TA_ERR_INVALID_ARGUMENT;
  return guarded(nullptr, [&] {
    auto m = load_model<float>(model, model_len);
    LandmarkLayout layout = layout_of(m.config);
    AlignNet<float> net(m.config, std::move(m.weights));
    if (num_landmarks) *num_landmarks = static_cast<uint32_t>(layout.size());
    if (input_size) *input_size = static_cast<uint32_t>(m.config.input_size);
    *out = new ta_session{std::move(net), std::move(layout), {}, {}};
  });
}

int32_t ta_session_track(ta_session* s, const uint8_t* rgba, uint32_t width, uint32_t height, const float* seed_box,
                         float* out, size_t out_len) {
  if (!s) return TA_ERR_INVALID_ARGUMENT;
  return guarded(s, [&] {
    const Image frame = frame_of(rgba, width, height);
    if (!out || out_len != 2 * s->layout.size()) fail(ErrorKind::invalid_argument, "output must hold 2L floats");
    TrackState state = s->state;
    if (seed_box) {
      for (int i = 0; i < 4; ++i)
        if (!std::isfinite(seed_box[i])) fail(ErrorKind::invalid_argument, "seed box must be finite");
      state = TrackState::seeded({seed_box[0], seed_box[1], seed_box[2], seed_box[3]});
    }
    try {
      const auto pts = track(s->net, frame, state);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        out[2 * i] = static_cast<float>(pts[i].x);
        out[2 * i + 1] = static_cast<float>(pts[i].y);
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::tracking_lost) s->state = {};
      throw;
    }
    s->state = std::move(state);
  });
}

int32_t ta_session_render(ta_session* s, const uint8_t* rgba, uint32_t width, uint32_t height, const float* landmarks,
                          size_t landmarks_len, const uint8_t* products, size_t products_len, uint8_t* out_rgba) {
  if (!s) return TA_ERR_INVALID_ARGUMENT;
  return guarded(s, [&] {
    const Image frame = frame_of(rgba, width, height);
    if (!out_rgba) fail(ErrorKind::invalid_argument, "null output frame");
    const auto pts = landmarks_of(*s, landmarks, landmarks_len);
    const auto list = products_of(products, products_len);
    const Image composed = render_makeup(frame, pts, s->layout, list);
    std::memcpy(out_rgba, composed.pixels.data(), composed.pixels.size());
  });
}

const char* ta_session_last_error(const ta_session* s) { return s ? s->error.c_str() : ""; }

void ta_session_destroy(ta_session* s) { delete s; }

}  // extern "C"
