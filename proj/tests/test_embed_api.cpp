#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "tinyalign/embed_api.h"
#include "tinyalign/render.hpp"
#include "tinyalign/serialize.hpp"
#include "tinyalign/synthetic.hpp"

namespace tinyalign {
namespace {

ModelConfig small_face_config() {
  ModelConfig c;
  c.input_size = 64;
  c.heatmap_size = 16;
  c.width_multiplier = 0.25;
  return c;
}

Bytes model_bytes() {
  const ModelConfig c = small_face_config();
  auto net = AlignNet<float>::initialize(c, 5).exported();
  return save_model(net.config(), net.weights());
}

using SessionPtr = std::unique_ptr<ta_session, decltype(&ta_session_destroy)>;

SessionPtr open(const Bytes& b) {
  ta_session* s = nullptr;
  EXPECT_EQ(ta_session_create(b.data(), b.size(), &s, nullptr, nullptr), TA_OK);
  return SessionPtr(s, &ta_session_destroy);
}

struct Frame {
  AnnotatedSample face;
  Image rgba;
  std::vector<float> truth;  // 2L floats
};

Frame synthetic_frame(std::uint64_t seed) {
  Frame f;
  f.face = generate_synthetic(random_face_params(seed, 96, 96));
  f.rgba = to_rgba(f.face.image);
  for (const auto& p : f.face.points) {
    f.truth.push_back(static_cast<float>(p.x));
    f.truth.push_back(static_cast<float>(p.y));
  }
  return f;
}

const float kSeedBox[4] = {8, 8, 88, 88};

TEST(EmbedCreate, ReportsShapeAndErrorCodes) {
  const Bytes b = model_bytes();
  ta_session* s = nullptr;
  uint32_t L = 0, size = 0;
  ASSERT_EQ(ta_session_create(b.data(), b.size(), &s, &L, &size), TA_OK);
  EXPECT_EQ(L, 65u);
  EXPECT_EQ(size, 64u);
  EXPECT_STREQ(ta_session_last_error(s), "");
  ta_session_destroy(s);

  EXPECT_EQ(ta_session_create(b.data(), b.size() - 7, &s, &L, &size), TA_ERR_CHECKSUM);
  EXPECT_EQ(s, nullptr);
  Bytes flipped = b;
  flipped[flipped.size() - 10] ^= 0x40;
  EXPECT_EQ(ta_session_create(flipped.data(), flipped.size(), &s, nullptr, nullptr), TA_ERR_CHECKSUM);
  Bytes magic = b;
  magic[0] = 'X';
  EXPECT_EQ(ta_session_create(magic.data(), magic.size(), &s, nullptr, nullptr), TA_ERR_FORMAT);
  EXPECT_EQ(ta_session_create(nullptr, 0, &s, nullptr, nullptr), TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_create(b.data(), b.size(), nullptr, nullptr, nullptr), TA_ERR_INVALID_ARGUMENT);
}

TEST(EmbedTrack, ArgumentsAndSeeding) {
  const auto s = open(model_bytes());
  const Frame f = synthetic_frame(1);
  std::vector<float> out(130);
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 0, 0, kSeedBox, out.data(), out.size()),
            TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, kSeedBox, out.data(), 12), TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, nullptr, out.data(), out.size()),
            TA_ERR_TRACKING_LOST);
  EXPECT_STRNE(ta_session_last_error(s.get()), "");
  const float nan_box[4] = {0, 0, NAN, 10};
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, nan_box, out.data(), out.size()),
            TA_ERR_INVALID_ARGUMENT);
  const float outside[4] = {200, 200, 260, 260};
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, outside, out.data(), out.size()),
            TA_ERR_TRACKING_LOST);

  ASSERT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, kSeedBox, out.data(), out.size()), TA_OK);
  for (float v : out) {
    EXPECT_GE(v, -0.5f);
    EXPECT_LE(v, 95.5f);
  }
  // Later frames continue from the stored state.
  EXPECT_EQ(ta_session_track(s.get(), f.rgba.pixels.data(), 96, 96, nullptr, out.data(), out.size()), TA_OK);
}

TEST(EmbedTrack, SessionsAreIndependentAndDeterministic) {
  const Bytes b = model_bytes();
  const auto a = open(b), c = open(b);
  const Frame f = synthetic_frame(2);
  std::vector<float> oa(130), oc(130);
  ASSERT_EQ(ta_session_track(a.get(), f.rgba.pixels.data(), 96, 96, kSeedBox, oa.data(), oa.size()), TA_OK);
  EXPECT_EQ(ta_session_track(c.get(), f.rgba.pixels.data(), 96, 96, nullptr, oc.data(), oc.size()),
            TA_ERR_TRACKING_LOST);
  ASSERT_EQ(ta_session_track(c.get(), f.rgba.pixels.data(), 96, 96, kSeedBox, oc.data(), oc.size()), TA_OK);
  EXPECT_EQ(oa, oc);
}

TEST(EmbedRender, EmptyAndTransparentProductsLeaveTheFrame) {
  const auto s = open(model_bytes());
  const Frame f = synthetic_frame(3);
  std::vector<std::uint8_t> out(f.rgba.pixels.size(), 0);
  ASSERT_EQ(ta_session_render(s.get(), f.rgba.pixels.data(), 96, 96, f.truth.data(), f.truth.size(), nullptr, 0,
                              out.data()),
            TA_OK);
  EXPECT_EQ(out, f.rgba.pixels);
  const std::uint8_t clear[6] = {0, 255, 0, 0, 0, 3};
  std::fill(out.begin(), out.end(), 0);
  ASSERT_EQ(ta_session_render(s.get(), f.rgba.pixels.data(), 96, 96, f.truth.data(), f.truth.size(), clear, 6,
                              out.data()),
            TA_OK);
  EXPECT_EQ(out, f.rgba.pixels);
}

TEST(EmbedRender, LipColorStaysInsideTheLipMask) {
  const auto s = open(model_bytes());
  const Frame f = synthetic_frame(4);
  const std::uint8_t lips[12] = {0, 200, 20, 60, 200, 2, 1, 200, 20, 60, 200, 2};
  std::vector<std::uint8_t> out(f.rgba.pixels.size());
  ASSERT_EQ(ta_session_render(s.get(), f.rgba.pixels.data(), 96, 96, f.truth.data(), f.truth.size(), lips, 12,
                              out.data()),
            TA_OK);
  const auto layout = LandmarkLayout::face65();
  const auto upper = build_part_mask(f.face.points, layout, Part::upper_lip, 96, 96, 2);
  const auto lower = build_part_mask(f.face.points, layout, Part::lower_lip, 96, 96, 2);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 96 * 96; ++i) {
    const bool differs = !std::equal(out.begin() + 4 * i, out.begin() + 4 * i + 4, f.rgba.pixels.begin() + 4 * i);
    if (differs) {
      ++changed;
      EXPECT_GT(upper.alpha[i] + lower.alpha[i], 0.0f) << i;
    }
    EXPECT_EQ(out[4 * i + 3], f.rgba.pixels[4 * i + 3]);
  }
  EXPECT_GT(changed, 20u);
}

TEST(EmbedRender, MalformedInputs) {
  const auto s = open(model_bytes());
  const Frame f = synthetic_frame(5);
  std::vector<std::uint8_t> out(f.rgba.pixels.size());
  const std::uint8_t bad_len[5] = {0, 1, 2, 3, 4};
  const std::uint8_t bad_part[6] = {9, 1, 2, 3, 4, 5};
  const auto* px = f.rgba.pixels.data();
  EXPECT_EQ(ta_session_render(s.get(), px, 96, 96, f.truth.data(), f.truth.size(), bad_len, 5, out.data()),
            TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_render(s.get(), px, 96, 96, f.truth.data(), f.truth.size(), bad_part, 6, out.data()),
            TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_render(s.get(), px, 96, 96, f.truth.data(), 10, nullptr, 0, out.data()),
            TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_render(s.get(), px, 96, 96, f.truth.data(), f.truth.size(), nullptr, 0, nullptr),
            TA_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(ta_session_render(nullptr, px, 96, 96, f.truth.data(), f.truth.size(), nullptr, 0, out.data()),
            TA_ERR_INVALID_ARGUMENT);
}

}  // namespace
}  // namespace tinyalign
