#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "tinyalign/data.hpp"
#include "tinyalign/heatmap.hpp"
#include "tinyalign/image_io.hpp"
#include "tinyalign/synthetic.hpp"

#ifndef TINYALIGN_TEST_DATA
#define TINYALIGN_TEST_DATA "tests/data"
#endif

namespace tinyalign {
namespace {

TEST(Pts, ParsesAndShiftsToZeroBased) {
  const auto p = parse_pts("version: 1\nn_points: 3\n{\n1 1\n2 3\n4 5\n}\n");
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0].x, 0.0);
  EXPECT_EQ(p[0].y, 0.0);
  EXPECT_EQ(p[1].x, 1.0);
  EXPECT_EQ(p[1].y, 2.0);
  EXPECT_EQ(p[2].x, 3.0);
  EXPECT_EQ(p[2].y, 4.0);
}

TEST(Pts, ToleratesTrailingWhitespace) {
  const auto p = parse_pts("version: 1  \r\nn_points:  2 \r\n{ \r\n 10.5 20.25 \t\r\n3 4\r\n}  \r\n\n\n");
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].x, 9.5);
  EXPECT_EQ(p[0].y, 19.25);
}

TEST(Pts, Errors) {
  std::string body = "version: 1\nn_points: 68\n{\n";
  for (int i = 0; i < 67; ++i) body += "1 2\n";
  body += "}\n";
  EXPECT_THROW(parse_pts(body), Error);
  EXPECT_THROW(parse_pts("n_points: 1\n{\n1 1\n}\n"), Error);
  EXPECT_THROW(parse_pts("version: 1\nn_points: x\n{\n1 1\n}\n"), Error);
  EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1\n}\n"), Error);
  EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n1 1\n"), Error);
}

TEST(Manifest, LineRoundTrip) {
  ManifestEntry e{"faces/a.png", {{1.5, 2.0}, {-3.0, 4.25}}, {false, true}};
  const auto r = parse_manifest_line(manifest_line(e));
  EXPECT_EQ(r.image_path, e.image_path);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_EQ(r.points[1].x, -3.0);
  EXPECT_EQ(r.contour, e.contour);
  EXPECT_THROW(parse_manifest_line("{\"image_path\": \"x\"}"), Error);
  EXPECT_THROW(parse_manifest_line("{\"image_path\": \"x\", \"points\": [[1]]}"), Error);
  EXPECT_THROW(parse_manifest_line("not json"), Error);
}

TEST(ImageIo, PngRoundTripAndJpegDecode) {
  Image img(5, 3, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 17);
  const Bytes png = encode_png(img);
  EXPECT_EQ(decode_image(png.data(), png.size()), img);

  const Image jpg = load_image(std::string(TINYALIGN_TEST_DATA) + "/gradient.jpg");
  EXPECT_EQ(jpg.width, 8u);
  EXPECT_EQ(jpg.height, 6u);
  // Reference values from an independent decoder (Pillow).
  EXPECT_NEAR(jpg.at(7, 0)[0], 189, 2);
  EXPECT_NEAR(jpg.at(0, 5)[1], 188, 2);

  const std::uint8_t junk[4] = {1, 2, 3, 4};
  EXPECT_THROW(decode_image(junk, 4), Error);
  Bytes broken(png.begin(), png.begin() + 30);
  EXPECT_THROW(decode_image(broken.data(), broken.size()), Error);
}

AnnotatedSample sample(std::uint64_t seed) { return generate_synthetic(random_face_params(seed)); }

TEST(Augment, IdentityDraw) {
  const auto s = sample(1);
  const auto a = apply_augment(s, AugmentDraw{}, LandmarkLayout::face65());
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.points, s.points);
}

TEST(Augment, PureFlip) {
  const auto s = sample(2);
  const auto layout = LandmarkLayout::face65();
  AugmentDraw d;
  d.flip = true;
  const auto a = apply_augment(s, d, layout);
  EXPECT_EQ(a.image, flip_horizontal(s.image));
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    EXPECT_EQ(a.points[layout.flip[i]].x, 127.0 - s.points[i].x);
    EXPECT_EQ(a.points[layout.flip[i]].y, s.points[i].y);
  }
  // The flipped eyes keep their left/right roles.
  EXPECT_LT(centroid(a.points, layout.left_eye).x, centroid(a.points, layout.right_eye).x);
}

TEST(Augment, RotationRoundTrip) {
  AugmentDraw fwd, back;
  fwd.rotation = 10.0 * std::numbers::pi / 180;
  back.rotation = -fwd.rotation;
  const auto s = sample(3);
  const Affine a = augment_transform(fwd, 128, 128), b = augment_transform(back, 128, 128);
  for (const auto& p : s.points) {
    const Point q = b.apply(a.apply(p));
    EXPECT_NEAR(q.x, p.x, 1e-6);
    EXPECT_NEAR(q.y, p.y, 1e-6);
  }
}

// A Gaussian marker drawn at each point must still be centered on the
// transformed point after augmentation.
TEST(Augment, LandmarksFollowImage) {
  const auto layout = LandmarkLayout::face65();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    AnnotatedSample s;
    s.image = Image(128, 128, 3);
    s.points = sample(seed).points;
    s.contour = layout.contour;
    const std::size_t probe = (seed * 7) % layout.size();
    const Point m = s.points[probe];
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) {
        const double d2 = (x - m.x) * (x - m.x) + (y - m.y) * (y - m.y);
        s.image.at(x, y)[0] = static_cast<std::uint8_t>(std::lround(255 * std::exp(-d2 / 8.0)));
      }
    AugmentDraw d = draw_augment(seed);
    d.brightness = 0;
    d.contrast = 1;
    const auto a = apply_augment(s, d, layout);
    const std::size_t moved = d.flip ? layout.flip[probe] : probe;
    double sx = 0, sy = 0, w = 0;
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) {
        const double v = a.image.at(x, y)[0];
        sx += v * x;
        sy += v * y;
        w += v;
      }
    ASSERT_GT(w, 0.0);
    EXPECT_NEAR(sx / w, a.points[moved].x, 0.5) << "seed " << seed;
    EXPECT_NEAR(sy / w, a.points[moved].y, 0.5) << "seed " << seed;
  }
}

TEST(Augment, DrawsStayInRange) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto d = draw_augment(seed);
    EXPECT_LE(std::abs(d.rotation), 20.0 * std::numbers::pi / 180 + 1e-12);
    EXPECT_GE(d.scale, 0.9);
    EXPECT_LE(d.scale, 1.1);
    EXPECT_LE(std::abs(d.shift_x), 0.05);
    EXPECT_LE(std::abs(d.shift_y), 0.05);
  }
}

TEST(Layout, FlipIsAnInvolution) {
  for (const auto& layout : {LandmarkLayout::face65(), LandmarkLayout::ibug68()}) {
    layout.validate();
    for (std::size_t i = 0; i < layout.size(); ++i) EXPECT_EQ(layout.flip[layout.flip[i]], i);
  }
}

// The mirror image of a synthetic face, remapped, is the synthetic face of
// the mirrored geometry.
TEST(Synthetic, GeometryIsMirrorConsistent) {
  const auto layout = LandmarkLayout::face65();
  const auto local = local_landmarks(FaceShape{});
  for (std::size_t i = 0; i < local.size(); ++i) {
    EXPECT_NEAR(local[layout.flip[i]].x, -local[i].x, 1e-12) << i;
    EXPECT_NEAR(local[layout.flip[i]].y, local[i].y, 1e-12) << i;
  }
}

TEST(Synthetic, DeterministicAndComplete) {
  const auto a = sample(5), b = sample(5);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.points.size(), 65u);
  EXPECT_NE(sample(6).image, a.image);
}

TEST(Synthetic, EyeLandmarksCenterOnRenderedEyes) {
  const auto p = random_face_params(7);
  const auto s = generate_synthetic(p);
  const auto layout = LandmarkLayout::face65();
  const Affine t = face_transform(p);
  const Point left = t.apply({-p.shape.eye_x, p.shape.eye_y});
  const Point right = t.apply({p.shape.eye_x, p.shape.eye_y});
  const Point cl = centroid(s.points, layout.left_eye), cr = centroid(s.points, layout.right_eye);
  EXPECT_NEAR(cl.x, left.x, 1e-9);
  EXPECT_NEAR(cl.y, left.y, 1e-9);
  EXPECT_NEAR(cr.x, right.x, 1e-9);
  EXPECT_NEAR(cr.y, right.y, 1e-9);
  // The pupil pixel is dark.
  const auto* px = s.image.at(static_cast<std::size_t>(std::lround(cl.x)), static_cast<std::size_t>(std::lround(cl.y)));
  EXPECT_LT(px[0] + px[1] + px[2], 3 * 110);
}

TEST(Synthetic, SelfNmeZeroAndPositiveIpd) {
  const auto layout = LandmarkLayout::face65();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = random_face_params(seed);
    const auto pts = local_landmarks(p.shape);
    EXPECT_GT(inter_pupil_distance(pts, layout), 0.0);
    const auto s = generate_synthetic(p);
    if (seed < 5) {
      EXPECT_EQ(nme(s.points, s.points, layout), 0.0);
    }
    for (bool out : s.outside()) EXPECT_FALSE(out) << "seed " << seed;
  }
}

TEST(Split, Properties) {
  auto all = split(10, 1.0, 0.0, 3);
  EXPECT_EQ(all.train.size(), 10u);
  EXPECT_TRUE(all.val.empty());
  auto a = split(100, 0.8, 0.2, 4), b = split(100, 0.8, 0.2, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  std::set<std::size_t> seen(a.train.begin(), a.train.end());
  for (auto i : a.val) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_THROW(split(0, 1.0, 0.0, 1), Error);
  EXPECT_THROW(split(10, 0.5, 0.6, 1), Error);
  EXPECT_THROW(split(1, 0.5, 0.5, 1), Error);
}

}  // namespace
}  // namespace tinyalign
