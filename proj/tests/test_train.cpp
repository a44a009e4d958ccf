#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tinyalign/train.hpp"

namespace tinyalign {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 32;
  c.heatmap_size = 8;
  c.layout = "generic";
  c.num_landmarks = 3;
  c.width_multiplier = 0.25;
  c.stem_channels = 8;
  c.blocks = {{2, 8, 1}, {2, 8, 2}, {2, 8, 1}};
  c.shared_block = 2;
  c.stage2_channels = 8;
  c.stage2_convs = 1;
  c.roi_out_size = 4;
  return c;
}

// Three bright disks in distinct colors on a dark 32x32 frame; the
// landmarks are the disk centers.
std::vector<AnnotatedSample> dots(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(5.0, 26.0);
  std::vector<AnnotatedSample> out;
  for (std::size_t k = 0; k < n; ++k) {
    AnnotatedSample s;
    s.image = Image(32, 32, 3, 20);
    s.contour.assign(3, false);
    for (std::size_t l = 0; l < 3; ++l) {
      const Point c{u(rng), u(rng)};
      s.points.push_back(c);
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
          if (std::hypot(x - c.x, y - c.y) < 2.5) s.image.at(x, y)[l] = 230;
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.model = tiny_config();
  t.epochs = 2;
  t.batch_size = 8;
  t.augment = false;
  t.learning_rate = 1e-3;
  return t;
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig t = tiny_train();
  t.preset = Preset::no_l2;
  t.clip_grad_norm = 5;
  const TrainConfig r = TrainConfig::from_keys(KeyValues::parse(t.to_text()));
  EXPECT_EQ(r.to_text(), t.to_text());
  EXPECT_EQ(r.model, t.model);
  EXPECT_EQ(r.preset, Preset::no_l2);
  EXPECT_THROW(parse_preset("everything"), Error);
  EXPECT_THROW(TrainConfig::from_keys(KeyValues::parse("epochz=3")), Error);
  EXPECT_THROW(TrainConfig::from_keys(KeyValues::parse("model.depth=3")), Error);
}

TEST(TrainConfig, PresetsChangeOnlyTheirComponent) {
  TrainConfig t = tiny_train();
  for (auto p : {Preset::full, Preset::no_heatmap_loss, Preset::no_l2, Preset::single_stage}) {
    t.preset = p;
    EXPECT_EQ(parse_preset(to_string(p)), p);
    EXPECT_EQ(t.effective_model().two_stage, p != Preset::single_stage);
    EXPECT_EQ(t.use_heatmap_loss(), p != Preset::no_heatmap_loss);
    EXPECT_EQ(t.effective_lambda(), p == Preset::no_l2 ? 0.0 : t.lambda_l2);
  }
  t.preset = Preset::single_stage;
  const auto a = manifest(t.effective_model());
  for (const auto& e : a) EXPECT_EQ(e.name.rfind("stage2", 0), std::string::npos) << e.name;
}

TEST(TrainConfig, LearningRateDropsOnce) {
  TrainConfig t;
  t.epochs = 30;
  t.learning_rate = 0.1;
  EXPECT_EQ(learning_rate_at(t, 0), 0.1);
  EXPECT_EQ(learning_rate_at(t, 21), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 22), 0.01);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 29), 0.01);
}

TEST(Evaluate, Fixtures) {
  const auto layout = LandmarkLayout::generic(3);
  AnnotatedSample s;
  s.image = Image(10, 10, 3);
  s.points = {{0, 0}, {4, 0}, {2, 3}};
  // Oracle predictor.
  const auto r0 = evaluate([](const AnnotatedSample& x) { return x.points; }, {s}, layout);
  EXPECT_EQ(r0.overall, 0.0);
  // Constant predictor at (2, 0): errors 2, 2, 3 over an inter-pupil distance of 4.
  const auto r1 = evaluate([](const AnnotatedSample&) { return std::vector<Point>{{2, 0}, {2, 0}, {2, 0}}; }, {s, s}, layout);
  EXPECT_NEAR(r1.overall, 100.0 * (2 + 2 + 3) / 3 / 4, 1e-12);
  EXPECT_NEAR(r1.per_landmark[2], 75.0, 1e-12);
  EXPECT_EQ(r1.count, 2u);
  EXPECT_THROW(evaluate([](const AnnotatedSample& x) { return x.points; }, {}, layout), Error);
  EXPECT_THROW(evaluate([](const AnnotatedSample&) { return std::vector<Point>(2); }, {s}, layout), Error);
}

TEST(Train, ZeroEpochsKeepsTheInitialization) {
  TrainConfig t = tiny_train();
  t.epochs = 0;
  const auto data = dots(8, 1);
  const auto r = train<float>(t, data, data);
  ASSERT_EQ(r.history.size(), 1u);
  const auto init = AlignNet<float>::initialize(t.model, derive_seed(t.seed, 0x1417));
  EXPECT_EQ(save_model(t.model, r.last.weights()), save_model(t.model, init.weights()));
}

TEST(Train, DeterministicAndLossFalls) {
  TrainConfig t = tiny_train();
  t.epochs = 6;
  t.augment = true;
  const auto data = dots(32, 2);
  const auto a = train<float>(t, data, data);
  const auto b = train<float>(t, data, data);
  ASSERT_EQ(a.history.size(), 7u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_nme, b.history[i].val_nme);
  }
  EXPECT_EQ(save_model(t.model, a.last.weights()), save_model(t.model, b.last.weights()));
  EXPECT_LT(a.history.back().train_loss, a.history[1].first_batch_loss);
  EXPECT_LE(a.best_val_nme, a.history[0].val_nme);
}

TEST(Train, ResumeMatchesAnUninterruptedRun) {
  TrainConfig t = tiny_train();
  t.epochs = 3;
  const auto data = dots(16, 3);
  const auto full = train<float>(t, data, data);

  const std::string path = ::testing::TempDir() + "/resume.ckpt";
  TrainHooks first;
  first.checkpoint_path = path;
  first.stop_after_epoch = 2;
  train<float>(t, data, data, first);
  TrainHooks second;
  second.resume = load_checkpoint(read_file(path));
  EXPECT_EQ(second.resume->epoch, 2u);
  const auto resumed = train<float>(t, data, data, second);
  ASSERT_EQ(resumed.history.size(), 1u);
  EXPECT_EQ(resumed.history[0].train_loss, full.history[3].train_loss);
  EXPECT_EQ(save_model(t.model, resumed.last.weights()), save_model(t.model, full.last.weights()));
}

TEST(Train, LogsOneJsonLinePerEpoch) {
  TrainConfig t = tiny_train();
  const auto data = dots(8, 4);
  std::ostringstream log;
  TrainHooks h;
  h.log = &log;
  train<float>(t, data, data, h);
  std::istringstream in(log.str());
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), lines);
  }
  EXPECT_EQ(lines, 3u);
}

TEST(Train, EveryPresetRuns) {
  for (auto p : {Preset::full, Preset::no_heatmap_loss, Preset::no_l2, Preset::single_stage}) {
    TrainConfig t = tiny_train();
    t.epochs = 1;
    t.preset = p;
    const auto data = dots(8, 5);
    const auto r = train<float>(t, data, data);
    EXPECT_TRUE(std::isfinite(r.history.back().train_loss)) << to_string(p);
    EXPECT_EQ(r.last.config().two_stage, p != Preset::single_stage);
  }
}

TEST(Bench, BudgetShrinksWithWidth) {
  ModelConfig full;
  ModelConfig half = full;
  half.width_multiplier = 0.5;
  auto a = AlignNet<float>::initialize(full, 1).exported();
  auto b = AlignNet<float>::initialize(half, 1).exported();
  const auto ra = bench(a, 2), rb = bench(b, 2);
  EXPECT_GT(ra.budget.total_params, rb.budget.total_params);
  EXPECT_GT(ra.budget.total_madd, rb.budget.total_madd);
  EXPECT_GT(ra.budget.model_bytes, rb.budget.model_bytes);
  EXPECT_EQ(ra.runs, 2u);
  EXPECT_GT(ra.median_ms, 0.0);
}

}  // namespace
}  // namespace tinyalign
