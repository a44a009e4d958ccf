#pragma once

// Training, evaluation and benchmarking.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinyalign/config_text.hpp"
#include "tinyalign/data.hpp"
#include "tinyalign/heatmap.hpp"
#include "tinyalign/model.hpp"
#include "tinyalign/optim.hpp"
#include "tinyalign/serialize.hpp"

namespace tinyalign {

enum class Preset { full, no_heatmap_loss, no_l2, single_stage };

inline std::string to_string(Preset p) {
  switch (p) {
    case Preset::full: return "full";
    case Preset::no_heatmap_loss: return "no_heatmap_loss";
    case Preset::no_l2: return "no_l2";
    case Preset::single_stage: return "single_stage";
  }
  return "?";
}

inline Preset parse_preset(const std::string& s) {
  if (s == "full") return Preset::full;
  if (s == "no_heatmap_loss") return Preset::no_heatmap_loss;
  if (s == "no_l2") return Preset::no_l2;
  if (s == "single_stage") return Preset::single_stage;
  fail(ErrorKind::config, "unknown preset " + s);
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 3e-4;
  double momentum = 0.9;
  double lr_drop_at = 0.75;  // fraction of epochs after which lr drops 10x
  double lambda_l2 = 1000.0;
  double sigma = 3.0;         // stage-1 Gaussian, heatmap cells
  double stage2_sigma = 1.5;  // stage-2 Gaussian, crop cells
  double clip_grad_norm = 0.0;  // 0 disables
  Preset preset = Preset::full;
  std::uint64_t seed = 1;
  bool augment = true;
  AugmentRanges augment_ranges;
  ModelConfig model;

  void validate() const {
    if (batch_size == 0) fail(ErrorKind::config, "train: batch_size must be positive");
    if (!(learning_rate >= 0)) fail(ErrorKind::config, "train: learning_rate must be non-negative");
    if (!(lambda_l2 >= 0)) fail(ErrorKind::config, "train: lambda_l2 must be non-negative");
    if (!(sigma > 0) || !(stage2_sigma > 0)) fail(ErrorKind::config, "train: sigma must be positive");
    if (!(lr_drop_at >= 0 && lr_drop_at <= 1)) fail(ErrorKind::config, "train: lr_drop_at must be in [0, 1]");
    model.validate();
  }

  /// Model config after the preset (single_stage drops the second stage).
  ModelConfig effective_model() const {
    ModelConfig m = model;
    if (preset == Preset::single_stage) m.two_stage = false;
    return m;
  }
  bool use_heatmap_loss() const { return preset != Preset::no_heatmap_loss; }
  double effective_lambda() const { return preset == Preset::no_l2 ? 0.0 : lambda_l2; }

  /// Keys: epochs, batch_size, learning_rate, momentum, lr_drop_at,
  /// lambda_l2, sigma, stage2_sigma, clip_grad_norm, preset, seed, augment,
  /// plus every model key prefixed with "model.".
  static TrainConfig from_keys(const KeyValues& kv) {
    TrainConfig c;
    c.epochs = kv.get("epochs", std::uint64_t{c.epochs});
    c.batch_size = kv.get("batch_size", std::uint64_t{c.batch_size});
    c.learning_rate = kv.get("learning_rate", c.learning_rate);
    c.momentum = kv.get("momentum", c.momentum);
    c.lr_drop_at = kv.get("lr_drop_at", c.lr_drop_at);
    c.lambda_l2 = kv.get("lambda_l2", c.lambda_l2);
    c.sigma = kv.get("sigma", c.sigma);
    c.stage2_sigma = kv.get("stage2_sigma", c.stage2_sigma);
    c.clip_grad_norm = kv.get("clip_grad_norm", c.clip_grad_norm);
    c.preset = parse_preset(kv.get("preset", std::string("full")));
    c.seed = kv.get("seed", c.seed);
    c.augment = kv.get("augment", c.augment);
    KeyValues model;
    for (const auto& [k, v] : kv.entries())
      if (k.rfind("model.", 0) == 0) model.set(k.substr(6), v);
    c.model = ModelConfig::from_keys(model);
    const KeyValues known = KeyValues::parse(c.to_text());
    for (const auto& [k, v] : kv.entries())
      if (!known.has(k)) fail(ErrorKind::config, "unknown config key: " + k);
    return c;
  }

  std::string to_text() const {
    KeyValues kv = KeyValues::parse(model.to_text());
    KeyValues out;
    for (const auto& [k, v] : kv.entries()) out.set("model." + k, v);
    out.set("epochs", std::to_string(epochs));
    out.set("batch_size", std::to_string(batch_size));
    out.set("learning_rate", format_double(learning_rate));
    out.set("momentum", format_double(momentum));
    out.set("lr_drop_at", format_double(lr_drop_at));
    out.set("lambda_l2", format_double(lambda_l2));
    out.set("sigma", format_double(sigma));
    out.set("stage2_sigma", format_double(stage2_sigma));
    out.set("clip_grad_norm", format_double(clip_grad_norm));
    out.set("preset", to_string(preset));
    out.set("seed", std::to_string(seed));
    out.set("augment", augment ? "true" : "false");
    return out.to_text();
  }
};

/// Learning rate for `epoch` (0-based): constant, divided by 10 from
/// floor(lr_drop_at * epochs) on.
inline double learning_rate_at(const TrainConfig& c, std::size_t epoch) {
  const auto drop = static_cast<std::size_t>(std::floor(c.lr_drop_at * static_cast<double>(c.epochs)));
  return epoch >= drop && c.epochs > 0 ? c.learning_rate / 10 : c.learning_rate;
}

template <class T>
struct Batch {
  Tensor<T> images;  // [B, 3, S, S]
  Tensor<T> coords;  // [B, L, 2] normalized within the crop
};

/// The model input for a sample: the whole image resized to size x size.
template <class T>
void sample_input(const AnnotatedSample& s, std::size_t size, T* chw, T* coords) {
  const Box box = full_box(s.image);
  crop_to_chw(s.image, box, size, chw);
  if (coords)
    for (std::size_t l = 0; l < s.points.size(); ++l) {
      const Point n = to_box_normalized(s.points[l], box);
      coords[2 * l] = static_cast<T>(n.x);
      coords[2 * l + 1] = static_cast<T>(n.y);
    }
}

/// Batch of samples[indices]; with `augment_seed` each sample i gets the
/// draw derive_seed(*augment_seed, i).
template <class T>
Batch<T> make_batch(const std::vector<AnnotatedSample>& samples, const std::vector<std::size_t>& indices,
                    std::size_t size, std::size_t L, const LandmarkLayout* layout,
                    std::optional<std::uint64_t> augment_seed, const AugmentRanges& ranges = {}) {
  Batch<T> b;
  const std::size_t B = indices.size();
  b.images = Tensor<T>({B, 3, size, size});
  b.coords = Tensor<T>({B, L, 2});
  for (std::size_t k = 0; k < B; ++k) {
    const AnnotatedSample& raw = samples.at(indices[k]);
    if (raw.points.size() != L) fail(ErrorKind::data, "sample " + raw.source + " has the wrong landmark count");
    T* img = b.images.data().data() + k * 3 * size * size;
    T* pts = b.coords.data().data() + k * L * 2;
    if (augment_seed) {
      if (!layout) fail(ErrorKind::config, "augmentation needs a landmark layout");
      sample_input(apply_augment(raw, draw_augment(derive_seed(*augment_seed, indices[k]), ranges), *layout), size, img, pts);
    } else {
      sample_input(raw, size, img, pts);
    }
  }
  return b;
}

struct LossTerms {
  double stage1 = 0, stage2 = 0, l2 = 0, total = 0;
};

/// Builds the training loss on the current tape.
template <class T>
Tensor<T> training_loss(AlignNet<T>& net, const Batch<T>& batch, const TrainConfig& cfg, LossTerms* terms = nullptr) {
  const ModelConfig& m = net.config();
  const auto s1 = net.forward_stage1(batch.images, true);
  const T H = static_cast<T>(m.heatmap_size);
  Tensor<T> final_coords = s1.coarse;
  Tensor<T> total;
  LossTerms t;
  auto accumulate = [&](const Tensor<T>& term) { total = total.defined() ? add(total, term) : term; };
  if (cfg.use_heatmap_loss()) {
    Tensor<T> gt_cells = batch.coords * H - T(0.5);
    Tensor<T> l1 = heatmap_loss(s1.heatmaps, make_gt_batch(gt_cells, m.heatmap_size, cfg.sigma), gt_cells);
    t.stage1 = l1.item();
    accumulate(l1);
  }
  if (m.two_stage) {
    const auto s2 = net.forward_stage2(s1.shared, s1.coarse, true);
    final_coords = s2.refined;
    if (cfg.use_heatmap_loss()) {
      const T span = static_cast<T>(m.roi_out_size - 1);
      const T e = static_cast<T>(m.roi_box_extent);
      Tensor<T> gt_cells = (batch.coords - s1.coarse.detach()) * (span / e) + span / T(2);
      Tensor<T> l2h = heatmap_loss(s2.heatmaps, make_gt_batch(gt_cells, m.roi_out_size, cfg.stage2_sigma), gt_cells);
      t.stage2 = l2h.item();
      accumulate(l2h);
    }
  }
  const double lambda = cfg.effective_lambda();
  if (lambda > 0) {
    Tensor<T> l2 = l2_coord_loss(final_coords, batch.coords);
    t.l2 = l2.item();
    accumulate(l2 * static_cast<T>(lambda));
  }
  if (!total.defined()) fail(ErrorKind::config, "training loss has no terms");
  t.total = total.item();
  if (terms) *terms = t;
  return total;
}

struct EvalReport {
  double inner = 0, contour = 0, overall = 0;  // NME, percent of inter-pupil distance
  std::vector<double> per_landmark;
  std::size_t count = 0;
};

/// Maps a sample to predicted landmarks in pixel coordinates.
using Predictor = std::function<std::vector<Point>(const AnnotatedSample&)>;

inline EvalReport evaluate(const Predictor& predict, const std::vector<AnnotatedSample>& samples,
                           const LandmarkLayout& layout) {
  if (samples.empty()) fail(ErrorKind::data, "evaluate: empty dataset");
  EvalReport r;
  r.per_landmark.assign(layout.size(), 0.0);
  const double n_contour = static_cast<double>(layout.count(Subset::contour));
  const double n_inner = static_cast<double>(layout.count(Subset::inner));
  for (const auto& s : samples) {
    if (s.points.size() != layout.size()) fail(ErrorKind::data, "evaluate: sample layout does not match the model");
    const auto pred = predict(s);
    if (pred.size() != layout.size()) fail(ErrorKind::data, "evaluate: predictor returned the wrong landmark count");
    const double ipd = inter_pupil_distance(s.points, layout);
    if (!(ipd > 0)) fail(ErrorKind::data, "evaluate: zero inter-pupil distance in " + s.source);
    double in = 0, co = 0;
    for (std::size_t l = 0; l < layout.size(); ++l) {
      const double e = 100.0 * distance(pred[l], s.points[l]) / ipd;
      r.per_landmark[l] += e;
      (layout.contour[l] ? co : in) += e;
    }
    if (n_inner > 0) r.inner += in / n_inner;
    if (n_contour > 0) r.contour += co / n_contour;
    r.overall += (in + co) / static_cast<double>(layout.size());
  }
  const double n = static_cast<double>(samples.size());
  r.inner /= n;
  r.contour /= n;
  r.overall /= n;
  for (auto& v : r.per_landmark) v /= n;
  r.count = samples.size();
  return r;
}

/// Predictor running `net` on whole images, batched internally.
template <class T>
std::vector<std::vector<Point>> predict_samples(AlignNet<T>& net, const std::vector<AnnotatedSample>& samples,
                                                std::size_t batch = 32) {
  std::vector<std::vector<Point>> out;
  const std::size_t S = net.config().input_size;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t B = std::min(batch, samples.size() - start);
    Tensor<T> x({B, 3, S, S});
    for (std::size_t k = 0; k < B; ++k) sample_input<T>(samples[start + k], S, x.data().data() + k * 3 * S * S, nullptr);
    auto pred = net.predict(x);
    for (std::size_t k = 0; k < B; ++k) {
      const Box box = full_box(samples[start + k].image);
      for (auto& p : pred[k]) p = from_box_normalized(p, box);
      out.push_back(std::move(pred[k]));
    }
  }
  return out;
}

template <class T>
EvalReport evaluate_model(AlignNet<T>& net, const std::vector<AnnotatedSample>& samples, const LandmarkLayout& layout) {
  const auto preds = predict_samples(net, samples);
  std::size_t i = 0;
  return evaluate([&](const AnnotatedSample&) { return preds[i++]; }, samples, layout);
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based; 0 is the untrained model
  double learning_rate = 0;
  double train_loss = 0;
  double first_batch_loss = 0;
  double val_nme = 0;
  double seconds = 0;
};

template <class T>
struct TrainResult {
  AlignNet<T> best;  // weights with the lowest validation NME
  AlignNet<T> last;
  std::vector<EpochLog> history;  // history[0] is the untrained evaluation
  double best_val_nme = 0;
};

struct TrainHooks {
  std::ostream* log = nullptr;            // JSON lines, one object per epoch
  std::string checkpoint_path;            // written after every epoch when set
  std::optional<Checkpoint> resume;       // continue from this state
  std::size_t stop_after_epoch = 0;       // stop early (for resume tests); 0 = run all
  std::function<void(const std::string&)> progress;
};

namespace detail {

template <class T>
std::vector<float> flatten(const std::vector<std::vector<T>>& v) {
  std::vector<float> out;
  for (const auto& x : v) out.insert(out.end(), x.begin(), x.end());
  return out;
}

template <class T>
double clip_gradients(const std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto p : params)
      for (auto& g : p.grad()) g *= s;
  }
  return norm;
}

inline std::string epoch_json(const EpochLog& e) {
  nlohmann::json j;
  j["epoch"] = e.epoch;
  j["lr"] = e.learning_rate;
  j["train_loss"] = e.train_loss;
  j["val_nme"] = e.val_nme;
  j["seconds"] = e.seconds;
  return j.dump();
}

}  // namespace detail

/// Trains from a seeded initialization (or `hooks.resume`). Deterministic
/// for a given config in a single thread.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<AnnotatedSample>& train_set,
                     const std::vector<AnnotatedSample>& val_set, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorKind::data, "train: empty training set");
  const ModelConfig mc = cfg.effective_model();
  const LandmarkLayout layout = layout_of(mc);
  const std::vector<AnnotatedSample>& val = val_set.empty() ? train_set : val_set;

  AlignNet<T> net = AlignNet<T>::initialize(mc, derive_seed(cfg.seed, 0x1417));
  std::size_t start_epoch = 0;
  std::vector<std::vector<T>> velocity;
  double best_nme = 0;
  TrainResult<T> result{net, net, {}, 0};
  bool have_best = false;

  auto eval = [&](AlignNet<T>& m) { return evaluate_model(m, val, layout).overall; };

  if (hooks.resume) {
    auto loaded = load_model<T>(hooks.resume->model);
    if (!(loaded.config == mc)) fail(ErrorKind::config, "resume: checkpoint model config differs");
    net = AlignNet<T>(loaded.config, loaded.weights);
    start_epoch = hooks.resume->epoch;
    const KeyValues extra = KeyValues::parse(hooks.resume->extra);
    best_nme = extra.get("best_val_nme", 0.0);
    const auto params = net.trainable_parameters();
    std::size_t off = 0;
    for (const auto& p : params) {
      if (off + p.numel() > hooks.resume->velocity.size()) fail(ErrorKind::format, "resume: velocity size mismatch");
      velocity.emplace_back(hooks.resume->velocity.begin() + off, hooks.resume->velocity.begin() + off + p.numel());
      off += p.numel();
    }
    result.best = AlignNet<T>(mc, net.weights().clone());
    have_best = true;
  } else {
    EpochLog e0;
    e0.val_nme = eval(net);
    e0.learning_rate = learning_rate_at(cfg, 0);
    result.history.push_back(e0);
    if (hooks.log) *hooks.log << detail::epoch_json(e0) << '\n';
  }

  const auto params = net.trainable_parameters();
  Sgd<T> opt(params, {learning_rate_at(cfg, start_epoch), cfg.momentum});
  if (!velocity.empty()) opt.set_velocity(velocity);
  if (!have_best) {
    result.best = AlignNet<T>(mc, net.weights().clone());
    best_nme = result.history.empty() ? 0 : result.history[0].val_nme;
  }

  const std::size_t end_epoch = hooks.stop_after_epoch ? std::min(cfg.epochs, hooks.stop_after_epoch) : cfg.epochs;
  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.set_learning_rate(learning_rate_at(cfg, epoch));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xe90c, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch + 1;
    log.learning_rate = opt.options().learning_rate;
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      if (B < 2 && batches > 0) break;  // batch norm needs two samples
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + B));
      std::optional<std::uint64_t> aug;
      if (cfg.augment) aug = derive_seed(cfg.seed, 0xa06, epoch);
      const Batch<T> batch = make_batch<T>(train_set, idx, mc.input_size, mc.num_landmarks, &layout, aug, cfg.augment_ranges);
      LossTerms terms;
      try {
        Tape<T> tape;
        Tensor<T> loss = training_loss(net, batch, cfg, &terms);
        tape.backward(loss);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::numeric) throw;
        fail(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                                     std::to_string(batches) + ": " + err.what());
      }
      const double grad_norm = detail::clip_gradients(params, cfg.clip_grad_norm);
      opt.step();
      if (batches == 0) log.first_batch_loss = terms.total;
      loss_sum += terms.total;
      ++batches;
      if (hooks.progress)
        hooks.progress("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batches) + " loss " +
                       std::to_string(terms.total) + " (stage1 " + std::to_string(terms.stage1) + ", stage2 " +
                       std::to_string(terms.stage2) + ", l2 " + std::to_string(terms.l2) + ", grad norm " +
                       std::to_string(grad_norm) + ")");
    }
    log.train_loss = loss_sum / static_cast<double>(batches);
    log.val_nme = eval(net);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (hooks.log) *hooks.log << detail::epoch_json(log) << '\n' << std::flush;
    if (log.val_nme < best_nme || result.history.size() == 1) {
      best_nme = log.val_nme;
      result.best = AlignNet<T>(mc, net.weights().clone());
    }
    if (!hooks.checkpoint_path.empty()) {
      Checkpoint c;
      c.model = save_model(mc, net.weights());
      c.epoch = epoch + 1;
      c.learning_rate = opt.options().learning_rate;
      c.velocity = detail::flatten(opt.velocity());
      c.extra = "best_val_nme=" + format_double(best_nme) + "\n";
      write_file(hooks.checkpoint_path, save_checkpoint(c));
    }
  }
  result.last = net;
  result.best_val_nme = best_nme;
  return result;
}

struct BenchReport {
  nn::ComputeBudget budget;
  double median_ms = 0;
  std::size_t runs = 0;
};

/// Budget plus the median single-image inference latency over `runs` runs.
template <class T>
BenchReport bench(AlignNet<T>& net, std::size_t runs = 100, std::uint64_t seed = 1) {
  BenchReport r;
  r.budget = model_budget(net.config());
  const std::size_t S = net.config().input_size;
  Tensor<T> x({1, 3, S, S});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : x.data()) v = static_cast<T>(u(rng));
  std::vector<double> ms;
  net.predict(x);
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    net.predict(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  r.runs = runs;
  r.median_ms = ms.empty() ? 0 : ms[ms.size() / 2];
  return r;
}

}  // namespace tinyalign
