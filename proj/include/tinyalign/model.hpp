#pragma once

// The two-stage alignment network.
//
// Stage 1: stem conv -> inverted residual blocks -> 1x1 head producing L
// heatmaps at H x H. Soft-argmax gives coarse coordinates, normalized so
// that heatmap cell u maps to (u + 0.5) / H.
//
// Stage 2: two 3x3 convs on the output of the branch block, then one
// RoI-align crop of side roi_box_extent around every coarse point. The L
// crops are stacked channel-wise and one group conv (groups = L) turns them
// into L offset heatmaps of S x S. Offset cell u maps to
// (u - (S-1)/2) / (S-1) * roi_box_extent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tinyalign/config_text.hpp"
#include "tinyalign/errors.hpp"
#include "tinyalign/heatmap.hpp"
#include "tinyalign/image.hpp"
#include "tinyalign/landmarks.hpp"
#include "tinyalign/nn/blocks.hpp"
#include "tinyalign/nn/budget.hpp"
#include "tinyalign/nn/roi_align.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {

/// One backbone block before width scaling.
struct BlockSpec {
  std::size_t expansion = 6;
  std::size_t channels = 16;
  std::size_t stride = 1;

  bool operator==(const BlockSpec&) const = default;
};

struct ModelConfig {
  std::size_t input_size = 128;
  double width_multiplier = 1.0;
  std::string layout = "face65";
  std::size_t num_landmarks = 65;
  std::size_t heatmap_size = 32;
  std::size_t shared_feature_stride = 4;
  std::size_t roi_out_size = 8;
  double roi_box_extent = 0.25;
  std::size_t stem_channels = 16;
  std::vector<BlockSpec> blocks = {{6, 16, 1}, {6, 24, 2}, {6, 24, 1}, {6, 48, 1}, {6, 48, 1}, {6, 64, 1}};
  std::size_t shared_block = 4;  // 1-based
  std::size_t stage2_channels = 32;
  std::size_t stage2_convs = 2;
  bool two_stage = true;
  bool batch_norm = true;
  HeatmapNorm heatmap_norm = HeatmapNorm::sigmoid;

  bool operator==(const ModelConfig&) const = default;

  /// alpha * base rounded up to a multiple of 8.
  std::size_t scaled(std::size_t base) const {
    const double v = width_multiplier * static_cast<double>(base);
    const auto units = static_cast<std::size_t>(std::ceil(v / 8.0 - 1e-9));
    return std::max<std::size_t>(8, units * 8);
  }

  std::size_t stem_out() const { return scaled(stem_channels); }
  std::size_t block_in(std::size_t i) const { return i == 0 ? stem_out() : scaled(blocks[i - 1].channels); }
  std::size_t block_out(std::size_t i) const { return scaled(blocks[i].channels); }
  std::size_t stage2_width() const { return scaled(stage2_channels); }

  nn::InvertedResidualSpec block_spec(std::size_t i) const {
    return {block_in(i), block_out(i), blocks[i].expansion, blocks[i].stride};
  }

  /// Spatial stride at the output of block i (0-based); the stem halves.
  std::size_t stride_after(std::size_t i) const {
    std::size_t s = 2;
    for (std::size_t k = 0; k <= i; ++k) s *= blocks[k].stride;
    return s;
  }

  std::size_t shared_extent() const { return input_size / shared_feature_stride; }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, "model config: " + m); };
    if (!(width_multiplier >= 0.25 && width_multiplier <= 2.0)) bad("width_multiplier must be in [0.25, 2]");
    if (num_landmarks == 0) bad("num_landmarks must be positive");
    if (layout != "generic" && LandmarkLayout::by_name(layout).size() != num_landmarks)
      bad("num_landmarks does not match layout " + layout);
    if (input_size == 0 || heatmap_size == 0 || input_size % heatmap_size != 0) bad("heatmap_size must divide input_size");
    if (blocks.empty()) bad("no backbone blocks");
    for (const auto& b : blocks)
      if (b.expansion == 0 || b.channels == 0 || (b.stride != 1 && b.stride != 2)) bad("invalid block");
    if (input_size % stride_after(blocks.size() - 1) != 0 ||
        input_size / stride_after(blocks.size() - 1) != heatmap_size)
      bad("backbone strides give a " + std::to_string(input_size / stride_after(blocks.size() - 1)) +
          " heatmap, expected " + std::to_string(heatmap_size));
    if (roi_out_size < 2) bad("roi_out_size must be at least 2");
    if (!(roi_box_extent > 0.0 && roi_box_extent <= 1.0)) bad("roi_box_extent must be in (0, 1]");
    if (roi_box_extent * static_cast<double>(input_size) < static_cast<double>(roi_out_size))
      bad("roi_box_extent * input_size must be at least roi_out_size");
    if (two_stage) {
      if (shared_block == 0 || shared_block > blocks.size()) bad("shared_block out of range");
      if (stride_after(shared_block - 1) != shared_feature_stride) bad("shared_feature_stride does not match shared_block");
      if (stage2_convs == 0) bad("stage2_convs must be positive");
    }
  }

  std::string to_text() const {
    KeyValues kv;
    kv.set("input_size", std::to_string(input_size));
    kv.set("width_multiplier", format_double(width_multiplier));
    kv.set("layout", layout);
    kv.set("num_landmarks", std::to_string(num_landmarks));
    kv.set("heatmap_size", std::to_string(heatmap_size));
    kv.set("shared_feature_stride", std::to_string(shared_feature_stride));
    kv.set("roi_out_size", std::to_string(roi_out_size));
    kv.set("roi_box_extent", format_double(roi_box_extent));
    kv.set("stem_channels", std::to_string(stem_channels));
    std::string bl;
    for (const auto& b : blocks) {
      if (!bl.empty()) bl += ',';
      bl += std::to_string(b.expansion) + ':' + std::to_string(b.channels) + ':' + std::to_string(b.stride);
    }
    kv.set("blocks", bl);
    kv.set("shared_block", std::to_string(shared_block));
    kv.set("stage2_channels", std::to_string(stage2_channels));
    kv.set("stage2_convs", std::to_string(stage2_convs));
    kv.set("two_stage", two_stage ? "true" : "false");
    kv.set("batch_norm", batch_norm ? "true" : "false");
    kv.set("heatmap_norm", heatmap_norm == HeatmapNorm::sigmoid ? "sigmoid" : "softmax");
    return kv.to_text();
  }

  /// Reads the keys it knows from `kv`, leaving defaults elsewhere.
  static ModelConfig from_keys(const KeyValues& kv) {
    ModelConfig c;
    auto sz = [&](const char* k, std::size_t d) { return static_cast<std::size_t>(kv.get(k, std::uint64_t{d})); };
    c.input_size = sz("input_size", c.input_size);
    c.width_multiplier = kv.get("width_multiplier", c.width_multiplier);
    c.layout = kv.get("layout", c.layout);
    c.num_landmarks = sz("num_landmarks", c.layout == "generic" ? c.num_landmarks
                                                               : LandmarkLayout::by_name(c.layout).size());
    c.heatmap_size = sz("heatmap_size", c.heatmap_size);
    c.shared_feature_stride = sz("shared_feature_stride", c.shared_feature_stride);
    c.roi_out_size = sz("roi_out_size", c.roi_out_size);
    c.roi_box_extent = kv.get("roi_box_extent", c.roi_box_extent);
    c.stem_channels = sz("stem_channels", c.stem_channels);
    if (kv.has("blocks")) {
      c.blocks.clear();
      std::istringstream in(kv.get("blocks", std::string{}));
      for (std::string item; std::getline(in, item, ',');) {
        BlockSpec b;
        char s1 = 0, s2 = 0;
        std::istringstream is(item);
        if (!(is >> b.expansion >> s1 >> b.channels >> s2 >> b.stride) || s1 != ':' || s2 != ':')
          fail(ErrorKind::config, "model config: malformed block '" + item + "', expected t:channels:stride");
        c.blocks.push_back(b);
      }
    }
    c.shared_block = sz("shared_block", c.shared_block);
    c.stage2_channels = sz("stage2_channels", c.stage2_channels);
    c.stage2_convs = sz("stage2_convs", c.stage2_convs);
    c.two_stage = kv.get("two_stage", c.two_stage);
    c.batch_norm = kv.get("batch_norm", c.batch_norm);
    const std::string norm = kv.get("heatmap_norm", std::string("sigmoid"));
    if (norm == "sigmoid") c.heatmap_norm = HeatmapNorm::sigmoid;
    else if (norm == "softmax") c.heatmap_norm = HeatmapNorm::softmax;
    else fail(ErrorKind::config, "model config: heatmap_norm must be sigmoid or softmax");
    return c;
  }

  static ModelConfig from_text(std::string_view text) {
    ModelConfig c = from_keys(KeyValues::parse(text));
    c.validate();
    return c;
  }
};

/// The layout named by the config; "generic" gets LandmarkLayout::generic.
inline LandmarkLayout layout_of(const ModelConfig& c) {
  return c.layout == "generic" ? LandmarkLayout::generic(c.num_landmarks) : LandmarkLayout::by_name(c.layout);
}

enum class ParamRole { weight, bias, bn_gamma, bn_beta, bn_mean, bn_var };

struct ParamEntry {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::weight;

  bool trainable() const { return role != ParamRole::bn_mean && role != ParamRole::bn_var; }
  bool operator==(const ParamEntry&) const = default;
};

/// A named conv layer of the network with its output extent.
struct NamedConv {
  std::string name;
  nn::ConvSpec spec;
  std::size_t out_extent = 0;
  bool normalized = false;  // followed by batch norm while training
};

/// Every conv of the network in execution order.
inline std::vector<NamedConv> conv_layers(const ModelConfig& c) {
  std::vector<NamedConv> out;
  const bool bn = c.batch_norm;
  std::size_t extent = c.input_size;
  auto push = [&](std::string name, nn::ConvSpec spec, bool normalized) {
    extent = spec.out_extent(extent);
    spec.bias = normalized ? !bn : true;
    out.push_back({std::move(name), spec, extent, normalized && bn});
  };
  push("stem", nn::conv3x3(3, c.stem_out(), 2), true);
  out.back().spec.activation = nn::Activation::relu6;
  std::size_t shared_extent = 0;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const auto b = c.block_spec(i);
    const std::string p = "block" + std::to_string(i + 1) + ".";
    if (b.has_expand()) push(p + "expand", b.expand(), true);
    push(p + "depthwise", b.depthwise(), true);
    push(p + "project", b.project(), true);
    if (i + 1 == c.shared_block) shared_extent = extent;
  }
  push("head", nn::conv1x1(c.block_out(c.blocks.size() - 1), c.num_landmarks), false);
  if (c.two_stage) {
    extent = shared_extent;
    std::size_t in = c.block_out(c.shared_block - 1);
    for (std::size_t k = 0; k < c.stage2_convs; ++k) {
      auto spec = nn::conv3x3(in, c.stage2_width());
      spec.activation = nn::Activation::relu6;
      push("stage2.conv" + std::to_string(k + 1), spec, true);
      in = c.stage2_width();
    }
    extent = c.roi_out_size;
    const std::size_t L = c.num_landmarks;
    push("predict", nn::conv3x3(L * c.stage2_width(), L, 1, L), false);
  }
  return out;
}

/// Parameter names and shapes, a pure function of the config.
inline std::vector<ParamEntry> manifest(const ModelConfig& c) {
  std::vector<ParamEntry> m;
  for (const auto& l : conv_layers(c)) {
    m.push_back({l.name + ".weight", l.spec.weight_shape(), ParamRole::weight});
    if (l.spec.bias) m.push_back({l.name + ".bias", {l.spec.out_channels}, ParamRole::bias});
    if (l.normalized) {
      const Shape s{l.spec.out_channels};
      m.push_back({l.name + ".bn.gamma", s, ParamRole::bn_gamma});
      m.push_back({l.name + ".bn.beta", s, ParamRole::bn_beta});
      m.push_back({l.name + ".bn.running_mean", s, ParamRole::bn_mean});
      m.push_back({l.name + ".bn.running_var", s, ParamRole::bn_var});
    }
  }
  return m;
}

/// Layer list for the compute accountant.
inline std::vector<nn::LayerCost> layer_costs(const ModelConfig& c) {
  std::vector<nn::LayerCost> out;
  for (const auto& l : conv_layers(c)) out.push_back({l.name, l.spec, l.out_extent, l.out_extent});
  return out;
}

/// Named parameter tensors in manifest order.
template <class T>
class ModelWeights {
 public:
  ModelWeights() = default;

  static ModelWeights zeros(const ModelConfig& c) {
    ModelWeights w;
    for (const auto& e : manifest(c)) w.add(e.name, Tensor<T>(e.shape, T(0), e.trainable()));
    return w;
  }

  void add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) fail(ErrorKind::format, "duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::format, "missing parameter " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const { return const_cast<ModelWeights*>(this)->at(name); }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  /// Throws unless names, order and shapes equal the config's manifest.
  void check_manifest(const ModelConfig& c) const {
    const auto m = manifest(c);
    if (m.size() != entries_.size())
      fail(ErrorKind::format, "weights hold " + std::to_string(entries_.size()) + " tensors, manifest lists " +
                                  std::to_string(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].name != entries_[i].first || m[i].shape != entries_[i].second.shape())
        fail(ErrorKind::format, "parameter " + entries_[i].first + " does not match manifest entry " + m[i].name);
  }

  /// Deep copy; no tensor is shared with the source.
  ModelWeights clone() const {
    ModelWeights w;
    for (const auto& [n, t] : entries_) w.add(n, Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()),
                                                           t.requires_grad()));
    return w;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
class AlignNet {
 public:
  struct Stage1 {
    Tensor<T> heatmaps;  // [N, L, H, H] logits
    Tensor<T> shared;    // branch block output
    Tensor<T> coarse;    // [N, L, 2] normalized image coordinates
  };
  struct Stage2 {
    Tensor<T> heatmaps;  // [N, L, S, S] offset logits
    Tensor<T> offsets;   // [N, L, 2] normalized
    Tensor<T> refined;   // coarse + offsets
  };

  AlignNet(ModelConfig config, ModelWeights<T> weights) : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    weights_.check_manifest(config_);
    bind();
  }

  /// Kaiming-normal convs, unit batch norm, zero biases. The last batch norm
  /// of each residual block starts at zero so the block begins as identity.
  static AlignNet initialize(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelWeights<T> w = ModelWeights<T>::zeros(config);
    std::mt19937_64 rng(seed);
    for (const auto& l : conv_layers(config)) {
      const double fan_in = static_cast<double>(l.spec.kernel * l.spec.kernel * (l.spec.in_channels / l.spec.groups));
      const bool linear = l.spec.activation == nn::Activation::none;
      std::normal_distribution<double> dist(0.0, std::sqrt((linear ? 1.0 : 2.0) / fan_in));
      for (auto& v : w.at(l.name + ".weight").data()) v = static_cast<T>(dist(rng));
      if (l.normalized) {
        std::fill_n(w.at(l.name + ".bn.running_var").data().begin(), l.spec.out_channels, T(1));
        const bool zero_gamma = l.name.ends_with(".project") && residual_project(config, l.name);
        std::fill_n(w.at(l.name + ".bn.gamma").data().begin(), l.spec.out_channels, T(zero_gamma ? 0 : 1));
      }
    }
    return AlignNet(config, std::move(w));
  }

  const ModelConfig& config() const { return config_; }
  ModelWeights<T>& weights() { return weights_; }
  const ModelWeights<T>& weights() const { return weights_; }

  std::vector<Tensor<T>> trainable_parameters() const {
    std::vector<Tensor<T>> out;
    const auto m = manifest(config_);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i].trainable()) out.push_back(weights_.entries()[i].second);
    return out;
  }

  Stage1 forward_stage1(const Tensor<T>& images, bool training) {
    const std::size_t S = config_.input_size;
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != S || images.size(3) != S)
      fail(ErrorKind::shape, "forward_stage1: expected [N, 3, " + std::to_string(S) + ", " + std::to_string(S) +
                                 "], got " + shape_str(images.shape()));
    Stage1 out;
    Tensor<T> h = nn::conv_unit(images, stem_.spec, stem_.w, training);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = nn::inverted_residual(h, config_.block_spec(i), blocks_[i], training);
      if (i + 1 == config_.shared_block) out.shared = h;
    }
    out.heatmaps = nn::conv_unit(h, head_.spec, head_.w, training);
    const T H = static_cast<T>(config_.heatmap_size);
    out.coarse = (soft_argmax(out.heatmaps, config_.heatmap_norm) + T(0.5)) * (T(1) / H);
    return out;
  }

  /// RoI boxes for the coarse points; box positions carry no gradient.
  std::vector<nn::RoiBox> roi_boxes(const Tensor<T>& coarse) const {
    const std::size_t N = coarse.size(0), L = coarse.size(1);
    const double half = config_.roi_box_extent / 2;
    std::vector<nn::RoiBox> boxes(N * L);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t l = 0; l < L; ++l) {
        const double cx = coarse[(n * L + l) * 2], cy = coarse[(n * L + l) * 2 + 1];
        boxes[n * L + l] = {n, cx - half, cy - half, cx + half, cy + half};
      }
    return boxes;
  }

  /// Offset heatmaps -> offsets in normalized image units.
  static Tensor<T> decode_offsets(const Tensor<T>& heatmaps, const ModelConfig& c) {
    const T span = static_cast<T>(c.roi_out_size - 1);
    const T scale = static_cast<T>(c.roi_box_extent) / span;
    return (soft_argmax(heatmaps, c.heatmap_norm) - span / T(2)) * scale;
  }

  Stage2 forward_stage2(const Tensor<T>& shared, const Tensor<T>& coarse, bool training) {
    if (!config_.two_stage) fail(ErrorKind::config, "forward_stage2: model has no second stage");
    const std::size_t N = coarse.size(0), L = config_.num_landmarks, S = config_.roi_out_size;
    if (coarse.dim() != 3 || L != coarse.size(1)) fail(ErrorKind::shape, "forward_stage2: coarse must be [N, L, 2]");
    Tensor<T> f = shared;
    for (auto& u : stage2_) f = nn::conv_unit(f, u.spec, u.w, training);
    Tensor<T> crops = nn::roi_align(f, roi_boxes(coarse), S);
    crops = reshape(crops, {N, L * config_.stage2_width(), S, S});
    Stage2 out;
    out.heatmaps = nn::conv_unit(crops, predict_.spec, predict_.w, training);
    out.offsets = decode_offsets(out.heatmaps, config_);
    out.refined = coarse + out.offsets;
    return out;
  }

  /// Final coordinates [N, L, 2], unclamped, differentiable.
  Tensor<T> forward(const Tensor<T>& images, bool training) {
    Stage1 s1 = forward_stage1(images, training);
    if (!config_.two_stage) return s1.coarse;
    return forward_stage2(s1.shared, s1.coarse, training).refined;
  }

  /// Inference on a batch of [N, 3, S, S] crops; points clamped to [0, 1].
  std::vector<std::vector<Point>> predict(const Tensor<T>& images) {
    Tensor<T> y = forward(images, false);
    const std::size_t N = y.size(0), L = y.size(1);
    std::vector<std::vector<Point>> out(N, std::vector<Point>(L));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t l = 0; l < L; ++l)
        out[n][l] = {std::clamp<double>(y[(n * L + l) * 2], 0.0, 1.0),
                     std::clamp<double>(y[(n * L + l) * 2 + 1], 0.0, 1.0)};
    return out;
  }

  /// Landmarks of the face in `box`, normalized within the box.
  std::vector<Point> predict(const Image& img, const Box& box) {
    const std::size_t S = config_.input_size;
    Tensor<T> x({1, 3, S, S});
    crop_to_chw(img, box, S, x.data().data());
    return predict(x)[0];
  }

  /// Runs on the mirrored crop and maps the result back: x -> 1 - x with the
  /// layout's index remap.
  std::vector<Point> predict_mirrored(const Image& img, const Box& box, const LandmarkLayout& layout) {
    const Image flipped = flip_horizontal(img);
    const Box fb{static_cast<double>(img.width) - box.x1, box.y0, static_cast<double>(img.width) - box.x0, box.y1};
    std::vector<Point> p = predict(flipped, fb);
    for (auto& q : p) q.x = 1.0 - q.x;
    return remap_flip(p, layout);
  }

  /// Copy with every batch norm folded into its conv (batch_norm = false).
  AlignNet exported() const {
    ModelConfig out_cfg = config_;
    out_cfg.batch_norm = false;
    ModelWeights<T> out = ModelWeights<T>::zeros(out_cfg);
    const nn::BatchNormOptions bn{};
    for (const auto& l : conv_layers(config_)) {
      const Tensor<T>& w = weights_.at(l.name + ".weight");
      Tensor<T>& ow = out.at(l.name + ".weight");
      Tensor<T>& ob = out.at(l.name + ".bias");
      const std::size_t co = l.spec.out_channels, per = w.numel() / co;
      for (std::size_t o = 0; o < co; ++o) {
        double scale = 1.0, shift = l.spec.bias ? static_cast<double>(weights_.at(l.name + ".bias")[o]) : 0.0;
        if (l.normalized) {
          const double g = weights_.at(l.name + ".bn.gamma")[o], b = weights_.at(l.name + ".bn.beta")[o];
          const double m = weights_.at(l.name + ".bn.running_mean")[o], v = weights_.at(l.name + ".bn.running_var")[o];
          scale = g / std::sqrt(v + bn.eps);
          shift = (shift - m) * scale + b;
        }
        for (std::size_t k = 0; k < per; ++k) ow[o * per + k] = static_cast<T>(w[o * per + k] * scale);
        ob[o] = static_cast<T>(shift);
      }
    }
    return AlignNet(out_cfg, std::move(out));
  }

 private:
  struct Unit {
    nn::ConvSpec spec;
    nn::ConvWeights<T> w;
  };

  static bool residual_project(const ModelConfig& c, const std::string& name) {
    for (std::size_t i = 0; i < c.blocks.size(); ++i)
      if (name == "block" + std::to_string(i + 1) + ".project") return c.block_spec(i).residual();
    return false;
  }

  nn::ConvWeights<T> conv_weights(const NamedConv& l) {
    nn::ConvWeights<T> cw;
    cw.weight = weights_.at(l.name + ".weight");
    if (l.spec.bias) cw.bias = weights_.at(l.name + ".bias");
    if (l.normalized)
      cw.bn = {weights_.at(l.name + ".bn.gamma"), weights_.at(l.name + ".bn.beta"),
               weights_.at(l.name + ".bn.running_mean"), weights_.at(l.name + ".bn.running_var")};
    return cw;
  }

  void bind() {
    std::map<std::string, NamedConv> by_name;
    for (const auto& l : conv_layers(config_)) by_name[l.name] = l;
    auto unit = [&](const std::string& n) { return Unit{by_name.at(n).spec, conv_weights(by_name.at(n))}; };
    stem_ = unit("stem");
    blocks_.clear();
    for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1) + ".";
      nn::InvertedResidualWeights<T> b;
      if (config_.block_spec(i).has_expand()) b.expand = conv_weights(by_name.at(p + "expand"));
      b.depthwise = conv_weights(by_name.at(p + "depthwise"));
      b.project = conv_weights(by_name.at(p + "project"));
      blocks_.push_back(std::move(b));
    }
    head_ = unit("head");
    stage2_.clear();
    if (config_.two_stage) {
      for (std::size_t k = 0; k < config_.stage2_convs; ++k) stage2_.push_back(unit("stage2.conv" + std::to_string(k + 1)));
      predict_ = unit("predict");
    }
  }

  ModelConfig config_;
  ModelWeights<T> weights_;
  Unit stem_, head_, predict_;
  std::vector<nn::InvertedResidualWeights<T>> blocks_;
  std::vector<Unit> stage2_;
};

}  // namespace tinyalign
