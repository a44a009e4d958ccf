// tinyalign: train, evaluate, run and measure the landmark network.

#include <malloc.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinyalign/image_io.hpp"
#include "tinyalign/render.hpp"
#include "tinyalign/synthetic.hpp"
#include "tinyalign/train.hpp"

namespace fs = std::filesystem;
using namespace tinyalign;
using nlohmann::json;

namespace {

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kNumeric = 5,
  kFormat = 6,
  kChecksum = 7,
  kInvalidArgument = 8,
  kTrackingLost = 9,
  kShape = 10,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return kConfig;
    case ErrorKind::data: return kData;
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::format: return kFormat;
    case ErrorKind::checksum: return kChecksum;
    case ErrorKind::invalid_argument: return kInvalidArgument;
    case ErrorKind::tracking_lost: return kTrackingLost;
    case ErrorKind::shape: return kShape;
  }
  return kOther;
}

struct DataSource {
  std::string manifest;
  std::size_t synthetic = 0;
  std::uint64_t seed = 7;

  void add_to(CLI::App* app) {
    auto* m = app->add_option("--data", manifest, "JSON-lines manifest of annotated images");
    auto* s = app->add_option("--synthetic", synthetic, "generate this many synthetic faces instead");
    m->excludes(s);
    app->add_option("--data-seed", seed, "seed of the synthetic faces")->capture_default_str();
  }

  std::vector<AnnotatedSample> load(const ModelConfig& config) const {
    const LandmarkLayout layout = layout_of(config);
    if (!manifest.empty()) return load_manifest_samples(manifest, layout);
    if (synthetic == 0) fail(ErrorKind::config, "give --data or --synthetic");
    if (layout.name != "face65") fail(ErrorKind::config, "synthetic faces use the face65 layout");
    return synthetic_dataset(synthetic, seed, config.input_size);
  }
};

TrainConfig read_train_config(const std::string& path, const std::vector<std::string>& overrides) {
  KeyValues kv;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    kv = KeyValues::parse(ss.str());
  }
  for (const auto& o : overrides) kv.merge(KeyValues::parse(o));
  return TrainConfig::from_keys(kv);
}

AlignNet<float> load_net(const std::string& path) {
  auto m = load_model_file<float>(path);
  return AlignNet<float>(m.config, std::move(m.weights));
}

Part parse_part(const std::string& name) {
  for (Part p : kAllParts)
    if (name == to_string(p)) return p;
  fail(ErrorKind::invalid_argument, "unknown part " + name);
}

// part:rrggbb:opacity[:feather]
ProductSpec parse_product(const std::string& text) {
  std::vector<std::string> f;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) f.push_back(item);
  if (f.size() < 3 || f.size() > 4 || f[1].size() != 6)
    fail(ErrorKind::invalid_argument, "product must be part:rrggbb:opacity[:feather], got " + text);
  ProductSpec p;
  p.part = parse_part(f[0]);
  try {
    for (std::size_t k = 0; k < 3; ++k) p.color[k] = static_cast<std::uint8_t>(std::stoul(f[1].substr(2 * k, 2), nullptr, 16));
    p.opacity = std::stod(f[2]);
    p.feather_radius = f.size() == 4 ? std::stod(f[3]) : 0.0;
  } catch (const std::logic_error&) {
    fail(ErrorKind::invalid_argument, "malformed product " + text);
  }
  p.validate();
  return p;
}

void draw_landmarks(Image& img, const std::vector<Point>& pts) {
  for (const auto& p : pts) {
    const long cx = std::lround(p.x), cy = std::lround(p.y);
    for (long y = cy - 1; y <= cy + 1; ++y)
      for (long x = cx - 1; x <= cx + 1; ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) continue;
        std::uint8_t* px = img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        px[0] = 40;
        px[1] = 230;
        px[2] = 60;
      }
  }
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (!fs::is_directory(in)) {
      out.push_back(in);
      continue;
    }
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(in)) {
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    out.insert(out.end(), files.begin(), files.end());
  }
  return out;
}

json report_json(const EvalReport& r, bool per_landmark) {
  json j{{"inner_nme", r.inner}, {"contour_nme", r.contour}, {"overall_nme", r.overall}, {"count", r.count}};
  if (per_landmark) j["per_landmark_nme"] = r.per_landmark;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Two-stage facial landmark network: training, evaluation, inference and makeup rendering"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write the best validation weights");
  std::string config_path, out_path = "model.taln", checkpoint_path, resume_path, log_path;
  std::vector<std::string> overrides;
  DataSource train_data;
  train_cmd->add_option("--config", config_path, "key=value training config file");
  train_cmd->add_option("--set", overrides, "override one config key, e.g. --set epochs=10");
  train_data.add_to(train_cmd);
  train_cmd->add_option("--out", out_path, "exported model path")->capture_default_str();
  train_cmd->add_option("--checkpoint", checkpoint_path, "write a resumable checkpoint after every epoch");
  train_cmd->add_option("--resume", resume_path, "continue from a checkpoint");
  train_cmd->add_option("--log", log_path, "JSON-lines metrics file (default stdout)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "report NME of a model on a dataset");
  std::string model_path;
  DataSource eval_data;
  bool per_landmark = false;
  eval_cmd->add_option("--model", model_path, "model file")->required();
  eval_data.add_to(eval_cmd);
  eval_cmd->add_flag("--per-landmark", per_landmark, "include the per-landmark table");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "predict landmarks for images, one JSON line each");
  std::vector<std::string> inputs, product_texts;
  std::vector<double> box_values;
  std::string overlay_dir;
  infer_cmd->add_option("--model", model_path, "model file")->required();
  infer_cmd->add_option("inputs", inputs, "image files or directories")->required();
  infer_cmd->add_option("--box", box_values, "face box x0 y0 x1 y1 in pixels (default: whole image)")->expected(4);
  infer_cmd->add_option("--overlay", overlay_dir, "write PNG overlays into this directory");
  infer_cmd->add_option("--product", product_texts, "makeup for overlays: part:rrggbb:opacity[:feather]");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "parameter and compute budget plus latency");
  std::size_t runs = 100;
  bench_cmd->add_option("--model", model_path, "model file");
  bench_cmd->add_option("--config", config_path, "training config; benchmarks a fresh model of its shape");
  bench_cmd->add_option("--set", overrides, "override one config key");
  bench_cmd->add_option("--runs", runs, "timed runs")->capture_default_str();

  // export
  auto* export_cmd = app.add_subcommand("export", "fold batch norm of a checkpoint into an inference model");
  export_cmd->add_option("--checkpoint", checkpoint_path, "training checkpoint")->required();
  export_cmd->add_option("--out", out_path, "model path")->capture_default_str();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic face dataset (PNGs plus manifest.jsonl)");
  std::size_t count = 512, size = 128;
  std::uint64_t synth_seed = 7;
  std::string synth_dir;
  synth_cmd->add_option("--count", count, "number of faces")->capture_default_str();
  synth_cmd->add_option("--size", size, "image side in pixels")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) {
      const TrainConfig cfg = read_train_config(config_path, overrides);
      const auto samples = train_data.load(cfg.model);
      const Split sp = split(samples.size(), 0.8, 0.2, cfg.seed);
      std::vector<AnnotatedSample> tr, va;
      for (auto i : sp.train) tr.push_back(samples[i]);
      for (auto i : sp.val) va.push_back(samples[i]);
      std::ofstream log_file;
      TrainHooks hooks;
      if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) fail(ErrorKind::data, "cannot write " + log_path);
        hooks.log = &log_file;
      } else {
        hooks.log = &std::cout;
      }
      hooks.checkpoint_path = checkpoint_path;
      if (!resume_path.empty()) hooks.resume = load_checkpoint(read_file(resume_path));
      hooks.progress = [](const std::string& s) { std::cerr << s << '\n'; };
      const auto result = train<float>(cfg, tr, va, hooks);
      const auto exported = result.best.exported();
      const Bytes bytes = save_model(exported.config(), exported.weights());
      write_file(out_path, bytes);
      std::cerr << json{{"best_val_nme", result.best_val_nme}, {"model", out_path}, {"model_bytes", bytes.size()}}.dump()
                << '\n';
    } else if (*eval_cmd) {
      auto net = load_net(model_path);
      const auto samples = eval_data.load(net.config());
      std::cout << report_json(evaluate_model(net, samples, layout_of(net.config())), per_landmark).dump() << '\n';
    } else if (*infer_cmd) {
      auto net = load_net(model_path);
      const LandmarkLayout layout = layout_of(net.config());
      std::vector<ProductSpec> products;
      for (const auto& t : product_texts) products.push_back(parse_product(t));
      if (!overlay_dir.empty()) fs::create_directories(overlay_dir);
      for (const auto& path : expand_inputs(inputs)) {
        const Image img = load_image(path);
        const Box box = box_values.empty() ? full_box(img) : Box{box_values[0], box_values[1], box_values[2], box_values[3]};
        auto pts = net.predict(img, box);
        for (auto& p : pts) p = from_box_normalized(p, box);
        json line{{"image", path}, {"landmarks", json::array()}};
        for (const auto& p : pts) line["landmarks"].push_back({p.x, p.y});
        std::cout << line.dump() << '\n';
        if (!overlay_dir.empty()) {
          Image over = render_makeup(img.channels >= 3 ? img : to_rgba(img), pts, layout, products);
          draw_landmarks(over, pts);
          save_png((fs::path(overlay_dir) / (fs::path(path).stem().string() + ".png")).string(), over);
        }
      }
    } else if (*bench_cmd) {
      std::optional<AlignNet<float>> net;
      std::size_t file_bytes = 0;
      if (!model_path.empty()) {
        net = load_net(model_path);
        file_bytes = fs::file_size(model_path);
      } else {
        const TrainConfig cfg = read_train_config(config_path, overrides);
        net = AlignNet<float>::initialize(cfg.effective_model(), cfg.seed).exported();
      }
      const BenchReport r = bench(*net, runs);
      json j{{"Total params", r.budget.total_params},
             {"Total MAdd", r.budget.total_madd},
             {"Total Flops", r.budget.total_flops},
             {"Model Size", r.budget.model_bytes},
             {"median_ms", r.median_ms},
             {"runs", r.runs}};
      if (file_bytes) j["file_bytes"] = file_bytes;
      std::cout << j.dump() << '\n';
    } else if (*export_cmd) {
      const Checkpoint c = load_checkpoint(read_file(checkpoint_path));
      auto m = load_model<float>(c.model);
      const auto exported = AlignNet<float>(m.config, std::move(m.weights)).exported();
      write_file(out_path, save_model(exported.config(), exported.weights()));
    } else if (*synth_cmd) {
      fs::create_directories(synth_dir);
      std::ofstream manifest(fs::path(synth_dir) / "manifest.jsonl");
      if (!manifest) fail(ErrorKind::data, "cannot write manifest in " + synth_dir);
      for (std::size_t i = 0; i < count; ++i) {
        const auto s = generate_synthetic(random_face_params(derive_seed(synth_seed, i), size, size));
        char name[32];
        std::snprintf(name, sizeof name, "face_%05zu.png", i);
        save_png((fs::path(synth_dir) / name).string(), s.image);
        manifest << manifest_line({name, s.points, s.contour}) << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
