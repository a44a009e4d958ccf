#pragma once

// Model file layout (little-endian):
//
//   "TALN"  u32 version
//   u32 config_len   config text (canonical key=value, sorted)
//   u32 tensor_count
//   per tensor: u32 name_len  name  u32 rank  u32 dims[rank]
//   u64 payload_len  f32 payload[payload_len / 4]
//   u32 crc32(payload)
//
// A training checkpoint wraps a model blob with the optimizer state:
//
//   "TALC"  u32 version
//   u64 model_len  model blob
//   u64 epoch  f64 learning_rate
//   u64 velocity_count  f32 velocity[velocity_count]
//   u32 extra_len  extra text
//   u32 crc32(everything after the magic and version)

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/model.hpp"

namespace tinyalign {

inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

class Writer {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  Bytes out;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, ErrorKind truncated)
      : data_(data), size_(size), truncated_(truncated) {}

  template <class U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) fail(truncated_, "model file truncated");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t limit = 1 << 20) {
    const auto n = get<std::uint32_t>();
    if (n > limit) fail(ErrorKind::format, "model file: string length out of range");
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  void set_truncated(ErrorKind k) { truncated_ = k; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  ErrorKind truncated_;
};

inline void check_magic(Reader& r, const char* magic, std::uint32_t version) {
  const auto* m = r.take(4);
  if (std::memcmp(m, magic, 4) != 0) fail(ErrorKind::format, std::string("bad magic, expected ") + magic);
  const auto v = r.get<std::uint32_t>();
  if (v != version) fail(ErrorKind::format, "unsupported version " + std::to_string(v));
}

}  // namespace detail

template <class T>
Bytes save_model(const ModelConfig& config, const ModelWeights<T>& weights) {
  weights.check_manifest(config);
  detail::Writer w;
  w.put_bytes("TALN", 4);
  w.put(kModelVersion);
  w.put_string(config.to_text());
  w.put(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, t] : weights.entries()) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
  }
  const std::uint64_t payload = 4 * weights.scalar_count();
  w.put(payload);
  const std::size_t start = w.out.size();
  for (const auto& [_, t] : weights.entries())
    for (T v : t.data()) w.put(static_cast<float>(v));
  w.put(crc32_of(w.out.data() + start, payload));
  return std::move(w.out);
}

template <class T>
struct LoadedModel {
  ModelConfig config;
  ModelWeights<T> weights;
};

/// Parses a model file. Bad magic, version or manifest is a format error; a
/// short or corrupted payload is a checksum error.
template <class T>
LoadedModel<T> load_model(const std::uint8_t* data, std::size_t size) {
  detail::Reader r(data, size, ErrorKind::format);
  detail::check_magic(r, "TALN", kModelVersion);
  LoadedModel<T> m;
  try {
    m.config = ModelConfig::from_text(r.get_string());
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("model file config: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<std::pair<std::string, Shape>> heads;
  for (std::uint32_t i = 0; i < count && i < 1u << 16; ++i) {
    std::string name = r.get_string(4096);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::format, "model file: tensor rank out of range");
    Shape s(rank);
    for (auto& d : s) d = r.get<std::uint32_t>();
    heads.emplace_back(std::move(name), std::move(s));
  }
  const auto expected = manifest(m.config);
  if (heads.size() != expected.size()) fail(ErrorKind::format, "model file: tensor count does not match manifest");
  std::uint64_t scalars = 0;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].first != expected[i].name || heads[i].second != expected[i].shape)
      fail(ErrorKind::format, "model file: tensor " + heads[i].first + " does not match manifest");
    scalars += shape_numel(heads[i].second);
  }
  const auto payload = r.get<std::uint64_t>();
  if (payload != 4 * scalars) fail(ErrorKind::format, "model file: payload size does not match manifest");
  r.set_truncated(ErrorKind::checksum);
  const std::uint8_t* p = r.take(payload);
  const auto stored = r.get<std::uint32_t>();
  if (stored != crc32_of(p, payload)) fail(ErrorKind::checksum, "model file: payload checksum mismatch");
  if (r.remaining() != 0) fail(ErrorKind::format, "model file: trailing bytes");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    Tensor<T> t(heads[i].second, T(0), expected[i].trainable());
    for (auto& v : t.data()) {
      float f;
      std::memcpy(&f, p, 4);
      p += 4;
      v = static_cast<T>(f);
    }
    m.weights.add(heads[i].first, std::move(t));
  }
  return m;
}

template <class T>
LoadedModel<T> load_model(const Bytes& b) {
  return load_model<T>(b.data(), b.size());
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::data, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::data, "write failed: " + path);
}

template <class T>
void save_model_file(const std::string& path, const ModelConfig& c, const ModelWeights<T>& w) {
  write_file(path, save_model(c, w));
}

template <class T>
LoadedModel<T> load_model_file(const std::string& path) {
  return load_model<T>(read_file(path));
}

/// Budget of the exported (batch-norm folded) form of `config`.
inline nn::ComputeBudget model_budget(ModelConfig config) {
  config.batch_norm = false;
  nn::ComputeBudget b = nn::account(layer_costs(config));
  b.model_bytes = save_model(config, ModelWeights<float>::zeros(config)).size();
  return b;
}

struct Checkpoint {
  Bytes model;
  std::uint64_t epoch = 0;
  double learning_rate = 0;
  std::vector<float> velocity;  // concatenated over trainable parameters
  std::string extra;
};

inline Bytes save_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.put_bytes("TALC", 4);
  w.put(kCheckpointVersion);
  const std::size_t start = w.out.size();
  w.put(static_cast<std::uint64_t>(c.model.size()));
  w.put_bytes(c.model.data(), c.model.size());
  w.put(c.epoch);
  w.put(c.learning_rate);
  w.put(static_cast<std::uint64_t>(c.velocity.size()));
  w.put_bytes(c.velocity.data(), 4 * c.velocity.size());
  w.put_string(c.extra);
  w.put(crc32_of(w.out.data() + start, w.out.size() - start));
  return std::move(w.out);
}

inline Checkpoint load_checkpoint(const Bytes& b) {
  detail::Reader r(b.data(), b.size(), ErrorKind::format);
  detail::check_magic(r, "TALC", kCheckpointVersion);
  if (r.remaining() < 4) fail(ErrorKind::checksum, "checkpoint truncated");
  const std::size_t start = r.pos();
  std::uint32_t stored;
  std::memcpy(&stored, b.data() + b.size() - 4, 4);
  if (stored != crc32_of(b.data() + start, b.size() - 4 - start)) fail(ErrorKind::checksum, "checkpoint checksum mismatch");
  Checkpoint c;
  const auto n = r.get<std::uint64_t>();
  const auto* p = r.take(n);
  c.model.assign(p, p + n);
  c.epoch = r.get<std::uint64_t>();
  c.learning_rate = r.get<double>();
  const auto v = r.get<std::uint64_t>();
  if (v > r.remaining() / 4) fail(ErrorKind::format, "checkpoint: velocity count out of range");
  c.velocity.resize(v);
  std::memcpy(c.velocity.data(), r.take(4 * v), 4 * v);
  c.extra = r.get_string(1 << 24);
  if (r.remaining() != 4) fail(ErrorKind::format, "checkpoint: trailing bytes");
  return c;
}

}  // namespace tinyalign
