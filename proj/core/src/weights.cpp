#include "statark/weights.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <system_error>

#include "statark/error.hpp"
#include "statark/ir.hpp"

namespace statark {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'W', 'T'};
constexpr uint32_t kVersion = 1;

template <typename Int>
void put_le(std::vector<std::byte>& out, Int value) {
  for (size_t b = 0; b < sizeof(Int); ++b) out.push_back(static_cast<std::byte>((value >> (8 * b)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename Int>
  Int get() {
    need(sizeof(Int));
    Int value = 0;
    for (size_t b = 0; b < sizeof(Int); ++b) value |= static_cast<Int>(bytes_[pos_ + b]) << (8 * b);
    pos_ += sizeof(Int);
    return value;
  }

  std::span<const std::byte> take(uint64_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(uint64_t n) const {
    if (n > bytes_.size() - pos_) throw BuildError("weights container is truncated");
  }

  std::span<const std::byte> bytes_;
  size_t pos_ = 0;
};

// Uniform in [-scale, scale) from the top 24 bits of the generator.
float uniform(std::mt19937_64& rng, float scale) {
  const float unit = static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
  return scale * (2.0f * unit - 1.0f);
}

}  // namespace

void WeightSet::insert(std::string name, Tensor tensor) { tensors_.insert_or_assign(std::move(name), std::move(tensor)); }

const Tensor& WeightSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw BuildError("missing weight tensor '" + name + "'");
  return it->second;
}

std::vector<std::pair<std::string, Shape>> expected_weight_shapes(const ModelConfig& cfg) {
  const int64_t hd = cfg.head_dim();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("tok_embeddings.weight", Shape{cfg.vocab_size, cfg.dim});
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attention_norm.weight", Shape{cfg.dim});
    out.emplace_back(p + "attention.wq.weight", Shape{cfg.n_heads * hd, cfg.dim});
    out.emplace_back(p + "attention.wk.weight", Shape{cfg.n_kv_heads * hd, cfg.dim});
    out.emplace_back(p + "attention.wv.weight", Shape{cfg.n_kv_heads * hd, cfg.dim});
    out.emplace_back(p + "attention.wo.weight", Shape{cfg.dim, cfg.n_heads * hd});
    out.emplace_back(p + "ffn_norm.weight", Shape{cfg.dim});
    out.emplace_back(p + "feed_forward.w1.weight", Shape{cfg.ffn_hidden, cfg.dim});
    out.emplace_back(p + "feed_forward.w2.weight", Shape{cfg.dim, cfg.ffn_hidden});
    out.emplace_back(p + "feed_forward.w3.weight", Shape{cfg.ffn_hidden, cfg.dim});
  }
  out.emplace_back("norm.weight", Shape{cfg.dim});
  out.emplace_back("output.weight", Shape{cfg.vocab_size, cfg.dim});
  return out;
}

int64_t parameter_count(const ModelConfig& cfg) {
  int64_t total = 0;
  for (const auto& [name, shape] : expected_weight_shapes(cfg)) total += num_elements(shape);
  return total;
}

WeightSet init_weights_seeded(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  WeightSet weights;
  for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
    Tensor t(shape);
    if (shape.size() == 1) {
      for (float& v : t.data()) v = 1.0f + uniform(rng, 0.1f);
    } else if (name == "tok_embeddings.weight") {
      for (float& v : t.data()) v = uniform(rng, 1.0f);
    } else {
      const float scale = 1.0f / std::sqrt(static_cast<float>(shape[1]));
      for (float& v : t.data()) v = uniform(rng, scale);
    }
    weights.insert(name, std::move(t));
  }
  return weights;
}

void check_weights(const ModelConfig& cfg, const WeightSet& weights) {
  const auto expected = expected_weight_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    if (!weights.contains(name)) throw BuildError("missing weight tensor '" + name + "'");
    const Shape& actual = weights.at(name).shape();
    if (actual != shape) {
      throw BuildError("weight tensor '" + name + "' has shape " + shape_to_string(actual) + ", expected " +
                       shape_to_string(shape));
    }
  }
  if (weights.size() != expected.size()) {
    for (const auto& [name, tensor] : weights.tensors()) {
      bool known = false;
      for (const auto& e : expected) known = known || e.first == name;
      if (!known) throw BuildError("unexpected weight tensor '" + name + "'");
    }
  }
}

std::vector<std::byte> serialize_weights(const WeightSet& weights) {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_le<uint32_t>(out, kVersion);
  put_le<uint32_t>(out, static_cast<uint32_t>(weights.size()));
  for (const auto& [name, tensor] : weights.tensors()) {
    put_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
    for (char c : name) out.push_back(static_cast<std::byte>(c));
    put_le<uint32_t>(out, static_cast<uint32_t>(tensor.rank()));
    for (int64_t d : tensor.shape()) put_le<uint64_t>(out, static_cast<uint64_t>(d));
    ir::append_f32_le(out, tensor.data());
  }
  return out;
}

WeightSet parse_weights(std::span<const std::byte> bytes) {
  ByteReader reader(bytes);
  auto magic = reader.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw BuildError("not a weights container (bad magic)");
  const auto version = reader.get<uint32_t>();
  if (version != kVersion) throw BuildError("unsupported weights container version " + std::to_string(version));
  const auto count = reader.get<uint32_t>();
  WeightSet weights;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = reader.get<uint32_t>();
    auto name_bytes = reader.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_bytes.data()), name_bytes.size());
    const auto rank = reader.get<uint32_t>();
    Shape shape;
    for (uint32_t r = 0; r < rank; ++r) {
      const auto d = reader.get<uint64_t>();
      if (d < 1 || d > (uint64_t{1} << 40)) throw BuildError("weight tensor '" + name + "' has an invalid extent");
      shape.push_back(static_cast<int64_t>(d));
    }
    const auto n = static_cast<uint64_t>(num_elements(shape));
    Tensor t(shape);
    ir::decode_f32_le(reader.take(n * 4), t.data());
    if (weights.contains(name)) throw BuildError("duplicate weight tensor '" + name + "'");
    weights.insert(std::move(name), std::move(t));
  }
  if (!reader.done()) throw BuildError("trailing bytes after weights container");
  return weights;
}

std::vector<std::byte> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error("cannot read " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

WeightSet read_weights_file(const std::filesystem::path& path) {
  try {
    return parse_weights(read_binary_file(path));
  } catch (const BuildError& e) {
    throw BuildError(path.string() + ": " + e.what());
  }
}

void write_weights_file(const std::filesystem::path& path, const WeightSet& weights) {
  write_file_atomic(path, serialize_weights(weights));
}

WeightSet import_weights(const ModelConfig& cfg, const std::filesystem::path& path) {
  WeightSet weights = read_weights_file(path);
  check_weights(cfg, weights);
  return weights;
}

}  // namespace statark
