#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "statark/model_config.hpp"
#include "statark/tensor.hpp"

namespace statark {

// Named model tensors (`tok_embeddings.weight`, `layers.3.attention.wq.weight`, ...).
// Projection matrices are stored [out_features, in_features].
class WeightSet {
 public:
  void insert(std::string name, Tensor tensor);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  size_t size() const noexcept { return tensors_.size(); }
  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }

  bool operator==(const WeightSet&) const = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

// Every tensor a config needs, in canonical order.
std::vector<std::pair<std::string, Shape>> expected_weight_shapes(const ModelConfig& cfg);
int64_t parameter_count(const ModelConfig& cfg);

// Deterministic for a given seed on every platform (mt19937_64 bit stream,
// no library distributions).
WeightSet init_weights_seeded(const ModelConfig& cfg, uint64_t seed);

// Checks names and shapes against the config; throws BuildError naming the
// offending tensor.
void check_weights(const ModelConfig& cfg, const WeightSet& weights);

// Weights container: "STWT", u32 version (1), u32 count, then per tensor
// u32 name length, name, u32 rank, u64 dims[rank], fp32 data. Little-endian.
std::vector<std::byte> serialize_weights(const WeightSet& weights);
WeightSet parse_weights(std::span<const std::byte> bytes);

WeightSet read_weights_file(const std::filesystem::path& path);
void write_weights_file(const std::filesystem::path& path, const WeightSet& weights);
// Reads a container and validates it against the config.
WeightSet import_weights(const ModelConfig& cfg, const std::filesystem::path& path);

std::vector<std::byte> read_binary_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace statark
