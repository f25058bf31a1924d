#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statark/model_config.hpp"
#include "statark/weights.hpp"

// Dynamic-shape reference model for differential testing. Caches grow by one
// row per token and attention runs over exactly the rows present, with no
// padding or mask. Written with plain loops and no dependence on the kernel
// library or executor.
namespace statark::oracle {

using Logits = std::vector<float>;
using LogitsSeq = std::vector<Logits>;

// Softmax-weighted sum of `values` rows for one query over `keys` rows.
std::vector<float> attention(std::span<const float> query, const std::vector<std::vector<float>>& keys,
                             const std::vector<std::vector<float>>& values);

class DynamicModel {
 public:
  DynamicModel(const ModelConfig& cfg, const WeightSet& weights);

  // Appends one token and returns its next-token logits.
  Logits append(int64_t token);
  int64_t length() const noexcept { return length_; }
  // Keys of one layer and kv head, one row per token so far (post-rotary).
  const std::vector<std::vector<float>>& keys(int64_t layer, int64_t kv_head) const;

 private:
  struct LayerCache {
    std::vector<std::vector<std::vector<float>>> keys;    // [kv_head][token][head_dim]
    std::vector<std::vector<std::vector<float>>> values;  // [kv_head][token][head_dim]
  };

  const ModelConfig cfg_;
  const WeightSet& weights_;
  std::vector<LayerCache> layers_;
  int64_t length_ = 0;
};

// Next-token logits after every prefix of `tokens`.
LogitsSeq dynamic_forward(const ModelConfig& cfg, const WeightSet& weights, std::span<const int64_t> tokens);

struct CompareReport {
  double max_abs_diff = 0.0;
  std::optional<size_t> first_divergent_position;
  bool passed = true;
};

// Exact max |a - b| over every entry; passes iff it is <= tol.
CompareReport compare_logits(const LogitsSeq& a, const LogitsSeq& b, double tol);

// Golden values: the weights container sits next to a JSON file holding the
// config, the prompt and the expected logits as fp32 bit patterns in hex.
struct Fixture {
  ModelConfig cfg;
  uint64_t seed = 0;
  std::vector<int64_t> prompt;
  LogitsSeq logits;
};

void write_fixture(const std::filesystem::path& json_path, const Fixture& fixture);
Fixture read_fixture(const std::filesystem::path& json_path);

}  // namespace statark::oracle
