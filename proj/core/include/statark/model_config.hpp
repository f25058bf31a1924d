#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace statark {

// Llama-style decoder hyperparameters. Every tensor extent in a built graph
// derives from these; max_seq_len is the fixed cache length.
struct ModelConfig {
  int64_t dim = 0;
  int64_t n_layers = 0;
  int64_t n_heads = 0;
  int64_t n_kv_heads = 0;
  int64_t vocab_size = 0;
  int64_t ffn_hidden = 0;
  double norm_eps = 1e-5;
  double rope_theta = 10000.0;
  int64_t max_seq_len = 0;

  int64_t head_dim() const { return n_heads > 0 ? dim / n_heads : 0; }
  int64_t kv_repeat() const { return n_kv_heads > 0 ? n_heads / n_kv_heads : 0; }

  // Throws BuildError naming the first broken constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class ChunkKind { Embedding, Decoder, LMHead };

struct Chunk {
  ChunkKind kind = ChunkKind::Embedding;
  int64_t start = 0;  // decoder layer range [start, end); zero for other kinds
  int64_t end = 0;

  // `embedding`, `decoder_<start>_<end>` or `lm_head`.
  std::string name() const;

  bool operator==(const Chunk&) const = default;
};

struct ChunkPlan {
  std::vector<Chunk> chunks;

  // Embedding, one decoder chunk per entry of `layers_per_chunk`, LM head.
  static ChunkPlan from_layer_counts(int64_t n_layers, const std::vector<int64_t>& layers_per_chunk);
  // Embedding, all layers in one decoder chunk, LM head.
  static ChunkPlan single(int64_t n_layers);

  // Embedding first, LM head last, decoder ranges contiguous and covering
  // [0, n_layers). Throws BuildError otherwise.
  void validate(int64_t n_layers) const;

  bool operator==(const ChunkPlan&) const = default;
};

std::string chunk_kind_name(ChunkKind kind);
ChunkKind chunk_kind_from_name(const std::string& name);

}  // namespace statark
