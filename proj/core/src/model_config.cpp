#include "statark/model_config.hpp"

#include "statark/error.hpp"

namespace statark {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw BuildError("invalid model config: " + what);
  };
  require(dim >= 1, "dim must be >= 1");
  require(n_layers >= 1, "n_layers must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(n_kv_heads >= 1, "n_kv_heads must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(ffn_hidden >= 1, "ffn_hidden must be >= 1");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
  require(norm_eps > 0.0, "norm_eps must be positive");
  require(rope_theta > 0.0, "rope_theta must be positive");
  require(dim % n_heads == 0, "dim must be divisible by n_heads");
  require(n_heads % n_kv_heads == 0, "n_heads must be divisible by n_kv_heads");
  require(head_dim() % 2 == 0, "head_dim must be even");
}

std::string Chunk::name() const {
  switch (kind) {
    case ChunkKind::Embedding: return "embedding";
    case ChunkKind::Decoder: return "decoder_" + std::to_string(start) + "_" + std::to_string(end);
    case ChunkKind::LMHead: return "lm_head";
  }
  return "?";
}

ChunkPlan ChunkPlan::from_layer_counts(int64_t n_layers, const std::vector<int64_t>& layers_per_chunk) {
  ChunkPlan plan;
  plan.chunks.push_back({ChunkKind::Embedding, 0, 0});
  int64_t start = 0;
  for (int64_t count : layers_per_chunk) {
    if (count < 1) throw BuildError("every decoder chunk needs at least one layer");
    plan.chunks.push_back({ChunkKind::Decoder, start, start + count});
    start += count;
  }
  plan.chunks.push_back({ChunkKind::LMHead, 0, 0});
  plan.validate(n_layers);
  return plan;
}

ChunkPlan ChunkPlan::single(int64_t n_layers) { return from_layer_counts(n_layers, {n_layers}); }

void ChunkPlan::validate(int64_t n_layers) const {
  if (chunks.size() < 3) throw BuildError("chunk plan needs an embedding, at least one decoder chunk and an LM head");
  if (chunks.front().kind != ChunkKind::Embedding) throw BuildError("chunk plan must start with the embedding");
  if (chunks.back().kind != ChunkKind::LMHead) throw BuildError("chunk plan must end with the LM head");
  int64_t next = 0;
  for (size_t i = 1; i + 1 < chunks.size(); ++i) {
    const Chunk& c = chunks[i];
    if (c.kind != ChunkKind::Decoder) throw BuildError("only decoder chunks may sit between embedding and LM head");
    if (c.start != next || c.end <= c.start) {
      throw BuildError("decoder chunk " + c.name() + " does not continue at layer " + std::to_string(next));
    }
    next = c.end;
  }
  if (next != n_layers) {
    throw BuildError("decoder chunks cover " + std::to_string(next) + " of " + std::to_string(n_layers) + " layers");
  }
}

std::string chunk_kind_name(ChunkKind kind) {
  switch (kind) {
    case ChunkKind::Embedding: return "embedding";
    case ChunkKind::Decoder: return "decoder";
    case ChunkKind::LMHead: return "lm_head";
  }
  return "?";
}

ChunkKind chunk_kind_from_name(const std::string& name) {
  if (name == "embedding") return ChunkKind::Embedding;
  if (name == "decoder") return ChunkKind::Decoder;
  if (name == "lm_head") return ChunkKind::LMHead;
  throw BuildError("unknown chunk kind '" + name + "'");
}

}  // namespace statark
