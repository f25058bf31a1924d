#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "statark/ir.hpp"
#include "statark/model_config.hpp"
#include "statark/weights.hpp"

namespace statark::builder {

// Where the bytes of one Const node come from: a named model tensor, or a
// literal generated by the builder (attention scale, head-repeat indices).
struct ManifestEntry {
  int64_t node_id = 0;
  std::string weight_name;
  std::vector<float> literal;
  uint64_t offset = 0;
  uint64_t size = 0;
};

using WeightManifest = std::vector<ManifestEntry>;

struct BuiltChunk {
  std::string name;
  ir::ModelGraph graph;
  WeightManifest manifest;
};

// One statically shaped graph per chunk of the plan, stateless: every cache
// is a `cache_k_<i>` / `cache_v_<i>` Parameter/Result pair. Token ids and the
// write position travel as fp32 values.
std::vector<BuiltChunk> build_chunks(const ModelConfig& cfg, const ChunkPlan& plan);
// Whole model in one graph (token in, logits out), for composition checks.
BuiltChunk build_monolithic(const ModelConfig& cfg);

// Turns every matching cache Parameter/Result pair into a ReadValue/Assign
// pair whose variable_id is the cache name. Other nodes are untouched.
ir::ModelGraph make_stateful(const ir::ModelGraph& graph);

// Raw .bin blob for a chunk, laid out by its manifest.
std::vector<std::byte> pack_chunk_blob(const BuiltChunk& chunk, const WeightSet& weights);
// Same tensors, decoded straight into a WeightStore.
ir::WeightStore chunk_weight_store(const BuiltChunk& chunk, const WeightSet& weights);

std::optional<ModelConfig> preset_config(const std::string& name);
std::vector<std::string> preset_names();

std::string config_to_json(const ModelConfig& cfg, const ChunkPlan& plan);
// Parses a config.json body; the chunk list is optional and defaults to a
// single decoder chunk.
std::pair<ModelConfig, ChunkPlan> config_from_json(const std::string& text);

struct ExportOptions {
  // Write graphs and config only; skip every weight file. For shape presets
  // whose weights would not fit on a desk machine.
  bool structure_only = false;
};

// Layout:
//   dir/config.json
//   dir/model_weights.bin
//   dir/llm_dir/<chunk>.xml, dir/llm_dir/<chunk>.bin
//   dir/llm_dir/cache/
// Every file is replaced through a temp-file rename.
void export_model_dir(const ModelConfig& cfg, const ChunkPlan& plan, const std::vector<BuiltChunk>& chunks,
                      const WeightSet* weights, const std::filesystem::path& dir, ExportOptions options = {});

struct LoadedChunk {
  std::string name;
  ir::ModelGraph graph;
  ir::WeightStore weights;
};

struct LoadedModelDir {
  ModelConfig cfg;
  ChunkPlan plan;
  std::vector<LoadedChunk> chunks;
};

LoadedModelDir load_model_dir(const std::filesystem::path& dir);
std::filesystem::path chunk_xml_path(const std::filesystem::path& dir, const std::string& chunk_name);
std::filesystem::path chunk_bin_path(const std::filesystem::path& dir, const std::string& chunk_name);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace statark::builder
