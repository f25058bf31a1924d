#include "statark/builder.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "statark/error.hpp"
#include "statark/shapes.hpp"

namespace statark::builder {
namespace {

using ir::OpType;

std::string fmt_float(double value) {
  std::ostringstream os;
  os.precision(17);
  os << value;
  return os.str();
}

// Output of a node, with its static shape.
struct Ref {
  int64_t node = 0;
  int port = 0;
  Shape shape;
};

class GraphBuilder {
 public:
  explicit GraphBuilder(const std::string& name) {
    chunk_.name = name;
    chunk_.graph.name = name;
  }

  Ref parameter(const std::string& name, const Shape& shape) { return source(OpType::Parameter, name, shape, {}); }

  void result(const std::string& name, const Ref& value) { sink(OpType::Result, name, value, {}); }

  Ref weight(const std::string& weight_name, const Shape& shape) {
    Ref r = constant(weight_name, shape);
    chunk_.manifest.back().weight_name = weight_name;
    return r;
  }

  Ref literal(const std::string& name, const Shape& shape, std::vector<float> values) {
    Ref r = constant(name, shape);
    chunk_.manifest.back().literal = std::move(values);
    return r;
  }

  Ref op(OpType type, const std::string& name, const std::vector<Ref>& inputs, ir::Attributes attrs = {}) {
    std::vector<Shape> in_shapes;
    for (const Ref& r : inputs) in_shapes.push_back(r.shape);
    const Shape out = shapes::infer_output_shape(type, attrs, in_shapes).front();
    ir::Node& node = add_node(type, name, std::move(attrs));
    for (size_t i = 0; i < inputs.size(); ++i) {
      node.inputs.push_back({static_cast<int>(i), ir::Precision::FP32, ir::static_dims(inputs[i].shape), {}});
      connect(inputs[i], node.id, static_cast<int>(i));
    }
    const int out_port = static_cast<int>(inputs.size());
    node.outputs.push_back({out_port, ir::Precision::FP32, ir::static_dims(out), {name}});
    return {node.id, out_port, out};
  }

  BuiltChunk finish() { return std::move(chunk_); }

 private:
  ir::Node& add_node(OpType type, const std::string& name, ir::Attributes attrs) {
    ir::Node node;
    node.id = next_id_++;
    node.name = name;
    node.type = type;
    node.attributes = std::move(attrs);
    return chunk_.graph.nodes.emplace(node.id, std::move(node)).first->second;
  }

  void connect(const Ref& from, int64_t to, int to_port) {
    chunk_.graph.edges.push_back({from.node, from.port, to, to_port});
  }

  Ref source(OpType type, const std::string& name, const Shape& shape, ir::Attributes attrs) {
    ir::Node& node = add_node(type, name, std::move(attrs));
    node.outputs.push_back({0, ir::Precision::FP32, ir::static_dims(shape), {name}});
    return {node.id, 0, shape};
  }

  void sink(OpType type, const std::string& name, const Ref& value, ir::Attributes attrs) {
    ir::Node& node = add_node(type, name, std::move(attrs));
    node.inputs.push_back({0, ir::Precision::FP32, ir::static_dims(value.shape), {}});
    connect(value, node.id, 0);
  }

  Ref constant(const std::string& name, const Shape& shape) {
    const uint64_t size = 4 * static_cast<uint64_t>(num_elements(shape));
    Ref r = source(OpType::Const, name, shape,
                   {{"element_type", "f32"}, {"offset", std::to_string(offset_)}, {"size", std::to_string(size)}});
    chunk_.manifest.push_back({r.node, "", {}, offset_, size});
    offset_ += size;
    return r;
  }

  BuiltChunk chunk_;
  int64_t next_id_ = 0;
  uint64_t offset_ = 0;
};

// Per-graph inputs and constants shared by every decoder layer.
struct LayerContext {
  Ref mask;
  Ref freqs;
  Ref position;
  Ref scale;
  Ref kv_index;    // [n_heads]: query head -> kv head
  Ref mask_index;  // [n_heads, 1] zeros: copies the mask row per head
};

LayerContext layer_context(GraphBuilder& b, const ModelConfig& cfg) {
  const int64_t hd = cfg.head_dim();
  const int64_t m = cfg.max_seq_len;
  LayerContext ctx;
  ctx.mask = b.parameter("mask", {1, 1, 1, m});
  ctx.freqs = b.parameter("freqs_cis", {1, 1, hd / 2, 2});
  ctx.position = b.parameter("position", {1});
  ctx.scale = b.literal("attention.scale", {}, {1.0f / std::sqrt(static_cast<float>(hd))});
  std::vector<float> kv_index;
  for (int64_t h = 0; h < cfg.n_heads; ++h) kv_index.push_back(static_cast<float>(h / cfg.kv_repeat()));
  ctx.kv_index = b.literal("attention.kv_head_index", {cfg.n_heads}, std::move(kv_index));
  ctx.mask_index = b.literal("attention.mask_row_index", {cfg.n_heads, 1},
                             std::vector<float>(static_cast<size_t>(cfg.n_heads), 0.0f));
  return ctx;
}

struct LayerOutputs {
  Ref x;
  Ref cache_k;
  Ref cache_v;
};

LayerOutputs decoder_layer(GraphBuilder& b, const ModelConfig& cfg, const LayerContext& ctx, int64_t layer,
                           const Ref& x, const Ref& cache_k, const Ref& cache_v) {
  const int64_t dim = cfg.dim;
  const int64_t hd = cfg.head_dim();
  const int64_t heads = cfg.n_heads;
  const int64_t kv = cfg.n_kv_heads;
  const int64_t m = cfg.max_seq_len;
  const std::string p = "layers." + std::to_string(layer) + ".";
  const ir::Attributes eps{{"eps", fmt_float(cfg.norm_eps)}};
  const ir::Attributes tb{{"transpose_a", "false"}, {"transpose_b", "true"}};
  auto reshape = [](const Shape& s) { return ir::Attributes{{"shape", shapes::format_int_list(s)}}; };
  const ir::Attributes heads_first{{"order", "0,2,1,3"}};

  Ref h = b.op(OpType::RMSNorm, p + "attention_norm", {x, b.weight(p + "attention_norm.weight", {dim})}, eps);
  Ref q = b.op(OpType::MatMul, p + "attention.wq", {h, b.weight(p + "attention.wq.weight", {heads * hd, dim})}, tb);
  Ref k = b.op(OpType::MatMul, p + "attention.wk", {h, b.weight(p + "attention.wk.weight", {kv * hd, dim})}, tb);
  Ref v = b.op(OpType::MatMul, p + "attention.wv", {h, b.weight(p + "attention.wv.weight", {kv * hd, dim})}, tb);
  q = b.op(OpType::Reshape, p + "attention.q_heads", {q}, reshape({1, 1, heads, hd}));
  k = b.op(OpType::Reshape, p + "attention.k_heads", {k}, reshape({1, 1, kv, hd}));
  v = b.op(OpType::Reshape, p + "attention.v_heads", {v}, reshape({1, 1, kv, hd}));
  q = b.op(OpType::RotaryApply, p + "attention.q_rotary", {q, ctx.freqs});
  k = b.op(OpType::RotaryApply, p + "attention.k_rotary", {k, ctx.freqs});
  k = b.op(OpType::Transpose, p + "attention.k_row", {k}, heads_first);
  v = b.op(OpType::Transpose, p + "attention.v_row", {v}, heads_first);

  // Fixed-length caches: write this token's row, attend over all m rows.
  const ir::Attributes seq_axis{{"axis", "2"}};
  Ref new_k = b.op(OpType::ScatterRowUpdate, p + "attention.cache_k_update", {cache_k, ctx.position, k}, seq_axis);
  Ref new_v = b.op(OpType::ScatterRowUpdate, p + "attention.cache_v_update", {cache_v, ctx.position, v}, seq_axis);
  Ref keys = b.op(OpType::Reshape, p + "attention.keys", {new_k}, reshape({kv, m, hd}));
  Ref values = b.op(OpType::Reshape, p + "attention.values", {new_v}, reshape({kv, m, hd}));
  keys = b.op(OpType::Gather, p + "attention.keys_repeated", {keys, ctx.kv_index});
  values = b.op(OpType::Gather, p + "attention.values_repeated", {values, ctx.kv_index});

  Ref queries = b.op(OpType::Reshape, p + "attention.queries", {q}, reshape({heads, 1, hd}));
  Ref scores = b.op(OpType::MatMul, p + "attention.scores", {queries, keys}, tb);
  scores = b.op(OpType::Multiply, p + "attention.scaled_scores", {scores, ctx.scale});
  Ref mask_row = b.op(OpType::Reshape, p + "attention.mask_row", {ctx.mask}, reshape({1, m}));
  Ref mask = b.op(OpType::Gather, p + "attention.mask_heads", {mask_row, ctx.mask_index});
  scores = b.op(OpType::Add, p + "attention.masked_scores", {scores, mask});
  Ref probs = b.op(OpType::Softmax, p + "attention.probs", {scores}, {{"axis", "-1"}});
  Ref context = b.op(OpType::MatMul, p + "attention.context", {probs, values},
                     {{"transpose_a", "false"}, {"transpose_b", "false"}});
  context = b.op(OpType::Reshape, p + "attention.context_flat", {context}, reshape({1, 1, heads * hd}));
  Ref attn = b.op(OpType::MatMul, p + "attention.wo", {context, b.weight(p + "attention.wo.weight", {dim, heads * hd})},
                  tb);
  Ref x1 = b.op(OpType::Add, p + "attention.residual", {x, attn});

  Ref h2 = b.op(OpType::RMSNorm, p + "ffn_norm", {x1, b.weight(p + "ffn_norm.weight", {dim})}, eps);
  Ref gate = b.op(OpType::MatMul, p + "feed_forward.w1",
                  {h2, b.weight(p + "feed_forward.w1.weight", {cfg.ffn_hidden, dim})}, tb);
  gate = b.op(OpType::SiLU, p + "feed_forward.silu", {gate});
  Ref up = b.op(OpType::MatMul, p + "feed_forward.w3",
                {h2, b.weight(p + "feed_forward.w3.weight", {cfg.ffn_hidden, dim})}, tb);
  Ref hidden = b.op(OpType::Multiply, p + "feed_forward.gated", {gate, up});
  Ref down = b.op(OpType::MatMul, p + "feed_forward.w2",
                  {hidden, b.weight(p + "feed_forward.w2.weight", {dim, cfg.ffn_hidden})}, tb);
  Ref x2 = b.op(OpType::Add, p + "feed_forward.residual", {x1, down});
  return {x2, new_k, new_v};
}

Shape cache_shape(const ModelConfig& cfg) { return {1, cfg.n_kv_heads, cfg.max_seq_len, cfg.head_dim()}; }

Ref embedding(GraphBuilder& b, const ModelConfig& cfg, const Ref& token) {
  return b.op(OpType::Gather, "tok_embeddings", {b.weight("tok_embeddings.weight", {cfg.vocab_size, cfg.dim}), token});
}

Ref lm_head(GraphBuilder& b, const ModelConfig& cfg, const Ref& x) {
  Ref h = b.op(OpType::RMSNorm, "norm", {x, b.weight("norm.weight", {cfg.dim})}, {{"eps", fmt_float(cfg.norm_eps)}});
  return b.op(OpType::MatMul, "output", {h, b.weight("output.weight", {cfg.vocab_size, cfg.dim})},
              {{"transpose_a", "false"}, {"transpose_b", "true"}});
}

Ref decoder_stack(GraphBuilder& b, const ModelConfig& cfg, int64_t start, int64_t end, Ref x) {
  const LayerContext ctx = layer_context(b, cfg);
  std::vector<std::pair<int64_t, LayerOutputs>> outs;
  for (int64_t i = start; i < end; ++i) {
    Ref ck = b.parameter("cache_k_" + std::to_string(i), cache_shape(cfg));
    Ref cv = b.parameter("cache_v_" + std::to_string(i), cache_shape(cfg));
    LayerOutputs o = decoder_layer(b, cfg, ctx, i, x, ck, cv);
    b.result("cache_k_" + std::to_string(i), o.cache_k);
    b.result("cache_v_" + std::to_string(i), o.cache_v);
    x = o.x;
  }
  return x;
}

BuiltChunk build_chunk(const ModelConfig& cfg, const Chunk& chunk) {
  GraphBuilder b(chunk.name());
  switch (chunk.kind) {
    case ChunkKind::Embedding:
      b.result("x", embedding(b, cfg, b.parameter("token", {1, 1})));
      break;
    case ChunkKind::Decoder: {
      Ref x = b.parameter("x", {1, 1, cfg.dim});
      b.result("x", decoder_stack(b, cfg, chunk.start, chunk.end, x));
      break;
    }
    case ChunkKind::LMHead:
      b.result("logits", lm_head(b, cfg, b.parameter("x", {1, 1, cfg.dim})));
      break;
  }
  return b.finish();
}

const std::regex& cache_name_pattern() {
  static const std::regex pattern("^cache_[kv]_[0-9]+$");
  return pattern;
}

std::vector<float> manifest_values(const ManifestEntry& entry, const WeightSet& weights, const ir::Node& node) {
  if (entry.weight_name.empty()) return entry.literal;
  const Tensor& t = weights.at(entry.weight_name);
  const auto declared = ir::to_shape(node.outputs.front().dims);
  if (!declared || t.shape() != *declared) {
    throw BuildError("weight tensor '" + entry.weight_name + "' has shape " + shape_to_string(t.shape()) +
                     " but the graph expects " + (declared ? shape_to_string(*declared) : "a static shape"));
  }
  return {t.data().begin(), t.data().end()};
}

}  // namespace

std::vector<BuiltChunk> build_chunks(const ModelConfig& cfg, const ChunkPlan& plan) {
  cfg.validate();
  plan.validate(cfg.n_layers);
  std::vector<BuiltChunk> out;
  for (const Chunk& chunk : plan.chunks) out.push_back(build_chunk(cfg, chunk));
  return out;
}

BuiltChunk build_monolithic(const ModelConfig& cfg) {
  cfg.validate();
  GraphBuilder b("model");
  Ref x = embedding(b, cfg, b.parameter("token", {1, 1}));
  x = decoder_stack(b, cfg, 0, cfg.n_layers, x);
  b.result("logits", lm_head(b, cfg, x));
  return b.finish();
}

ir::ModelGraph make_stateful(const ir::ModelGraph& graph) {
  std::map<std::string, ir::Node*> params;
  std::map<std::string, ir::Node*> results;
  ir::ModelGraph out = graph;
  for (auto& [id, node] : out.nodes) {
    if (!std::regex_match(node.name, cache_name_pattern())) continue;
    if (node.type == OpType::Parameter) params[node.name] = &node;
    if (node.type == OpType::Result) results[node.name] = &node;
  }
  for (const auto& [name, param] : params) {
    if (!results.count(name)) throw BuildError("cache Parameter '" + name + "' has no matching Result");
  }
  for (const auto& [name, result] : results) {
    auto it = params.find(name);
    if (it == params.end()) throw BuildError("cache Result '" + name + "' has no matching Parameter");
    const ir::Dims& in_dims = it->second->outputs.front().dims;
    const ir::Dims& out_dims = result->inputs.front().dims;
    if (in_dims != out_dims) {
      throw BuildError("cache '" + name + "' Parameter " + ir::dims_to_string(in_dims) + " and Result " +
                       ir::dims_to_string(out_dims) + " differ");
    }
    it->second->type = OpType::ReadValue;
    it->second->attributes["variable_id"] = name;
    result->type = OpType::Assign;
    result->attributes["variable_id"] = name;
  }
  return out;
}

std::vector<std::byte> pack_chunk_blob(const BuiltChunk& chunk, const WeightSet& weights) {
  std::vector<std::byte> blob;
  for (const ManifestEntry& entry : chunk.manifest) {
    if (blob.size() != entry.offset) throw BuildError("manifest of '" + chunk.name + "' is not contiguous");
    ir::append_f32_le(blob, manifest_values(entry, weights, chunk.graph.node(entry.node_id)));
    if (blob.size() != entry.offset + entry.size) throw BuildError("manifest entry size mismatch in " + chunk.name);
  }
  return blob;
}

ir::WeightStore chunk_weight_store(const BuiltChunk& chunk, const WeightSet& weights) {
  std::map<int64_t, Tensor> tensors;
  for (const ManifestEntry& entry : chunk.manifest) {
    const ir::Node& node = chunk.graph.node(entry.node_id);
    tensors.emplace(entry.node_id, Tensor(*ir::to_shape(node.outputs.front().dims), manifest_values(entry, weights, node)));
  }
  return ir::WeightStore(std::move(tensors));
}

std::optional<ModelConfig> preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "toy") {
    c = {64, 2, 4, 2, 260, 128, 1e-5, 10000.0, 128};
  } else if (name == "llama3-8b-shape") {
    c = {4096, 32, 32, 8, 128256, 14336, 1e-5, 500000.0, 1024};
  } else if (name == "llama3.2-1b-shape") {
    c = {2048, 16, 32, 8, 128256, 8192, 1e-5, 500000.0, 1024};
  } else if (name == "llama3.2-3b-shape") {
    c = {3072, 28, 24, 8, 128256, 8192, 1e-5, 500000.0, 1024};
  } else {
    return std::nullopt;
  }
  return c;
}

std::vector<std::string> preset_names() { return {"toy", "llama3-8b-shape", "llama3.2-1b-shape", "llama3.2-3b-shape"}; }

std::string config_to_json(const ModelConfig& cfg, const ChunkPlan& plan) {
  nlohmann::ordered_json j;
  j["dim"] = cfg.dim;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["n_kv_heads"] = cfg.n_kv_heads;
  j["head_dim"] = cfg.head_dim();
  j["vocab_size"] = cfg.vocab_size;
  j["ffn_hidden"] = cfg.ffn_hidden;
  j["norm_eps"] = cfg.norm_eps;
  j["rope_theta"] = cfg.rope_theta;
  j["max_seq_len"] = cfg.max_seq_len;
  j["chunks"] = nlohmann::ordered_json::array();
  for (const Chunk& c : plan.chunks) {
    j["chunks"].push_back({{"kind", chunk_kind_name(c.kind)}, {"start", c.start}, {"end", c.end}});
  }
  return j.dump(2) + "\n";
}

std::pair<ModelConfig, ChunkPlan> config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.dim = j.at("dim").get<int64_t>();
    cfg.n_layers = j.at("n_layers").get<int64_t>();
    cfg.n_heads = j.at("n_heads").get<int64_t>();
    cfg.n_kv_heads = j.value("n_kv_heads", cfg.n_heads);
    cfg.vocab_size = j.at("vocab_size").get<int64_t>();
    cfg.ffn_hidden = j.at("ffn_hidden").get<int64_t>();
    cfg.norm_eps = j.value("norm_eps", 1e-5);
    cfg.rope_theta = j.value("rope_theta", 10000.0);
    cfg.max_seq_len = j.at("max_seq_len").get<int64_t>();
    cfg.validate();
    if (j.contains("head_dim") && j.at("head_dim").get<int64_t>() != cfg.head_dim()) {
      throw BuildError("config head_dim disagrees with dim / n_heads");
    }
    ChunkPlan plan;
    if (j.contains("chunks")) {
      for (const auto& c : j.at("chunks")) {
        plan.chunks.push_back({chunk_kind_from_name(c.at("kind").get<std::string>()), c.value("start", int64_t{0}),
                               c.value("end", int64_t{0})});
      }
    } else {
      plan = ChunkPlan::single(cfg.n_layers);
    }
    plan.validate(cfg.n_layers);
    return {cfg, plan};
  } catch (const nlohmann::json::exception& e) {
    throw BuildError(std::string("malformed config JSON: ") + e.what());
  }
}

std::filesystem::path chunk_xml_path(const std::filesystem::path& dir, const std::string& chunk_name) {
  return dir / "llm_dir" / (chunk_name + ".xml");
}

std::filesystem::path chunk_bin_path(const std::filesystem::path& dir, const std::string& chunk_name) {
  return dir / "llm_dir" / (chunk_name + ".bin");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void export_model_dir(const ModelConfig& cfg, const ChunkPlan& plan, const std::vector<BuiltChunk>& chunks,
                      const WeightSet* weights, const std::filesystem::path& dir, ExportOptions options) {
  if (!options.structure_only && !weights) throw BuildError("export needs weights unless structure_only is set");
  if (weights) check_weights(cfg, *weights);
  std::error_code ec;
  std::filesystem::create_directories(dir / "llm_dir" / "cache", ec);
  if (ec) throw Error("cannot create " + (dir / "llm_dir" / "cache").string() + ": " + ec.message());

  for (const BuiltChunk& chunk : chunks) {
    write_file_atomic(chunk_xml_path(dir, chunk.name), ir::serialize_model(chunk.graph));
    if (!options.structure_only) write_file_atomic(chunk_bin_path(dir, chunk.name), pack_chunk_blob(chunk, *weights));
  }
  if (!options.structure_only) write_weights_file(dir / "model_weights.bin", *weights);
  write_file_atomic(dir / "config.json", config_to_json(cfg, plan));
}

LoadedModelDir load_model_dir(const std::filesystem::path& dir) {
  LoadedModelDir out;
  std::tie(out.cfg, out.plan) = config_from_json(read_text_file(dir / "config.json"));
  for (const Chunk& chunk : out.plan.chunks) {
    const auto xml_path = chunk_xml_path(dir, chunk.name());
    LoadedChunk loaded;
    loaded.name = chunk.name();
    try {
      loaded.graph = ir::parse_model(read_text_file(xml_path));
    } catch (const IrError& e) {
      throw IrError(xml_path.string() + ": " + e.what(), 0);
    }
    const auto blob = read_binary_file(chunk_bin_path(dir, chunk.name()));
    loaded.weights = ir::load_weights(loaded.graph, blob);
    out.chunks.push_back(std::move(loaded));
  }
  return out;
}

}  // namespace statark::builder
