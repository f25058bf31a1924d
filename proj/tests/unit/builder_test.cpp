#include <gtest/gtest.h>

#include <set>

#include "statark/builder.hpp"
#include "statark/error.hpp"
#include "statark/shapes.hpp"
#include "support.hpp"

namespace builder = statark::builder;
namespace ir = statark::ir;
namespace fs = std::filesystem;
using ir::OpType;
using statark::ChunkPlan;
using statark::ModelConfig;

namespace {

std::set<std::string> names_of(const ir::ModelGraph& g, OpType op) {
  std::set<std::string> out;
  for (const ir::Node* n : g.nodes_of_type(op)) out.insert(n->name);
  return out;
}

std::vector<std::string> chunk_names(const std::vector<builder::BuiltChunk>& chunks) {
  std::vector<std::string> out;
  for (const auto& c : chunks) out.push_back(c.name);
  return out;
}

// Closed form, one term per tensor family.
int64_t hand_parameter_count(const ModelConfig& c) {
  const int64_t hd = c.dim / c.n_heads;
  const int64_t per_layer = 2 * c.dim                       // two norms
                            + c.n_heads * hd * c.dim * 2    // wq, wo
                            + c.n_kv_heads * hd * c.dim * 2 // wk, wv
                            + 3 * c.ffn_hidden * c.dim;     // w1, w2, w3
  return c.vocab_size * c.dim * 2 + c.dim + c.n_layers * per_layer;
}

}  // namespace

TEST(Chunks, EightBShapeWithTwoDecoderChunksGivesFourModels) {
  const ModelConfig cfg = *builder::preset_config("llama3-8b-shape");
  ASSERT_EQ(cfg.n_layers, 32);
  const auto chunks = builder::build_chunks(cfg, ChunkPlan::from_layer_counts(32, {16, 16}));
  EXPECT_EQ(chunk_names(chunks), (std::vector<std::string>{"embedding", "decoder_0_16", "decoder_16_32", "lm_head"}));
}

TEST(Chunks, OneBShapeSingleDecoderChunkGivesThreeModels) {
  const ModelConfig cfg = *builder::preset_config("llama3.2-1b-shape");
  ASSERT_EQ(cfg.n_layers, 16);
  const auto chunks = builder::build_chunks(cfg, ChunkPlan::single(16));
  EXPECT_EQ(chunk_names(chunks), (std::vector<std::string>{"embedding", "decoder_0_16", "lm_head"}));
}

TEST(Chunks, ThreeBShapeTwoChunksOfFourteen) {
  const ModelConfig cfg = *builder::preset_config("llama3.2-3b-shape");
  ASSERT_EQ(cfg.n_layers, 28);
  const auto chunks = builder::build_chunks(cfg, ChunkPlan::from_layer_counts(28, {14, 14}));
  EXPECT_EQ(chunk_names(chunks), (std::vector<std::string>{"embedding", "decoder_0_14", "decoder_14_28", "lm_head"}));
}

TEST(Chunks, EveryPresetBuildsStaticGraphs) {
  for (const auto& name : builder::preset_names()) {
    const ModelConfig cfg = *builder::preset_config(name);
    for (const auto& chunk : builder::build_chunks(cfg, ChunkPlan::single(cfg.n_layers))) {
      const auto report = statark::shapes::propagate_shapes(chunk.graph);
      EXPECT_TRUE(report.static_valid()) << name << "/" << chunk.name << "\n" << report.render();
    }
    const auto mono = builder::build_monolithic(cfg);
    EXPECT_TRUE(statark::shapes::propagate_shapes(mono.graph).static_valid()) << name;
  }
}

TEST(Chunks, ToyGraphsFullyStatic) {
  const ModelConfig cfg{8, 2, 2, 1, 11, 16, 1e-5, 10000.0, 4};
  for (const auto& chunk : builder::build_chunks(cfg, ChunkPlan::single(2))) {
    for (const auto& [id, node] : chunk.graph.nodes) {
      for (const auto& p : node.outputs) EXPECT_TRUE(ir::to_shape(p.dims).has_value()) << chunk.name << " node " << id;
    }
    EXPECT_TRUE(statark::shapes::propagate_shapes(chunk.graph).static_valid());
  }
}

TEST(Naming, DecoderChunkInterface) {
  const ModelConfig cfg = statark::test::toy_b(16);
  const auto chunks = builder::build_chunks(cfg, ChunkPlan::from_layer_counts(3, {1, 2}));
  const ir::ModelGraph& g = chunks.at(2).graph;
  ASSERT_EQ(chunks.at(2).name, "decoder_1_3");
  const std::set<std::string> caches{"cache_k_1", "cache_v_1", "cache_k_2", "cache_v_2"};
  std::set<std::string> params{"x", "mask", "freqs_cis", "position"};
  params.insert(caches.begin(), caches.end());
  std::set<std::string> results{"x"};
  results.insert(caches.begin(), caches.end());
  EXPECT_EQ(names_of(g, OpType::Parameter), params);
  EXPECT_EQ(names_of(g, OpType::Result), results);

  auto out_shape = [&](const char* name) { return *ir::to_shape(g.find_named(OpType::Parameter, name)->outputs[0].dims); };
  EXPECT_EQ(out_shape("x"), (statark::Shape{1, 1, 16}));
  EXPECT_EQ(out_shape("mask"), (statark::Shape{1, 1, 1, 16}));
  EXPECT_EQ(out_shape("freqs_cis"), (statark::Shape{1, 1, 2, 2}));
  EXPECT_EQ(out_shape("position"), (statark::Shape{1}));
  EXPECT_EQ(out_shape("cache_k_2"), (statark::Shape{1, 2, 16, 4}));
}

TEST(Naming, EmbeddingAndHead) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto chunks = builder::build_chunks(cfg, ChunkPlan::single(2));
  const auto& emb = chunks.front().graph;
  const auto& head = chunks.back().graph;
  EXPECT_EQ(names_of(emb, OpType::Parameter), std::set<std::string>{"token"});
  EXPECT_EQ(names_of(emb, OpType::Result), std::set<std::string>{"x"});
  EXPECT_EQ(*ir::to_shape(emb.find_named(OpType::Parameter, "token")->outputs[0].dims), (statark::Shape{1, 1}));
  EXPECT_EQ(names_of(head, OpType::Parameter), std::set<std::string>{"x"});
  EXPECT_EQ(names_of(head, OpType::Result), std::set<std::string>{"logits"});
  EXPECT_EQ(*ir::to_shape(head.find_named(OpType::Result, "logits")->inputs[0].dims), (statark::Shape{1, 1, 11}));
}

TEST(Plan, Validation) {
  EXPECT_THROW(ChunkPlan::from_layer_counts(4, {2, 1}), statark::BuildError);
  EXPECT_THROW(ChunkPlan::from_layer_counts(4, {4, 0}), statark::BuildError);
  ChunkPlan plan = ChunkPlan::single(4);
  std::swap(plan.chunks.front(), plan.chunks.back());
  EXPECT_THROW(plan.validate(4), statark::BuildError);
  ChunkPlan gap = ChunkPlan::from_layer_counts(4, {2, 2});
  gap.chunks[2].start = 3;
  EXPECT_THROW(gap.validate(4), statark::BuildError);
}

TEST(Config, Validation) {
  ModelConfig ok = statark::test::toy_a();
  EXPECT_NO_THROW(ok.validate());
  ModelConfig c = ok;
  c.dim = 9;
  EXPECT_THROW(c.validate(), statark::BuildError);
  c = ok;
  c.n_kv_heads = 3;
  EXPECT_THROW(c.validate(), statark::BuildError);
  c = ok;
  c.dim = 6;
  c.n_heads = 2;
  EXPECT_THROW(c.validate(), statark::BuildError);  // head_dim 3 is odd
  c = ok;
  c.max_seq_len = 0;
  EXPECT_THROW(c.validate(), statark::BuildError);
}

TEST(Config, JsonRoundTrip) {
  const ModelConfig cfg = statark::test::toy_b(32);
  const ChunkPlan plan = ChunkPlan::from_layer_counts(3, {2, 1});
  const auto [cfg2, plan2] = builder::config_from_json(builder::config_to_json(cfg, plan));
  EXPECT_EQ(cfg2, cfg);
  EXPECT_EQ(plan2, plan);
  const auto [cfg3, plan3] = builder::config_from_json(
      R"({"dim":8,"n_layers":2,"n_heads":2,"n_kv_heads":1,"vocab_size":11,"ffn_hidden":16,"max_seq_len":4})");
  EXPECT_EQ(plan3, ChunkPlan::single(2));
  EXPECT_EQ(cfg3.rope_theta, 10000.0);
  EXPECT_THROW(builder::config_from_json("{\"dim\": 8"), statark::Error);
}

TEST(Stateful, TwoLayerChunkAudit) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto decoder = builder::build_chunks(cfg, ChunkPlan::single(2)).at(1).graph;
  const ir::ModelGraph stateful = builder::make_stateful(decoder);
  const auto count = [](const ir::ModelGraph& g, OpType op) { return g.nodes_of_type(op).size(); };
  EXPECT_EQ(count(decoder, OpType::Parameter) - count(stateful, OpType::Parameter), 4u);
  EXPECT_EQ(count(decoder, OpType::Result) - count(stateful, OpType::Result), 4u);
  EXPECT_EQ(count(stateful, OpType::ReadValue), 4u);
  EXPECT_EQ(count(stateful, OpType::Assign), 4u);
  EXPECT_EQ(stateful.nodes.size(), decoder.nodes.size());
  EXPECT_EQ(stateful.edges, decoder.edges);
  for (const ir::Node* n : stateful.nodes_of_type(OpType::ReadValue)) EXPECT_EQ(n->attribute("variable_id"), n->name);
  EXPECT_EQ(names_of(stateful, OpType::Parameter), (std::set<std::string>{"x", "mask", "freqs_cis", "position"}));
  EXPECT_EQ(names_of(stateful, OpType::Result), std::set<std::string>{"x"});
}

TEST(Stateful, NoCachesUnchanged) {
  const auto emb = builder::build_chunks(statark::test::toy_a(), ChunkPlan::single(2)).front().graph;
  EXPECT_EQ(builder::make_stateful(emb), emb);
}

TEST(Stateful, UnmatchedOrMismatchedPairRejected) {
  auto decoder = builder::build_chunks(statark::test::toy_a(), ChunkPlan::single(2)).at(1).graph;
  auto missing = decoder;
  for (auto& [id, node] : missing.nodes) {
    if (node.type == OpType::Result && node.name == "cache_k_0") node.name = "renamed";
  }
  EXPECT_THROW(builder::make_stateful(missing), statark::BuildError);
  auto mismatched = decoder;
  for (auto& [id, node] : mismatched.nodes) {
    if (node.type == OpType::Parameter && node.name == "cache_v_1") node.outputs[0].dims.back() = ir::Dim(99);
  }
  EXPECT_THROW(builder::make_stateful(mismatched), statark::BuildError);
}

TEST(Weights, SeededIsDeterministic) {
  const ModelConfig cfg = statark::test::toy_b();
  EXPECT_EQ(statark::serialize_weights(statark::init_weights_seeded(cfg, 5)),
            statark::serialize_weights(statark::init_weights_seeded(cfg, 5)));
  EXPECT_NE(statark::serialize_weights(statark::init_weights_seeded(cfg, 5)),
            statark::serialize_weights(statark::init_weights_seeded(cfg, 6)));
}

TEST(Weights, ParameterCountMatchesClosedForm) {
  const ModelConfig a = statark::test::toy_a();
  EXPECT_EQ(hand_parameter_count(a), 1368);
  EXPECT_EQ(statark::parameter_count(a), 1368);
  for (const auto& name : builder::preset_names()) {
    const ModelConfig cfg = *builder::preset_config(name);
    EXPECT_EQ(statark::parameter_count(cfg), hand_parameter_count(cfg)) << name;
  }
  EXPECT_EQ(statark::parameter_count(*builder::preset_config("llama3-8b-shape")), 8030261248);
}

TEST(Weights, BlobSizeIsFourBytesPerParameter) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto weights = statark::init_weights_seeded(cfg, 42);
  int64_t floats = 0;
  for (const auto& [name, t] : weights.tensors()) floats += t.size();
  EXPECT_EQ(4 * floats, 4 * hand_parameter_count(cfg));
  int64_t blob_weight_bytes = 0;
  for (const auto& chunk : builder::build_chunks(cfg, ChunkPlan::single(2))) {
    const auto blob = builder::pack_chunk_blob(chunk, weights);
    int64_t total = 0;
    for (const auto& e : chunk.manifest) {
      total += static_cast<int64_t>(e.size);
      if (!e.weight_name.empty()) blob_weight_bytes += static_cast<int64_t>(e.size);
    }
    EXPECT_EQ(static_cast<int64_t>(blob.size()), total);
  }
  EXPECT_EQ(blob_weight_bytes, 4 * hand_parameter_count(cfg));
}

TEST(Weights, ImportRejectsTransposedProjection) {
  statark::test::TempDir dir;
  const ModelConfig cfg = statark::test::toy_b();
  const auto good = statark::init_weights_seeded(cfg, 1);
  statark::WeightSet bad;
  for (const auto& [name, t] : good.tensors()) {
    if (name == "layers.1.attention.wk.weight") {
      bad.insert(name, statark::Tensor({t.shape()[1], t.shape()[0]}));
    } else {
      bad.insert(name, t);
    }
  }
  statark::write_weights_file(dir.path() / "w.bin", bad);
  try {
    statark::import_weights(cfg, dir.path() / "w.bin");
    FAIL() << "expected BuildError";
  } catch (const statark::BuildError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.1.attention.wk.weight"), std::string::npos) << e.what();
  }
  statark::write_weights_file(dir.path() / "ok.bin", good);
  EXPECT_EQ(statark::import_weights(cfg, dir.path() / "ok.bin"), good);
}

TEST(Weights, ImportRejectsMissingTensor) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto full = statark::init_weights_seeded(cfg, 1);
  statark::WeightSet partial;
  for (const auto& [name, t] : full.tensors()) {
    if (name != "norm.weight") partial.insert(name, t);
  }
  EXPECT_THROW(statark::check_weights(cfg, partial), statark::BuildError);
}

TEST(Weights, ContainerLayoutAndCorruption) {
  statark::WeightSet w;
  w.insert("a", statark::Tensor({2}, {1.0f, -1.0f}));
  const auto bytes = statark::serialize_weights(w);
  // magic, version, count, name length, "a", rank, one u64 dim, two floats
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 8);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(bytes.data()), 4), "STWT");
  EXPECT_EQ(statark::parse_weights(bytes), w);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(statark::parse_weights(truncated), statark::Error);
  auto bad_magic = bytes;
  bad_magic[0] = std::byte{'X'};
  EXPECT_THROW(statark::parse_weights(bad_magic), statark::Error);
}

TEST(Export, StructureOnlyEightBLayout) {
  statark::test::TempDir dir;
  const ModelConfig cfg = *builder::preset_config("llama3-8b-shape");
  const auto plan = ChunkPlan::from_layer_counts(32, {16, 16});
  builder::export_model_dir(cfg, plan, builder::build_chunks(cfg, plan), nullptr, dir.path(), {true});
  int xml = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "llm_dir")) xml += e.path().extension() == ".xml";
  EXPECT_EQ(xml, 4);
  EXPECT_TRUE(fs::is_directory(dir.path() / "llm_dir" / "cache"));
  EXPECT_TRUE(fs::exists(dir.path() / "config.json"));
  EXPECT_FALSE(fs::exists(dir.path() / "model_weights.bin"));
}

TEST(Export, ToyLayoutAndIdempotentReexport) {
  statark::test::TempDir dir;
  const ModelConfig cfg = statark::test::toy_a();
  const auto plan = ChunkPlan::from_layer_counts(2, {1, 1});
  const auto weights = statark::init_weights_seeded(cfg, 9);
  auto chunks = builder::build_chunks(cfg, plan);
  for (auto& c : chunks) c.graph = builder::make_stateful(c.graph);
  builder::export_model_dir(cfg, plan, chunks, &weights, dir.path());

  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir.path())) files.insert(fs::relative(e.path(), dir.path()).string());
  const std::set<std::string> expected{"config.json", "model_weights.bin", "llm_dir", "llm_dir/cache",
                                       "llm_dir/embedding.xml", "llm_dir/embedding.bin", "llm_dir/decoder_0_1.xml",
                                       "llm_dir/decoder_0_1.bin", "llm_dir/decoder_1_2.xml", "llm_dir/decoder_1_2.bin",
                                       "llm_dir/lm_head.xml", "llm_dir/lm_head.bin"};
  EXPECT_EQ(files, expected);
  EXPECT_TRUE(fs::is_empty(dir.path() / "llm_dir" / "cache"));

  auto snapshot = [&] {
    std::map<std::string, std::vector<std::byte>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir.path())) {
      if (e.is_regular_file()) out[fs::relative(e.path(), dir.path()).string()] = statark::read_binary_file(e.path());
    }
    return out;
  };
  const auto first = snapshot();
  builder::export_model_dir(cfg, plan, chunks, &weights, dir.path());
  EXPECT_EQ(snapshot(), first);

  const auto loaded = builder::load_model_dir(dir.path());
  EXPECT_EQ(loaded.cfg, cfg);
  EXPECT_EQ(loaded.plan, plan);
  ASSERT_EQ(loaded.chunks.size(), 4u);
  for (size_t i = 0; i < chunks.size(); ++i) EXPECT_EQ(loaded.chunks[i].graph, chunks[i].graph);
  EXPECT_EQ(statark::read_weights_file(dir.path() / "model_weights.bin"), weights);
}

TEST(Export, UnwritableTargetReportsPath) {
  statark::test::TempDir dir;
  const fs::path blocker = dir.path() / "file";
  statark::write_file_atomic(blocker, std::string("x"));
  const ModelConfig cfg = statark::test::toy_a();
  const auto plan = ChunkPlan::single(2);
  try {
    builder::export_model_dir(cfg, plan, builder::build_chunks(cfg, plan), nullptr, blocker / "out", {true});
    FAIL() << "expected an error";
  } catch (const statark::Error& e) {
    EXPECT_NE(std::string(e.what()).find(blocker.string()), std::string::npos) << e.what();
  }
}
