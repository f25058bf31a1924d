#include "statark/cli/commands.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "statark/builder.hpp"
#include "statark/cli/tokenizer.hpp"
#include "statark/error.hpp"
#include "statark/shapes.hpp"

namespace statark::cli {
namespace fs = std::filesystem;
namespace {

// Seeded weights beyond this are refused unless --structure-only is given.
constexpr int64_t kMaxWeightBytes = int64_t{2} << 30;

std::string describe(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "dim " << cfg.dim << ", layers " << cfg.n_layers << ", heads " << cfg.n_heads << "/" << cfg.n_kv_heads
     << ", ffn " << cfg.ffn_hidden << ", vocab " << cfg.vocab_size << ", m " << cfg.max_seq_len;
  return os.str();
}

std::string join_ids(std::span<const int64_t> ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) out += (i ? " " : "") + std::to_string(ids[i]);
  return out;
}

// Naming convention of one chunk: required Parameter/Result names with their
// shapes, plus the caches it owns (as states or as Parameter/Result pairs).
struct Contract {
  std::map<std::string, Shape> parameters;
  std::map<std::string, Shape> results;
  std::map<std::string, Shape> caches;
};

Contract chunk_contract(const ModelConfig& cfg, const Chunk& chunk) {
  const Shape hidden{1, 1, cfg.dim};
  Contract c;
  switch (chunk.kind) {
    case ChunkKind::Embedding:
      c.parameters["token"] = {1, 1};
      c.results["x"] = hidden;
      break;
    case ChunkKind::Decoder:
      c.parameters["x"] = hidden;
      c.parameters["mask"] = {1, 1, 1, cfg.max_seq_len};
      c.parameters["freqs_cis"] = {1, 1, cfg.head_dim() / 2, 2};
      c.parameters["position"] = {1};
      c.results["x"] = hidden;
      for (int64_t i = chunk.start; i < chunk.end; ++i) {
        const Shape cache{1, cfg.n_kv_heads, cfg.max_seq_len, cfg.head_dim()};
        c.caches["cache_k_" + std::to_string(i)] = cache;
        c.caches["cache_v_" + std::to_string(i)] = cache;
      }
      break;
    case ChunkKind::LMHead:
      c.parameters["x"] = hidden;
      c.results["logits"] = {1, 1, cfg.vocab_size};
      break;
  }
  return c;
}

std::optional<Shape> port_shape(const ir::Node& node) {
  const std::vector<ir::Port>& ports = node.outputs.empty() ? node.inputs : node.outputs;
  if (ports.empty()) return std::nullopt;
  return ir::to_shape(ports.front().dims);
}

void check_naming(const ModelConfig& cfg, const Chunk& chunk, const ir::ModelGraph& graph,
                  std::vector<shapes::Violation>& out) {
  const Contract contract = chunk_contract(cfg, chunk);
  std::set<std::string> seen_params;
  std::set<std::string> seen_results;
  std::set<std::string> cache_reads;
  std::set<std::string> cache_writes;

  auto check_shape = [&](const ir::Node& node, const std::string& what, const Shape& expected) {
    auto shape = port_shape(node);
    if (shape && *shape != expected) {
      out.push_back({node.id, node.name,
                     what + " is " + shape_to_string(*shape) + " but the config implies " + shape_to_string(expected)});
    }
  };

  for (const auto& [id, node] : graph.nodes) {
    switch (node.type) {
      case ir::OpType::Parameter:
      case ir::OpType::Result: {
        const bool is_param = node.type == ir::OpType::Parameter;
        const auto& named = is_param ? contract.parameters : contract.results;
        const std::string kind = is_param ? "parameter" : "result";
        if (auto it = named.find(node.name); it != named.end()) {
          (is_param ? seen_params : seen_results).insert(node.name);
          check_shape(node, kind + " '" + node.name + "'", it->second);
        } else if (auto cache = contract.caches.find(node.name); cache != contract.caches.end()) {
          (is_param ? cache_reads : cache_writes).insert(node.name);
          check_shape(node, "cache '" + node.name + "'", cache->second);
        } else {
          out.push_back({id, node.name, "unexpected " + kind + " name '" + node.name + "' in " + chunk.name()});
        }
        break;
      }
      case ir::OpType::ReadValue:
      case ir::OpType::Assign: {
        const std::string variable = node.attribute("variable_id").value_or("");
        if (variable != node.name) {
          out.push_back({id, node.name, "variable_id '" + variable + "' differs from the node name"});
        }
        auto cache = contract.caches.find(variable);
        if (cache == contract.caches.end()) {
          out.push_back({id, node.name, "state '" + variable + "' is not a cache of " + chunk.name()});
          break;
        }
        (node.type == ir::OpType::ReadValue ? cache_reads : cache_writes).insert(variable);
        check_shape(node, "cache '" + variable + "'", cache->second);
        break;
      }
      default:
        break;
    }
  }
  for (const auto& [name, shape] : contract.parameters) {
    if (!seen_params.count(name)) out.push_back({-1, "", "missing parameter '" + name + "'"});
  }
  for (const auto& [name, shape] : contract.results) {
    if (!seen_results.count(name)) out.push_back({-1, "", "missing result '" + name + "'"});
  }
  for (const auto& [name, shape] : contract.caches) {
    if (!cache_reads.count(name)) out.push_back({-1, "", "missing read of cache '" + name + "'"});
    if (!cache_writes.count(name)) out.push_back({-1, "", "missing write of cache '" + name + "'"});
  }
}

std::vector<int64_t> parse_int_list(const std::string& text, const char* what) {
  try {
    return parse_id_list(text);
  } catch (const Error&) {
    throw Error(std::string("malformed ") + what + " '" + text + "'");
  }
}

struct BenchModel {
  ModelConfig cfg;
  ChunkPlan plan;
  WeightSet weights;
};

BenchModel bench_model(const BenchOptions& opts) {
  BenchModel model;
  if (fs::is_directory(opts.target)) {
    std::tie(model.cfg, model.plan) = builder::config_from_json(builder::read_text_file(fs::path(opts.target) / "config.json"));
    model.weights = import_weights(model.cfg, fs::path(opts.target) / "model_weights.bin");
  } else {
    auto preset = builder::preset_config(opts.target);
    if (!preset) throw Error("'" + opts.target + "' is neither a model directory nor a preset");
    model.cfg = *preset;
    model.plan = ChunkPlan::single(model.cfg.n_layers);
    if (parameter_count(model.cfg) * 4 > kMaxWeightBytes) {
      throw Error("preset '" + opts.target + "' is too large to benchmark with in-memory weights");
    }
    model.weights = init_weights_seeded(model.cfg, opts.seed);
  }
  return model;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

int64_t greedy_token(const Tensor& logits) {
  const auto data = logits.data();
  return std::max_element(data.begin(), data.end()) - data.begin();
}

}  // namespace

std::vector<int64_t> parse_id_list(const std::string& text) {
  std::vector<int64_t> ids;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    size_t used = 0;
    int64_t value = 0;
    try {
      value = std::stoll(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) throw Error("malformed id '" + token + "'");
    ids.push_back(value);
    token.clear();
  };
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t') {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return ids;
}

int cmd_build(const BuildOptions& opts, std::ostream& out) {
  if (opts.out.empty()) throw Error("--out is required");
  if (opts.config_path.empty() == opts.preset.empty()) throw Error("give exactly one of --config or --preset");
  if (opts.seed && !opts.import_path.empty()) throw Error("--seed and --import cannot be combined");

  ModelConfig cfg;
  ChunkPlan plan;
  if (!opts.preset.empty()) {
    auto preset = builder::preset_config(opts.preset);
    if (!preset) {
      std::string known;
      for (const auto& name : builder::preset_names()) known += " " + name;
      throw Error("unknown preset '" + opts.preset + "'; known:" + known);
    }
    cfg = *preset;
    plan = ChunkPlan::single(cfg.n_layers);
  } else {
    std::tie(cfg, plan) = builder::config_from_json(builder::read_text_file(opts.config_path));
  }
  if (opts.max_seq_len) cfg.max_seq_len = *opts.max_seq_len;
  cfg.validate();
  if (!opts.chunks.empty()) plan = ChunkPlan::from_layer_counts(cfg.n_layers, parse_int_list(opts.chunks, "--chunks"));
  plan.validate(cfg.n_layers);

  std::optional<WeightSet> weights;
  std::string weight_note;
  if (opts.structure_only) {
    weight_note = "skipped (structure only)";
  } else if (!opts.import_path.empty()) {
    weights = import_weights(cfg, opts.import_path);
    weight_note = "imported from " + opts.import_path.string();
  } else {
    const int64_t bytes = parameter_count(cfg) * 4;
    if (bytes > kMaxWeightBytes) {
      throw Error("seeded weights for this config need " + std::to_string(bytes >> 20) +
                  " MiB; pass --structure-only to write the graphs alone");
    }
    weights = init_weights_seeded(cfg, opts.seed.value_or(0));
    weight_note = "seeded (seed " + std::to_string(opts.seed.value_or(0)) + ")";
  }

  std::vector<builder::BuiltChunk> chunks = builder::build_chunks(cfg, plan);
  for (auto& chunk : chunks) chunk.graph = builder::make_stateful(chunk.graph);
  builder::export_model_dir(cfg, plan, chunks, weights ? &*weights : nullptr, opts.out,
                            builder::ExportOptions{opts.structure_only});

  out << "config: " << describe(cfg) << "\n";
  out << "weights: " << weight_note << ", " << parameter_count(cfg) << " parameters\n";
  for (const auto& chunk : chunks) {
    out << "chunk " << std::left << std::setw(16) << chunk.name << " nodes " << std::setw(5) << chunk.graph.nodes.size()
        << " states " << chunk.graph.nodes_of_type(ir::OpType::ReadValue).size() << "\n";
  }
  out << chunks.size() << " IR models written to " << (opts.out / "llm_dir").string() << "\n";
  return 0;
}

int cmd_validate(const fs::path& model_dir, std::ostream& out) {
  auto [cfg, plan] = builder::config_from_json(builder::read_text_file(model_dir / "config.json"));
  cfg.validate();
  plan.validate(cfg.n_layers);

  size_t total = 0;
  for (const Chunk& chunk : plan.chunks) {
    const fs::path xml_path = builder::chunk_xml_path(model_dir, chunk.name());
    std::vector<shapes::Violation> problems;
    std::optional<ir::ModelGraph> graph;
    try {
      graph = ir::parse_model(builder::read_text_file(xml_path));
    } catch (const Error& e) {
      problems.push_back({-1, "", e.what()});
    }
    if (graph) {
      shapes::ShapeReport report = shapes::propagate_shapes(*graph);
      problems.insert(problems.end(), report.violations.begin(), report.violations.end());
      check_naming(cfg, chunk, *graph, problems);
      const fs::path bin_path = builder::chunk_bin_path(model_dir, chunk.name());
      if (fs::exists(bin_path)) {
        try {
          ir::load_weights(*graph, read_binary_file(bin_path));
        } catch (const Error& e) {
          problems.push_back({-1, "", std::string("weights: ") + e.what()});
        }
      }
    }
    const std::string label = (fs::path("llm_dir") / xml_path.filename()).string();
    if (problems.empty()) {
      out << label << ": ok, " << graph->nodes.size() << " nodes, all shapes static\n";
      continue;
    }
    out << label << ": " << problems.size() << " violation" << (problems.size() == 1 ? "" : "s") << "\n";
    for (const auto& v : problems) out << v.render() << "\n";
    total += problems.size();
  }
  if (total) {
    out << "invalid: " << total << " violation" << (total == 1 ? "" : "s") << "\n";
    return 1;
  }
  out << "valid: " << plan.chunks.size() << " chunks\n";
  return 0;
}

pipeline::SamplingParams SamplingFlags::resolve() const {
  if (greedy && (temperature || top_k)) throw Error("--greedy cannot be combined with --temp or --top-k");
  if (top_k) return pipeline::SamplingParams::top_k(*top_k, temperature.value_or(1.0), seed);
  if (temperature) return pipeline::SamplingParams::with_temperature(*temperature, seed);
  return pipeline::SamplingParams::greedy();
}

int cmd_generate(const GenerateOptions& opts, std::ostream& out) {
  if (opts.prompt.has_value() == opts.prompt_ids.has_value()) throw Error("give exactly one of --prompt or --prompt-ids");
  if (opts.max_new < 0) throw Error("--max-new must be >= 0");
  const pipeline::SamplingParams params = opts.sampling.resolve();
  const std::vector<int64_t> stops = parse_int_list(opts.stop_ids, "--stop");

  auto session = pipeline::GenSession::from_model_dir(opts.model_dir);
  const int64_t vocab = session.config().vocab_size;
  std::vector<int64_t> prompt;
  if (opts.prompt) {
    prompt = ByteTokenizer(vocab).encode(*opts.prompt);
  } else {
    prompt = parse_int_list(*opts.prompt_ids, "--prompt-ids");
  }
  for (int64_t id : prompt) {
    if (id < 0 || id >= vocab) throw Error("prompt id " + std::to_string(id) + " outside the vocabulary of " + std::to_string(vocab));
  }
  if (prompt.empty()) throw Error("the prompt is empty");
  spdlog::info("generating up to {} tokens after a {}-token prompt", opts.max_new, prompt.size());

  const std::vector<int64_t> generated = session.generate(prompt, opts.max_new, params, stops);
  out << "prompt_ids: " << join_ids(prompt) << "\n";
  out << "generated_ids:" << (generated.empty() ? "" : " ") << join_ids(generated) << "\n";
  if (vocab >= 256) out << "text: " << printable(ByteTokenizer(vocab).decode(generated)) << "\n";
  return 0;
}

int cmd_chat(const ChatOptions& opts, std::istream& in, std::ostream& out) {
  const pipeline::SamplingParams params = opts.sampling.resolve();
  auto session = pipeline::GenSession::from_model_dir(opts.model_dir);
  const ModelConfig& cfg = session.config();
  const ByteTokenizer tokenizer(cfg.vocab_size);
  const pipeline::ChatTemplate chat_template = opts.template_path.empty()
                                                   ? default_chat_template(cfg.vocab_size)
                                                   : pipeline::ChatTemplate::from_json(builder::read_text_file(opts.template_path));

  std::vector<pipeline::ChatMessage> history;
  // A reply needs at least one free slot after the rendered conversation.
  auto fits = [&](const std::vector<pipeline::ChatMessage>& messages) {
    return static_cast<int64_t>(pipeline::render_chat(messages, chat_template).size()) < cfg.max_seq_len;
  };

  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "/quit") break;
    if (line == "/reset") {
      history.clear();
      session.reset();
      out << "[conversation reset]\n";
      continue;
    }

    std::vector<pipeline::ChatMessage> conversation = history;
    conversation.push_back({pipeline::Role::User, tokenizer.encode(line)});
    if (!fits(conversation)) {
      out << "warning: conversation exceeds the " << cfg.max_seq_len << "-token context; starting over\n";
      history.clear();
      session.reset();
      conversation = {{pipeline::Role::User, tokenizer.encode(line)}};
      if (!fits(conversation)) {
        out << "warning: message alone does not fit the context; ignored\n";
        continue;
      }
    }

    out << "assistant: " << std::flush;
    const auto reply = session.chat_generate(conversation, chat_template, params, opts.max_new, [&](int64_t id) {
      const int64_t one[] = {id};
      out << printable(tokenizer.decode(one)) << std::flush;
    });
    out << "\n";
    conversation.push_back({pipeline::Role::Assistant, reply});
    history = std::move(conversation);
  }
  return 0;
}

std::vector<BenchRecord> run_bench(const BenchOptions& opts) {
  if (opts.tokens < 32) throw Error("--tokens must be at least 32");
  if (opts.runs < 1) throw Error("--runs must be at least 1");
  if (opts.prompt_len < 1) throw Error("--prompt-len must be at least 1");
  const std::vector<int64_t> lengths = parse_int_list(opts.max_seq_lens, "--max-seq-lens");
  if (lengths.empty()) throw Error("--max-seq-lens is empty");

  BenchModel model = bench_model(opts);
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };

  std::vector<BenchRecord> records;
  for (int64_t m : lengths) {
    const int64_t needed = opts.prompt_len + opts.warmup + opts.tokens;
    if (m < needed) {
      throw Error("m = " + std::to_string(m) + " is too small for " + std::to_string(opts.prompt_len) +
                  " prompt tokens, " + std::to_string(opts.warmup) + " warmup steps and " +
                  std::to_string(opts.tokens) + " timed steps");
    }
    ModelConfig cfg = model.cfg;
    cfg.max_seq_len = m;
    auto session = pipeline::GenSession::from_weights(cfg, model.plan, model.weights);
    std::vector<int64_t> prompt(static_cast<size_t>(opts.prompt_len));
    for (size_t i = 0; i < prompt.size(); ++i) prompt[i] = static_cast<int64_t>(i * 7 + 1) % cfg.vocab_size;

    std::vector<double> prefill;
    std::vector<double> decode;
    for (int64_t run = 0; run < opts.runs; ++run) {
      session.reset();
      auto start = Clock::now();
      Tensor logits = session.prefill(prompt);
      prefill.push_back(ms_since(start) / static_cast<double>(opts.prompt_len));
      for (int64_t i = 0; i < opts.warmup; ++i) logits = session.step(greedy_token(logits));
      start = Clock::now();
      for (int64_t i = 0; i < opts.tokens; ++i) logits = session.step(greedy_token(logits));
      decode.push_back(ms_since(start) / static_cast<double>(opts.tokens));
    }
    BenchRecord record{m, opts.device_label, median(prefill), median(decode), opts.tokens};
    spdlog::info("m={} prefill {:.4f} ms/tok decode {:.4f} ms/tok", m, record.prefill_ms_per_tok,
                 record.decode_ms_per_tok);
    records.push_back(std::move(record));
  }
  return records;
}

std::string bench_csv(std::span<const BenchRecord> records) {
  std::ostringstream os;
  os << "m,device_label,prefill_ms_per_tok,decode_ms_per_tok,n_tokens\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& r : records) {
    os << r.max_seq_len << "," << r.device_label << "," << r.prefill_ms_per_tok << "," << r.decode_ms_per_tok << ","
       << r.n_tokens << "\n";
  }
  return os.str();
}

int cmd_bench(const BenchOptions& opts, std::ostream& out) {
  if (opts.device_label.find_first_of(",\n") != std::string::npos) throw Error("--device-label may not contain commas");
  const std::string csv = bench_csv(run_bench(opts));
  if (opts.csv_path.empty()) {
    out << csv;
  } else {
    write_file_atomic(opts.csv_path, csv);
    out << "wrote " << opts.csv_path.string() << "\n";
  }
  return 0;
}

}  // namespace statark::cli
