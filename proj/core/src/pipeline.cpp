#include "statark/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "statark/builder.hpp"
#include "statark/error.hpp"

namespace statark::pipeline {
namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Index drawn from softmax(logits[candidates] / t).
int64_t draw(std::span<const float> logits, std::span<const int64_t> candidates, double temperature,
             std::mt19937_64& rng) {
  double peak = -std::numeric_limits<double>::infinity();
  for (int64_t i : candidates) peak = std::max(peak, static_cast<double>(logits[static_cast<size_t>(i)]));
  std::vector<double> weights;
  weights.reserve(candidates.size());
  double total = 0.0;
  for (int64_t i : candidates) {
    weights.push_back(std::exp((logits[static_cast<size_t>(i)] - peak) / temperature));
    total += weights.back();
  }
  const double u = unit_draw(rng) * total;
  double cumulative = 0.0;
  for (size_t j = 0; j < candidates.size(); ++j) {
    cumulative += weights[j];
    if (u < cumulative) return candidates[j];
  }
  return candidates.back();
}

std::vector<int64_t> int_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<int64_t>>();
}

void check_chain(const ModelConfig& cfg, const std::vector<ChunkModel>& chunks) {
  if (chunks.size() < 3 || chunks.front().kind != ChunkKind::Embedding || chunks.back().kind != ChunkKind::LMHead) {
    throw PipelineError("chunk chain must run embedding, decoder chunk(s), LM head");
  }
  const std::vector<std::string> decoder_inputs{"freqs_cis", "mask", "position", "x"};
  for (const ChunkModel& c : chunks) {
    const auto params = c.model.parameter_names();
    switch (c.kind) {
      case ChunkKind::Embedding:
        if (params != std::vector<std::string>{"token"}) throw PipelineError(c.name + ": expected input 'token'");
        break;
      case ChunkKind::Decoder:
        if (params != decoder_inputs) {
          throw PipelineError(c.name + ": expected inputs {x, mask, freqs_cis, position}; caches must be states");
        }
        if (c.model.parameter_shape("mask") != Shape{1, 1, 1, cfg.max_seq_len}) {
          throw PipelineError(c.name + ": mask length disagrees with max_seq_len");
        }
        break;
      case ChunkKind::LMHead:
        if (params != std::vector<std::string>{"x"}) throw PipelineError(c.name + ": expected input 'x'");
        break;
    }
  }
}

}  // namespace

Tensor FreqTable::row(int64_t position) const {
  const int64_t half = table.dim(1);
  if (position < 0 || position >= table.dim(0)) {
    throw PipelineError("rotary position " + std::to_string(position) + " outside the table");
  }
  Tensor out({1, 1, half, 2});
  const auto src = table.data().subspan(static_cast<size_t>(position * half * 2), static_cast<size_t>(half * 2));
  std::copy(src.begin(), src.end(), out.data().begin());
  return out;
}

FreqTable precompute_freqs_cis(int64_t head_dim, int64_t max_seq_len, double rope_theta) {
  if (head_dim < 2 || head_dim % 2 != 0) throw PipelineError("head_dim must be even, got " + std::to_string(head_dim));
  if (max_seq_len < 1) throw PipelineError("max_seq_len must be >= 1");
  const int64_t half = head_dim / 2;
  FreqTable freqs{Tensor({max_seq_len, half, 2})};
  for (int64_t p = 0; p < max_seq_len; ++p) {
    for (int64_t i = 0; i < half; ++i) {
      const double rate = std::pow(rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(p) * rate;
      freqs.table[(p * half + i) * 2] = static_cast<float>(std::cos(angle));
      freqs.table[(p * half + i) * 2 + 1] = static_cast<float>(std::sin(angle));
    }
  }
  return freqs;
}

Tensor build_mask(int64_t n_visible, int64_t m) {
  if (m < 1 || n_visible < 1 || n_visible > m) {
    throw PipelineError("mask needs 1 <= n_visible <= m, got n_visible=" + std::to_string(n_visible) +
                        " m=" + std::to_string(m));
  }
  Tensor mask = Tensor::filled({1, 1, 1, m}, kNegInf);
  std::fill_n(mask.data().begin(), n_visible, 0.0f);
  return mask;
}

uint64_t SamplingParams::seed() const {
  if (const auto* t = std::get_if<Temperature>(&mode)) return t->seed;
  if (const auto* k = std::get_if<TopK>(&mode)) return k->seed;
  return 0;
}

void SamplingParams::validate(int64_t vocab_size) const {
  if (const auto* t = std::get_if<Temperature>(&mode); t && !(t->temperature > 0.0)) {
    throw PipelineError("temperature must be positive");
  }
  if (const auto* k = std::get_if<TopK>(&mode)) {
    if (!(k->temperature > 0.0)) throw PipelineError("temperature must be positive");
    if (k->k < 1 || k->k > vocab_size) throw PipelineError("top-k must lie in [1, vocab_size]");
  }
}

int64_t sample(std::span<const float> logits, const SamplingParams& params, std::mt19937_64& rng) {
  if (logits.empty()) throw PipelineError("cannot sample from empty logits");
  for (float v : logits) {
    if (!std::isfinite(v)) throw PipelineError("cannot sample from non-finite logits");
  }
  params.validate(static_cast<int64_t>(logits.size()));
  if (std::holds_alternative<Greedy>(params.mode)) {
    return std::distance(logits.begin(), std::max_element(logits.begin(), logits.end()));
  }
  std::vector<int64_t> candidates(logits.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  if (const auto* t = std::get_if<Temperature>(&params.mode)) return draw(logits, candidates, t->temperature, rng);

  const auto& top = std::get<TopK>(params.mode);
  std::stable_sort(candidates.begin(), candidates.end(), [&](int64_t a, int64_t b) {
    return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
  });
  candidates.resize(static_cast<size_t>(top.k));
  return draw(logits, candidates, top.temperature, rng);
}

ChatTemplate ChatTemplate::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ChatTemplate t;
    t.system_prefix = int_list(j, "system_prefix");
    t.user_prefix = int_list(j, "user_prefix");
    t.assistant_prefix = int_list(j, "assistant_prefix");
    t.turn_suffix = int_list(j, "turn_suffix");
    t.stop = int_list(j, "stop");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(std::string("malformed chat template: ") + e.what());
  }
}

std::string ChatTemplate::to_json() const {
  nlohmann::ordered_json j;
  j["system_prefix"] = system_prefix;
  j["user_prefix"] = user_prefix;
  j["assistant_prefix"] = assistant_prefix;
  j["turn_suffix"] = turn_suffix;
  j["stop"] = stop;
  return j.dump(2) + "\n";
}

std::vector<int64_t> render_chat(std::span<const ChatMessage> messages, const ChatTemplate& chat_template) {
  std::vector<int64_t> out;
  auto append = [&out](const std::vector<int64_t>& ids) { out.insert(out.end(), ids.begin(), ids.end()); };
  for (const ChatMessage& msg : messages) {
    switch (msg.role) {
      case Role::System: append(chat_template.system_prefix); break;
      case Role::User: append(chat_template.user_prefix); break;
      case Role::Assistant: append(chat_template.assistant_prefix); break;
    }
    append(msg.tokens);
    append(chat_template.turn_suffix);
  }
  append(chat_template.assistant_prefix);
  return out;
}

std::vector<ChunkModel> compile_chain(const ModelConfig& cfg, const ChunkPlan& plan, const WeightSet& weights) {
  check_weights(cfg, weights);
  std::vector<ChunkModel> chain;
  const auto built = builder::build_chunks(cfg, plan);
  for (size_t i = 0; i < built.size(); ++i) {
    const ir::ModelGraph stateful = builder::make_stateful(built[i].graph);
    chain.push_back({plan.chunks[i].kind, built[i].name,
                     exec::compile(stateful, builder::chunk_weight_store(built[i], weights))});
  }
  return chain;
}

std::vector<ChunkModel> load_chain(const std::filesystem::path& dir, ModelConfig* cfg_out) {
  builder::LoadedModelDir loaded = builder::load_model_dir(dir);
  std::vector<ChunkModel> chain;
  for (size_t i = 0; i < loaded.chunks.size(); ++i) {
    chain.push_back({loaded.plan.chunks[i].kind, loaded.chunks[i].name,
                     exec::compile(loaded.chunks[i].graph, loaded.chunks[i].weights)});
  }
  if (cfg_out) *cfg_out = loaded.cfg;
  return chain;
}

GenSession::GenSession(ModelConfig cfg, std::vector<ChunkModel> chunks)
    : cfg_(std::move(cfg)),
      chunks_(std::move(chunks)),
      freqs_(precompute_freqs_cis(cfg_.head_dim(), cfg_.max_seq_len, cfg_.rope_theta)),
      mask_(Tensor::filled({1, 1, 1, cfg_.max_seq_len}, kNegInf)) {
  cfg_.validate();
  check_chain(cfg_, chunks_);
}

GenSession GenSession::from_weights(const ModelConfig& cfg, const ChunkPlan& plan, const WeightSet& weights) {
  return GenSession(cfg, compile_chain(cfg, plan, weights));
}

GenSession GenSession::from_model_dir(const std::filesystem::path& dir) {
  ModelConfig cfg;
  auto chain = load_chain(dir, &cfg);
  return GenSession(cfg, std::move(chain));
}

Tensor GenSession::step(int64_t token) {
  if (pos_ >= cfg_.max_seq_len) {
    throw ContextExhausted("context of " + std::to_string(cfg_.max_seq_len) + " tokens is full");
  }
  if (token < 0 || token >= cfg_.vocab_size) {
    throw PipelineError("token id " + std::to_string(token) + " outside vocabulary of " +
                        std::to_string(cfg_.vocab_size));
  }
  mask_[pos_] = 0.0f;
  const Tensor freqs = freqs_.row(pos_);
  const Tensor position = Tensor({1}, {static_cast<float>(pos_)});

  Tensor x;
  Tensor logits;
  for (ChunkModel& chunk : chunks_) {
    switch (chunk.kind) {
      case ChunkKind::Embedding:
        x = std::move(chunk.model.infer({{"token", Tensor({1, 1}, {static_cast<float>(token)})}}).at("x"));
        break;
      case ChunkKind::Decoder:
        x = std::move(
            chunk.model.infer({{"x", x}, {"mask", mask_}, {"freqs_cis", freqs}, {"position", position}}).at("x"));
        break;
      case ChunkKind::LMHead:
        logits = std::move(chunk.model.infer({{"x", x}}).at("logits"));
        break;
    }
  }
  ++pos_;
  return logits;
}

Tensor GenSession::prefill(std::span<const int64_t> prompt) {
  if (prompt.empty()) throw PipelineError("prompt is empty");
  const int64_t room = cfg_.max_seq_len - pos_;
  if (static_cast<int64_t>(prompt.size()) > room) {
    throw PipelineError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds the " + std::to_string(room) +
                        " free context slots");
  }
  Tensor logits;
  for (int64_t token : prompt) logits = step(token);
  return logits;
}

std::vector<int64_t> GenSession::generate(std::span<const int64_t> prompt, int64_t max_new_tokens,
                                          const SamplingParams& params, std::span<const int64_t> stop_ids,
                                          const TokenCallback& on_token) {
  if (max_new_tokens < 0) throw PipelineError("max_new_tokens must be >= 0");
  const int64_t room = cfg_.max_seq_len - pos_;
  if (static_cast<int64_t>(prompt.size()) + max_new_tokens > room) {
    throw PipelineError("prompt (" + std::to_string(prompt.size()) + ") + max_new_tokens (" +
                        std::to_string(max_new_tokens) + ") exceeds the " + std::to_string(room) +
                        " free context slots");
  }
  params.validate(cfg_.vocab_size);
  rng_.seed(params.seed());

  Tensor logits = prefill(prompt);
  std::vector<int64_t> generated;
  const std::set<int64_t> stops(stop_ids.begin(), stop_ids.end());
  while (static_cast<int64_t>(generated.size()) < max_new_tokens) {
    const int64_t next = sample(logits.data(), params, rng_);
    if (stops.count(next)) break;
    generated.push_back(next);
    if (on_token) on_token(next);
    logits = step(next);
  }
  return generated;
}

std::vector<int64_t> GenSession::chat_generate(std::span<const ChatMessage> messages, const ChatTemplate& chat_template,
                                               const SamplingParams& params, std::optional<int64_t> max_new_tokens,
                                               const TokenCallback& on_token) {
  if (messages.empty()) throw PipelineError("conversation has no messages");
  const std::vector<int64_t> prompt = render_chat(messages, chat_template);
  const auto length = static_cast<int64_t>(prompt.size());
  if (length > cfg_.max_seq_len) {
    throw PipelineError("conversation of " + std::to_string(length) + " tokens overflows the context of " +
                        std::to_string(cfg_.max_seq_len));
  }
  reset();
  const int64_t budget = std::min(max_new_tokens.value_or(cfg_.max_seq_len), cfg_.max_seq_len - length);
  return generate(prompt, budget, params, chat_template.stop, on_token);
}

void GenSession::reset() {
  for (ChunkModel& chunk : chunks_) chunk.model.reset_states();
  mask_.fill(kNegInf);
  pos_ = 0;
}

Tensor GenSession::get_state(const std::string& variable_id) const {
  for (const ChunkModel& chunk : chunks_) {
    const auto ids = chunk.model.state_ids();
    if (std::find(ids.begin(), ids.end(), variable_id) != ids.end()) return chunk.model.get_state(variable_id);
  }
  throw PipelineError("no chunk holds state '" + variable_id + "'");
}

}  // namespace statark::pipeline
