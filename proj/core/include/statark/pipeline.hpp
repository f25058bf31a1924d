#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "statark/executor.hpp"
#include "statark/model_config.hpp"
#include "statark/tensor.hpp"
#include "statark/weights.hpp"

namespace statark::pipeline {

// Rotary table: row p, frequency i holds (cos(p * w_i), sin(p * w_i)) with
// w_i = theta^(-2i / head_dim). Shape [max_seq_len, head_dim / 2, 2].
struct FreqTable {
  Tensor table;

  // Slice for one position, shaped [1, 1, head_dim / 2, 2] as the decoder expects.
  Tensor row(int64_t position) const;
};

FreqTable precompute_freqs_cis(int64_t head_dim, int64_t max_seq_len, double rope_theta);

// [1, 1, 1, m]: zeros for the first n_visible entries, -inf after.
Tensor build_mask(int64_t n_visible, int64_t m);

struct Greedy {};
struct Temperature {
  double temperature = 1.0;
  uint64_t seed = 0;
};
struct TopK {
  int64_t k = 1;
  double temperature = 1.0;
  uint64_t seed = 0;
};

struct SamplingParams {
  std::variant<Greedy, Temperature, TopK> mode;

  static SamplingParams greedy() { return {Greedy{}}; }
  static SamplingParams with_temperature(double t, uint64_t seed) { return {Temperature{t, seed}}; }
  static SamplingParams top_k(int64_t k, double t, uint64_t seed) { return {TopK{k, t, seed}}; }

  uint64_t seed() const;
  void validate(int64_t vocab_size) const;
};

// Greedy picks the lowest index among equal maxima. Temperature modes draw
// from softmax(logits / t) using `rng`.
int64_t sample(std::span<const float> logits, const SamplingParams& params, std::mt19937_64& rng);

// Role marker token ids wrapped around each chat turn.
struct ChatTemplate {
  std::vector<int64_t> system_prefix;
  std::vector<int64_t> user_prefix;
  std::vector<int64_t> assistant_prefix;
  std::vector<int64_t> turn_suffix;
  std::vector<int64_t> stop;

  static ChatTemplate from_json(const std::string& text);
  std::string to_json() const;
};

enum class Role { System, User, Assistant };

struct ChatMessage {
  Role role = Role::User;
  std::vector<int64_t> tokens;
};

// prefix(role) + tokens + turn_suffix for each message, then the assistant
// prefix that opens the reply.
std::vector<int64_t> render_chat(std::span<const ChatMessage> messages, const ChatTemplate& chat_template);

// Called with each generated id as soon as it is sampled.
using TokenCallback = std::function<void(int64_t)>;

struct ChunkModel {
  ChunkKind kind = ChunkKind::Embedding;
  std::string name;
  exec::CompiledModel model;
};

// Compiles the stateful chunk chain for a plan from in-memory weights.
std::vector<ChunkModel> compile_chain(const ModelConfig& cfg, const ChunkPlan& plan, const WeightSet& weights);
// Compiles the chain stored in a model directory.
std::vector<ChunkModel> load_chain(const std::filesystem::path& dir, ModelConfig* cfg_out = nullptr);

// Text generation over a chain of compiled chunks. Owns the write position,
// the additive mask and the rotary table; caches live in the chunk states.
// Needs exclusive access.
class GenSession {
 public:
  GenSession(ModelConfig cfg, std::vector<ChunkModel> chunks);

  static GenSession from_weights(const ModelConfig& cfg, const ChunkPlan& plan, const WeightSet& weights);
  static GenSession from_model_dir(const std::filesystem::path& dir);

  // Runs one token at the current position and returns [1, 1, vocab] logits.
  Tensor step(int64_t token);
  // Steps every prompt token in order; returns the logits of the last one.
  Tensor prefill(std::span<const int64_t> prompt);
  // Prefill, then sample until a stop id or max_new_tokens. Returns only the
  // new ids; a stop id ends generation and is not returned. Reseeds the
  // sampler from params.
  std::vector<int64_t> generate(std::span<const int64_t> prompt, int64_t max_new_tokens, const SamplingParams& params,
                                std::span<const int64_t> stop_ids = {}, const TokenCallback& on_token = {});
  // Resets the session, renders the conversation and generates a reply.
  // Without max_new_tokens the reply may use the rest of the context.
  std::vector<int64_t> chat_generate(std::span<const ChatMessage> messages, const ChatTemplate& chat_template,
                                     const SamplingParams& params, std::optional<int64_t> max_new_tokens = {},
                                     const TokenCallback& on_token = {});

  // Zeroes every cache state and rewinds to position 0.
  void reset();

  int64_t position() const noexcept { return pos_; }
  int64_t capacity() const noexcept { return cfg_.max_seq_len; }
  const Tensor& mask() const noexcept { return mask_; }
  const FreqTable& freqs() const noexcept { return freqs_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  std::vector<ChunkModel>& chunks() noexcept { return chunks_; }
  // Current value of a cache state, searched across all chunks.
  Tensor get_state(const std::string& variable_id) const;

 private:
  ModelConfig cfg_;
  std::vector<ChunkModel> chunks_;
  FreqTable freqs_;
  Tensor mask_;
  int64_t pos_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace statark::pipeline
