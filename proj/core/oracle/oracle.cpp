#include "statark/oracle.hpp"

#include <cmath>
#include <string>

#include "statark/error.hpp"

namespace statark::oracle {
namespace {

using Vec = std::vector<float>;

std::span<const float> tensor(const WeightSet& w, const std::string& name) { return w.at(name).data(); }

// y = W x for W stored [rows, cols] row-major.
Vec linear(std::span<const float> w, const Vec& x, int64_t rows) {
  const auto cols = static_cast<int64_t>(x.size());
  Vec y(static_cast<size_t>(rows), 0.0f);
  for (int64_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    for (int64_t c = 0; c < cols; ++c) acc += w[static_cast<size_t>(r * cols + c)] * x[static_cast<size_t>(c)];
    y[static_cast<size_t>(r)] = acc;
  }
  return y;
}

Vec rms_normalize(const Vec& x, std::span<const float> weight, double eps) {
  float sum_sq = 0.0f;
  for (float v : x) sum_sq += v * v;
  const float inv = 1.0f / std::sqrt(sum_sq / static_cast<float>(x.size()) + static_cast<float>(eps));
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * weight[i];
  return out;
}

// Rotates the interleaved pairs of one head vector in place for `position`.
void rotate(float* head, int64_t head_dim, int64_t position, double theta) {
  for (int64_t i = 0; i < head_dim / 2; ++i) {
    const double angle =
        static_cast<double>(position) * std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
    const auto c = static_cast<float>(std::cos(angle));
    const auto s = static_cast<float>(std::sin(angle));
    const float a = head[2 * i];
    const float b = head[2 * i + 1];
    head[2 * i] = a * c - b * s;
    head[2 * i + 1] = a * s + b * c;
  }
}

}  // namespace

std::vector<float> attention(std::span<const float> query, const std::vector<std::vector<float>>& keys,
                             const std::vector<std::vector<float>>& values) {
  if (keys.empty() || keys.size() != values.size()) throw Error("oracle attention needs matching, non-empty K and V");
  const auto d = static_cast<float>(query.size());
  std::vector<float> scores(keys.size());
  float peak = -INFINITY;
  for (size_t j = 0; j < keys.size(); ++j) {
    float dot = 0.0f;
    for (size_t i = 0; i < query.size(); ++i) dot += query[i] * keys[j][i];
    scores[j] = dot / std::sqrt(d);
    peak = std::max(peak, scores[j]);
  }
  float total = 0.0f;
  for (float& s : scores) {
    s = std::exp(s - peak);
    total += s;
  }
  std::vector<float> out(values.front().size(), 0.0f);
  for (size_t j = 0; j < values.size(); ++j) {
    const float p = scores[j] / total;
    for (size_t i = 0; i < out.size(); ++i) out[i] += p * values[j][i];
  }
  return out;
}

DynamicModel::DynamicModel(const ModelConfig& cfg, const WeightSet& weights) : cfg_(cfg), weights_(weights) {
  cfg_.validate();
  check_weights(cfg_, weights_);
  layers_.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& layer : layers_) {
    layer.keys.resize(static_cast<size_t>(cfg_.n_kv_heads));
    layer.values.resize(static_cast<size_t>(cfg_.n_kv_heads));
  }
}

const std::vector<std::vector<float>>& DynamicModel::keys(int64_t layer, int64_t kv_head) const {
  return layers_.at(static_cast<size_t>(layer)).keys.at(static_cast<size_t>(kv_head));
}

Logits DynamicModel::append(int64_t token) {
  if (token < 0 || token >= cfg_.vocab_size) {
    throw Error("oracle: token id " + std::to_string(token) + " outside vocabulary of " +
                std::to_string(cfg_.vocab_size));
  }
  const int64_t dim = cfg_.dim;
  const int64_t hd = cfg_.head_dim();
  const int64_t position = length_;

  const auto table = tensor(weights_, "tok_embeddings.weight");
  Vec x(table.begin() + token * dim, table.begin() + (token + 1) * dim);

  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerCache& cache = layers_[static_cast<size_t>(l)];

    const Vec h = rms_normalize(x, tensor(weights_, p + "attention_norm.weight"), cfg_.norm_eps);
    Vec q = linear(tensor(weights_, p + "attention.wq.weight"), h, cfg_.n_heads * hd);
    Vec k = linear(tensor(weights_, p + "attention.wk.weight"), h, cfg_.n_kv_heads * hd);
    const Vec v = linear(tensor(weights_, p + "attention.wv.weight"), h, cfg_.n_kv_heads * hd);
    for (int64_t head = 0; head < cfg_.n_heads; ++head) rotate(q.data() + head * hd, hd, position, cfg_.rope_theta);
    for (int64_t head = 0; head < cfg_.n_kv_heads; ++head) {
      rotate(k.data() + head * hd, hd, position, cfg_.rope_theta);
      cache.keys[static_cast<size_t>(head)].emplace_back(k.begin() + head * hd, k.begin() + (head + 1) * hd);
      cache.values[static_cast<size_t>(head)].emplace_back(v.begin() + head * hd, v.begin() + (head + 1) * hd);
    }

    Vec context;
    for (int64_t head = 0; head < cfg_.n_heads; ++head) {
      const auto group = static_cast<size_t>(head / cfg_.kv_repeat());
      const auto out = attention(std::span<const float>(q).subspan(static_cast<size_t>(head * hd), static_cast<size_t>(hd)),
                                 cache.keys[group], cache.values[group]);
      context.insert(context.end(), out.begin(), out.end());
    }
    const Vec attn = linear(tensor(weights_, p + "attention.wo.weight"), context, dim);
    for (int64_t i = 0; i < dim; ++i) x[static_cast<size_t>(i)] += attn[static_cast<size_t>(i)];

    const Vec h2 = rms_normalize(x, tensor(weights_, p + "ffn_norm.weight"), cfg_.norm_eps);
    const Vec gate = linear(tensor(weights_, p + "feed_forward.w1.weight"), h2, cfg_.ffn_hidden);
    const Vec up = linear(tensor(weights_, p + "feed_forward.w3.weight"), h2, cfg_.ffn_hidden);
    Vec hidden(gate.size());
    for (size_t i = 0; i < gate.size(); ++i) {
      const float g = gate[i];
      hidden[i] = g / (1.0f + std::exp(-g)) * up[i];
    }
    const Vec down = linear(tensor(weights_, p + "feed_forward.w2.weight"), hidden, dim);
    for (int64_t i = 0; i < dim; ++i) x[static_cast<size_t>(i)] += down[static_cast<size_t>(i)];
  }

  const Vec h = rms_normalize(x, tensor(weights_, "norm.weight"), cfg_.norm_eps);
  ++length_;
  return linear(tensor(weights_, "output.weight"), h, cfg_.vocab_size);
}

LogitsSeq dynamic_forward(const ModelConfig& cfg, const WeightSet& weights, std::span<const int64_t> tokens) {
  if (tokens.empty()) throw Error("oracle: need at least one token");
  DynamicModel model(cfg, weights);
  LogitsSeq out;
  for (int64_t t : tokens) out.push_back(model.append(t));
  return out;
}

CompareReport compare_logits(const LogitsSeq& a, const LogitsSeq& b, double tol) {
  if (a.size() != b.size()) {
    throw Error("logit sequences differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  CompareReport report;
  for (size_t pos = 0; pos < a.size(); ++pos) {
    if (a[pos].size() != b[pos].size()) throw Error("logit widths differ at position " + std::to_string(pos));
    for (size_t i = 0; i < a[pos].size(); ++i) {
      const double diff = std::fabs(static_cast<double>(a[pos][i]) - static_cast<double>(b[pos][i]));
      if (!(diff <= tol) && !report.first_divergent_position) report.first_divergent_position = pos;
      if (!(diff <= report.max_abs_diff)) report.max_abs_diff = diff;
    }
  }
  report.passed = !report.first_divergent_position;
  return report;
}

}  // namespace statark::oracle
