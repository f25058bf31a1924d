#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "statark/error.hpp"
#include "statark/oracle.hpp"

namespace statark::oracle {
namespace {

std::string to_hex(float value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", std::bit_cast<uint32_t>(value));
  return buf;
}

float from_hex(const std::string& text) {
  if (text.size() != 8) throw Error("fixture: bad fp32 hex '" + text + "'");
  return std::bit_cast<float>(static_cast<uint32_t>(std::stoul(text, nullptr, 16)));
}

}  // namespace

void write_fixture(const std::filesystem::path& json_path, const Fixture& fixture) {
  nlohmann::ordered_json j;
  const ModelConfig& c = fixture.cfg;
  j["config"] = {{"dim", c.dim},         {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                 {"n_kv_heads", c.n_kv_heads}, {"vocab_size", c.vocab_size}, {"ffn_hidden", c.ffn_hidden},
                 {"norm_eps", c.norm_eps}, {"rope_theta", c.rope_theta}, {"max_seq_len", c.max_seq_len}};
  j["seed"] = fixture.seed;
  j["prompt"] = fixture.prompt;
  auto rows = nlohmann::ordered_json::array();
  for (const Logits& row : fixture.logits) {
    auto hex = nlohmann::ordered_json::array();
    for (float v : row) hex.push_back(to_hex(v));
    rows.push_back(std::move(hex));
  }
  j["logits"] = std::move(rows);
  std::ofstream out(json_path);
  if (!out) throw Error("cannot write " + json_path.string());
  out << j.dump(1) << "\n";
}

Fixture read_fixture(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error("cannot open " + json_path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    Fixture f;
    const auto& c = j.at("config");
    f.cfg.dim = c.at("dim");
    f.cfg.n_layers = c.at("n_layers");
    f.cfg.n_heads = c.at("n_heads");
    f.cfg.n_kv_heads = c.at("n_kv_heads");
    f.cfg.vocab_size = c.at("vocab_size");
    f.cfg.ffn_hidden = c.at("ffn_hidden");
    f.cfg.norm_eps = c.at("norm_eps");
    f.cfg.rope_theta = c.at("rope_theta");
    f.cfg.max_seq_len = c.at("max_seq_len");
    f.seed = j.at("seed");
    f.prompt = j.at("prompt").get<std::vector<int64_t>>();
    for (const auto& row : j.at("logits")) {
      Logits values;
      for (const auto& hex : row) values.push_back(from_hex(hex.get<std::string>()));
      f.logits.push_back(std::move(values));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(json_path.string() + ": malformed fixture: " + e.what());
  }
}

}  // namespace statark::oracle
