#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "statark/ir.hpp"

namespace statark::test {

// Random structurally valid graphs for round-trip checks. Names, attribute
// values and port names draw from alphabets that include XML metacharacters,
// whitespace and multibyte UTF-8; dims mix static extents and `?`.
class GraphGenerator {
 public:
  explicit GraphGenerator(uint64_t seed) : rng_(seed) {}

  ir::ModelGraph next() {
    ir::ModelGraph g;
    g.name = text(0, 12);
    const int count = pick(0, 14);
    std::vector<int64_t> producers;
    int64_t id = pick(0, 3);
    for (int k = 0; k < count; ++k) {
      ir::Node node;
      node.id = id;
      id += pick(1, 40);
      node.type = random_op(!producers.empty());
      node.name = text(0, 10);
      const int n_attrs = pick(0, 3);
      for (int a = 0; a < n_attrs; ++a) node.attributes[key()] = text(0, 8);
      if (node.type == ir::OpType::Const) {
        node.attributes["offset"] = std::to_string(pick(0, 1000));
        node.attributes["size"] = std::to_string(4 * pick(1, 1000));
      }
      if (node.type == ir::OpType::ReadValue || node.type == ir::OpType::Assign) {
        node.attributes["variable_id"] = "v" + std::to_string(pick(0, 3));
      }
      const ir::Arity arity = ir::op_arity(node.type);
      int port = 0;
      for (size_t i = 0; i < arity.inputs; ++i) node.inputs.push_back(port_at(port++));
      for (size_t i = 0; i < arity.outputs; ++i) node.outputs.push_back(port_at(port++));
      for (const auto& in : node.inputs) {
        const ir::Node& src = g.nodes.at(producers[static_cast<size_t>(pick(0, static_cast<int>(producers.size()) - 1))]);
        const auto& out = src.outputs[static_cast<size_t>(pick(0, static_cast<int>(src.outputs.size()) - 1))];
        g.edges.push_back({src.id, out.id, node.id, in.id});
      }
      if (!node.outputs.empty()) producers.push_back(node.id);
      g.nodes.emplace(node.id, std::move(node));
    }
    std::shuffle(g.edges.begin(), g.edges.end(), rng_);
    return g;
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  ir::OpType random_op(bool have_producers) {
    const auto ops = ir::all_op_types();
    while (true) {
      const ir::OpType op = ops[static_cast<size_t>(pick(0, static_cast<int>(ops.size()) - 1))];
      if (have_producers || ir::op_arity(op).inputs == 0) return op;
    }
  }

  std::string text(int lo, int hi) {
    static const std::vector<std::string> pieces = {"a", "Z", "7", "_", ".", " ", "<", ">", "&", "\"", "'",
                                                    "\n", "\t", "\r", "=", "/", ",", "\xc3\xa9", "?", ";"};
    std::string s;
    const int n = pick(lo, hi);
    for (int i = 0; i < n; ++i) s += pieces[static_cast<size_t>(pick(0, static_cast<int>(pieces.size()) - 1))];
    return s;
  }

  std::string key() {
    static const std::string first = "abcxyz_";
    static const std::string rest = "abcxyz_019-.";
    std::string k(1, first[static_cast<size_t>(pick(0, static_cast<int>(first.size()) - 1))]);
    const int n = pick(0, 6);
    for (int i = 0; i < n; ++i) k += rest[static_cast<size_t>(pick(0, static_cast<int>(rest.size()) - 1))];
    return k;
  }

  ir::Port port_at(int id) {
    ir::Port p;
    p.id = id;
    const int rank = pick(0, 4);
    for (int d = 0; d < rank; ++d) p.dims.push_back(pick(0, 5) == 0 ? ir::Dim::unknown() : ir::Dim(pick(1, 5000)));
    static const std::string alphabet = "abcXYZ0189_.-";
    const int n_names = pick(0, 2);
    for (int i = 0; i < n_names; ++i) {
      std::string name;
      const int len = pick(1, 6);
      for (int c = 0; c < len; ++c) name += alphabet[static_cast<size_t>(pick(0, static_cast<int>(alphabet.size()) - 1))];
      p.names.push_back(name);
    }
    return p;
  }

  std::mt19937_64 rng_;
};

}  // namespace statark::test
