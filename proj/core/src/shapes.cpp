#include "statark/shapes.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <set>
#include <sstream>

#include "statark/error.hpp"

namespace statark::shapes {
namespace {

using ir::OpType;

[[noreturn]] void fail(const std::string& what) { throw ShapeError(what); }

std::string s(const Shape& shape) { return shape_to_string(shape); }

bool single_element(const Shape& shape) { return num_elements(shape) == 1; }

}  // namespace

Shape matmul(const Shape& a, const Shape& b, bool transpose_a, bool transpose_b) {
  if (a.size() < 2 || b.size() < 2) {
    fail("MatMul operands need rank >= 2, got " + s(a) + " and " + s(b));
  }
  const size_t ra = a.size();
  const size_t rb = b.size();
  const int64_t m = transpose_a ? a[ra - 1] : a[ra - 2];
  const int64_t ka = transpose_a ? a[ra - 2] : a[ra - 1];
  const int64_t kb = transpose_b ? b[rb - 1] : b[rb - 2];
  const int64_t n = transpose_b ? b[rb - 2] : b[rb - 1];
  if (ka != kb) {
    fail("MatMul contraction mismatch: " + std::to_string(ka) + " != " + std::to_string(kb) + " for " + s(a) +
         " x " + s(b));
  }
  Shape batch_a(a.begin(), a.end() - 2);
  Shape batch_b(b.begin(), b.end() - 2);
  if (!batch_b.empty() && batch_a != batch_b) {
    fail("MatMul batch dims differ: " + s(a) + " x " + s(b));
  }
  Shape out = batch_a;
  out.push_back(m);
  out.push_back(n);
  return out;
}

Shape elementwise(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (single_element(b)) return a;
  if (single_element(a)) return b;
  fail("cannot broadcast " + s(a) + " with " + s(b) + " (only equal shapes or a single-element operand)");
}

Shape softmax(const Shape& x) {
  if (x.empty()) fail("Softmax needs rank >= 1");
  return x;
}

Shape rmsnorm(const Shape& x, const Shape& weight) {
  if (x.empty()) fail("RMSNorm needs rank >= 1");
  if (weight != Shape{x.back()}) fail("RMSNorm weight " + s(weight) + " must be [" + std::to_string(x.back()) + "]");
  return x;
}

Shape rotary(const Shape& x, const Shape& freqs) {
  if (x.size() < 2) fail("RotaryApply input needs rank >= 2 ([..., heads, head_dim]), got " + s(x));
  const int64_t head_dim = x.back();
  if (head_dim % 2 != 0) fail("RotaryApply head_dim must be even, got " + std::to_string(head_dim));
  Shape expected(x.begin(), x.end() - 2);
  expected.push_back(head_dim / 2);
  expected.push_back(2);
  if (freqs != expected) fail("RotaryApply freqs " + s(freqs) + " must be " + s(expected) + " for input " + s(x));
  return x;
}

Shape scatter_row_update(const Shape& cache, const Shape& position, const Shape& values, int64_t axis) {
  const auto rank = static_cast<int64_t>(cache.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail("ScatterRowUpdate axis out of range for cache " + s(cache));
  if (!single_element(position)) fail("ScatterRowUpdate position must hold one element, got " + s(position));
  Shape row = cache;
  row[static_cast<size_t>(axis)] = 1;
  if (values != row) fail("ScatterRowUpdate values " + s(values) + " must be one cache row " + s(row));
  return cache;
}

Shape gather(const Shape& table, const Shape& indices) {
  if (table.empty()) fail("Gather table needs rank >= 1");
  Shape out = indices;
  out.insert(out.end(), table.begin() + 1, table.end());
  return out;
}

Shape reshape(const Shape& input, const Shape& target) {
  for (int64_t d : target) {
    if (d < 1) fail("Reshape target extents must be >= 1, got " + s(target));
  }
  if (num_elements(input) != num_elements(target)) {
    fail("Reshape cannot map " + s(input) + " onto " + s(target));
  }
  return target;
}

Shape transpose(const Shape& input, std::span<const int64_t> order) {
  if (order.size() != input.size()) fail("Transpose order rank differs from input " + s(input));
  std::vector<bool> seen(order.size(), false);
  Shape out(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    const int64_t axis = order[i];
    if (axis < 0 || axis >= static_cast<int64_t>(order.size()) || seen[static_cast<size_t>(axis)]) {
      fail("Transpose order is not a permutation");
    }
    seen[static_cast<size_t>(axis)] = true;
    out[i] = input[static_cast<size_t>(axis)];
  }
  return out;
}

bool flag_attribute(const ir::Attributes& attrs, const std::string& key, bool fallback) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  fail("attribute '" + key + "' must be true or false, got '" + it->second + "'");
}

std::vector<int64_t> int_list_attribute(const ir::Attributes& attrs, const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) fail("missing attribute '" + key + "'");
  std::vector<int64_t> out;
  const std::string& text = it->second;
  size_t start = 0;
  while (start < text.size()) {
    size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    std::string_view item(text.data() + start, comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    int64_t value = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      fail("attribute '" + key + "' must be a comma-separated integer list, got '" + text + "'");
    }
    out.push_back(value);
    start = comma + 1;
  }
  return out;
}

int64_t int_attribute(const ir::Attributes& attrs, const std::string& key) {
  auto values = int_list_attribute(attrs, key);
  if (values.size() != 1) fail("attribute '" + key + "' must be a single integer");
  return values.front();
}

double float_attribute(const ir::Attributes& attrs, const std::string& key) {
  auto it = attrs.find(key);
  if (it == attrs.end()) fail("missing attribute '" + key + "'");
  char* end = nullptr;
  const double value = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || end != it->second.c_str() + it->second.size()) {
    fail("attribute '" + key + "' must be a number, got '" + it->second + "'");
  }
  return value;
}

std::string format_int_list(std::span<const int64_t> values) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::vector<Shape> infer_output_shape(OpType op, const ir::Attributes& attrs, std::span<const Shape> in) {
  const ir::Arity arity = ir::op_arity(op);
  if (in.size() != arity.inputs) {
    fail(std::string(ir::op_type_name(op)) + " takes " + std::to_string(arity.inputs) + " inputs, got " +
         std::to_string(in.size()));
  }
  switch (op) {
    case OpType::Parameter:
    case OpType::Const:
    case OpType::ReadValue:
      fail(std::string(ir::op_type_name(op)) + " output shape comes from its declaration");
    case OpType::Result:
    case OpType::Assign: return {};
    case OpType::MatMul:
      return {matmul(in[0], in[1], flag_attribute(attrs, "transpose_a", false),
                     flag_attribute(attrs, "transpose_b", false))};
    case OpType::Softmax: {
      Shape out = softmax(in[0]);
      if (attrs.count("axis")) {
        const int64_t axis = int_attribute(attrs, "axis");
        if (axis != -1 && axis != static_cast<int64_t>(in[0].size()) - 1) fail("Softmax supports the last axis only");
      }
      return {out};
    }
    case OpType::Add:
    case OpType::Multiply: return {elementwise(in[0], in[1])};
    case OpType::SiLU: return {in[0]};
    case OpType::RMSNorm: return {rmsnorm(in[0], in[1])};
    case OpType::RotaryApply: return {rotary(in[0], in[1])};
    case OpType::ScatterRowUpdate: return {scatter_row_update(in[0], in[1], in[2], int_attribute(attrs, "axis"))};
    case OpType::Gather: return {gather(in[0], in[1])};
    case OpType::Reshape: return {reshape(in[0], int_list_attribute(attrs, "shape"))};
    case OpType::Transpose: {
      const auto order = int_list_attribute(attrs, "order");
      return {transpose(in[0], order)};
    }
  }
  fail("unhandled op type");
}

std::vector<Shape> infer_output_shape(const ir::Node& node, std::span<const Shape> inputs) {
  switch (node.type) {
    case OpType::Parameter:
    case OpType::Const:
    case OpType::ReadValue: {
      if (!inputs.empty()) fail(std::string(ir::op_type_name(node.type)) + " takes no inputs");
      std::vector<Shape> out;
      for (const auto& port : node.outputs) {
        auto shape = ir::to_shape(port.dims);
        if (!shape) fail("dynamic dimension in output port " + std::to_string(port.id) + ": " +
                         ir::dims_to_string(port.dims));
        out.push_back(*shape);
      }
      return out;
    }
    default: return infer_output_shape(node.type, node.attributes, inputs);
  }
}

std::string Violation::render() const {
  if (node_id < 0) return "graph: " + reason;
  return "node " + std::to_string(node_id) + " (" + node_name + "): " + reason;
}

std::string ShapeReport::render() const {
  std::string out;
  for (const auto& v : violations) out += v.render() + "\n";
  return out;
}

ShapeReport propagate_shapes(const ir::ModelGraph& graph) {
  ShapeReport report;
  std::vector<int64_t> order;
  try {
    order = ir::topo_order(graph);
  } catch (const IrError& e) {
    report.violations.push_back({-1, "", e.what()});
    return report;
  }

  auto add = [&](const ir::Node& node, std::string reason) {
    report.violations.push_back({node.id, node.name, std::move(reason)});
  };

  for (int64_t id : order) {
    const ir::Node& node = graph.node(id);
    std::vector<Shape> inputs;
    bool inputs_known = true;
    for (const auto& port : node.inputs) {
      if (!ir::to_shape(port.dims)) {
        add(node, "dynamic dimension in input port " + std::to_string(port.id) + ": " + ir::dims_to_string(port.dims));
      }
      const ir::Edge* edge = graph.incoming(id, port.id);
      if (!edge) {
        add(node, "input port " + std::to_string(port.id) + " is not connected");
        inputs_known = false;
        continue;
      }
      auto producer = report.shapes.find(edge->from_layer);
      const ir::Node* from = graph.nodes.count(edge->from_layer) ? &graph.node(edge->from_layer) : nullptr;
      if (producer == report.shapes.end() || !from) {
        inputs_known = false;
        continue;
      }
      size_t index = 0;
      while (index < from->outputs.size() && from->outputs[index].id != edge->from_port) ++index;
      if (index >= producer->second.size()) {
        inputs_known = false;
        continue;
      }
      const Shape& incoming = producer->second[index];
      if (auto declared = ir::to_shape(port.dims); declared && *declared != incoming) {
        add(node, "input port " + std::to_string(port.id) + " declared " + shape_to_string(*declared) +
                      " but receives " + shape_to_string(incoming));
      }
      inputs.push_back(incoming);
    }

    const bool source = ir::op_arity(node.type).inputs == 0;
    if (!source && !inputs_known) continue;

    std::vector<Shape> inferred;
    if (source) {
      bool dynamic = false;
      for (const auto& port : node.outputs) {
        if (!ir::to_shape(port.dims)) {
          add(node, "dynamic dimension in output port " + std::to_string(port.id) + ": " +
                        ir::dims_to_string(port.dims));
          dynamic = true;
        }
      }
      if (dynamic) continue;
      inferred = infer_output_shape(node, {});
    } else {
      try {
        inferred = infer_output_shape(node, inputs);
      } catch (const ShapeError& e) {
        add(node, e.what());
        continue;
      }
      for (size_t i = 0; i < node.outputs.size() && i < inferred.size(); ++i) {
        const auto& port = node.outputs[i];
        auto declared = ir::to_shape(port.dims);
        if (!declared) {
          add(node, "dynamic dimension in output port " + std::to_string(port.id) + ": " +
                        ir::dims_to_string(port.dims));
        } else if (*declared != inferred[i]) {
          add(node, "output port " + std::to_string(port.id) + " declared " + shape_to_string(*declared) +
                        " but inferred " + shape_to_string(inferred[i]));
        }
      }
    }
    report.shapes.emplace(id, std::move(inferred));
  }

  // A ReadValue and its Assign describe one state tensor.
  std::map<std::string, Shape> state_shapes;
  for (const ir::Node* rv : graph.nodes_of_type(OpType::ReadValue)) {
    auto it = report.shapes.find(rv->id);
    if (it != report.shapes.end() && !it->second.empty()) {
      state_shapes[rv->attribute("variable_id").value_or("")] = it->second.front();
    }
  }
  for (const ir::Node* assign : graph.nodes_of_type(OpType::Assign)) {
    const std::string var = assign->attribute("variable_id").value_or("");
    const ir::Edge* edge = graph.incoming(assign->id, assign->inputs.front().id);
    auto state = state_shapes.find(var);
    if (!edge || state == state_shapes.end()) continue;
    auto producer = report.shapes.find(edge->from_layer);
    if (producer == report.shapes.end()) continue;
    const ir::Node& from = graph.node(edge->from_layer);
    for (size_t i = 0; i < from.outputs.size() && i < producer->second.size(); ++i) {
      if (from.outputs[i].id == edge->from_port && producer->second[i] != state->second) {
        add(*assign, "assigns " + shape_to_string(producer->second[i]) + " to state '" + var + "' of shape " +
                         shape_to_string(state->second));
      }
    }
  }
  return report;
}

}  // namespace statark::shapes
