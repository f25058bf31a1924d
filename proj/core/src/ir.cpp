#include "statark/ir.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <functional>
#include <queue>
#include <set>
#include <sstream>

#include "statark/error.hpp"
#include "xml.hpp"

namespace statark::ir {
namespace {

constexpr std::array kOpTypes = {
    OpType::Parameter, OpType::Result,      OpType::Const,           OpType::MatMul,
    OpType::Softmax,   OpType::Add,         OpType::Multiply,        OpType::SiLU,
    OpType::RMSNorm,   OpType::RotaryApply, OpType::ScatterRowUpdate, OpType::Gather,
    OpType::Reshape,   OpType::Transpose,   OpType::ReadValue,       OpType::Assign,
};

using LineOf = std::function<int(int64_t)>;

template <typename Int>
std::optional<Int> parse_int(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  Int value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

std::string trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return std::string(text);
}

std::vector<std::string> split_names(std::string_view text) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= text.size()) {
    size_t comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    std::string item = trim(text.substr(start, comma - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = comma + 1;
  }
  return out;
}

std::string node_label(const Node& node) { return "node " + std::to_string(node.id) + " (" + node.name + ")"; }

void check_ports(const Node& node, const std::vector<Port>& ports, const char* side, int line) {
  std::set<int> seen;
  for (const auto& port : ports) {
    if (!seen.insert(port.id).second) {
      throw IrError(node_label(node) + ": duplicate " + side + " port id " + std::to_string(port.id), line);
    }
  }
}

void check_node(const Node& node, int line) {
  const Arity arity = op_arity(node.type);
  const std::string type(op_type_name(node.type));
  if (node.inputs.size() != arity.inputs) {
    throw IrError(node_label(node) + ": " + type + " expects " + std::to_string(arity.inputs) + " input port(s), has " +
                      std::to_string(node.inputs.size()),
                  line);
  }
  if (node.outputs.size() != arity.outputs) {
    throw IrError(node_label(node) + ": " + type + " expects " + std::to_string(arity.outputs) +
                      " output port(s), has " + std::to_string(node.outputs.size()),
                  line);
  }
  check_ports(node, node.inputs, "input", line);
  check_ports(node, node.outputs, "output", line);
  if (node.type == OpType::Const) {
    for (const char* key : {"offset", "size"}) {
      auto value = node.attribute(key);
      if (!value || !parse_int<uint64_t>(*value)) {
        throw IrError(node_label(node) + ": Const requires a non-negative integer '" + key + "' attribute", line);
      }
    }
  }
  if (node.type == OpType::ReadValue || node.type == OpType::Assign) {
    auto value = node.attribute("variable_id");
    if (!value || value->empty()) {
      throw IrError(node_label(node) + ": " + type + " requires a 'variable_id' attribute", line);
    }
  }
}

void validate_with_lines(const ModelGraph& graph, const LineOf& node_line, const std::function<int(size_t)>& edge_line) {
  for (const auto& [id, node] : graph.nodes) {
    if (node.id != id) throw IrError("node map key " + std::to_string(id) + " disagrees with node id", node_line(id));
    check_node(node, node_line(id));
  }
  std::set<std::pair<int64_t, int>> driven;
  for (size_t i = 0; i < graph.edges.size(); ++i) {
    const Edge& e = graph.edges[i];
    const int line = edge_line(i);
    auto from = graph.nodes.find(e.from_layer);
    if (from == graph.nodes.end()) {
      throw IrError("edge references missing node " + std::to_string(e.from_layer), line);
    }
    if (!from->second.find_output(e.from_port)) {
      throw IrError("edge references missing output port " + std::to_string(e.from_port) + " on node " +
                        std::to_string(e.from_layer),
                    line);
    }
    auto to = graph.nodes.find(e.to_layer);
    if (to == graph.nodes.end()) {
      throw IrError("edge references missing node " + std::to_string(e.to_layer), line);
    }
    if (!to->second.find_input(e.to_port)) {
      throw IrError("edge references missing input port " + std::to_string(e.to_port) + " on node " +
                        std::to_string(e.to_layer),
                    line);
    }
    if (!driven.emplace(e.to_layer, e.to_port).second) {
      throw IrError("input port " + std::to_string(e.to_port) + " of node " + std::to_string(e.to_layer) +
                        " has more than one incoming edge",
                    line);
    }
  }
  for (const auto& [id, node] : graph.nodes) {
    for (const auto& port : node.inputs) {
      if (!driven.count({id, port.id})) {
        throw IrError(node_label(node) + ": input port " + std::to_string(port.id) + " is not connected",
                      node_line(id));
      }
    }
  }
  try {
    topo_order(graph);
  } catch (const IrError& e) {
    throw IrError(e.what(), 0);
  }
}

Dims parse_dims(const xml::Element& port_el) {
  Dims dims;
  for (const xml::Element* dim_el : port_el.children_named("dim")) {
    const std::string text = trim(dim_el->text);
    if (text == "?") {
      dims.push_back(Dim::unknown());
      continue;
    }
    auto extent = parse_int<int64_t>(text);
    if (!extent || *extent < 1) throw IrError("invalid dimension '" + text + "'", dim_el->line);
    dims.emplace_back(*extent);
  }
  return dims;
}

std::vector<Port> parse_ports(const xml::Element* section) {
  std::vector<Port> ports;
  if (!section) return ports;
  for (const xml::Element* port_el : section->children_named("port")) {
    Port port;
    auto id = port_el->attribute("id");
    auto parsed_id = id ? parse_int<int>(*id) : std::nullopt;
    if (!parsed_id || *parsed_id < 0) throw IrError("port requires a non-negative integer id", port_el->line);
    port.id = *parsed_id;
    if (auto precision = port_el->attribute("precision"); precision && *precision != "FP32") {
      throw IrError("unsupported precision '" + std::string(*precision) + "'", port_el->line);
    }
    if (auto names = port_el->attribute("names")) port.names = split_names(*names);
    port.dims = parse_dims(*port_el);
    ports.push_back(std::move(port));
  }
  return ports;
}

void write_ports(std::ostringstream& os, const char* section, const std::vector<Port>& ports) {
  if (ports.empty()) return;
  os << "\t\t\t<" << section << ">\n";
  for (const auto& port : ports) {
    os << "\t\t\t\t<port id=\"" << port.id << "\" precision=\"FP32\"";
    if (!port.names.empty()) {
      std::string joined;
      for (size_t i = 0; i < port.names.size(); ++i) {
        if (i) joined += ',';
        joined += port.names[i];
      }
      os << " names=\"" << xml::escape(joined) << '"';
    }
    if (port.dims.empty()) {
      os << " />\n";
      continue;
    }
    os << ">\n";
    for (const Dim& d : port.dims) os << "\t\t\t\t\t<dim>" << d.to_string() << "</dim>\n";
    os << "\t\t\t\t</port>\n";
  }
  os << "\t\t\t</" << section << ">\n";
}

}  // namespace

Dim::Dim(int64_t extent) : extent_(extent) {
  if (extent < 1) throw ShapeError("dimension extent must be >= 1, got " + std::to_string(extent));
}

int64_t Dim::extent() const {
  if (!is_static()) throw ShapeError("dynamic dimension has no extent");
  return extent_;
}

std::string Dim::to_string() const { return is_static() ? std::to_string(extent_) : "?"; }

Dims static_dims(const Shape& shape) {
  Dims dims;
  dims.reserve(shape.size());
  for (int64_t d : shape) dims.emplace_back(d);
  return dims;
}

std::optional<Shape> to_shape(const Dims& dims) {
  Shape shape;
  shape.reserve(dims.size());
  for (const Dim& d : dims) {
    if (!d.is_static()) return std::nullopt;
    shape.push_back(d.extent());
  }
  return shape;
}

std::string dims_to_string(const Dims& dims) {
  std::string out = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ',';
    out += dims[i].to_string();
  }
  return out + "]";
}

std::string_view op_type_name(OpType op) {
  switch (op) {
    case OpType::Parameter: return "Parameter";
    case OpType::Result: return "Result";
    case OpType::Const: return "Const";
    case OpType::MatMul: return "MatMul";
    case OpType::Softmax: return "Softmax";
    case OpType::Add: return "Add";
    case OpType::Multiply: return "Multiply";
    case OpType::SiLU: return "SiLU";
    case OpType::RMSNorm: return "RMSNorm";
    case OpType::RotaryApply: return "RotaryApply";
    case OpType::ScatterRowUpdate: return "ScatterRowUpdate";
    case OpType::Gather: return "Gather";
    case OpType::Reshape: return "Reshape";
    case OpType::Transpose: return "Transpose";
    case OpType::ReadValue: return "ReadValue";
    case OpType::Assign: return "Assign";
  }
  return "?";
}

std::optional<OpType> op_type_from_name(std::string_view name) {
  for (OpType op : kOpTypes) {
    if (op_type_name(op) == name) return op;
  }
  return std::nullopt;
}

std::span<const OpType> all_op_types() { return kOpTypes; }

Arity op_arity(OpType op) {
  switch (op) {
    case OpType::Parameter:
    case OpType::Const:
    case OpType::ReadValue: return {0, 1};
    case OpType::Result:
    case OpType::Assign: return {1, 0};
    case OpType::Softmax:
    case OpType::SiLU:
    case OpType::Reshape:
    case OpType::Transpose: return {1, 1};
    case OpType::MatMul:
    case OpType::Add:
    case OpType::Multiply:
    case OpType::RMSNorm:
    case OpType::RotaryApply:
    case OpType::Gather: return {2, 1};
    case OpType::ScatterRowUpdate: return {3, 1};
  }
  return {0, 0};
}

const Port* Node::find_input(int port_id) const {
  for (const auto& p : inputs) {
    if (p.id == port_id) return &p;
  }
  return nullptr;
}

const Port* Node::find_output(int port_id) const {
  for (const auto& p : outputs) {
    if (p.id == port_id) return &p;
  }
  return nullptr;
}

std::optional<std::string> Node::attribute(const std::string& key) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return std::nullopt;
  return it->second;
}

const Node& ModelGraph::node(int64_t id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw IrError("no node with id " + std::to_string(id), 0);
  return it->second;
}

const Edge* ModelGraph::incoming(int64_t node_id, int port_id) const {
  for (const auto& e : edges) {
    if (e.to_layer == node_id && e.to_port == port_id) return &e;
  }
  return nullptr;
}

std::vector<const Node*> ModelGraph::nodes_of_type(OpType op) const {
  std::vector<const Node*> out;
  for (const auto& [id, node] : nodes) {
    if (node.type == op) out.push_back(&node);
  }
  return out;
}

const Node* ModelGraph::find_named(OpType op, std::string_view name) const {
  for (const auto& [id, node] : nodes) {
    if (node.type == op && node.name == name) return &node;
  }
  return nullptr;
}

void validate_structure(const ModelGraph& graph) {
  validate_with_lines(graph, [](int64_t) { return 0; }, [](size_t) { return 0; });
}

ModelGraph parse_model(std::string_view xml_text) {
  const xml::Element root = xml::parse(xml_text);
  if (root.tag != "net") throw IrError("root element must be <net>, found <" + root.tag + ">", root.line);

  ModelGraph graph;
  graph.name = std::string(root.attribute("name").value_or(""));
  std::map<int64_t, int> node_lines;
  std::vector<int> edge_lines;

  if (const xml::Element* layers = root.child("layers")) {
    for (const xml::Element* layer : layers->children_named("layer")) {
      Node node;
      auto id = layer->attribute("id");
      auto parsed_id = id ? parse_int<int64_t>(*id) : std::nullopt;
      if (!parsed_id) throw IrError("layer requires an integer id", layer->line);
      node.id = *parsed_id;
      node.name = std::string(layer->attribute("name").value_or(""));
      const std::string type(layer->attribute("type").value_or(""));
      auto op = op_type_from_name(type);
      if (!op) {
        throw IrError("node " + std::to_string(node.id) + ": unsupported op type '" + type + "'", layer->line);
      }
      node.type = *op;
      if (const xml::Element* data = layer->child("data")) {
        for (const auto& [k, v] : data->attributes) node.attributes[k] = v;
      }
      node.inputs = parse_ports(layer->child("input"));
      node.outputs = parse_ports(layer->child("output"));
      if (graph.nodes.count(node.id)) {
        throw IrError("duplicate node id " + std::to_string(node.id), layer->line);
      }
      node_lines[node.id] = layer->line;
      graph.nodes.emplace(node.id, std::move(node));
    }
  }

  if (const xml::Element* edges = root.child("edges")) {
    for (const xml::Element* edge_el : edges->children_named("edge")) {
      auto field = [&](const char* key) -> int64_t {
        auto value = edge_el->attribute(key);
        auto parsed = value ? parse_int<int64_t>(*value) : std::nullopt;
        if (!parsed) throw IrError(std::string("edge requires integer attribute '") + key + "'", edge_el->line);
        return *parsed;
      };
      Edge e;
      e.from_layer = field("from-layer");
      e.from_port = static_cast<int>(field("from-port"));
      e.to_layer = field("to-layer");
      e.to_port = static_cast<int>(field("to-port"));
      graph.edges.push_back(e);
      edge_lines.push_back(edge_el->line);
    }
  }

  validate_with_lines(
      graph,
      [&](int64_t id) {
        auto it = node_lines.find(id);
        return it == node_lines.end() ? 0 : it->second;
      },
      [&](size_t i) { return edge_lines[i]; });
  return graph;
}

std::string serialize_model(const ModelGraph& graph) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\"?>\n";
  os << "<net name=\"" << xml::escape(graph.name) << "\" version=\"11\">\n";
  os << "\t<layers>\n";
  for (const auto& [id, node] : graph.nodes) {
    os << "\t\t<layer id=\"" << id << "\" name=\"" << xml::escape(node.name) << "\" type=\""
       << op_type_name(node.type) << "\" version=\"opset1\">\n";
    if (!node.attributes.empty()) {
      os << "\t\t\t<data";
      for (const auto& [k, v] : node.attributes) os << ' ' << k << "=\"" << xml::escape(v) << '"';
      os << " />\n";
    }
    write_ports(os, "input", node.inputs);
    write_ports(os, "output", node.outputs);
    os << "\t\t</layer>\n";
  }
  os << "\t</layers>\n";
  os << "\t<edges>\n";
  for (const Edge& e : graph.edges) {
    os << "\t\t<edge from-layer=\"" << e.from_layer << "\" from-port=\"" << e.from_port << "\" to-layer=\""
       << e.to_layer << "\" to-port=\"" << e.to_port << "\" />\n";
  }
  os << "\t</edges>\n";
  os << "</net>\n";
  return os.str();
}

std::vector<int64_t> topo_order(const ModelGraph& graph) {
  std::map<int64_t, int> indegree;
  std::map<int64_t, std::vector<int64_t>> consumers;
  std::map<int64_t, std::vector<int64_t>> producers;
  for (const auto& [id, node] : graph.nodes) indegree[id] = 0;
  for (const Edge& e : graph.edges) {
    if (!indegree.count(e.from_layer) || !indegree.count(e.to_layer)) {
      throw IrError("edge references a missing node", 0);
    }
    ++indegree[e.to_layer];
    consumers[e.from_layer].push_back(e.to_layer);
    producers[e.to_layer].push_back(e.from_layer);
  }

  std::priority_queue<int64_t, std::vector<int64_t>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<int64_t> order;
  order.reserve(graph.nodes.size());
  while (!ready.empty()) {
    const int64_t id = ready.top();
    ready.pop();
    order.push_back(id);
    for (int64_t next : consumers[id]) {
      if (--indegree[next] == 0) ready.push(next);
    }
  }
  if (order.size() == graph.nodes.size()) return order;

  // Every unvisited node has an unvisited producer, so walking producers
  // backwards must revisit a node, and the first revisited node is on a cycle.
  int64_t cursor = 0;
  for (const auto& [id, deg] : indegree) {
    if (deg > 0) {
      cursor = id;
      break;
    }
  }
  std::set<int64_t> walked;
  while (walked.insert(cursor).second) {
    for (int64_t p : producers[cursor]) {
      if (indegree[p] > 0) {
        cursor = p;
        break;
      }
    }
  }
  throw IrError("cycle detected through node " + std::to_string(cursor), 0);
}

const Tensor* WeightStore::find(int64_t const_id) const {
  auto it = tensors_.find(const_id);
  return it == tensors_.end() ? nullptr : &it->second;
}

const Tensor& WeightStore::at(int64_t const_id) const {
  if (const Tensor* t = find(const_id)) return *t;
  throw IrError("no weights for Const node " + std::to_string(const_id), 0);
}

void append_f32_le(std::vector<std::byte>& out, std::span<const float> values) {
  const size_t start = out.size();
  out.resize(start + values.size() * 4);
  std::byte* dst = out.data() + start;
  for (float v : values) {
    const auto bits = std::bit_cast<uint32_t>(v);
    for (int b = 0; b < 4; ++b) *dst++ = static_cast<std::byte>((bits >> (8 * b)) & 0xFF);
  }
}

void decode_f32_le(std::span<const std::byte> bytes, std::span<float> out) {
  if (bytes.size() != out.size() * 4) throw IrError("fp32 byte window has wrong length", 0);
  for (size_t i = 0; i < out.size(); ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
}

WeightStore load_weights(const ModelGraph& graph, std::span<const std::byte> blob) {
  std::map<int64_t, Tensor> tensors;
  for (const Node* node : graph.nodes_of_type(OpType::Const)) {
    const auto offset = parse_int<uint64_t>(node->attribute("offset").value_or(""));
    const auto size = parse_int<uint64_t>(node->attribute("size").value_or(""));
    if (!offset || !size) throw IrError(node_label(*node) + ": Const without offset/size", 0);
    auto shape = to_shape(node->outputs.at(0).dims);
    if (!shape) throw IrError(node_label(*node) + ": Const output has a dynamic dimension", 0);
    const uint64_t expected = 4 * static_cast<uint64_t>(num_elements(*shape));
    if (*size != expected) {
      throw IrError(node_label(*node) + ": size " + std::to_string(*size) + " does not match shape " +
                        shape_to_string(*shape) + " (" + std::to_string(expected) + " bytes)",
                    0);
    }
    if (*offset > blob.size() || *size > blob.size() - *offset) {
      throw IrError(node_label(*node) + ": weight window [" + std::to_string(*offset) + ", " +
                        std::to_string(*offset + *size) + ") exceeds blob of " + std::to_string(blob.size()) +
                        " bytes",
                    0);
    }
    Tensor t(*shape);
    decode_f32_le(blob.subspan(*offset, *size), t.data());
    tensors.emplace(node->id, std::move(t));
  }
  return WeightStore(std::move(tensors));
}

}  // namespace statark::ir
