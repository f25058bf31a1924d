#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "statark/tensor.hpp"

namespace statark::ir {

// One tensor extent in a port declaration: a positive integer or `?`.
class Dim {
 public:
  constexpr Dim() = default;
  explicit Dim(int64_t extent);

  static constexpr Dim unknown() { return Dim(); }

  bool is_static() const noexcept { return extent_ > 0; }
  int64_t extent() const;

  std::string to_string() const;

  bool operator==(const Dim&) const = default;

 private:
  int64_t extent_ = 0;
};

using Dims = std::vector<Dim>;

Dims static_dims(const Shape& shape);
// Empty optional if any dimension is unknown.
std::optional<Shape> to_shape(const Dims& dims);
std::string dims_to_string(const Dims& dims);

enum class Precision { FP32 };

struct Port {
  int id = 0;
  Precision precision = Precision::FP32;
  Dims dims;
  std::vector<std::string> names;

  bool operator==(const Port&) const = default;
};

enum class OpType {
  Parameter,
  Result,
  Const,
  MatMul,
  Softmax,
  Add,
  Multiply,
  SiLU,
  RMSNorm,
  RotaryApply,
  ScatterRowUpdate,
  Gather,
  Reshape,
  Transpose,
  ReadValue,
  Assign,
};

std::string_view op_type_name(OpType op);
std::optional<OpType> op_type_from_name(std::string_view name);
std::span<const OpType> all_op_types();

// Input/output port counts every node of a given type must have.
struct Arity {
  size_t inputs;
  size_t outputs;
};
Arity op_arity(OpType op);

using Attributes = std::map<std::string, std::string>;

struct Node {
  int64_t id = 0;
  std::string name;
  OpType type = OpType::Parameter;
  Attributes attributes;
  std::vector<Port> inputs;
  std::vector<Port> outputs;

  const Port* find_input(int port_id) const;
  const Port* find_output(int port_id) const;
  // Attribute lookup; empty optional when absent.
  std::optional<std::string> attribute(const std::string& key) const;

  bool operator==(const Node&) const = default;
};

struct Edge {
  int64_t from_layer = 0;
  int from_port = 0;
  int64_t to_layer = 0;
  int to_port = 0;

  bool operator==(const Edge&) const = default;
};

struct ModelGraph {
  std::string name;
  std::map<int64_t, Node> nodes;
  std::vector<Edge> edges;

  bool operator==(const ModelGraph&) const = default;

  const Node& node(int64_t id) const;
  // Edge feeding (node, input port); nullptr if unconnected.
  const Edge* incoming(int64_t node_id, int port_id) const;
  std::vector<const Node*> nodes_of_type(OpType op) const;
  // First node of `op` with the given name; nullptr if none.
  const Node* find_named(OpType op, std::string_view name) const;
};

// Checks the node-level and edge-level invariants of a graph (arity, unique
// port ids, required attributes, edge endpoints, single driver per input,
// every input driven, acyclicity). Throws IrError on the first problem.
void validate_structure(const ModelGraph& graph);

ModelGraph parse_model(std::string_view xml_text);
std::string serialize_model(const ModelGraph& graph);

// Producer-before-consumer order, ties broken by ascending node id.
std::vector<int64_t> topo_order(const ModelGraph& graph);

// Const node id -> decoded tensor.
class WeightStore {
 public:
  WeightStore() = default;
  explicit WeightStore(std::map<int64_t, Tensor> tensors) : tensors_(std::move(tensors)) {}

  const Tensor* find(int64_t const_id) const;
  const Tensor& at(int64_t const_id) const;
  size_t size() const noexcept { return tensors_.size(); }
  const std::map<int64_t, Tensor>& tensors() const noexcept { return tensors_; }

 private:
  std::map<int64_t, Tensor> tensors_;
};

WeightStore load_weights(const ModelGraph& graph, std::span<const std::byte> blob);

// Little-endian fp32 helpers shared by the weight blob and container formats.
void append_f32_le(std::vector<std::byte>& out, std::span<const float> values);
void decode_f32_le(std::span<const std::byte> bytes, std::span<float> out);

}  // namespace statark::ir
