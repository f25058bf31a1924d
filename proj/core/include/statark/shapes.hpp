#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statark/ir.hpp"
#include "statark/tensor.hpp"

namespace statark::shapes {

// Per-op shape rules. Each throws ShapeError when the operands cannot be
// combined. Kernels use the same rules to size their outputs.
Shape matmul(const Shape& a, const Shape& b, bool transpose_a, bool transpose_b);
// Equal shapes, or one side holding a single element.
Shape elementwise(const Shape& a, const Shape& b);
Shape softmax(const Shape& x);
Shape rmsnorm(const Shape& x, const Shape& weight);
// x: [..., heads, head_dim]; freqs: [..., head_dim/2, 2] with the same leading dims.
Shape rotary(const Shape& x, const Shape& freqs);
Shape scatter_row_update(const Shape& cache, const Shape& position, const Shape& values, int64_t axis);
Shape gather(const Shape& table, const Shape& indices);
Shape reshape(const Shape& input, const Shape& target);
Shape transpose(const Shape& input, std::span<const int64_t> order);

// Attribute decoding shared with the executor.
bool flag_attribute(const ir::Attributes& attrs, const std::string& key, bool fallback);
std::vector<int64_t> int_list_attribute(const ir::Attributes& attrs, const std::string& key);
int64_t int_attribute(const ir::Attributes& attrs, const std::string& key);
double float_attribute(const ir::Attributes& attrs, const std::string& key);
std::string format_int_list(std::span<const int64_t> values);

// Output shapes of a non-source op. Source ops (Parameter, Const, ReadValue)
// have no rule beyond their declaration and are rejected here; use the Node
// overload for those.
std::vector<Shape> infer_output_shape(ir::OpType op, const ir::Attributes& attrs, std::span<const Shape> inputs);
std::vector<Shape> infer_output_shape(const ir::Node& node, std::span<const Shape> inputs);

struct Violation {
  int64_t node_id = -1;  // -1 for whole-graph problems such as cycles
  std::string node_name;
  std::string reason;

  std::string render() const;
};

struct ShapeReport {
  std::map<int64_t, std::vector<Shape>> shapes;  // node id -> output shapes, in port order
  std::vector<Violation> violations;

  bool static_valid() const noexcept { return violations.empty(); }
  // One line per violation: `node <id> (<name>): <reason>`.
  std::string render() const;
};

// Walks the graph in topological order, inferring every output and checking
// it against the declared port dims. Collects every violation rather than
// stopping at the first.
ShapeReport propagate_shapes(const ir::ModelGraph& graph);

}  // namespace statark::shapes
