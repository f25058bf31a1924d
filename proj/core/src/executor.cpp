#include "statark/executor.hpp"

#include <set>

#include "statark/error.hpp"
#include "statark/kernels.hpp"
#include "statark/shapes.hpp"

namespace statark::exec {
namespace {

using ir::OpType;

std::string label(const ir::Node& node) { return "node " + std::to_string(node.id) + " (" + node.name + ")"; }

}  // namespace

CompiledModel compile(const ir::ModelGraph& graph, const ir::WeightStore& weights) {
  ir::validate_structure(graph);
  const shapes::ShapeReport report = shapes::propagate_shapes(graph);
  if (!report.static_valid()) {
    throw CompileError("graph '" + graph.name + "' is not static-valid:\n" + report.render());
  }

  CompiledModel model;
  model.name_ = graph.name;
  std::map<int64_t, size_t> output_buffer;

  auto input_buffer = [&](const ir::Node& node, const ir::Port& port) {
    const ir::Edge* edge = graph.incoming(node.id, port.id);
    return output_buffer.at(edge->from_layer);
  };

  std::map<std::string, int> reads;
  std::map<std::string, int> writes;

  for (int64_t id : ir::topo_order(graph)) {
    const ir::Node& node = graph.node(id);
    CompiledModel::Step step;
    step.op = node.type;
    step.node_id = id;
    for (const auto& port : node.inputs) step.inputs.push_back(input_buffer(node, port));
    if (!node.outputs.empty()) {
      step.output = model.buffers_.size();
      model.buffers_.emplace_back(report.shapes.at(id).front());
      output_buffer[id] = step.output;
    }

    try {
      switch (node.type) {
        case OpType::Parameter:
          if (node.name.empty()) throw CompileError(label(node) + ": Parameter needs a name");
          if (!model.parameters_.emplace(node.name, step.output).second) {
            throw CompileError("duplicate Parameter name '" + node.name + "'");
          }
          continue;
        case OpType::Const: {
          const Tensor* w = weights.find(id);
          if (!w) throw CompileError(label(node) + ": no weights for Const");
          model.buffers_[step.output].assign_from(*w);
          continue;
        }
        case OpType::Result:
          if (node.name.empty()) throw CompileError(label(node) + ": Result needs a name");
          if (!model.results_.emplace(node.name, step.inputs.front()).second) {
            throw CompileError("duplicate Result name '" + node.name + "'");
          }
          continue;
        case OpType::ReadValue: {
          step.variable_id = *node.attribute("variable_id");
          if (++reads[step.variable_id] > 1) {
            throw CompileError("state '" + step.variable_id + "' has more than one ReadValue");
          }
          const Shape& shape = model.buffers_[step.output].shape();
          model.states_[step.variable_id] = {Tensor(shape), Tensor(shape)};
          break;
        }
        case OpType::Assign:
          step.variable_id = *node.attribute("variable_id");
          if (++writes[step.variable_id] > 1) {
            throw CompileError("state '" + step.variable_id + "' has more than one Assign");
          }
          model.assigns_.emplace_back(step.variable_id, step.inputs.front());
          continue;
        case OpType::MatMul:
          step.transpose_a = shapes::flag_attribute(node.attributes, "transpose_a", false);
          step.transpose_b = shapes::flag_attribute(node.attributes, "transpose_b", false);
          break;
        case OpType::RMSNorm:
          step.eps = static_cast<float>(shapes::float_attribute(node.attributes, "eps"));
          if (!(step.eps > 0.0f)) throw CompileError(label(node) + ": eps must be positive");
          break;
        case OpType::ScatterRowUpdate: {
          step.axis = shapes::int_attribute(node.attributes, "axis");
          const auto rank = static_cast<int64_t>(model.buffers_[step.inputs[0]].rank());
          if (step.axis < 0) step.axis += rank;
          break;
        }
        case OpType::Transpose:
          step.order = shapes::int_list_attribute(node.attributes, "order");
          break;
        default:
          break;
      }
    } catch (const ShapeError& e) {
      throw CompileError(label(node) + ": " + e.what());
    }
    model.plan_.push_back(std::move(step));
  }

  for (const auto& [var, count] : reads) {
    if (!writes.count(var)) throw CompileError("ReadValue of state '" + var + "' has no matching Assign");
  }
  for (const auto& [var, count] : writes) {
    if (!reads.count(var)) throw CompileError("Assign to state '" + var + "' has no matching ReadValue");
  }
  return model;
}

void CompiledModel::run_step(const Step& step) {
  auto in = [&](size_t i) -> const Tensor& { return buffers_[step.inputs[i]]; };
  Tensor& out = buffers_[step.output];
  switch (step.op) {
    case OpType::ReadValue: out.assign_from(states_.at(step.variable_id).current); break;
    case OpType::MatMul: kernels::matmul(in(0), in(1), step.transpose_a, step.transpose_b, out); break;
    case OpType::Softmax: kernels::softmax_lastdim(in(0), out); break;
    case OpType::Add: kernels::elementwise(kernels::ElementwiseMode::Add, in(0), &in(1), out); break;
    case OpType::Multiply: kernels::elementwise(kernels::ElementwiseMode::Multiply, in(0), &in(1), out); break;
    case OpType::SiLU: kernels::elementwise(kernels::ElementwiseMode::SiLU, in(0), nullptr, out); break;
    case OpType::RMSNorm: kernels::rmsnorm(in(0), in(1), step.eps, out); break;
    case OpType::RotaryApply: kernels::apply_rotary(in(0), in(1), out); break;
    case OpType::ScatterRowUpdate: {
      const Tensor& cache = in(0);
      const int64_t row = kernels::index_value(in(1)[0], cache.dim(step.axis));
      kernels::scatter_row_update(cache, row, in(2), step.axis, out);
      break;
    }
    case OpType::Gather: kernels::gather_rows(in(0), in(1), out); break;
    case OpType::Reshape: kernels::reshape(in(0), out); break;
    case OpType::Transpose: kernels::transpose(in(0), step.order, out); break;
    case OpType::Parameter:
    case OpType::Const:
    case OpType::Result:
    case OpType::Assign: break;
  }
}

TensorMap CompiledModel::infer(const TensorMap& inputs) {
  for (const auto& [name, tensor] : inputs) {
    if (!parameters_.count(name)) throw InferError("unknown input '" + name + "'");
  }
  for (const auto& [name, index] : parameters_) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw InferError("missing input '" + name + "'");
    Tensor& buffer = buffers_[index];
    if (it->second.shape() != buffer.shape()) {
      throw InferError("input '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                       " but the parameter is declared " + shape_to_string(buffer.shape()));
    }
    buffer.assign_from(it->second);
  }

  for (const Step& step : plan_) {
    try {
      run_step(step);
    } catch (const KernelError& e) {
      throw InferError("node " + std::to_string(step.node_id) + ": " + e.what());
    }
  }

  for (const auto& [var, index] : assigns_) states_.at(var).current.assign_from(buffers_[index]);

  TensorMap outputs;
  for (const auto& [name, index] : results_) outputs.emplace(name, buffers_[index]);
  return outputs;
}

void CompiledModel::reset_states() {
  for (auto& [var, state] : states_) state.current.assign_from(state.initial);
}

Tensor CompiledModel::get_state(const std::string& variable_id) const {
  auto it = states_.find(variable_id);
  if (it == states_.end()) throw InferError("unknown state '" + variable_id + "'");
  return it->second.current;
}

std::vector<std::string> CompiledModel::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [name, index] : parameters_) out.push_back(name);
  return out;
}

std::vector<std::string> CompiledModel::result_names() const {
  std::vector<std::string> out;
  for (const auto& [name, index] : results_) out.push_back(name);
  return out;
}

std::vector<std::string> CompiledModel::state_ids() const {
  std::vector<std::string> out;
  for (const auto& [var, state] : states_) out.push_back(var);
  return out;
}

const Shape& CompiledModel::parameter_shape(const std::string& name) const {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) throw InferError("unknown parameter '" + name + "'");
  return buffers_[it->second].shape();
}

}  // namespace statark::exec
