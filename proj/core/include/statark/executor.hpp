#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "statark/ir.hpp"
#include "statark/tensor.hpp"

namespace statark::exec {

using TensorMap = std::map<std::string, Tensor>;

// Executable form of a static-valid graph. Every buffer is allocated once by
// compile() and reused by every infer() call. Instances are independent
// values: copies share no storage, so two copies never see each other's
// states. A single instance is not safe for concurrent infer() calls.
class CompiledModel {
 public:
  // Binds inputs by Parameter name, runs the plan, and returns a deep copy
  // of every Result keyed by Result name. Assign writes land in the states
  // after the whole plan has run, so ReadValue observes them on the next call.
  TensorMap infer(const TensorMap& inputs);

  // Puts every state back to its initial (zero) tensor.
  void reset_states();
  Tensor get_state(const std::string& variable_id) const;

  const std::string& name() const noexcept { return name_; }
  std::vector<std::string> parameter_names() const;
  std::vector<std::string> result_names() const;
  std::vector<std::string> state_ids() const;
  const Shape& parameter_shape(const std::string& name) const;
  size_t buffer_count() const noexcept { return buffers_.size(); }

 private:
  friend CompiledModel compile(const ir::ModelGraph& graph, const ir::WeightStore& weights);

  struct Step {
    ir::OpType op = ir::OpType::Parameter;
    int64_t node_id = 0;
    std::vector<size_t> inputs;
    size_t output = 0;
    bool transpose_a = false;
    bool transpose_b = false;
    float eps = 0.0f;
    int64_t axis = 0;
    std::vector<int64_t> order;
    std::string variable_id;
  };

  struct State {
    Tensor current;
    Tensor initial;
  };

  void run_step(const Step& step);

  std::string name_;
  std::vector<Tensor> buffers_;
  std::vector<Step> plan_;
  std::map<std::string, size_t> parameters_;
  std::map<std::string, size_t> results_;
  std::map<std::string, State> states_;
  std::vector<std::pair<std::string, size_t>> assigns_;
};

// Refuses any graph with shape violations (including `?` dims), Const nodes
// without weights, and ReadValue/Assign nodes lacking a partner.
CompiledModel compile(const ir::ModelGraph& graph, const ir::WeightStore& weights);

}  // namespace statark::exec
