#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dru/tensor.hpp"

namespace dru {

// Named tensor with a gradient slot.
struct Parameter {
  std::string name;
  Tensor4 value;
  Tensor4 grad;
  bool trainable = true;
};

// Owns model parameters and non-trainable buffers (BN running statistics).
// Registration order is fixed by construction and drives checkpoint layout
// and optimizer state indexing.
class ParamRegistry {
 public:
  Parameter& create(const std::string& name, Shape4 shape, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  const std::vector<std::unique_ptr<Parameter>>& items() const { return items_; }
  void zero_grads();
  std::int64_t scalar_count(bool trainable_only) const;

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, Parameter*> index_;
};

enum class OpKind {
  leaf,
  param,
  conv2d,
  conv2d_transpose,
  batch_norm,
  relu,
  dropout,
  concat,
  add,
  softmax,
  sum,
  ce_loss,
};

// Records forward operations in execution order; backward() replays them in
// exact reverse, accumulating gradients per value slot and flushing parameter
// gradients into their registry slots.
class Tape {
 public:
  struct Var {
    std::shared_ptr<const Tensor4> value;
    int id = -1;  // slot id; -1 when the tape is not recording

    const Tensor4& val() const { return *value; }
    const Shape4& shape() const { return value->shape(); }
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var leaf(Tensor4 v);
  Var leaf(std::shared_ptr<const Tensor4> v);
  Var param(Parameter& p);
  // attaches detached handles produced outside this tape
  Var ensure(const Var& v);

  // op plumbing
  int add_slot(std::shared_ptr<const Tensor4> v, Parameter* p = nullptr);
  void add_node(OpKind kind, std::vector<int> inputs, int output, std::function<void(Tape&)> pull);
  Var var(int id) const;

  Tensor4& grad(int id);            // lazily allocated, zero-filled
  const Tensor4* grad_if(int id) const;

  // Reverse sweep from a scalar loss. Parameter gradients accumulate into
  // Parameter::grad; callers zero those first (see ParamRegistry::zero_grads).
  void backward(const Var& loss);

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<std::pair<int, Parameter*>>& param_slots() const { return param_slots_; }

  static Var detached(Tensor4 v) {
    return Var{std::make_shared<const Tensor4>(std::move(v)), -1};
  }

 private:
  struct Slot {
    std::shared_ptr<const Tensor4> value;
    std::unique_ptr<Tensor4> grad;
    Parameter* param = nullptr;
  };
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    int output;
    std::function<void(Tape&)> pull;
  };

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> param_slots_;
  bool recording_;
};

using Var = Tape::Var;

// Runs the reverse sweep and returns the gradient store for every parameter
// attached to the tape (unreached ones keep their zeroed gradient).
std::unordered_map<std::string, const Tensor4*> backward(Tape& tape, const Var& loss);

}  // namespace dru
