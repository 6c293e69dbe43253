#include "dru/tape.hpp"

#include "dru/kernels.hpp"

namespace dru {

Parameter& ParamRegistry::create(const std::string& name, Shape4 shape, bool trainable) {
  if (index_.count(name)) {
    throw UsageError("ParamRegistry: duplicate parameter name '" + name + "'");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor4(shape);
  p->grad = Tensor4(shape);
  p->trainable = trainable;
  Parameter& ref = *p;
  index_[name] = p.get();
  items_.push_back(std::move(p));
  return ref;
}

Parameter* ParamRegistry::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParamRegistry::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

void ParamRegistry::zero_grads() {
  for (auto& p : items_) p->grad.zero();
}

std::int64_t ParamRegistry::scalar_count(bool trainable_only) const {
  std::int64_t total = 0;
  for (const auto& p : items_) {
    if (trainable_only && !p->trainable) continue;
    total += p->value.numel();
  }
  return total;
}

Var Tape::leaf(Tensor4 v) { return leaf(std::make_shared<const Tensor4>(std::move(v))); }

Var Tape::leaf(std::shared_ptr<const Tensor4> v) {
  if (!recording_) return Var{std::move(v), -1};
  int id = add_slot(v);
  return Var{std::move(v), id};
}

Var Tape::param(Parameter& p) {
  // non-owning view of the registry tensor; values are stable within a step
  std::shared_ptr<const Tensor4> view(std::shared_ptr<void>(), &p.value);
  if (!recording_) return Var{std::move(view), -1};
  int id = add_slot(view, &p);
  return Var{std::move(view), id};
}

Var Tape::ensure(const Var& v) {
  if (!recording_ || v.id >= 0) return v;
  return leaf(v.value);
}

int Tape::add_slot(std::shared_ptr<const Tensor4> v, Parameter* p) {
  slots_.push_back(Slot{std::move(v), nullptr, p});
  int id = static_cast<int>(slots_.size()) - 1;
  if (p) param_slots_.emplace_back(id, p);
  return id;
}

void Tape::add_node(OpKind kind, std::vector<int> inputs, int output,
                    std::function<void(Tape&)> pull) {
  nodes_.push_back(Node{kind, std::move(inputs), output, std::move(pull)});
}

Var Tape::var(int id) const { return Var{slots_[id].value, id}; }

Tensor4& Tape::grad(int id) {
  Slot& s = slots_[id];
  if (!s.grad) s.grad = std::make_unique<Tensor4>(s.value->shape());
  return *s.grad;
}

const Tensor4* Tape::grad_if(int id) const {
  return id >= 0 && slots_[id].grad ? slots_[id].grad.get() : nullptr;
}

void Tape::backward(const Var& loss) {
  if (!recording_ || loss.id < 0) {
    throw UsageError("backward: loss was not recorded on this tape");
  }
  if (!(loss.shape() == Shape4{1, 1, 1, 1})) {
    throw UsageError("backward: loss must be scalar (1,1,1,1), got " + loss.shape().str());
  }
  grad(loss.id).fill(real_t(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (grad_if(it->output)) it->pull(*this);
  }
  const auto& K = kern::active();
  for (auto& [id, p] : param_slots_) {
    if (const Tensor4* g = grad_if(id)) {
      K.acc(p->grad.numel(), p->grad.data(), g->data());
    }
  }
}

std::unordered_map<std::string, const Tensor4*> backward(Tape& tape, const Var& loss) {
  tape.backward(loss);
  std::unordered_map<std::string, const Tensor4*> store;
  for (const auto& [id, p] : tape.param_slots()) store[p->name] = &p->grad;
  return store;
}

}  // namespace dru
