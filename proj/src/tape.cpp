#include "restok/tape.hpp"

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

const Tensor& Var::value() const {
  if (!tape_) throw StateError("use of an empty Var");
  return tape_->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tensor Tape::detach(Tensor v) {
  if (!journal_) return v;
  if (!journal_->replay) {
    journal_->values.push_back(v);
    return v;
  }
  if (journal_->cursor >= journal_->values.size()) throw StateError("detach journal exhausted during replay");
  const Tensor& saved = journal_->values[journal_->cursor++];
  if (saved.shape() != v.shape()) throw DimensionError("detach journal shape mismatch during replay");
  return saved;
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = record_ && p.trainable;
  Var v = push(std::move(n));
  param_nodes_[&p] = v.id_;
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw StateError("Var recorded on a different tape");
      if (nodes_[static_cast<std::size_t>(in.id_)].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor* Tape::grad_buffer(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros_like(n.value);
  return &n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Tensor* buf = grad_buffer(v);
  if (!buf) return;
  require_same_shape(*buf, g, "Tape::accumulate");
  *buf += g;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() without a seed needs a scalar root, got " +
                         shape_string(root.shape()));
  }
  backward(root, Tensor(root.shape(), Real(1)));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (!record_) throw StateError("backward() on a tape that does not record gradients");
  for (auto& n : nodes_) n.grad = Tensor();
  accumulate(root, seed);
  for (std::size_t i = static_cast<std::size_t>(root.id_) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // Callbacks only touch their inputs' buffers, which precede node i.
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.param && !n.grad.empty()) n.param->grad += n.grad;
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.empty()) return Tensor::zeros_like(n.value);
  return n.grad;
}

RESTOK_END_NAMESPACE
