#pragma once

#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "restok/params.hpp"
#include "restok/tensor.hpp"

RESTOK_BEGIN_NAMESPACE

class Tape;

// Values cut out of the graph by stop_gradient and straight_through. Captured
// on one tape and replayed on another, it pins those values to a base point so
// finite differences measure the same surrogate objective backward() differentiates.
struct DetachJournal {
  std::vector<Tensor> values;
  std::size_t cursor = 0;
  bool replay = false;
};

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode compute tape. Nodes are appended in forward order and visited
// once each, in reverse, by backward(). Parameters enter as leaves whose
// gradients are added into Parameter::grad when backward() finishes.
class Tape {
 public:
  // Receives the gradient flowing into a node and pushes it to the node's inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var parameter(Parameter& p);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].requires_grad; }

  // Adds g into v's gradient buffer (allocated on first use). No-op when v
  // does not require a gradient.
  void accumulate(Var v, const Tensor& g);
  // Direct access to v's gradient buffer for ops that scatter into it.
  Tensor* grad_buffer(Var v);

  // Seeds d(root)/d(root) = 1 for a scalar root and back-propagates.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  // Gradient of the last backward() with respect to v (zeros if v was unused).
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  void set_detach_journal(DetachJournal* journal) { journal_ = journal; }
  DetachJournal* detach_journal() const { return journal_; }
  // Records v into the journal, or returns the journaled value when replaying.
  Tensor detach(Tensor v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool record_;
  DetachJournal* journal_ = nullptr;
};

RESTOK_END_NAMESPACE
