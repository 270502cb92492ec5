#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "varda/error.hpp"

namespace varda {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  ArrayX<Scalar> data;
  ArrayX<Scalar> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool leaf = true;

  void accumulate(const ArrayX<Scalar>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

}  // namespace detail

// Thread-local switch for recording ops. Evaluation paths run under NoGradGuard.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Tape;

/// Dense row-major tensor with a gradient slot.
///
/// A Tensor is a cheap handle; copies alias the same storage. Values are
/// immutable once an op has produced them. Only leaves (parameters, inputs)
/// expose mutable data, which the optimizer uses for in-place updates.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() = default;

  Tensor(Shape shape, ArrayX<Scalar> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<Scalar>>()) {
    for (Index d : shape)
      VARDA_REQUIRE(d > 0, "tensor extents must be positive, got " + shape_str(shape));
    VARDA_REQUIRE(shape_numel(shape) == data.size(),
                  "data length " + std::to_string(data.size()) + " does not match shape " +
                      shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false) {
    return Tensor(shape, ArrayX<Scalar>::Constant(shape_numel(shape), value), requires_grad);
  }
  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return full(shape, Scalar(0), requires_grad);
  }
  static Tensor ones(const Shape& shape, bool requires_grad = false) {
    return full(shape, Scalar(1), requires_grad);
  }
  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return full(Shape{}, value, requires_grad);
  }
  static Tensor from(const Shape& shape, std::initializer_list<Scalar> values,
                     bool requires_grad = false) {
    ArrayX<Scalar> data(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), data.data());
    return Tensor(shape, std::move(data), requires_grad);
  }
  static Tensor from(const Shape& shape, const std::vector<Scalar>& values,
                     bool requires_grad = false) {
    ArrayX<Scalar> data = Eigen::Map<const ArrayX<Scalar>>(values.data(), Index(values.size()));
    return Tensor(shape, std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return checked().shape; }
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    VARDA_REQUIRE(axis >= 0 && axis < rank(), "axis out of range for " + shape_str(shape()));
    return shape()[static_cast<std::size_t>(axis)];
  }
  Index numel() const { return checked().data.size(); }

  const ArrayX<Scalar>& data() const { return checked().data; }
  ArrayX<Scalar>& mutable_data() {
    VARDA_REQUIRE(checked().leaf, "only leaf tensors can be mutated");
    return node_->data;
  }
  Scalar item() const {
    VARDA_REQUIRE(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
    return data()[0];
  }
  Scalar at(std::initializer_list<Index> idx) const {
    VARDA_REQUIRE(static_cast<Index>(idx.size()) == rank(), "index rank mismatch");
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      VARDA_REQUIRE(i >= 0 && i < shape()[k], "index out of range");
      flat = flat * shape()[k++] + i;
    }
    return data()[flat];
  }

  bool requires_grad() const { return checked().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    VARDA_REQUIRE(checked().leaf, "requires_grad can only be set on leaves");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return checked().leaf; }

  bool has_grad() const { return checked().grad.size() != 0; }
  const ArrayX<Scalar>& grad() const {
    VARDA_REQUIRE(has_grad(), "tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { checked().grad.resize(0); }

  // Fresh leaf holding a copy of the values.
  Tensor detach() const { return Tensor(shape(), data(), false); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), data().template cast<Other>(), false);
  }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  detail::Node<Scalar>& checked() const {
    VARDA_REQUIRE(node_ != nullptr, "use of undefined tensor");
    return *node_;
  }

  NodePtr node_;
};

/// Ordered record of ops executed on tensors that require gradients.
///
/// Each entry holds the produced node and a rule that pushes that node's
/// gradient into its inputs. run_backward replays the entries in reverse and
/// clears the tape, so a second backward without a new forward pass fails.
template <typename Scalar>
class Tape {
 public:
  using Node = detail::Node<Scalar>;
  using Rule = std::function<void(const Node& out)>;

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void record(const Tensor<Scalar>& out, Rule rule) {
    entries_.push_back(Entry{out.node(), std::move(rule)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  void run_backward(const Tensor<Scalar>& loss) {
    VARDA_REQUIRE(loss.defined() && loss.numel() == 1,
                  "backward needs a scalar loss, got " + shape_str(loss.shape()));
    VARDA_REQUIRE(!entries_.empty(),
                  "backward on an empty tape (already consumed, or loss not recorded)");
    const auto found = std::find_if(entries_.begin(), entries_.end(),
                                    [&](const Entry& e) { return e.output == loss.node(); });
    VARDA_REQUIRE(found != entries_.end(), "loss was not produced under the active tape");

    loss.node()->accumulate(ArrayX<Scalar>::Ones(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.size() == 0) continue;
      it->rule(*it->output);
    }
    entries_.clear();
  }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    Rule rule;
  };
  std::vector<Entry> entries_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>::active().run_backward(loss);
}

namespace detail {

template <typename Scalar>
bool wants_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Build an op result. When any input requires grad, mark the result as an
// interior node and record `rule` on the active tape.
template <typename Scalar>
Tensor<Scalar> emit(Shape shape, ArrayX<Scalar> data,
                    std::initializer_list<const Tensor<Scalar>*> inputs,
                    typename Tape<Scalar>::Rule rule) {
  Tensor<Scalar> out(std::move(shape), std::move(data));
  if (wants_grad(inputs)) {
    out.node()->requires_grad = true;
    out.node()->leaf = false;
    Tape<Scalar>::active().record(out, std::move(rule));
  } else {
    out.node()->leaf = true;
  }
  return out;
}

template <typename Scalar>
void push(const std::shared_ptr<Node<Scalar>>& node, const ArrayX<Scalar>& g) {
  if (node->requires_grad) node->accumulate(g);
}

}  // namespace detail

}  // namespace varda
