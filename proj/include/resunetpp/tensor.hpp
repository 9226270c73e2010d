#pragma once

// Dense NCHW tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same buffer. Operations record
// themselves on the Tape that is active on the calling thread (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape the
// same calls run forward-only.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "resunetpp/errors.hpp"

namespace resunetpp {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Mode { Train, Eval };

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Index dim(std::size_t axis) const;
  std::size_t rank() const { return node().shape.size(); }
  Index numel() const { return static_cast<Index>(node().data.size()); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  std::vector<T> to_vector() const { return node().data; }
  T item() const;

  // 4-D element access (n, c, h, w).
  T& at(Index n, Index c, Index h, Index w);
  T at(Index n, Index c, Index h, Index w) const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  // Fresh buffer, no gradient tracking.
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  std::shared_ptr<Node> node_ptr() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node);

 private:
  Node& node();
  const Node& node() const;

  std::shared_ptr<Node> node_;
};

// Ordered record of differentiable operations.
//
// An operation's inputs are always produced before it, so replaying the
// records in reverse order is a valid reverse-topological traversal.
template <typename T>
class Tape {
 public:
  struct Record {
    std::vector<std::shared_ptr<detail::TensorNode<T>>> inputs;
    std::shared_ptr<detail::TensorNode<T>> output;
    std::function<void()> backward;
  };

  void record(Record rec);
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  bool contains(const detail::TensorNode<T>* node) const;

  // Populates grad on every requires_grad tensor reachable from loss.
  // A tape supports exactly one backward pass.
  void backward(const Tensor<T>& loss);

  // Drops all records so the tape can serve a new forward pass.
  void reset();

 private:
  std::vector<Record> records_;
  bool consumed_ = false;
};

template <typename T>
Tape<T>* active_tape();

// Makes `tape` the active tape on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Disables recording for the scope's lifetime.
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

namespace detail {

// True if an op over these inputs should be recorded on the active tape.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

// Records `fn` as the backward rule producing `out` from `inputs` and marks
// `out` as requiring grad.
template <typename T>
void record_op(std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out,
               std::function<void()> fn);

// Returns the gradient buffer of `node`, allocating zeros on first use.
template <typename T>
std::vector<T>& grad_buffer(TensorNode<T>& node);

}  // namespace detail

}  // namespace resunetpp
