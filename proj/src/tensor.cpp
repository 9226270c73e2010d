#include "resunetpp/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace resunetpp {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 1) throw ShapeError("shape dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  const Index n = shape_numel(shape);
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(n), fill);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  const Index n = shape_numel(shape);
  if (static_cast<Index>(values.size()) != n) {
    throw ShapeError("buffer of " + std::to_string(values.size()) + " elements does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
typename Tensor<T>::Node& Tensor<T>::node() {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

template <typename T>
const typename Tensor<T>::Node& Tensor<T>::node() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

template <typename T>
Index Tensor<T>::dim(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

template <typename T>
T& Tensor<T>::at(Index n, Index c, Index h, Index w) {
  const auto& s = node().shape;
  return node().data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
T Tensor<T>::at(Index n, Index c, Index h, Index w) const {
  const auto& s = node().shape;
  return node().data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  return detail::grad_buffer(node());
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node().grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node().shape, node().data);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), node().data);
  if (detail::should_record<T>({this})) {
    auto in = node_;
    auto on = out.node_;
    detail::record_op<T>({this}, out, [in, on] {
      auto& gi = detail::grad_buffer(*in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += on->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

template <typename T>
Tape<T>*& tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
Tape<T>* active_tape() {
  return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(tape_slot<T>()) {
  tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
void Tape<T>::record(Record rec) {
  if (consumed_) throw StateError("tape already consumed by backward; reset it before a new forward pass");
  records_.push_back(std::move(rec));
}

template <typename T>
bool Tape<T>::contains(const detail::TensorNode<T>* node) const {
  return std::any_of(records_.begin(), records_.end(),
                     [node](const Record& r) { return r.output.get() == node; });
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw StateError("second backward without a new forward pass");
  if (!loss.defined() || loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
  auto* root = loss.node_ptr().get();
  if (!contains(root)) throw StateError("backward on a tensor that is not on the tape (detached)");

  auto& seed = detail::grad_buffer(*root);
  seed[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  consumed_ = true;
  records_.clear();
}

template <typename T>
void Tape<T>::reset() {
  records_.clear();
  consumed_ = false;
}

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (tape_slot<T>() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
void record_op(std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out, std::function<void()> fn) {
  typename Tape<T>::Record rec;
  for (const Tensor<T>* t : inputs) {
    if (t && t->defined()) rec.inputs.push_back(t->node_ptr());
  }
  out.set_requires_grad(true);
  rec.output = out.node_ptr();
  rec.backward = std::move(fn);
  tape_slot<T>()->record(std::move(rec));
}

template <typename T>
std::vector<T>& grad_buffer(TensorNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);
template void record_op<float>(std::initializer_list<const Tensor<float>*>, Tensor<float>&, std::function<void()>);
template void record_op<double>(std::initializer_list<const Tensor<double>*>, Tensor<double>&,
                                std::function<void()>);
template std::vector<float>& grad_buffer<float>(TensorNode<float>&);
template std::vector<double>& grad_buffer<double>(TensorNode<double>&);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();

}  // namespace resunetpp
