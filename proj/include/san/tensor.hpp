#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace san {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autograd graph. `backward` reads `grad` and accumulates
// into the grads of `inputs`; it is empty for leaves.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";

  // Lazily sized gradient buffer, zero filled on first use.
  std::span<T> grad_buffer();
};

}  // namespace detail

// Whether new ops record themselves on the tape (thread local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor. Copies are cheap handles sharing one graph node;
// use clone() or detach() for an independent buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor from_node(std::shared_ptr<NodeType> node);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  Index dim(int axis) const;
  Index numel() const;

  std::span<const T> data() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<Index> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const { return detach(); }
  template <typename U>
  Tensor<U> cast() const;

  NodeType* node() const { return node_.get(); }
  const std::shared_ptr<NodeType>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> values(data().begin(), data().end());
  return Tensor<U>(shape(), std::move(values));
}

// Builds an op result, recording it on the tape when grad mode is on and any
// input requires grad. Throws NumericError if finite inputs produced a
// non-finite output.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::string_view op,
                      std::function<void(detail::Node<T>&)> backward);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs, std::string_view op,
                      std::function<void(detail::Node<T>&)> backward);

// Topologically ordered record of every node reachable from a root.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  // Inputs precede the nodes that consume them; each node appears once.
  std::span<detail::Node<T>* const> order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and propagates in reverse order.
  void backward();

 private:
  Tensor<T> root_;
  std::vector<detail::Node<T>*> order_;
};

// Populates grads of every requires_grad leaf reachable from a scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace san
