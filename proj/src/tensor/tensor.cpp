#include "san/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "san/errors.hpp"

namespace san {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

template <typename T>
std::span<T> Node<T>::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  return grad;
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<NodeType>()) {
  node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeType>()) {
  if (static_cast<Index>(values.size()) != shape_numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<NodeType> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->shape;
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const Shape& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename T>
Index Tensor<T>::numel() const {
  return static_cast<Index>(data().size());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank does not match " + shape_str(s));
  Index offset = 0;
  std::size_t i = 0;
  for (Index v : index) {
    if (v < 0 || v >= s[i]) throw DimensionError("index out of range for " + shape_str(s));
    offset = offset * s[i] + v;
    ++i;
  }
  return data()[static_cast<std::size_t>(offset)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (!node_) throw UsageError("use of undefined tensor");
  if (node_->backward) throw UsageError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size() && !node_->data.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), std::vector<T>(data().begin(), data().end()));
}

namespace {

template <typename T>
bool all_finite(std::span<const T> values) {
  // Exponent bits all set means inf or NaN; the integer form vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
  return bad == 0;
}

template <typename T>
Tensor<T> finish_result(Shape shape, std::vector<T> data,
                        std::vector<std::shared_ptr<detail::Node<T>>> inputs,
                        std::string_view op, std::function<void(detail::Node<T>&)> backward) {
  if (static_cast<Index>(data.size()) != shape_numel(shape)) {
    throw DimensionError(std::string(op) + ": result length does not match " + shape_str(shape));
  }
  if (!all_finite<T>(data)) {
    const bool inputs_finite = std::all_of(inputs.begin(), inputs.end(), [](const auto& n) {
      return all_finite<T>(n->data);
    });
    if (inputs_finite) throw NumericError(std::string(op) + " produced non-finite values");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool record =
      grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                    [](const auto& n) { return n->requires_grad; });
  if (record) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, std::string_view op,
                      std::function<void(detail::Node<T>&)> backward) {
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor<T>* t : inputs) {
    if (!t->defined()) throw UsageError(std::string(op) + ": undefined input tensor");
    nodes.push_back(t->node_ptr());
  }
  return finish_result<T>(std::move(shape), std::move(data), std::move(nodes), op,
                          std::move(backward));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      std::string_view op, std::function<void(detail::Node<T>&)> backward) {
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor<T>& t : inputs) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
    nodes.push_back(t.node_ptr());
  }
  return finish_result<T>(std::move(shape), std::move(data), std::move(nodes), op,
                          std::move(backward));
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root) {
  if (!root.defined()) throw UsageError("tape root is undefined");
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node<T>* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void Tape<T>::backward() {
  detail::Node<T>* root = root_.node();
  if (!root->requires_grad) {
    throw UsageError("backward on a tensor that is not recorded on the tape");
  }
  // Intermediate grads are rebuilt on every pass; leaves accumulate.
  for (detail::Node<T>* n : order_) {
    if (n->backward) n->grad.clear();
  }
  auto seed = root->grad_buffer();
  std::fill(seed.begin(), seed.end(), T(1));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->data.size()) n->backward(*n);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape<T>(loss).backward();
}

template class Tensor<float>;
template class Tensor<double>;
template struct detail::Node<float>;
template struct detail::Node<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template Tensor<float> make_result<float>(Shape, std::vector<float>,
                                          std::initializer_list<const Tensor<float>*>,
                                          std::string_view,
                                          std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result<double>(Shape, std::vector<double>,
                                            std::initializer_list<const Tensor<double>*>,
                                            std::string_view,
                                            std::function<void(detail::Node<double>&)>);
template Tensor<float> make_result<float>(Shape, std::vector<float>,
                                          const std::vector<Tensor<float>>&, std::string_view,
                                          std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result<double>(Shape, std::vector<double>,
                                            const std::vector<Tensor<double>>&, std::string_view,
                                            std::function<void(detail::Node<double>&)>);

}  // namespace san
