#include "san/blocks.hpp"

#include <cmath>

#include "san/errors.hpp"

namespace san {

template <typename T>
void kaiming_uniform(Tensor<T>& weight, Index fan_in, std::mt19937_64& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  std::uniform_real_distribution<T> dist(-bound, bound);
  for (T& v : weight.mutable_data()) v = dist(rng);
}

namespace {

template <typename T>
void init_linear(LinearParams<T>& p, std::mt19937_64& rng) {
  kaiming_uniform(p.weight, p.in(), rng);
}

template <typename T>
Tensor<T> make_parameter(Shape shape, T fill = T(0)) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
void visit_tensor(const std::string& name, Tensor<T>& t, const Visitor<T>& v) {
  if (t.defined() && v.parameter) v.parameter(name, t);
}

}  // namespace

template <typename T>
BatchNorm<T> BatchNorm<T>::create(Index channels) {
  BatchNorm bn;
  bn.weight = make_parameter<T>(Shape{channels}, T(1));
  bn.bias = make_parameter<T>(Shape{channels});
  bn.stats = RunningStats<T>(channels);
  return bn;
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  return batch_norm(x, weight, bias, stats, mode);
}

template <typename T>
void BatchNorm<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  visit_tensor(prefix + ".weight", weight, v);
  visit_tensor(prefix + ".bias", bias, v);
  if (v.buffer) {
    v.buffer(prefix + ".running_mean", stats.mean);
    v.buffer(prefix + ".running_var", stats.var);
  }
}

template <typename T>
Tensor<T> apply_linear(const LinearParams<T>& p, const Tensor<T>& x) {
  return linear(x, p.weight, p.bias);
}

template <typename T>
void visit_linear(const std::string& prefix, LinearParams<T>& p, const Visitor<T>& v) {
  visit_tensor(prefix + ".weight", p.weight, v);
  visit_tensor(prefix + ".bias", p.bias, v);
}

template <typename T>
SABlock<T> SABlock<T>::create(const SABlockSpec& spec, std::mt19937_64& rng) {
  SABlock b;
  b.spec = spec;
  b.footprint = FootprintSpec(spec.footprint);
  b.bn_in = BatchNorm<T>::create(spec.channels);
  b.attn = AttentionParams<T>::create(spec.channels, b.footprint, spec.attention);
  for (LinearParams<T>* lp : {&b.attn.phi, &b.attn.psi, &b.attn.beta, &b.attn.position}) {
    if (lp->weight.defined()) init_linear(*lp, rng);
  }
  for (auto& layer : b.attn.gamma) init_linear(layer, rng);
  if (b.attn.conv_kernel.defined()) {
    kaiming_uniform(b.attn.conv_kernel, spec.channels * spec.footprint * spec.footprint, rng);
  }
  b.bn_mid = BatchNorm<T>::create(b.attn.dims.mid);
  b.expand = LinearParams<T>::zeros(b.attn.dims.mid, spec.channels, true);
  return b;
}

template <typename T>
Tensor<T> SABlock<T>::forward(const Tensor<T>& x, Mode mode) {
  const Tensor<T> a = relu(bn_in.forward(x, mode));
  const Tensor<T> y = relu(bn_mid.forward(attention_forward(a, attn, footprint), mode));
  return add(x, apply_linear(expand, y));
}

template <typename T>
void SABlock<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  bn_in.visit(prefix + ".bn_in", v);
  attn.for_each([&](const std::string& name, Tensor<T>& t) { visit_tensor(prefix + ".attn." + name, t, v); });
  bn_mid.visit(prefix + ".bn_mid", v);
  visit_linear(prefix + ".expand", expand, v);
}

template <typename T>
Transition<T> Transition<T>::create(Index in, Index out, bool pool, std::mt19937_64& rng) {
  Transition t;
  t.bn = BatchNorm<T>::create(in);
  t.pool = pool;
  t.linear = LinearParams<T>::zeros(in, out, true);
  init_linear(t.linear, rng);
  return t;
}

template <typename T>
Tensor<T> Transition<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = relu(bn.forward(x, mode));
  if (pool) {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
      throw DimensionError("transition: pooling needs even spatial extents, got " + shape_str(x.shape()));
    }
    h = max_pool2d(h, 2, 2);
  }
  return apply_linear(linear, h);
}

template <typename T>
void Transition<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  bn.visit(prefix + ".bn", v);
  visit_linear(prefix + ".linear", linear, v);
}

template <typename T>
LinearStem<T> LinearStem<T>::create(Index in, Index out, std::mt19937_64& rng) {
  LinearStem s;
  s.linear = LinearParams<T>::zeros(in, out, true);
  init_linear(s.linear, rng);
  return s;
}

template <typename T>
Tensor<T> LinearStem<T>::forward(const Tensor<T>& x) const {
  return apply_linear(linear, x);
}

template <typename T>
void LinearStem<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  visit_linear(prefix, linear, v);
}

template <typename T>
ConvStem<T> ConvStem<T>::create(Index in, Index out, std::mt19937_64& rng) {
  ConvStem s;
  s.conv = make_parameter<T>(Shape{out, in, 7, 7});
  kaiming_uniform(s.conv, in * 49, rng);
  s.bn = BatchNorm<T>::create(out);
  return s;
}

template <typename T>
Tensor<T> ConvStem<T>::forward(const Tensor<T>& x, Mode mode) {
  return max_pool2d(relu(bn.forward(conv2d(x, conv, Tensor<T>(), 2, 3), mode)), 3, 2, 1);
}

template <typename T>
void ConvStem<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  visit_tensor(prefix + ".conv.weight", conv, v);
  bn.visit(prefix + ".bn", v);
}

template <typename T>
Classifier<T> Classifier<T>::create(Index in, Index classes, std::mt19937_64& rng) {
  Classifier c;
  c.bn = BatchNorm<T>::create(in);
  c.fc = LinearParams<T>::zeros(in, classes, true);
  init_linear(c.fc, rng);
  return c;
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& x, Mode mode) {
  return apply_linear(fc, global_avg_pool(relu(bn.forward(x, mode))));
}

template <typename T>
void Classifier<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  bn.visit(prefix + ".bn", v);
  visit_linear(prefix + ".fc", fc, v);
}

template <typename T>
bool Bottleneck<T>::needs_projection(const BottleneckSpec& spec) {
  return spec.stride != 1 || spec.in != 4 * spec.width;
}

template <typename T>
Bottleneck<T> Bottleneck<T>::create(const BottleneckSpec& spec, std::mt19937_64& rng) {
  if (spec.in < 1 || spec.width < 1 || spec.kernel < 1 || spec.kernel % 2 == 0 || spec.stride < 1) {
    throw ConfigError("bottleneck: invalid widths, kernel or stride");
  }
  const Index out = 4 * spec.width;
  Bottleneck b;
  b.spec = spec;
  b.bn1 = BatchNorm<T>::create(spec.in);
  b.conv1 = make_parameter<T>(Shape{spec.width, spec.in, 1, 1});
  kaiming_uniform(b.conv1, spec.in, rng);
  b.bn2 = BatchNorm<T>::create(spec.width);
  b.conv2 = make_parameter<T>(Shape{spec.width, spec.width, spec.kernel, spec.kernel});
  kaiming_uniform(b.conv2, spec.width * spec.kernel * spec.kernel, rng);
  b.bn3 = BatchNorm<T>::create(spec.width);
  b.conv3 = make_parameter<T>(Shape{out, spec.width, 1, 1});
  if (needs_projection(spec)) {
    b.shortcut = make_parameter<T>(Shape{out, spec.in, 1, 1});
    kaiming_uniform(b.shortcut, spec.in, rng);
  }
  return b;
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  const Tensor<T> a = relu(bn1.forward(x, mode));
  Tensor<T> h = conv2d(a, conv1);
  h = conv2d(relu(bn2.forward(h, mode)), conv2, Tensor<T>(), spec.stride, spec.kernel / 2);
  h = conv2d(relu(bn3.forward(h, mode)), conv3);
  const Tensor<T> skip = shortcut.defined() ? conv2d(a, shortcut, Tensor<T>(), spec.stride, 0) : x;
  return add(skip, h);
}

template <typename T>
void Bottleneck<T>::visit(const std::string& prefix, const Visitor<T>& v) {
  bn1.visit(prefix + ".bn1", v);
  visit_tensor(prefix + ".conv1.weight", conv1, v);
  bn2.visit(prefix + ".bn2", v);
  visit_tensor(prefix + ".conv2.weight", conv2, v);
  bn3.visit(prefix + ".bn3", v);
  visit_tensor(prefix + ".conv3.weight", conv3, v);
  visit_tensor(prefix + ".shortcut.weight", shortcut, v);
}

#define SAN_INSTANTIATE(T)                                                                   \
  template void kaiming_uniform<T>(Tensor<T>&, Index, std::mt19937_64&);                     \
  template struct BatchNorm<T>;                                                              \
  template Tensor<T> apply_linear<T>(const LinearParams<T>&, const Tensor<T>&);              \
  template void visit_linear<T>(const std::string&, LinearParams<T>&, const Visitor<T>&);    \
  template struct SABlock<T>;                                                                \
  template struct Transition<T>;                                                             \
  template struct LinearStem<T>;                                                             \
  template struct ConvStem<T>;                                                               \
  template struct Classifier<T>;                                                             \
  template struct Bottleneck<T>;
SAN_INSTANTIATE(float)
SAN_INSTANTIATE(double)
#undef SAN_INSTANTIATE

}  // namespace san
