#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>

#include "san/attention.hpp"
#include "san/ops.hpp"

namespace san {

// Receives every trainable tensor and every non-trainable state buffer of a
// module under a dotted name.
template <typename T>
struct Visitor {
  std::function<void(const std::string&, Tensor<T>&)> parameter;
  std::function<void(const std::string&, std::vector<T>&)> buffer;
};

// Uniform in +-sqrt(6 / fan_in).
template <typename T>
void kaiming_uniform(Tensor<T>& weight, Index fan_in, std::mt19937_64& rng);

template <typename T>
struct BatchNorm {
  Tensor<T> weight;  // gamma_bn, starts at 1
  Tensor<T> bias;    // beta_bn, starts at 0
  RunningStats<T> stats;

  static BatchNorm create(Index channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

template <typename T>
Tensor<T> apply_linear(const LinearParams<T>& p, const Tensor<T>& x);
template <typename T>
void visit_linear(const std::string& prefix, LinearParams<T>& p, const Visitor<T>& v);

struct SABlockSpec {
  Index channels = 0;
  int footprint = 3;
  AttentionConfig attention;
};

// out = x + expand(ReLU(BN(attention(ReLU(BN(x))))))
template <typename T>
struct SABlock {
  SABlockSpec spec;
  FootprintSpec footprint{1};
  BatchNorm<T> bn_in;
  AttentionParams<T> attn;
  BatchNorm<T> bn_mid;
  LinearParams<T> expand;  // Cm -> C, zero-initialized

  static SABlock create(const SABlockSpec& spec, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

// BN -> ReLU -> optional 2x2/2 max pool -> linear with bias.
template <typename T>
struct Transition {
  BatchNorm<T> bn;
  bool pool = true;
  LinearParams<T> linear;

  static Transition create(Index in, Index out, bool pool, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

// Pointwise linear stem of the attention networks.
template <typename T>
struct LinearStem {
  LinearParams<T> linear;

  static LinearStem create(Index in, Index out, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const Visitor<T>& v);
};

// 7x7/2 conv -> BN -> ReLU -> 3x3/2 max pool.
template <typename T>
struct ConvStem {
  Tensor<T> conv;
  BatchNorm<T> bn;

  static ConvStem create(Index in, Index out, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

// BN -> ReLU -> global average pool -> linear. Returns logits.
template <typename T>
struct Classifier {
  BatchNorm<T> bn;
  LinearParams<T> fc;

  static Classifier create(Index in, Index classes, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

struct BottleneckSpec {
  Index in = 0;
  Index width = 0;  // mid channels; output is 4 * width
  int kernel = 3;
  int stride = 1;
};

// Pre-activation bottleneck: shortcut(a) + conv3(RB(conv2(RB(conv1(a))))),
// a = ReLU(BN(x)). The shortcut is the identity when shapes allow it, else a
// strided 1x1 projection of a.
template <typename T>
struct Bottleneck {
  BottleneckSpec spec;
  BatchNorm<T> bn1;
  Tensor<T> conv1;
  BatchNorm<T> bn2;
  Tensor<T> conv2;
  BatchNorm<T> bn3;
  Tensor<T> conv3;  // zero-initialized
  Tensor<T> shortcut;

  static Bottleneck create(const BottleneckSpec& spec, std::mt19937_64& rng);
  static bool needs_projection(const BottleneckSpec& spec);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void visit(const std::string& prefix, const Visitor<T>& v);
};

}  // namespace san
