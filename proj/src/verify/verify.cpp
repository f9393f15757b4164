#include "san/verify.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "san/errors.hpp"
#include "san/ops.hpp"

namespace san {

nlohmann::json CheckResult::to_json() const {
  return {{"name", name},       {"shape", shape},        {"max_error", max_error},
          {"tolerance", tolerance}, {"compared", compared}, {"passed", passed}};
}

CheckResult gradcheck(const std::string& name, const GradFunction& f, std::vector<Tensor<double>> inputs,
                      const GradCheckOptions& opt) {
  CheckResult result;
  result.name = name;
  result.tolerance = opt.tolerance;
  if (!inputs.empty()) result.shape = shape_str(inputs.front().shape());

  for (auto& t : inputs) t.zero_grad();
  const Tensor<double> out = f(inputs);
  if (!out.requires_grad()) throw UsageError("gradcheck " + name + ": output does not depend on any checked input");
  const Tensor<double> projection = random_tensor(out.shape(), opt.seed ^ 0x9e3779b97f4a7c15ull);
  backward(sum(hadamard(out, projection)));

  auto loss_at = [&]() {
    NoGradGuard guard;
    const Tensor<double> y = f(inputs);
    double acc = 0;
    for (std::size_t i = 0; i < y.data().size(); ++i) acc += y.data()[i] * projection.data()[i];
    return acc;
  };

  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.data().size(), 0.0);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = loss_at();
      values[i] = saved - opt.step;
      const double down = loss_at();
      values[i] = saved;
      const double numeric = (up - down) / (2 * opt.step);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      result.max_error = std::max(result.max_error, std::abs(analytic[i] - numeric) / scale);
      ++result.compared;
    }
  }
  result.passed = result.compared > 0 && result.max_error <= opt.tolerance;
  return result;
}

std::vector<VerifyCase> filter_cases(std::vector<VerifyCase> cases, const std::string& kind,
                                     const std::string& relation) {
  std::erase_if(cases, [&](const VerifyCase& c) {
    return (!kind.empty() && c.kind != kind) || (!relation.empty() && c.relation != relation);
  });
  return cases;
}

namespace {

constexpr Index kChannels = 16;
constexpr Index kExtent = 5;

Tensor<double> leaf(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t = random_tensor(shape, seed, scale);
  t.set_requires_grad(true);
  return t;
}

AttentionConfig small_config(OperatorKind kind, Relation relation) {
  AttentionConfig cfg;
  cfg.kind = kind;
  cfg.relation = relation;
  cfg.r1 = 4;
  cfg.r2 = 2;
  cfg.share = 2;
  return cfg;
}

// Gradcheck of attention_forward w.r.t. the input and every parameter.
CheckResult attention_gradcheck(const std::string& name, const AttentionConfig& cfg, std::uint64_t seed) {
  const FootprintSpec fp(3);
  auto params = AttentionParams<double>::create(kChannels, fp, cfg);
  randomize(params, seed);
  std::vector<Tensor<double>> inputs{leaf({1, kChannels, kExtent, kExtent}, seed + 1)};
  params.for_each([&](const std::string&, Tensor<double>& t) { inputs.push_back(t); });
  GradFunction f = [params, fp](const std::vector<Tensor<double>>& in) {
    auto p = params;
    std::size_t i = 1;
    p.for_each([&](const std::string&, Tensor<double>& t) { t = in[i++]; });
    return attention_forward(in[0], p, fp);
  };
  return gradcheck(name, f, inputs, GradCheckOptions{.seed = seed});
}

// Randomizes a module's parameters (batch-norm scales around 1) and its
// running statistics, then returns them as gradcheck inputs.
template <typename Module>
std::vector<Tensor<double>> module_inputs(Module& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  std::vector<Tensor<double>> out;
  m.visit("m", Visitor<double>{[&](const std::string& name, Tensor<double>& t) {
                            const bool bn_scale = name.find("bn") != std::string::npos &&
                                                  name.ends_with(".weight") && t.rank() == 1;
                            for (double& v : t.mutable_data()) v = (bn_scale ? 1.0 : 0.0) + dist(rng);
                            out.push_back(t);
                          },
                          [&](const std::string&, std::vector<double>&) {}});
  return out;
}

template <typename Module>
CheckResult module_gradcheck(const std::string& name, Module module, const Shape& input_shape, Mode mode,
                             std::uint64_t seed) {
  std::vector<Tensor<double>> inputs{leaf(input_shape, seed + 1)};
  auto params = module_inputs(module, seed);
  inputs.insert(inputs.end(), params.begin(), params.end());
  GradFunction f = [module, mode](const std::vector<Tensor<double>>& in) mutable {
    return module.forward(in[0], mode);
  };
  return gradcheck(name, f, inputs, GradCheckOptions{.seed = seed});
}

VerifyCase primitive(const std::string& name, std::vector<Shape> shapes, GradFunction f) {
  return VerifyCase{"primitive", name, name, [name, shapes = std::move(shapes), f](std::uint64_t seed) {
                      std::vector<Tensor<double>> inputs;
                      for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(leaf(shapes[i], seed + i));
                      return gradcheck(name, f, inputs, GradCheckOptions{.seed = seed});
                    }};
}

std::vector<VerifyCase> primitive_cases() {
  const Shape x{1, kChannels, kExtent, kExtent};
  std::vector<VerifyCase> cases;
  cases.push_back(primitive("add_broadcast", {x, {1, kChannels, 1, 1}}, [](const auto& in) { return add(in[0], in[1]); }));
  cases.push_back(primitive("sub_broadcast", {x, {kExtent}}, [](const auto& in) { return sub(in[0], in[1]); }));
  cases.push_back(
      primitive("hadamard_group", {{1, 4, 1, 9}, {1, 4, 4, 9}}, [](const auto& in) { return hadamard(in[0], in[1]); }));
  cases.push_back(primitive("scale", {x}, [](const auto& in) { return scale(in[0], 1.5); }));
  cases.push_back(primitive("relu", {x}, [](const auto& in) { return relu(in[0]); }));
  cases.push_back(primitive("sum_axis", {x}, [](const auto& in) { return sum(in[0], 2, true); }));
  cases.push_back(primitive("mean", {x}, [](const auto& in) { return mean(in[0]); }));
  cases.push_back(primitive("reshape", {x}, [](const auto& in) { return reshape(in[0], Shape{4, -1}); }));
  cases.push_back(primitive("transpose", {x}, [](const auto& in) { return transpose(in[0], 1, 3); }));
  cases.push_back(primitive("concat", {x, {1, 3, kExtent, kExtent}},
                            [](const auto& in) { return concat<double>({in[0], in[1]}, 1); }));
  cases.push_back(primitive("expand", {{1, kChannels, 1, kExtent}},
                            [](const auto& in) { return expand(in[0], Shape{2, kChannels, kExtent, kExtent}); }));
  cases.push_back(primitive("linear", {x, {8, kChannels}, {8}},
                            [](const auto& in) { return linear(in[0], in[1], in[2]); }));
  cases.push_back(primitive("conv2d", {x, {4, kChannels, 3, 3}, {4}},
                            [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); }));
  cases.push_back(primitive("conv2d_stride2", {x, {4, kChannels, 3, 3}},
                            [](const auto& in) { return conv2d(in[0], in[1], Tensor<double>(), 2, 1); }));
  cases.push_back(primitive("batch_norm", {{2, kChannels, kExtent, kExtent}, {kChannels}, {kChannels}},
                            [](const auto& in) {
                              RunningStats<double> stats(kChannels);
                              return batch_norm(in[0], in[1], in[2], stats, Mode::train);
                            }));
  cases.push_back(primitive("max_pool2d", {{1, kChannels, 6, 6}}, [](const auto& in) { return max_pool2d(in[0]); }));
  cases.push_back(
      primitive("max_pool2d_3x3", {x}, [](const auto& in) { return max_pool2d(in[0], 3, 2, 1); }));
  cases.push_back(primitive("global_avg_pool", {x}, [](const auto& in) { return global_avg_pool(in[0]); }));
  cases.push_back(primitive("softmax", {x}, [](const auto& in) { return softmax(in[0], 1); }));
  cases.push_back(primitive("log_softmax", {{4, 10}}, [](const auto& in) { return log_softmax(in[0], 1); }));
  cases.push_back(primitive("unfold", {x}, [](const auto& in) { return unfold(in[0], FootprintSpec(3)); }));
  cases.push_back(primitive("channel_contract", {{1, 4, 3, 25}, {1, 4, 9, 25}},
                            [](const auto& in) { return channel_contract(in[0], in[1]); }));
  cases.push_back(primitive("grouped_aggregate", {{1, 4, 9, 25}, {1, 8, 9, 25}},
                            [](const auto& in) { return grouped_aggregate(in[0], in[1]); }));
  return cases;
}

}  // namespace

std::vector<VerifyCase> gradcheck_cases() {
  std::vector<VerifyCase> cases = primitive_cases();
  for (Relation rel : {Relation::summation, Relation::subtraction, Relation::concatenation, Relation::hadamard,
                       Relation::dot}) {
    for (PositionMode pos : {PositionMode::none, PositionMode::absolute, PositionMode::relative}) {
      AttentionConfig cfg = small_config(OperatorKind::pairwise, rel);
      cfg.position = pos;
      const std::string name =
          "pairwise." + std::string(to_string(rel)) + ".position_" + std::string(to_string(pos));
      cases.push_back({"pairwise", std::string(to_string(rel)), name,
                       [cfg, name](std::uint64_t seed) { return attention_gradcheck(name, cfg, seed); }});
    }
  }
  for (Relation rel : {Relation::star_product, Relation::clique_product, Relation::concatenation}) {
    const AttentionConfig cfg = small_config(OperatorKind::patchwise, rel);
    const std::string name = "patchwise." + std::string(to_string(rel));
    cases.push_back({"patchwise", std::string(to_string(rel)), name,
                     [cfg, name](std::uint64_t seed) { return attention_gradcheck(name, cfg, seed); }});
  }
  for (bool normalize : {false, true}) {
    AttentionConfig cfg = small_config(OperatorKind::scalar, Relation::dot);
    cfg.normalize = normalize;
    const std::string variant = normalize ? "softmax" : "plain";
    const std::string name = "scalar." + variant;
    cases.push_back(
        {"scalar", variant, name, [cfg, name](std::uint64_t seed) { return attention_gradcheck(name, cfg, seed); }});
  }
  {
    const AttentionConfig cfg = small_config(OperatorKind::conv, Relation::dot);
    cases.push_back({"conv", "", "conv", [cfg](std::uint64_t seed) { return attention_gradcheck("conv", cfg, seed); }});
  }
  const Shape x{1, kChannels, kExtent, kExtent};
  for (auto [kind, rel] : {std::pair{OperatorKind::pairwise, Relation::subtraction},
                           std::pair{OperatorKind::patchwise, Relation::concatenation}}) {
    const std::string name = "block.sa_" + std::string(to_string(kind));
    cases.push_back({"block", "sa_" + std::string(to_string(kind)), name, [=](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto block = SABlock<double>::create(SABlockSpec{kChannels, 3, small_config(kind, rel)}, rng);
                       return module_gradcheck(name, block, x, Mode::train, seed);
                     }});
  }
  cases.push_back({"block", "bottleneck", "block.bottleneck", [x](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto b = Bottleneck<double>::create(BottleneckSpec{kChannels, kChannels / 4, 3, 1}, rng);
                     return module_gradcheck("block.bottleneck", b, x, Mode::train, seed);
                   }});
  cases.push_back({"block", "bottleneck_projection", "block.bottleneck_projection", [x](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto b = Bottleneck<double>::create(BottleneckSpec{kChannels, 8, 3, 2}, rng);
                     return module_gradcheck("block.bottleneck_projection", b, x, Mode::train, seed);
                   }});
  cases.push_back({"block", "transition", "block.transition", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto t = Transition<double>::create(kChannels, 32, true, rng);
                     return module_gradcheck("block.transition", t, Shape{1, kChannels, 6, 6}, Mode::train, seed);
                   }});
  cases.push_back({"block", "classifier", "block.classifier", [x](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto c = Classifier<double>::create(kChannels, 10, rng);
                     return module_gradcheck("block.classifier", c, Shape{2, kChannels, kExtent, kExtent}, Mode::train,
                                             seed);
                   }});
  cases.push_back({"block", "conv_stem", "block.conv_stem", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto s = ConvStem<double>::create(3, 8, rng);
                     return module_gradcheck("block.conv_stem", s, Shape{1, 3, 12, 12}, Mode::train, seed);
                   }});
  return cases;
}

VerifyCase faulty_gradient_case() {
  return {"fixture", "wrong_sign", "fixture.wrong_sign", [](std::uint64_t seed) {
            GradFunction f = [](const std::vector<Tensor<double>>& in) {
              const Tensor<double>& x = in[0];
              std::vector<double> y(x.data().begin(), x.data().end());
              for (double& v : y) v = v * v;
              return make_result<double>(x.shape(), std::move(y), {&x}, "square_wrong_sign", [](detail::Node<double>& self) {
                auto& in_node = *self.inputs[0];
                auto g = in_node.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2 * in_node.data[i] * self.grad[i];
              });
            };
            return gradcheck("fixture.wrong_sign", f, {leaf({1, 4, 3, 3}, seed)}, GradCheckOptions{.seed = seed});
          }};
}

namespace {

CheckResult compare(const std::string& name, const Tensor<double>& got, const Tensor<double>& want, double tolerance) {
  CheckResult r;
  r.name = name;
  r.shape = shape_str(want.shape());
  r.tolerance = tolerance;
  if (got.shape() != want.shape()) {
    r.max_error = INFINITY;
    return r;
  }
  for (std::size_t i = 0; i < want.data().size(); ++i) {
    r.max_error = std::max(r.max_error, std::abs(got.data()[i] - want.data()[i]));
  }
  r.compared = want.numel();
  r.passed = r.max_error <= tolerance;
  return r;
}

struct RandomCase {
  AttentionConfig cfg;
  Index n, c, h, w;
  int k;
};

RandomCase random_case(OperatorKind kind, int index, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(index));
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  RandomCase rc;
  rc.cfg.kind = kind;
  rc.n = pick(1, 2);
  rc.c = pick(0, 1) == 0 ? 8 : 16;
  rc.h = pick(3, 6);
  rc.w = pick(3, 6);
  rc.k = std::array{1, 3, 3, 5}[static_cast<std::size_t>(pick(0, 3))];
  rc.cfg.r1 = pick(0, 1) == 0 ? 2 : 4;
  rc.cfg.r2 = pick(0, 1) == 0 ? 1 : 2;
  rc.cfg.share = std::array{1, 2, 4}[static_cast<std::size_t>(pick(0, 2))];
  rc.cfg.gamma_depth = pick(1, 3);
  if (kind == OperatorKind::pairwise) {
    rc.cfg.relation = static_cast<Relation>(index % 5);
    rc.cfg.position = static_cast<PositionMode>((index / 5) % 3);
    rc.cfg.sharing = static_cast<TransformSharing>(pick(0, 2) == 0 ? 1 : 0);
  } else if (kind == OperatorKind::patchwise) {
    rc.cfg.relation = std::array{Relation::star_product, Relation::clique_product,
                                 Relation::concatenation}[static_cast<std::size_t>(index % 3)];
    if (rc.k == 5 && rc.cfg.relation == Relation::clique_product) rc.k = 3;
  } else if (kind == OperatorKind::scalar) {
    rc.cfg.normalize = index % 2 == 1;
  }
  if (rc.cfg.sharing == TransformSharing::all) rc.cfg.r1 = rc.cfg.r2;
  return rc;
}

CheckResult oracle_case(OperatorKind kind, int index, std::uint64_t seed) {
  const RandomCase rc = random_case(kind, index, seed);
  const FootprintSpec fp(rc.k);
  auto params = AttentionParams<double>::create(rc.c, fp, rc.cfg);
  randomize(params, seed + 17 * static_cast<std::uint64_t>(index));
  const Tensor<double> x = random_tensor({rc.n, rc.c, rc.h, rc.w}, seed + 31 * static_cast<std::uint64_t>(index) + 1);
  const std::string name = std::string(to_string(kind)) + "[" + std::to_string(index) + "] " +
                           (kind == OperatorKind::conv || kind == OperatorKind::scalar
                                ? std::string()
                                : std::string(to_string(rc.cfg.relation)) + " ") +
                           "k=" + std::to_string(rc.k);
  NoGradGuard guard;
  CheckResult r = compare(name, attention_forward(x, params, fp), reference::attention(x, params, fp), 1e-10);
  r.shape = shape_str(x.shape());
  return r;
}

}  // namespace

std::vector<VerifyCase> oracle_cases(int count) {
  std::vector<VerifyCase> cases;
  for (OperatorKind kind : {OperatorKind::pairwise, OperatorKind::patchwise, OperatorKind::scalar, OperatorKind::conv}) {
    for (int i = 0; i < count; ++i) {
      const RandomCase probe = random_case(kind, i, 0);
      const std::string label = kind == OperatorKind::pairwise || kind == OperatorKind::patchwise
                                    ? std::string(to_string(probe.cfg.relation))
                                    : std::string();
      cases.push_back({std::string(to_string(kind)), label,
                       std::string(to_string(kind)) + ".oracle" + std::to_string(i),
                       [kind, i](std::uint64_t seed) { return oracle_case(kind, i, seed); }});
    }
  }
  cases.push_back({"primitive", "linear", "linear.oracle", [](std::uint64_t seed) {
                     const auto x = random_tensor({2, 4, 3, 3}, seed);
                     const auto w = random_tensor({5, 4}, seed + 1);
                     const auto b = random_tensor({5}, seed + 2);
                     return compare("linear.oracle", linear(x, w, b), reference::linear(x, w, b), 1e-12);
                   }});
  cases.push_back({"primitive", "conv2d", "conv2d_stride2.oracle", [](std::uint64_t seed) {
                     const auto x = random_tensor({2, 3, 7, 7}, seed);
                     const auto k = random_tensor({4, 3, 3, 3}, seed + 1);
                     return compare("conv2d_stride2.oracle", conv2d(x, k, Tensor<double>(), 2, 1),
                                    reference::conv2d(x, k, 2, 1), 1e-10);
                   }});
  return cases;
}

std::vector<VerifyCase> property_cases() {
  std::vector<VerifyCase> cases;
  for (Relation rel : {Relation::summation, Relation::subtraction, Relation::concatenation, Relation::hadamard,
                       Relation::dot}) {
    const std::string name = "pairwise_permutation_invariance." + std::string(to_string(rel));
    cases.push_back({"pairwise", std::string(to_string(rel)), name, [rel, name](std::uint64_t seed) {
                       AttentionConfig cfg = small_config(OperatorKind::pairwise, rel);
                       cfg.gamma_depth = 3;
                       const FootprintSpec fp(3);
                       auto p = AttentionParams<double>::create(kChannels, fp, cfg);
                       randomize(p, seed);
                       std::vector<int> perm(static_cast<std::size_t>(fp.slots()));
                       std::iota(perm.begin(), perm.end(), 0);
                       std::mt19937_64 rng(seed + 5);
                       std::shuffle(perm.begin(), perm.end(), rng);
                       const auto x = random_tensor({2, kChannels, 6, 5}, seed + 1);
                       NoGradGuard guard;
                       return compare(name, attention_forward(x, p, fp.permuted(perm)), attention_forward(x, p, fp),
                                      1e-12);
                     }});
  }
  for (int share_all : {1, 0}) {
    const std::string name = share_all ? "patchwise_reproduces_conv.shared" : "patchwise_reproduces_conv.per_channel";
    cases.push_back({"patchwise", "concatenation", name, [share_all, name](std::uint64_t seed) {
                       // A constant gamma (zero last-layer weights) emits one
                       // weight per slot and group through its bias. Then
                       // y_c = sum_j w[g(c), j] beta(x_j)_c is the convolution
                       // with kernel K[c, i, j] = w[g(c), j] * W_beta[c, i].
                       AttentionConfig cfg = small_config(OperatorKind::patchwise, Relation::concatenation);
                       const FootprintSpec fp(3);
                       cfg.share = share_all ? static_cast<int>(kChannels / cfg.r2) : 1;
                       auto p = AttentionParams<double>::create(kChannels, fp, cfg);
                       randomize(p, seed);
                       auto& last = p.gamma.back();
                       std::fill(last.weight.mutable_data().begin(), last.weight.mutable_data().end(), 0.0);
                       const auto slot_weights = last.bias.data();
                       const Index mid = p.dims.mid, slots = fp.slots();
                       Tensor<double> kernel(Shape{mid, kChannels, 3, 3});
                       auto kd = kernel.mutable_data();
                       for (Index c = 0; c < mid; ++c)
                         for (Index i = 0; i < kChannels; ++i)
                           for (Index j = 0; j < slots; ++j) {
                             const double wj = slot_weights[static_cast<std::size_t>((c / p.dims.share) * slots + j)];
                             kd[static_cast<std::size_t>((c * kChannels + i) * slots + j)] = wj * p.beta.weight.at({c, i});
                           }
                       const auto x = random_tensor({2, kChannels, 5, 6}, seed + 1);
                       NoGradGuard guard;
                       return compare(name, attention_forward(x, p, fp), conv2d(x, kernel, Tensor<double>(), 1, 1), 1e-6);
                     }});
  }
  cases.push_back({"scalar", "pairwise_dot", "scalar_equals_pairwise_dot", [](std::uint64_t seed) {
                     AttentionConfig pair_cfg = small_config(OperatorKind::pairwise, Relation::dot);
                     pair_cfg.position = PositionMode::none;
                     pair_cfg.gamma_depth = 1;
                     pair_cfg.share = static_cast<int>(kChannels / pair_cfg.r2);
                     const FootprintSpec fp(3);
                     auto pair = AttentionParams<double>::create(kChannels, fp, pair_cfg);
                     randomize(pair, seed);
                     pair.gamma[0].weight.mutable_data()[0] = 1.0;
                     pair.gamma[0].bias.mutable_data()[0] = 0.0;
                     AttentionConfig scalar_cfg = pair_cfg;
                     scalar_cfg.kind = OperatorKind::scalar;
                     auto scalar = AttentionParams<double>::create(kChannels, fp, scalar_cfg);
                     scalar.phi = pair.phi;
                     scalar.psi = pair.psi;
                     scalar.beta = pair.beta;
                     const auto x = random_tensor({2, kChannels, 5, 5}, seed + 1);
                     NoGradGuard guard;
                     return compare("scalar_equals_pairwise_dot", attention_forward(x, scalar, fp),
                                    attention_forward(x, pair, fp), 1e-12);
                   }});
  auto identity_case = [](const std::string& name, auto make, Shape shape) {
    return VerifyCase{"block", "residual_identity", name, [=](std::uint64_t seed) {
                        auto block = make(seed);
                        const auto x = random_tensor(shape, seed + 1);
                        NoGradGuard guard;
                        CheckResult r;
                        r.name = name;
                        r.shape = shape_str(shape);
                        r.tolerance = 0;
                        for (Mode mode : {Mode::train, Mode::eval}) {
                          const auto y = block.forward(x, mode);
                          const bool same = y.shape() == x.shape() &&
                                            std::equal(x.data().begin(), x.data().end(), y.data().begin(),
                                                       [](double a, double b) {
                                                         return std::bit_cast<std::uint64_t>(a) ==
                                                                std::bit_cast<std::uint64_t>(b);
                                                       });
                          if (!same) r.max_error = 1;
                          r.compared += x.numel();
                        }
                        r.passed = r.max_error == 0;
                        return r;
                      }};
  };
  for (auto [kind, rel] : {std::pair{OperatorKind::pairwise, Relation::subtraction},
                           std::pair{OperatorKind::patchwise, Relation::concatenation},
                           std::pair{OperatorKind::scalar, Relation::dot}, std::pair{OperatorKind::conv, Relation::dot}}) {
    cases.push_back(identity_case(
        "residual_identity.sa_" + std::string(to_string(kind)),
        [kind, rel](std::uint64_t seed) {
          std::mt19937_64 rng(seed);
          return SABlock<double>::create(SABlockSpec{kChannels, 3, small_config(kind, rel)}, rng);
        },
        Shape{2, kChannels, kExtent, kExtent}));
  }
  cases.push_back(identity_case(
      "residual_identity.bottleneck",
      [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return Bottleneck<double>::create(BottleneckSpec{kChannels, kChannels / 4, 3, 1}, rng);
      },
      Shape{2, kChannels, kExtent, kExtent}));
  return cases;
}

}  // namespace san
