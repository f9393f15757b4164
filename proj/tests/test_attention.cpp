#include <doctest.h>

#include <cmath>
#include <numeric>

#include "san/attention.hpp"
#include "san/errors.hpp"
#include "san/ops.hpp"
#include "san/verify.hpp"

using namespace san;

namespace {

AttentionConfig small(OperatorKind kind, Relation rel, PositionMode pos = PositionMode::relative) {
  AttentionConfig c;
  c.kind = kind;
  c.relation = rel;
  c.position = pos;
  c.r1 = 4;
  c.r2 = 2;
  c.share = 2;
  return c;
}

// Last gamma layer emits exactly 1 everywhere.
template <typename T>
void force_gamma_one(AttentionParams<T>& p) {
  auto& last = p.gamma.back();
  std::fill(last.weight.mutable_data().begin(), last.weight.mutable_data().end(), T(0));
  std::fill(last.bias.mutable_data().begin(), last.bias.mutable_data().end(), T(1));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[static_cast<std::size_t>(i)]) -
                             static_cast<double>(b.data()[static_cast<std::size_t>(i)])));
  }
  return m;
}

}  // namespace

TEST_CASE("normalized coordinates") {
  const auto one = normalized_coordinates<double>(1, 1);
  CHECK(one.at({0, 0, 0}) == 0);
  CHECK(one.at({1, 0, 0}) == 0);
  const auto three = normalized_coordinates<double>(3, 3);
  CHECK(three.at({0, 0, 0}) == -1);
  CHECK(three.at({1, 0, 0}) == -1);
  CHECK(three.at({0, 2, 2}) == 1);
  CHECK(three.at({1, 2, 2}) == 1);
  const auto five = normalized_coordinates<double>(5, 2);
  const std::vector<double> linspace{-1, -0.5, 0, 0.5, 1};
  for (Index h = 0; h < 5; ++h) CHECK(five.at({0, h, 1}) == linspace[static_cast<std::size_t>(h)]);
  CHECK(five.at({1, 0, 0}) == -1);
  CHECK(five.at({1, 0, 1}) == 1);
}

TEST_CASE("position features pass coordinates through the 2x2 linear") {
  auto pos = LinearParams<double>::zeros(2, 2, true);
  pos.weight.mutable_data()[0] = 1;
  pos.weight.mutable_data()[3] = 1;
  const auto identity = position_features(3, 3, pos);
  CHECK(identity.shape() == Shape{2, 3, 3});
  CHECK(identity.at({0, 0, 0}) == -1);
  CHECK(identity.at({1, 2, 2}) == 1);
  // Swap the axes and shift.
  pos.weight.mutable_data()[0] = 0;
  pos.weight.mutable_data()[1] = 2;
  pos.weight.mutable_data()[2] = 1;
  pos.weight.mutable_data()[3] = 0;
  pos.bias.mutable_data()[0] = 0.5;
  const auto mapped = position_features(3, 3, pos);
  CHECK(mapped.at({0, 0, 2}) == 2 * 1 + 0.5);
  CHECK(mapped.at({1, 0, 2}) == -1);
}

TEST_CASE("pairwise relations") {
  const Tensor<double> a(Shape{1, 2, 1, 1}, std::vector<double>{1, 2});
  const Tensor<double> b(Shape{1, 2, 1, 1}, std::vector<double>{3, 4});
  const auto zero = delta_pairwise(a, a, Relation::subtraction);
  CHECK(zero.data()[0] == 0);
  CHECK(zero.data()[1] == 0);
  const auto dot = delta_pairwise(a, b, Relation::dot);
  CHECK(dot.shape() == Shape{1, 1, 1, 1});
  CHECK(dot.item() == 11);
  const auto sum = delta_pairwise(a, b, Relation::summation);
  CHECK(sum.data()[1] == 6);
  const auto had = delta_pairwise(a, b, Relation::hadamard);
  CHECK(had.data()[1] == 8);

  const Tensor<double> p = random_tensor({1, 4, 1, 1}, 1), q = random_tensor({1, 4, 1, 1}, 2);
  const auto cat = delta_pairwise(p, q, Relation::concatenation);
  CHECK(cat.shape() == Shape{1, 8, 1, 1});
  for (Index i = 0; i < 4; ++i) {
    CHECK(cat.data()[static_cast<std::size_t>(i)] == p.data()[static_cast<std::size_t>(i)]);
    CHECK(cat.data()[static_cast<std::size_t>(i + 4)] == q.data()[static_cast<std::size_t>(i)]);
  }
  CHECK_THROWS_AS(delta_pairwise(p, random_tensor({1, 3, 1, 1}, 3), Relation::subtraction), DimensionError);
  CHECK_THROWS_AS(delta_pairwise(p, q, Relation::star_product), ConfigError);
}

TEST_CASE("patchwise relations") {
  // K = 2 slots, d = 1: phi per slot (c, d) = (5, 7), psi per slot (a, b) = (2, 3).
  const Tensor<double> phi_i(Shape{1, 1, 1}, std::vector<double>{0});
  const Tensor<double> phi_patch(Shape{1, 1, 2, 1}, std::vector<double>{5, 7});
  const Tensor<double> psi_patch(Shape{1, 1, 2, 1}, std::vector<double>{2, 3});
  const auto star = delta_patchwise(phi_i, phi_patch, psi_patch, Relation::star_product);
  CHECK(star.shape() == Shape{1, 2, 1});
  CHECK(star.data()[0] == 0);
  CHECK(star.data()[1] == 0);
  const auto clique = delta_patchwise(phi_i, phi_patch, psi_patch, Relation::clique_product);
  CHECK(clique.shape() == Shape{1, 4, 1});
  CHECK(std::vector<double>(clique.data().begin(), clique.data().end()) == std::vector<double>{10, 15, 14, 21});

  const Tensor<double> phi(Shape{1, 3, 1}, std::vector<double>{1, 2, 3});
  const auto cat = delta_patchwise(phi, phi_patch.detach(), random_tensor({1, 3, 2, 1}, 4), Relation::concatenation);
  CHECK(cat.shape() == Shape{1, 9, 1});
  CHECK(cat.data()[2] == 3);
}

TEST_CASE("patchwise concatenation width at k=7, d=16") {
  AttentionConfig c = small(OperatorKind::patchwise, Relation::concatenation);
  c.r1 = 16;
  c.r2 = 4;
  c.share = 8;
  const AttentionDims d = attention_dims(256, FootprintSpec(7), c);
  CHECK(d.rel == 16);
  CHECK(d.relation_width == 50 * 16);
  CHECK(d.gamma_widths.front() == 800);
  CHECK(d.gamma_widths.back() == 49 * (64 / 8));
}

TEST_CASE("gamma with depth 1 identity and depth 2 zero output layer") {
  std::vector<LinearParams<double>> one{LinearParams<double>::zeros(3, 3, true)};
  for (Index i = 0; i < 3; ++i) one[0].weight.mutable_data()[static_cast<std::size_t>(i * 4)] = 1;
  const Tensor<double> v = random_tensor({2, 3, 4}, 5);
  CHECK(max_abs_diff(gamma_forward(v, one), v) == 0);

  std::vector<LinearParams<double>> two{LinearParams<double>::zeros(3, 5, true), LinearParams<double>::zeros(5, 2, true)};
  two[0].weight = random_tensor({5, 3}, 6);
  const auto out = gamma_forward(v, two);
  CHECK(out.shape() == Shape{2, 2, 4});
  for (double x : out.data()) CHECK(x == 0);
}

TEST_CASE("gamma parameter count for the first-stage pairwise operator") {
  // d = 64/16 = 4, Cm = 16, weights per location = 16/8 = 2:
  // (4 + 2) * 4 + 4 * 2 weights plus 4 + 2 biases.
  AttentionConfig c;
  auto p = AttentionParams<double>::create(64, FootprintSpec(3), c);
  Index total = 0, weights = 0;
  for (const auto& layer : p.gamma) {
    weights += layer.weight.numel();
    total += layer.weight.numel() + layer.bias.numel();
  }
  CHECK(weights == 32);
  CHECK(total == 38);
}

TEST_CASE("configuration errors") {
  auto bad = small(OperatorKind::pairwise, Relation::subtraction);
  bad.r1 = 3;
  CHECK_THROWS_AS(attention_dims(16, FootprintSpec(3), bad), ConfigError);
  bad = small(OperatorKind::pairwise, Relation::subtraction);
  bad.share = 3;
  CHECK_THROWS_AS(attention_dims(16, FootprintSpec(3), bad), ConfigError);
  CHECK_THROWS_AS(attention_dims(16, FootprintSpec(3), small(OperatorKind::pairwise, Relation::star_product)),
                  ConfigError);
  CHECK_THROWS_AS(attention_dims(16, FootprintSpec(3), small(OperatorKind::patchwise, Relation::subtraction)),
                  ConfigError);
  bad = small(OperatorKind::pairwise, Relation::subtraction);
  bad.gamma_depth = 4;
  CHECK_THROWS_AS(attention_dims(16, FootprintSpec(3), bad), ConfigError);
  CHECK_THROWS_AS(parse_relation("division"), ConfigError);
}

TEST_CASE("single-slot operators with unit weights return beta(x)") {
  const Tensor<double> x = random_tensor({2, 8, 3, 4}, 7);
  for (OperatorKind kind : {OperatorKind::pairwise, OperatorKind::patchwise}) {
    const Relation rel = kind == OperatorKind::pairwise ? Relation::subtraction : Relation::concatenation;
    auto p = AttentionParams<double>::create(8, FootprintSpec(1), small(kind, rel));
    randomize(p, 3);
    force_gamma_one(p);
    const auto y = attention_forward(x, p, FootprintSpec(1));
    const auto beta = linear(x, p.beta.weight);
    CAPTURE(to_string(kind));
    CHECK(max_abs_diff(y, beta) == 0);
  }
}

TEST_CASE("normalized scalar attention with zero phi averages beta over the window") {
  auto cfg = small(OperatorKind::scalar, Relation::dot);
  cfg.normalize = true;
  const FootprintSpec fp(3);
  auto p = AttentionParams<double>::create(8, fp, cfg);
  randomize(p, 9);
  std::fill(p.phi.weight.mutable_data().begin(), p.phi.weight.mutable_data().end(), 0.0);
  std::fill(p.phi.bias.mutable_data().begin(), p.phi.bias.mutable_data().end(), 0.0);
  const Tensor<double> x = random_tensor({1, 8, 4, 4}, 10);
  const auto y = attention_forward(x, p, fp);
  const auto beta_window = unfold(linear(x, p.beta.weight), fp);  // [1, Cm, 9, 4, 4]
  const auto expect = scale(sum(beta_window, 2), 1.0 / 9.0);
  CHECK(max_abs_diff(y, expect) <= 1e-14);
}

TEST_CASE("convolution identities") {
  const Tensor<double> x = random_tensor({2, 3, 5, 4}, 11);
  Tensor<double> delta(Shape{3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) delta.mutable_data()[static_cast<std::size_t>(((c * 3 + c) * 3 + 1) * 3 + 1)] = 1;
  CHECK(max_abs_diff(conv2d(x, delta, {}, 1, 1), x) == 0);

  const Tensor<double> w = random_tensor({6, 3}, 12);
  const Tensor<double> b = random_tensor({6}, 13);
  CHECK(max_abs_diff(conv2d(x, reshape(w, Shape{6, 3, 1, 1}), b), linear(x, w, b)) == 0);
  CHECK_THROWS_AS(conv2d(x, random_tensor({6, 2, 3, 3}, 1)), DimensionError);
}

TEST_CASE("pairwise operators are set operators in single precision") {
  const FootprintSpec fp(3);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[4]);
  const FootprintSpec shuffled = fp.permuted(perm);
  for (Relation rel : {Relation::summation, Relation::subtraction, Relation::concatenation, Relation::hadamard,
                       Relation::dot}) {
    auto pd = AttentionParams<double>::create(16, fp, small(OperatorKind::pairwise, rel));
    randomize(pd, 17);
    AttentionParams<float> pf = AttentionParams<float>::create(16, fp, small(OperatorKind::pairwise, rel));
    std::vector<Tensor<double>> src;
    pd.for_each([&](const std::string&, Tensor<double>& t) { src.push_back(t); });
    std::size_t i = 0;
    pf.for_each([&](const std::string&, Tensor<float>& t) {
      const auto v = src[i++].data();
      std::copy(v.begin(), v.end(), t.mutable_data().begin());
    });
    const Tensor<float> x = random_tensor({1, 16, 5, 5}, 18).cast<float>();
    CAPTURE(to_string(rel));
    CHECK(max_abs_diff(pairwise_attention(x, pf, fp), pairwise_attention(x, pf, shuffled)) <= 1e-6);
  }
}

TEST_CASE("zero-padded slots contribute nothing") {
  // Compare against loops that skip out-of-map slots entirely.
  const FootprintSpec fp(5);
  for (OperatorKind kind : {OperatorKind::pairwise, OperatorKind::scalar}) {
    const Relation rel = kind == OperatorKind::pairwise ? Relation::hadamard : Relation::dot;
    auto p = AttentionParams<double>::create(8, fp, small(kind, rel, PositionMode::none));
    randomize(p, 23);
    const Tensor<double> x = random_tensor({1, 8, 3, 3}, 24);
    const auto y = attention_forward(x, p, fp);
    const auto beta = linear(x, p.beta.weight);
    const auto phi = linear(x, p.phi.weight, p.phi.bias);
    const auto psi = linear(x, p.psi.weight, p.psi.bias);
    double err = 0;
    for (Index c = 0; c < 4; ++c)
      for (Index h = 0; h < 3; ++h)
        for (Index w = 0; w < 3; ++w) {
          double acc = 0;
          for (const auto off : fp.offsets()) {
            const Index sh = h + off.dy, sw = w + off.dx;
            if (sh < 0 || sh >= 3 || sw < 0 || sw >= 3) continue;
            std::vector<double> delta;
            for (Index d = 0; d < 2; ++d) {
              const double a = phi.at({0, d, h, w}), b = psi.at({0, d, sh, sw});
              delta.push_back(a * b);
            }
            double weight;
            if (kind == OperatorKind::scalar) {
              weight = delta[0] + delta[1];
            } else {
              // gamma: Linear(2->2) -> ReLU -> Linear(2->2), group c / share.
              std::vector<double> hidden(2);
              for (Index o = 0; o < 2; ++o) {
                double z = p.gamma[0].bias.data()[static_cast<std::size_t>(o)];
                for (Index i = 0; i < 2; ++i) z += p.gamma[0].weight.at({o, i}) * delta[static_cast<std::size_t>(i)];
                hidden[static_cast<std::size_t>(o)] = std::max(z, 0.0);
              }
              const Index g = c / 2;
              weight = p.gamma[1].bias.data()[static_cast<std::size_t>(g)];
              for (Index i = 0; i < 2; ++i) weight += p.gamma[1].weight.at({g, i}) * hidden[static_cast<std::size_t>(i)];
            }
            acc += weight * beta.at({0, c, sh, sw});
          }
          err = std::max(err, std::abs(acc - y.at({0, c, h, w})));
        }
    CAPTURE(to_string(kind));
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("parameter naming and sharing") {
  auto cfg = small(OperatorKind::pairwise, Relation::subtraction);
  std::vector<std::string> names;
  auto p = AttentionParams<double>::create(16, FootprintSpec(3), cfg);
  p.for_each([&](const std::string& n, Tensor<double>&) { names.push_back(n); });
  CHECK(names == std::vector<std::string>{"phi.weight", "phi.bias", "psi.weight", "psi.bias", "beta.weight",
                                          "gamma.0.weight", "gamma.0.bias", "gamma.1.weight", "gamma.1.bias",
                                          "position.weight", "position.bias"});
  cfg.sharing = TransformSharing::phi_psi;
  names.clear();
  auto shared = AttentionParams<double>::create(16, FootprintSpec(3), cfg);
  shared.for_each([&](const std::string& n, Tensor<double>&) { names.push_back(n); });
  CHECK(std::find(names.begin(), names.end(), "psi.weight") == names.end());
}
