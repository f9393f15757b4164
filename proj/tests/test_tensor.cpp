#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "san/errors.hpp"
#include "san/ops.hpp"
#include "san/serialize.hpp"
#include "san/verify.hpp"

using namespace san;

namespace {

Tensor<double> ramp(Shape shape, double start = 0, double step = 1) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = start + step * static_cast<double>(i);
  return Tensor<double>(std::move(shape), std::move(v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor construction keeps numel equal to data length") {
  Tensor<double> t(Shape{2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.data().size() == 24);
  CHECK(t.dim(-1) == 4);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("linear with identity weight returns the input") {
  const Tensor<double> x = random_tensor({2, 3, 2, 2}, 5);
  Tensor<double> w(Shape{3, 3});
  for (Index i = 0; i < 3; ++i) w.mutable_data()[static_cast<std::size_t>(i * 3 + i)] = 1;
  const Tensor<double> y = linear(x, w, Tensor<double>(Shape{3}));
  CHECK(max_abs_diff(x.data(), y.data()) == 0);
}

TEST_CASE("linear hand sum") {
  const Tensor<double> x(Shape{1, 2, 1, 1}, 1.0);
  const Tensor<double> w(Shape{2, 2}, std::vector<double>{1, 1, 2, 2});
  const Tensor<double> y = linear(x, w, Tensor<double>(Shape{2}));
  CHECK(y.shape() == Shape{1, 2, 1, 1});
  CHECK(y.data()[0] == 2);
  CHECK(y.data()[1] == 4);
}

TEST_CASE("linear matches a triple loop") {
  const Tensor<double> x = random_tensor({2, 4, 3, 3}, 11);
  const Tensor<double> w = random_tensor({5, 4}, 12);
  const Tensor<double> b = random_tensor({5}, 13);
  const Tensor<double> y = linear(x, w, b);
  std::vector<double> expect(2 * 5 * 9);
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 5; ++o)
      for (Index s = 0; s < 9; ++s) {
        double acc = b.data()[static_cast<std::size_t>(o)];
        for (Index i = 0; i < 4; ++i)
          acc += w.data()[static_cast<std::size_t>(o * 4 + i)] * x.data()[static_cast<std::size_t>((n * 4 + i) * 9 + s)];
        expect[static_cast<std::size_t>((n * 5 + o) * 9 + s)] = acc;
      }
  CHECK(max_abs_diff(y.data(), expect) <= 1e-12);
  CHECK_THROWS_AS(linear(x, random_tensor({5, 3}, 1)), DimensionError);
}

TEST_CASE("batch norm on a constant input returns the shift") {
  const Tensor<double> x(Shape{4, 2, 3, 3}, 7.0);
  const Tensor<double> g(Shape{2}, std::vector<double>{1.5, -2.0});
  const Tensor<double> b(Shape{2}, std::vector<double>{0.25, 3.0});
  RunningStats<double> stats(2);
  const Tensor<double> y = batch_norm(x, g, b, stats, Mode::train);
  for (Index i = 0; i < y.numel(); ++i) {
    const Index c = (i / 9) % 2;
    CHECK(y.data()[static_cast<std::size_t>(i)] == doctest::Approx(c == 0 ? 0.25 : 3.0).epsilon(1e-12));
  }
}

TEST_CASE("batch norm leaves standardized input unchanged") {
  // Per channel values {-1, 1} have mean 0 and biased variance 1.
  std::vector<double> v;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) v.push_back(n == 0 ? -1.0 : 1.0);
  const Tensor<double> x(Shape{2, 3, 1, 1}, v);
  RunningStats<double> stats(3);
  const Tensor<double> y = batch_norm(x, Tensor<double>(Shape{3}, 1.0), Tensor<double>(Shape{3}), stats, Mode::train);
  CHECK(max_abs_diff(x.data(), y.data()) <= 1e-5);
}

TEST_CASE("batch norm output statistics follow the affine parameters") {
  const Tensor<double> x = random_tensor({8, 3, 4, 4}, 21, 3.0);
  const Tensor<double> g(Shape{3}, std::vector<double>{0.5, 2.0, 1.25});
  const Tensor<double> b(Shape{3}, std::vector<double>{-1.0, 0.0, 4.0});
  RunningStats<double> stats(3);
  const Tensor<double> y = batch_norm(x, g, b, stats, Mode::train);
  for (Index c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (Index n = 0; n < 8; ++n)
      for (Index s = 0; s < 16; ++s) {
        const double v = y.data()[static_cast<std::size_t>((n * 3 + c) * 16 + s)];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / 128, var = sq / 128 - mean * mean;
    CHECK(std::abs(mean - b.data()[static_cast<std::size_t>(c)]) <= 1e-5);
    CHECK(std::sqrt(var) == doctest::Approx(std::abs(g.data()[static_cast<std::size_t>(c)])).epsilon(1e-5));
  }
}

TEST_CASE("batch norm running statistics and eval mode") {
  const Tensor<double> x(Shape{2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  RunningStats<double> stats(1);
  batch_norm(x, Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}), stats, Mode::train);
  // mean 2, unbiased variance 2; momentum 0.1 from (0, 1).
  CHECK(stats.mean[0] == doctest::Approx(0.2));
  CHECK(stats.var[0] == doctest::Approx(0.9 + 0.2));
  const Tensor<double> y = batch_norm(x, Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}), stats, Mode::eval);
  CHECK(y.data()[0] == doctest::Approx((1.0 - 0.2) / std::sqrt(1.1 + 1e-5)));
  CHECK(stats.mean[0] == doctest::Approx(0.2));
}

TEST_CASE("relu, max pool and softmax basics") {
  const Tensor<double> r = relu(Tensor<double>(Shape{2}, std::vector<double>{-1, 2}));
  CHECK(r.data()[0] == 0);
  CHECK(r.data()[1] == 2);
  const Tensor<double> p = max_pool2d(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p.item() == 4);
  const Tensor<double> s = softmax(Tensor<double>(Shape{1, 2}), 1);
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == 0.5);
  CHECK_THROWS_AS(max_pool2d(Tensor<double>(Shape{1, 1, 1, 1})), DimensionError);
}

TEST_CASE("softmax rows sum to one") {
  const Tensor<double> s = softmax(random_tensor({3, 7, 2}, 3, 5.0), 1);
  for (Index n = 0; n < 3; ++n)
    for (Index j = 0; j < 2; ++j) {
      double total = 0;
      for (Index c = 0; c < 7; ++c) total += s.data()[static_cast<std::size_t>((n * 7 + c) * 2 + j)];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("global average pool") {
  const Tensor<double> y = global_avg_pool(ramp({1, 2, 2, 2}));
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.data()[0] == 1.5);
  CHECK(y.data()[1] == 5.5);
}

TEST_CASE("hadamard broadcasts a group weight over channels") {
  const Tensor<double> w(Shape{1, 2, 1}, std::vector<double>{2, 3});
  const Tensor<double> v = ramp({1, 2, 2});
  const Tensor<double> y = hadamard(w, v);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 2, 6, 9});
}

TEST_CASE("footprint rejects even and oversized windows") {
  CHECK_THROWS_AS(FootprintSpec(2), ConfigError);
  CHECK_THROWS_AS(FootprintSpec(13), ConfigError);
  CHECK(FootprintSpec(7).slots() == 49);
  CHECK(FootprintSpec(7).pad() == 3);
}

TEST_CASE("unfold with k=1 is the identity") {
  const Tensor<double> x = random_tensor({2, 3, 4, 5}, 1);
  const Tensor<double> u = unfold(x, FootprintSpec(1));
  CHECK(u.shape() == Shape{2, 3, 1, 4, 5});
  CHECK(max_abs_diff(x.data(), u.data()) == 0);
}

TEST_CASE("unfold enumerates slots row-major") {
  const Tensor<double> u = unfold(ramp({1, 1, 3, 3}), FootprintSpec(3));
  CHECK(u.shape() == Shape{1, 1, 9, 3, 3});
  for (Index s = 0; s < 9; ++s) CHECK(u.at({0, 0, s, 1, 1}) == static_cast<double>(s));
  // Top-left corner: the window rows/cols at -1 fall outside.
  const std::vector<double> corner{0, 0, 0, 0, 0, 1, 0, 3, 4};
  for (Index s = 0; s < 9; ++s) CHECK(u.at({0, 0, s, 0, 0}) == corner[static_cast<std::size_t>(s)]);
}

TEST_CASE("one-hot slot weighting of unfold is a zero-padded shift") {
  const Tensor<double> x = random_tensor({1, 2, 4, 5}, 9);
  const FootprintSpec fp(3);
  const Tensor<double> u = unfold(x, fp);
  for (int s = 0; s < fp.slots(); ++s) {
    const auto off = fp.offsets()[static_cast<std::size_t>(s)];
    for (Index c = 0; c < 2; ++c)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 5; ++w) {
          const Index sh = h + off.dy, sw = w + off.dx;
          const double expect = sh >= 0 && sh < 4 && sw >= 0 && sw < 5 ? x.at({0, c, sh, sw}) : 0.0;
          CHECK(u.at({0, c, s, h, w}) == expect);
        }
  }
}

TEST_CASE("backward of sum gives ones, of x*x gives 2x") {
  Tensor<double> x = random_tensor({3, 4}, 2);
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  backward(sum(hadamard(x, x)));
  for (Index i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2 * x.data()[static_cast<std::size_t>(i)]));
}

TEST_CASE("backward visits each node once on a diamond graph") {
  Tensor<double> x(Shape{2}, std::vector<double>{1.0, -2.0});
  x.set_requires_grad(true);
  const Tensor<double> a = scale(x, 3.0);
  const Tensor<double> loss = sum(add(a, a));
  const Tape<double> tape(loss);
  std::vector<const void*> seen;
  for (auto* n : tape.order()) seen.push_back(n);
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  backward(loss);
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 6.0);
}

TEST_CASE("backward errors") {
  const Tensor<double> detached = random_tensor({2}, 1);
  CHECK_THROWS_AS(backward(sum(detached)), UsageError);
  Tensor<double> x = random_tensor({2}, 1);
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), UsageError);
  NoGradGuard guard;
  CHECK_THROWS_AS(backward(sum(x)), UsageError);
}

TEST_CASE("non-finite results from finite inputs raise") {
  const Tensor<double> big(Shape{1}, std::numeric_limits<double>::max());
  CHECK_THROWS_AS(scale(big, 10.0), NumericError);
  const Tensor<double> nan(Shape{1}, std::numeric_limits<double>::quiet_NaN());
  CHECK_NOTHROW(scale(nan, 10.0));
  CHECK(std::isnan(relu(nan).item()));
  CHECK(std::isnan(max_pool2d(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, std::nan(""), 3, 2})).item()));
}

TEST_CASE("primitives are deterministic") {
  const Tensor<double> x = random_tensor({2, 16, 5, 5}, 4);
  const Tensor<double> k = random_tensor({8, 16, 3, 3}, 5);
  const Tensor<double> a = conv2d(x, k, {}, 1, 1), b = conv2d(x, k, {}, 1, 1);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("tensor serialization round trip") {
  const Tensor<float> t = random_tensor({2, 3, 5}, 8).cast<float>();
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "SANTNSR1");
  const Tensor<float> back = read_tensor<float>(ss);
  CHECK(back.shape() == t.shape());
  CHECK(std::equal(t.data().begin(), t.data().end(), back.data().begin()));

  std::stringstream wrong_type(bytes);
  CHECK_THROWS_AS(read_tensor<double>(wrong_type), FormatError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor<float>(truncated), FormatError);
  std::stringstream bad_magic("XXXXXXXX" + bytes.substr(8));
  CHECK_THROWS_AS(read_tensor<float>(bad_magic), FormatError);
}

TEST_CASE("little-endian value encoding") {
  std::stringstream ss;
  const std::vector<float> one{1.0f};
  write_values_le<float>(ss, one);
  const std::string b = ss.str();
  CHECK(b == std::string("\x00\x00\x80\x3f", 4));
}
