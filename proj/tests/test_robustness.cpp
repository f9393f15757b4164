#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "san/errors.hpp"
#include "san/robustness.hpp"
#include "san/verify.hpp"

using namespace san;

namespace {

std::vector<float> ramp_image(Index c, Index h, Index w) {
  std::vector<float> v(static_cast<std::size_t>(c * h * w));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  return v;
}

Dataset blobs(Index count, std::uint64_t seed) {
  SyntheticSpec s;
  s.count = count;
  s.size = 8;
  s.seed = seed;
  return make_synthetic_blobs(s);
}

}  // namespace

TEST_CASE("2x2 clockwise rotation") {
  // [a b; c d] -> [c a; d b]
  const std::vector<float> img{1, 2, 3, 4};
  CHECK(manipulate(img, 1, 2, 2, Manipulation::cw90) == std::vector<float>{3, 1, 4, 2});
  CHECK(manipulate(img, 1, 2, 2, Manipulation::cw180) == std::vector<float>{4, 3, 2, 1});
  CHECK(manipulate(img, 1, 2, 2, Manipulation::cw270) == std::vector<float>{2, 4, 1, 3});
  CHECK(manipulate(img, 1, 2, 2, Manipulation::upside_down_flip) == std::vector<float>{3, 4, 1, 2});
  CHECK(manipulate(img, 1, 2, 2, Manipulation::none) == img);
}

TEST_CASE("four quarter turns are the identity") {
  const auto img = ramp_image(3, 5, 5);
  auto x = img;
  for (int i = 0; i < 4; ++i) x = manipulate(x, 3, 5, 5, Manipulation::cw90);
  CHECK(x == img);
  CHECK(manipulate(manipulate(img, 3, 5, 5, Manipulation::cw90), 3, 5, 5, Manipulation::cw270) == img);
}

TEST_CASE("half turn is an upside-down flip of the mirrored image") {
  const auto img = ramp_image(2, 4, 4);
  auto mirrored = img;
  horizontal_flip(mirrored, 2, 4, 4);
  CHECK(manipulate(img, 2, 4, 4, Manipulation::cw180) == manipulate(mirrored, 2, 4, 4, Manipulation::upside_down_flip));
}

TEST_CASE("manipulations permute pixels") {
  const Dataset d = blobs(3, 1);
  for (Manipulation m : all_manipulations()) {
    auto a = manipulate(d.image(1), 3, 8, 8, m);
    std::vector<float> b(d.image(1).begin(), d.image(1).end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CAPTURE(to_string(m));
    CHECK(a == b);
  }
}

TEST_CASE("rotations need square images") {
  const auto img = ramp_image(1, 2, 3);
  CHECK_THROWS_AS(manipulate(img, 1, 2, 3, Manipulation::cw90), DimensionError);
  CHECK_NOTHROW(manipulate(img, 1, 2, 3, Manipulation::upside_down_flip));
  CHECK_THROWS_AS(parse_manipulation("cw45"), ConfigError);
  CHECK(parse_manipulation("upside_down_flip") == Manipulation::upside_down_flip);
}

TEST_CASE("targets are seeded and never the true label") {
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(i % 10);
  const auto a = choose_targets(labels, 10, 3), b = choose_targets(labels, 10, 3), c = choose_targets(labels, 10, 4);
  CHECK(a == b);
  CHECK(a != c);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(a[i] != labels[i]);
    CHECK(a[i] >= 0);
    CHECK(a[i] < 10);
  }
}

TEST_CASE("zero iterations or zero radius leave images unchanged") {
  const Dataset d = blobs(20, 2);
  const Normalization n = Normalization::fit(d);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  AttackConfig cfg;
  cfg.iterations = 0;
  const AttackResult none = pgd_attack(model, d, n, cfg);
  CHECK(none.adversarial == d.pixels);
  // Success iff the clean prediction already equals the target.
  NoGradGuard guard;
  const auto logits = model.forward(make_batch(d, std::vector<Index>{0, 1, 2}, n), Mode::eval);
  for (Index i = 0; i < 3; ++i) {
    const auto row = logits.data().subspan(static_cast<std::size_t>(i * 10), 10);
    const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    CHECK(none.success[static_cast<std::size_t>(i)] == (pred == none.targets[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("zero radius gives zero perturbation") {
  const Dataset d = blobs(20, 2);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  AttackConfig cfg;
  cfg.epsilon = 0;
  cfg.iterations = 3;
  const AttackResult r = pgd_attack(model, d, Normalization::fit(d), cfg);
  CHECK(r.adversarial == d.pixels);
  for (double l : r.linf_per_step) CHECK(l == 0);
}

TEST_CASE("every iterate stays inside the ball and the pixel range") {
  const Dataset d = blobs(30, 3);
  auto model = Model<float>::build(model_preset("san-tiny"), 2);
  for (int iters : {1, 2, 5}) {
    AttackConfig cfg;
    cfg.epsilon = 6;
    cfg.step = 4;
    cfg.iterations = iters;
    const AttackResult r = pgd_attack(model, d, Normalization::fit(d), cfg, 7);
    REQUIRE(r.linf_per_step.size() == static_cast<std::size_t>(iters));
    for (double l : r.linf_per_step) CHECK(l <= 6.0);
    double linf = 0;
    for (std::size_t i = 0; i < d.pixels.size(); ++i) {
      CHECK(r.adversarial[i] >= 0);
      CHECK(r.adversarial[i] <= 255);
      linf = std::max(linf, static_cast<double>(std::abs(r.adversarial[i] - d.pixels[i])));
    }
    CHECK(linf == r.linf_per_step.back());
  }
}

TEST_CASE("a constant classifier is only hit when the target is its output") {
  const Dataset d = blobs(40, 4);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  for (auto& [name, p] : model.parameters()) {
    if (name == "head.fc.weight") std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0f);
    if (name == "head.fc.bias") {
      std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0f);
      p.mutable_data()[6] = 1.0f;
    }
  }
  AttackConfig cfg;
  cfg.iterations = 3;
  const AttackResult r = pgd_attack(model, d, Normalization::fit(d), cfg);
  for (std::size_t i = 0; i < r.success.size(); ++i) CHECK(r.success[i] == (r.targets[i] == 6));
}

TEST_CASE("attacks need gradients") {
  const Dataset d = blobs(4, 5);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  NoGradGuard guard;
  CHECK_THROWS_AS(pgd_attack(model, d, Normalization::fit(d), AttackConfig{}), UsageError);
}

TEST_CASE("report layout") {
  CHECK(format_with_drop(0.491, 0.245) == "49.1(24.5)");
  const Dataset d = blobs(200, 6);
  auto model = Model<float>::build(model_preset("san-tiny"), 3);
  const auto report = robustness_report(model, d, Normalization::fit(d), all_manipulations());
  REQUIRE(report.rows.size() == 5);
  const std::vector<std::string> order{"none", "cw90", "cw180", "cw270", "upside_down_flip"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(report.rows[i].name == order[i]);
  CHECK(report.rows[0].drop1 == 0);
  CHECK(report.rows[0].drop5 == 0);
  // An untrained 10-way classifier sits near chance everywhere.
  for (const auto& row : report.rows) {
    CHECK(row.top1 < 0.3);
    CHECK(row.top5 >= row.top1);
  }
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("name,top1,top5,drop_top1,drop_top5,success_rate\nnone,", 0) == 0);
  CHECK(report.to_json().at("rows").size() == 5);
}
