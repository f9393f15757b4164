#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "san/errors.hpp"
#include "san/trainer.hpp"
#include "san/verify.hpp"

using namespace san;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / ("san_unit_" + leaf);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Dataset tiny_synthetic(Index count, std::uint64_t seed) {
  SyntheticSpec s;
  s.count = count;
  s.size = 8;
  s.seed = seed;
  return make_synthetic_blobs(s);
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0, 100) == 0.1);
  CHECK(std::abs(cosine_lr(0.1, 100, 100)) <= 1e-9);
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
}

TEST_CASE("smoothed cross entropy") {
  const std::vector<int> label{3};
  const Tensor<double> uniform(Shape{1, 10});
  CHECK(cross_entropy_smoothed(uniform, label, 0.1).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  Tensor<double> aligned(Shape{1, 10});
  aligned.mutable_data()[3] = 60;
  CHECK(cross_entropy_smoothed(aligned, label, 0.0).item() <= 1e-20);
  // With smoothing the same logits cost eps/K * 60 per wrong class.
  CHECK(cross_entropy_smoothed(aligned, label, 0.1).item() == doctest::Approx(0.01 * 60 * 9).epsilon(1e-9));
  CHECK_THROWS_AS(cross_entropy_smoothed(uniform, label, 1.0), ConfigError);
  CHECK_THROWS_AS(cross_entropy_smoothed(uniform, std::vector<int>{10}, 0.1), DimensionError);
}

TEST_CASE("smoothed cross entropy gradient matches finite differences") {
  const std::vector<int> labels{1, 4, 0};
  Tensor<double> logits = random_tensor({3, 5}, 4, 2.0);
  logits.set_requires_grad(true);
  const CheckResult r = gradcheck(
      "cross_entropy", [&](const auto& in) { return cross_entropy_smoothed(in[0], labels, 0.1); }, {logits});
  CHECK(r.passed);
  CHECK(r.max_error <= 1e-4);
}

TEST_CASE("SGD applies coupled weight decay") {
  Tensor<float> w(Shape{1}, 2.0f);
  w.set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor<float>>> params{{"w", w}};
  SGD opt(0.9, 0.1);
  w.mutable_grad()[0] = 0.5f;
  opt.step(params, 0.1);
  // v1 = 0.5 + 0.1*2 = 0.7; w1 = 2 - 0.07
  CHECK(w.data()[0] == doctest::Approx(1.93f));
  opt.step(params, 0.1);
  // v2 = 0.9*0.7 + 0.5 + 0.1*1.93 = 1.323; w2 = 1.93 - 0.1323
  CHECK(w.data()[0] == doctest::Approx(1.7977f).epsilon(1e-6));
}

TEST_CASE("top-k counting") {
  const Tensor<float> logits(Shape{2, 6}, std::vector<float>{0, 6, 5, 4, 3, 2, 1, 1, 1, 1, 1, 1});
  Index top1 = 0, top5 = 0;
  accumulate_topk(logits, std::vector<int>{0, 3}, top1, top5);
  // Row 0: label is the smallest logit. Row 1: all tied, nothing strictly larger.
  CHECK(top1 == 1);
  CHECK(top5 == 1);
  Index a1 = 0, a5 = 0;
  accumulate_topk(logits, std::vector<int>{5, 2}, a1, a5);
  CHECK(a1 == 1);
  CHECK(a5 == 2);
}

TEST_CASE("horizontal flip twice restores the image") {
  std::vector<float> img(3 * 4 * 5);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  auto copy = img;
  horizontal_flip(copy, 3, 4, 5);
  CHECK(copy != img);
  CHECK(copy[0] == 4);
  horizontal_flip(copy, 3, 4, 5);
  CHECK(copy == img);
}

TEST_CASE("augmentation is seeded") {
  const Dataset d = tiny_synthetic(4, 1);
  std::vector<float> a(d.pixels), b(d.pixels);
  std::mt19937_64 ra(9), rb(9);
  for (Index i = 0; i < 4; ++i) {
    const auto off = static_cast<std::size_t>(i * d.image_numel());
    augment(std::span<float>(a).subspan(off, static_cast<std::size_t>(d.image_numel())), 3, 8, 8, ra, 1);
    augment(std::span<float>(b).subspan(off, static_cast<std::size_t>(d.image_numel())), 3, 8, 8, rb, 1);
  }
  CHECK(a == b);
  CHECK(a != d.pixels);
}

TEST_CASE("evaluation batches are only normalized") {
  const Dataset d = tiny_synthetic(3, 2);
  const Normalization n = Normalization::fit(d);
  const std::vector<Index> idx{2, 0};
  const Tensor<float> batch = make_batch(d, idx, n);
  CHECK(batch.shape() == Shape{2, 3, 8, 8});
  for (Index c = 0; c < 3; ++c) {
    const float raw = d.image(2)[static_cast<std::size_t>(c * 64 + 5)];
    const float expect = (raw - n.mean[static_cast<std::size_t>(c)]) / n.stddev[static_cast<std::size_t>(c)];
    CHECK(batch.at({0, c, 0, 5}) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("normalization statistics") {
  Dataset d{1, 1, 2, 2, {0, 2, 4, 6}, {0, 1}};
  const Normalization n = Normalization::fit(d);
  CHECK(n.mean[0] == doctest::Approx(3.0));
  CHECK(n.stddev[0] == doctest::Approx(std::sqrt(5.0)));
  const Normalization back = Normalization::from_json(n.to_json());
  CHECK(back.mean == n.mean);
  CHECK(back.stddev == n.stddev);
}

TEST_CASE("synthetic data is deterministic and in pixel range") {
  const Dataset a = tiny_synthetic(50, 3), b = tiny_synthetic(50, 3), c = tiny_synthetic(50, 4);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.pixels != c.pixels);
  for (float v : a.pixels) {
    CHECK(v >= 0);
    CHECK(v <= 255);
    CHECK(v == std::round(v));
  }
}

TEST_CASE("CIFAR-10 binary records") {
  const fs::path dir = scratch_dir("cifar");
  {
    std::ofstream os(dir / "test_batch.bin", std::ios::binary);
    for (int r = 0; r < 3; ++r) {
      os.put(static_cast<char>(r * 4));
      for (int i = 0; i < 3072; ++i) os.put(static_cast<char>((i + r) % 256));
    }
  }
  const Dataset d = read_cifar10_records(dir / "test_batch.bin");
  CHECK(d.size() == 3);
  CHECK(d.labels == std::vector<int>{0, 4, 8});
  CHECK(d.image(1)[0] == 1.0f);
  CHECK(d.image(1)[1024] == static_cast<float>((1024 + 1) % 256));
  CHECK(read_cifar10_records(dir / "test_batch.bin", 2).size() == 2);
  CHECK(load_cifar10(dir, false).size() == 3);
  CHECK_THROWS_AS(load_cifar10(dir, true), FormatError);
  {
    std::ofstream os(dir / "bad.bin", std::ios::binary);
    os << std::string(3073 + 5, '\0');
  }
  CHECK_THROWS_AS(read_cifar10_records(dir / "bad.bin"), FormatError);
  {
    std::ofstream os(dir / "label.bin", std::ios::binary);
    os << std::string(1, '\x0b') << std::string(3072, '\0');
  }
  CHECK_THROWS_AS(read_cifar10_records(dir / "label.bin"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("zero learning rate leaves parameters bit identical") {
  auto model = Model<float>::build(model_preset("san-tiny"), 5);
  const Dataset d = tiny_synthetic(64, 6);
  const Normalization n = Normalization::fit(d);
  std::vector<std::vector<float>> before;
  for (auto& [name, p] : model.parameters()) before.emplace_back(p.data().begin(), p.data().end());
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.base_lr = 0;
  cfg.batch_size = 16;
  train(model, d, d, n, cfg);
  std::size_t i = 0;
  for (auto& [name, p] : model.parameters()) {
    CAPTURE(name);
    CHECK(std::equal(p.data().begin(), p.data().end(), before[i++].begin()));
  }
}

TEST_CASE("top-5 is never below top-1 and training is reproducible") {
  const Dataset d = tiny_synthetic(96, 7), v = tiny_synthetic(40, 8);
  const Normalization n = Normalization::fit(d);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  RunReport reports[2];
  for (auto& r : reports) {
    auto model = Model<float>::build(model_preset("san-tiny"), 1);
    r = train(model, d, v, n, cfg);
  }
  REQUIRE(reports[0].epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(reports[0].epochs[e].val_top5 >= reports[0].epochs[e].val_top1);
    CHECK(reports[0].epochs[e].val_top1 == reports[1].epochs[e].val_top1);
    CHECK(reports[0].epochs[e].train_loss == reports[1].epochs[e].train_loss);
  }
  CHECK(reports[0].steps == 6);
}

TEST_CASE("training writes metrics and checkpoints") {
  const fs::path dir = scratch_dir("run");
  const Dataset d = tiny_synthetic(32, 9);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  RunOutputs out;
  out.directory = dir;
  int calls = 0;
  out.on_epoch = [&](const EpochMetrics&) { ++calls; };
  train(model, d, d, Normalization::fit(d), cfg, out);
  CHECK(calls == 3);
  CHECK(fs::exists(dir / "best.ckpt"));
  CHECK(fs::exists(dir / "last.ckpt"));
  std::ifstream is(dir / "metrics.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,lr,train_loss,val_top1,val_top5");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 3);
  fs::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts with the step location") {
  Dataset d = tiny_synthetic(32, 10);
  const Normalization n = Normalization::fit(d);
  d.pixels[d.pixels.size() - 1] = std::numeric_limits<float>::quiet_NaN();
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.augment = false;
  try {
    train(model, d, d, n, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("batch") != std::string::npos);
    CHECK(what.find("lr") != std::string::npos);
  }
}

TEST_CASE("divergence is reported with the step location") {
  const Dataset d = tiny_synthetic(64, 11);
  auto model = Model<float>::build(model_preset("san-tiny"), 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.base_lr = 1e12;
  CHECK_THROWS_WITH_AS(train(model, d, d, Normalization::fit(d), cfg), doctest::Contains("training diverged"),
                       NumericError);
}

TEST_CASE("train config JSON carries every hyperparameter") {
  TrainConfig c;
  c.epochs = 7;
  c.base_lr = 0.05;
  const auto j = c.to_json();
  CHECK(j.at("schedule") == "cosine");
  CHECK(j.at("momentum") == 0.9);
  CHECK(j.at("weight_decay") == 1e-4);
  CHECK(j.at("label_smoothing") == 0.1);
  const TrainConfig back = TrainConfig::from_json(j);
  CHECK(back.to_json() == j);
}
