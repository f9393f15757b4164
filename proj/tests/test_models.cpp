#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "san/accounting.hpp"
#include "san/errors.hpp"
#include "san/model.hpp"
#include "san/verify.hpp"

using namespace san;
namespace fs = std::filesystem;

namespace {

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

template <typename T>
void zero(Tensor<T>& t) {
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
}

fs::path scratch_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / ("san_unit_" + leaf);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelSpec blockless_spec() {
  ModelSpec s = model_preset("san-tiny");
  s.name = "blockless";
  s.stages = {StageSpec{24, 0, 3, false}};
  return s;
}

}  // namespace

TEST_CASE("self-attention block with zero expansion is the identity") {
  std::mt19937_64 rng(1);
  for (OperatorKind kind : {OperatorKind::pairwise, OperatorKind::patchwise, OperatorKind::scalar}) {
    SABlockSpec spec{16, 3, {}};
    spec.attention.kind = kind;
    spec.attention.relation = kind == OperatorKind::patchwise ? Relation::star_product : Relation::subtraction;
    spec.attention.r1 = 4;
    spec.attention.r2 = 2;
    spec.attention.share = 2;
    auto block = SABlock<double>::create(spec, rng);
    const Tensor<double> x = random_tensor({2, 16, 5, 5}, 3);
    CHECK(bit_equal(block.forward(x, Mode::train), x));
    CHECK(bit_equal(block.forward(x, Mode::eval), x));
    CHECK(block.expand.in() == 8);
    CHECK(block.expand.out() == 16);
  }
}

TEST_CASE("first-stage block widths at C=64") {
  std::mt19937_64 rng(1);
  SABlockSpec spec{64, 3, {}};
  auto block = SABlock<float>::create(spec, rng);
  CHECK(block.attn.dims.rel == 4);
  CHECK(block.attn.dims.mid == 16);
  CHECK(block.expand.in() == 16);
  CHECK(block.expand.out() == 64);
}

TEST_CASE("transition halves the map and expands channels") {
  std::mt19937_64 rng(2);
  auto t = Transition<double>::create(64, 256, true, rng);
  CHECK(t.linear.weight.numel() + t.linear.bias.numel() == 16640);
  const auto y = t.forward(random_tensor({1, 64, 6, 4}, 1), Mode::train);
  CHECK(y.shape() == Shape{1, 256, 3, 2});
  CHECK_THROWS_AS(t.forward(random_tensor({1, 64, 5, 4}, 1), Mode::train), DimensionError);
}

TEST_CASE("stem maps a constant image to a constant map") {
  std::mt19937_64 rng(3);
  auto stem = LinearStem<double>::create(3, 8, rng);
  const auto y = stem.forward(Tensor<double>(Shape{1, 3, 4, 4}, 0.7));
  for (Index c = 0; c < 8; ++c)
    for (Index s = 1; s < 16; ++s) CHECK(y.data()[static_cast<std::size_t>(c * 16 + s)] == y.data()[static_cast<std::size_t>(c * 16)]);
}

TEST_CASE("classifier with zero weights gives a uniform softmax") {
  std::mt19937_64 rng(4);
  auto head = Classifier<double>::create(8, 10, rng);
  zero(head.fc.weight);
  const auto logits = head.forward(random_tensor({3, 8, 2, 2}, 5), Mode::train);
  CHECK(logits.shape() == Shape{3, 10});
  const auto p = softmax(logits, 1);
  for (double v : p.data()) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("bottleneck with zero weights is the identity") {
  std::mt19937_64 rng(5);
  const BottleneckSpec spec{16, 4, 3, 1};
  CHECK_FALSE(Bottleneck<double>::needs_projection(spec));
  auto b = Bottleneck<double>::create(spec, rng);
  zero(b.conv1);
  zero(b.conv2);
  const Tensor<double> x = random_tensor({2, 16, 5, 5}, 6);
  CHECK(bit_equal(b.forward(x, Mode::train), x));
  CHECK(Bottleneck<double>::needs_projection({16, 8, 3, 1}));
  CHECK(Bottleneck<double>::needs_projection({16, 4, 3, 2}));
  auto proj = Bottleneck<double>::create({16, 8, 3, 2}, rng);
  CHECK(proj.forward(x, Mode::eval).shape() == Shape{2, 32, 3, 3});
}

TEST_CASE("preset structure") {
  const ModelSpec s = model_preset("san19");
  CHECK(s.stages.size() == 5);
  const std::vector<int> blocks{3, 3, 4, 6, 3}, footprints{3, 7, 7, 7, 7};
  const std::vector<Index> channels{64, 256, 512, 1024, 2048};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(s.stages[i].blocks == blocks[i]);
    CHECK(s.stages[i].footprint == footprints[i]);
    CHECK(s.stages[i].channels == channels[i]);
  }
  CHECK(s.stage_resolutions() == std::vector<Index>{112, 56, 28, 14, 7});
  CHECK_THROWS_AS(model_preset("san11"), ConfigError);
  ModelSpec bad = s;
  bad.attention.share = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("spec JSON round trip") {
  ModelSpec s = model_preset("san10");
  s.attention.kind = OperatorKind::patchwise;
  s.attention.relation = Relation::clique_product;
  set_footprint(s, 5);
  const ModelSpec back = ModelSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  auto broken = s.to_json();
  broken.erase("stages");
  CHECK_THROWS_AS(ModelSpec::from_json(broken), ConfigError);
}

TEST_CASE("san-tiny forward shape and deterministic build") {
  auto a = Model<float>::build(model_preset("san-tiny"), 7);
  auto b = Model<float>::build(model_preset("san-tiny"), 7);
  auto c = Model<float>::build(model_preset("san-tiny"), 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(bit_equal(pa[i].second, pb[i].second));
    differs = differs || !bit_equal(pa[i].second, pc[i].second);
  }
  CHECK(differs);
  const Tensor<float> x = random_tensor({2, 3, 32, 32}, 1).cast<float>();
  const auto y = a.forward(x, Mode::eval);
  CHECK(y.shape() == Shape{2, 10});
  CHECK(bit_equal(y, a.forward(x, Mode::eval)));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = scratch_dir("ckpt");
  auto m = Model<float>::build(model_preset("san-tiny"), 3);
  // Move running statistics away from their defaults.
  m.forward(random_tensor({4, 3, 32, 32}, 2).cast<float>(), Mode::train);
  save_checkpoint(m, dir / "m.ckpt");
  CHECK(fs::file_size(dir / "m.ckpt") < 10u * 1024 * 1024);
  auto back = load_checkpoint<float>(dir / "m.ckpt");
  CHECK(back.spec().to_json() == m.spec().to_json());
  const Tensor<float> x = random_tensor({2, 3, 32, 32}, 4).cast<float>();
  CHECK(bit_equal(m.forward(x, Mode::eval), back.forward(x, Mode::eval)));
  fs::remove_all(dir);
}

TEST_CASE("corrupted checkpoints raise format errors") {
  const fs::path dir = scratch_dir("corrupt");
  auto m = Model<float>::build(model_preset("san-tiny"), 3);
  save_checkpoint(m, dir / "m.ckpt");
  std::string bytes;
  {
    std::ifstream is(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream os(dir / name, std::ios::binary);
    os << content;
    return dir / name;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint<float>(write("magic.ckpt", bad_magic)), FormatError);
  std::string bad_header = bytes;
  bad_header[20] = '#';
  CHECK_THROWS_AS(load_checkpoint<float>(write("header.ckpt", bad_header)), FormatError);
  CHECK_THROWS_AS(load_checkpoint<float>(write("short.ckpt", bytes.substr(0, bytes.size() - 8))), FormatError);
  CHECK_THROWS_AS(load_checkpoint<float>(write("long.ckpt", bytes + "xx")), FormatError);
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "missing.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("symbolic and runtime parameter counts agree") {
  for (const std::string name : {"san-tiny", "san19", "resnet26"}) {
    const RuntimeCheck check = verify_against_runtime(model_preset(name));
    CAPTURE(name);
    CHECK(check.ok());
    CHECK(check.symbolic == check.runtime);
  }
  ModelSpec patch = model_preset("san10");
  patch.attention.kind = OperatorKind::patchwise;
  patch.attention.relation = Relation::concatenation;
  CHECK(verify_against_runtime(patch).ok());
}

TEST_CASE("cost report totals equal the breakdown") {
  const CostReport r = count_costs(model_preset("san15"), 224);
  Index params = 0, macs = 0;
  for (const auto& l : r.layers) {
    params += l.params;
    macs += l.macs;
  }
  CHECK(params == r.params);
  CHECK(macs == r.macs);
  CHECK(count_costs(model_preset("san15"), 64).params == r.params);
  CHECK(r.to_json().at("params").get<Index>() == r.params);
  CHECK(r.to_table().find("Params") != std::string::npos);
}

TEST_CASE("a model without blocks costs its stem, transition and classifier") {
  const ModelSpec s = blockless_spec();
  const Index hw = 32 * 32;
  const CostReport r = count_costs(s, 32);
  CHECK(r.macs == 3 * 16 * hw + 16 * 24 * hw + 24 * 10);
  CHECK(r.params == (3 * 16 + 16) + 2 * 16 + (16 * 24 + 24) + 2 * 24 + (24 * 10 + 10));
  CHECK(verify_against_runtime(s).ok());
}

TEST_CASE("patchwise parameters grow with the footprint, pairwise stay fixed") {
  ModelSpec pair = model_preset("san10");
  ModelSpec patch = pair;
  patch.attention.kind = OperatorKind::patchwise;
  patch.attention.relation = Relation::concatenation;
  Index previous = 0;
  const Index pairwise = count_params(pair).params;
  for (int k : {3, 5, 7, 9, 11}) {
    set_footprint(pair, k);
    set_footprint(patch, k);
    CHECK(count_params(pair).params == pairwise);
    const Index p = count_params(patch).params;
    CHECK(p > previous);
    previous = p;
  }
}

TEST_CASE("MACs scale quadratically with input size when nothing pools") {
  ModelSpec s = model_preset("san-tiny");
  for (auto& st : s.stages) st.pool = false;
  const CostReport a = count_costs(s, 8), b = count_costs(s, 16);
  const Index head = s.stage_out(s.stages.size() - 1) * s.classes;
  CHECK(b.macs - head == 4 * (a.macs - head));
}
