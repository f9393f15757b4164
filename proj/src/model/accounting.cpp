#include "san/accounting.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace san {
namespace {

struct Counter {
  std::vector<LayerCost>& layers;

  void add(std::string name, Index params, Index macs) { layers.push_back({std::move(name), params, macs}); }
  void batch_norm(const std::string& name, Index channels) { add(name, 2 * channels, 0); }
  void linear(const std::string& name, Index in, Index out, bool bias, Index locations) {
    add(name, in * out + (bias ? out : 0), in * out * locations);
  }
};

void attention_costs(Counter& c, const std::string& prefix, Index channels, int k, const AttentionConfig& cfg,
                     Index locations) {
  const FootprintSpec fp(k);
  const AttentionDims d = attention_dims(channels, fp, cfg);
  const Index slots = d.slots;
  if (cfg.kind == OperatorKind::conv) {
    c.add(prefix + ".conv", channels * d.mid * slots, channels * d.mid * slots * locations);
    return;
  }
  c.linear(prefix + ".phi", channels, d.rel, true, locations);
  if (cfg.sharing == TransformSharing::distinct) c.linear(prefix + ".psi", channels, d.rel, true, locations);
  if (cfg.sharing != TransformSharing::all) c.linear(prefix + ".beta", channels, d.mid, false, locations);

  Index relation = 0;  // per location
  if (cfg.kind == OperatorKind::scalar) {
    relation = slots * d.rel;
  } else if (cfg.kind == OperatorKind::pairwise) {
    if (cfg.relation == Relation::hadamard || cfg.relation == Relation::dot) relation = slots * d.rel;
  } else if (cfg.relation == Relation::star_product) {
    relation = slots * d.rel;
  } else if (cfg.relation == Relation::clique_product) {
    relation = slots * slots * d.rel;
  }
  c.add(prefix + ".relation", 0, relation * locations);

  // Pairwise gamma runs once per slot; patchwise once per location.
  const Index gamma_repeats = cfg.kind == OperatorKind::pairwise ? slots : 1;
  for (std::size_t i = 0; i + 1 < d.gamma_widths.size(); ++i) {
    const Index in = d.gamma_widths[i], out = d.gamma_widths[i + 1];
    c.add(prefix + ".gamma." + std::to_string(i), in * out + out, in * out * gamma_repeats * locations);
  }
  if (d.position_width > 0) c.add(prefix + ".position", 6, 0);
  c.add(prefix + ".aggregate", 0, slots * d.mid * locations);
}

void san_costs(Counter& c, const ModelSpec& spec, Index input_size) {
  Index r = input_size;
  c.linear("stem", spec.in_channels, spec.stem_channels, true, r * r);
  Index in = spec.stem_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    const std::string stage = "stage" + std::to_string(i + 1);
    if (st.pool) r = (r + 1) / 2;
    const Index hw = r * r;
    c.batch_norm(stage + ".transition.bn", in);
    c.linear(stage + ".transition.linear", in, st.channels, true, hw);
    const Index mid = st.channels / spec.attention.r2;
    for (int b = 0; b < st.blocks; ++b) {
      const std::string block = stage + ".block" + std::to_string(b + 1);
      c.batch_norm(block + ".bn_in", st.channels);
      attention_costs(c, block + ".attn", st.channels, st.footprint, spec.attention, hw);
      c.batch_norm(block + ".bn_mid", mid);
      c.linear(block + ".expand", mid, st.channels, true, hw);
    }
    in = st.channels;
  }
  c.batch_norm("head.bn", in);
  c.linear("head.fc", in, spec.classes, true, 1);
}

void resnet_costs(Counter& c, const ModelSpec& spec, Index input_size) {
  auto halve = [](Index v) { return (v + 1) / 2; };
  Index r = halve(input_size);
  c.add("stem.conv", spec.in_channels * spec.stem_channels * 49, spec.in_channels * spec.stem_channels * 49 * r * r);
  c.batch_norm("stem.bn", spec.stem_channels);
  r = halve(r);
  Index in = spec.stem_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    const Index w = st.channels, out = 4 * w, kk = Index{st.footprint} * st.footprint;
    for (int b = 0; b < st.blocks; ++b) {
      const std::string block = "stage" + std::to_string(i + 1) + ".block" + std::to_string(b + 1);
      const int stride = (b == 0 && i > 0) ? 2 : 1;
      const Index r_in = r;
      if (stride == 2) r = halve(r);
      c.batch_norm(block + ".bn1", in);
      c.add(block + ".conv1", in * w, in * w * r_in * r_in);
      c.batch_norm(block + ".bn2", w);
      c.add(block + ".conv2", w * w * kk, w * w * kk * r * r);
      c.batch_norm(block + ".bn3", w);
      c.add(block + ".conv3", w * out, w * out * r * r);
      if (Bottleneck<float>::needs_projection(BottleneckSpec{in, w, st.footprint, stride})) {
        c.add(block + ".shortcut", in * out, in * out * r * r);
      }
      in = out;
    }
  }
  c.batch_norm("head.bn", in);
  c.linear("head.fc", in, spec.classes, true, 1);
}

}  // namespace

CostReport count_costs(const ModelSpec& spec, Index input_size) {
  spec.validate();
  CostReport report;
  report.model = spec.name;
  report.input_size = input_size;
  Counter c{report.layers};
  if (spec.family == ModelFamily::san) {
    san_costs(c, spec, input_size);
  } else {
    resnet_costs(c, spec, input_size);
  }
  for (const LayerCost& l : report.layers) {
    report.params += l.params;
    report.macs += l.macs;
  }
  return report;
}

CostReport count_params(const ModelSpec& spec) { return count_costs(spec, spec.input_size); }

CostReport count_macs(const ModelSpec& spec, Index input_size) { return count_costs(spec, input_size); }

nlohmann::json CostReport::to_json() const {
  nlohmann::json layer_list = nlohmann::json::array();
  for (const LayerCost& l : layers) layer_list.push_back({{"name", l.name}, {"params", l.params}, {"macs", l.macs}});
  return {{"model", model}, {"input_size", input_size}, {"params", params}, {"macs", macs}, {"layers", layer_list}};
}

std::string CostReport::to_table() const {
  std::size_t width = 5;
  for (const LayerCost& l : layers) width = std::max(width, l.name.size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s %14s %16s\n", static_cast<int>(width), "layer", "params", "macs");
  os << line;
  for (const LayerCost& l : layers) {
    std::snprintf(line, sizeof(line), "%-*s %14lld %16lld\n", static_cast<int>(width), l.name.c_str(),
                  static_cast<long long>(l.params), static_cast<long long>(l.macs));
    os << line;
  }
  std::snprintf(line, sizeof(line), "%s @ %lldx%lld: Params %.2fM  Flops %.2fG\n", model.c_str(),
                static_cast<long long>(input_size), static_cast<long long>(input_size), params / 1e6, macs / 1e9);
  os << line;
  return os.str();
}

RuntimeCheck verify_against_runtime(const ModelSpec& spec) {
  const CostReport symbolic = count_params(spec);
  auto model = Model<float>::build(spec, 0);
  std::map<std::string, Index> runtime;
  model.visit(Visitor<float>{[&](const std::string& name, Tensor<float>& t) {
                               runtime[name.substr(0, name.rfind('.'))] += t.numel();
                             },
                             nullptr});
  RuntimeCheck check;
  check.symbolic = symbolic.params;
  for (const auto& [name, count] : runtime) check.runtime += count;
  std::map<std::string, Index> expected;
  for (const LayerCost& l : symbolic.layers) {
    if (l.params > 0) expected[l.name] += l.params;
  }
  for (const auto& [name, count] : expected) {
    const auto it = runtime.find(name);
    const Index got = it == runtime.end() ? 0 : it->second;
    if (got != count) {
      check.mismatches.push_back(name + ": symbolic " + std::to_string(count) + ", runtime " + std::to_string(got));
    }
  }
  for (const auto& [name, count] : runtime) {
    if (!expected.contains(name)) {
      check.mismatches.push_back(name + ": symbolic 0, runtime " + std::to_string(count));
    }
  }
  return check;
}

}  // namespace san
