#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "san/model.hpp"

namespace san {

// Costs of one named layer. Names match the runtime parameter prefixes
// (e.g. "stage2.block1.attn.gamma.0"); purely computational steps such as
// the attention relation or aggregation carry zero parameters.
struct LayerCost {
  std::string name;
  Index params = 0;
  Index macs = 0;
};

// One multiply-accumulate = 1 MAC. Batch norm, activations, pooling and
// softmax are not counted.
struct CostReport {
  std::string model;
  Index input_size = 0;
  Index params = 0;
  Index macs = 0;
  std::vector<LayerCost> layers;

  nlohmann::json to_json() const;
  // Aligned text table with totals in millions / billions.
  std::string to_table() const;
};

// Symbolic counts; never allocates tensors.
CostReport count_costs(const ModelSpec& spec, Index input_size);
CostReport count_params(const ModelSpec& spec);
CostReport count_macs(const ModelSpec& spec, Index input_size = 224);

struct RuntimeCheck {
  Index symbolic = 0;
  Index runtime = 0;
  std::vector<std::string> mismatches;  // "layer: symbolic X, runtime Y"
  bool ok() const { return mismatches.empty() && symbolic == runtime; }
};

// Builds the model and compares allocated scalars against count_params,
// layer by layer.
RuntimeCheck verify_against_runtime(const ModelSpec& spec);

}  // namespace san
