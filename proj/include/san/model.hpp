#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "san/attention.hpp"
#include "san/blocks.hpp"

namespace san {

enum class ModelFamily { san, resnet };

std::string_view to_string(ModelFamily v);

struct StageSpec {
  Index channels = 0;  // SAN: stage width; ResNet: bottleneck width (output is 4x)
  int blocks = 1;
  int footprint = 3;   // SAN: attention footprint; ResNet: middle conv kernel
  bool pool = true;    // SAN transitions only
};

struct ModelSpec {
  std::string name;
  ModelFamily family = ModelFamily::san;
  Index in_channels = 3;
  Index stem_channels = 64;
  Index input_size = 224;
  Index classes = 1000;
  std::vector<StageSpec> stages;
  AttentionConfig attention;  // SAN only

  // Output width of stage i (ResNet expands by 4).
  Index stage_out(std::size_t i) const;
  // Spatial extent entering each stage's blocks, given input_size.
  std::vector<Index> stage_resolutions() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

// san10, san15, san19, san-tiny, resnet26, resnet38, resnet50.
std::vector<std::string> model_names();
ModelSpec model_preset(std::string_view name);

// Replaces the footprint of every stage but the first.
void set_footprint(ModelSpec& spec, int k);

template <typename T>
class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  // x [N, in_channels, H, W] -> logits [N, classes].
  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  void visit(const Visitor<T>& v);
  std::vector<std::pair<std::string, Tensor<T>>> parameters();
  Index parameter_count();

 private:
  struct Stage {
    Transition<T> transition;
    std::vector<SABlock<T>> attention_blocks;
    std::vector<Bottleneck<T>> bottlenecks;
  };

  ModelSpec spec_;
  LinearStem<T> linear_stem_;
  ConvStem<T> conv_stem_;
  std::vector<Stage> stages_;
  Classifier<T> head_;
};

// Checkpoint layout:
//   8 bytes   magic "SANCKPT1"
//   8 bytes   little-endian u64 header length L
//   L bytes   JSON {"version", "dtype", "spec", "tensors": [{"name", "shape"}...]}
//   payload   each tensor's little-endian values in header order
// Parameters come first in declaration order, then state buffers.
inline constexpr std::string_view kCheckpointMagic = "SANCKPT1";
inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path);
// Throws FormatError without returning a partially loaded model.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace san
