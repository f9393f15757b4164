#include "san/model.hpp"

#include <fstream>

#include "san/errors.hpp"
#include "san/serialize.hpp"

namespace san {
namespace {

using nlohmann::json;

json attention_to_json(const AttentionConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"relation", to_string(c.relation)},
              {"gamma_depth", c.gamma_depth},
              {"r1", c.r1},
              {"r2", c.r2},
              {"share", c.share},
              {"position", to_string(c.position)},
              {"normalize", c.normalize},
              {"sharing", to_string(c.sharing)}};
}

AttentionConfig attention_from_json(const json& j) {
  AttentionConfig c;
  c.kind = parse_operator_kind(j.at("kind").get<std::string>());
  c.relation = parse_relation(j.at("relation").get<std::string>());
  c.gamma_depth = j.at("gamma_depth").get<int>();
  c.r1 = j.at("r1").get<int>();
  c.r2 = j.at("r2").get<int>();
  c.share = j.at("share").get<int>();
  c.position = parse_position_mode(j.at("position").get<std::string>());
  c.normalize = j.at("normalize").get<bool>();
  c.sharing = parse_transform_sharing(j.at("sharing").get<std::string>());
  return c;
}

ModelSpec san_preset(std::string name, std::vector<int> blocks) {
  ModelSpec s;
  s.name = std::move(name);
  const Index channels[] = {64, 256, 512, 1024, 2048};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    s.stages.push_back(StageSpec{channels[i], blocks[i], i == 0 ? 3 : 7, true});
  }
  return s;
}

ModelSpec resnet_preset(std::string name, std::vector<int> blocks) {
  ModelSpec s;
  s.name = std::move(name);
  s.family = ModelFamily::resnet;
  const Index widths[] = {64, 128, 256, 512};
  for (std::size_t i = 0; i < blocks.size(); ++i) s.stages.push_back(StageSpec{widths[i], blocks[i], 3, true});
  return s;
}

ModelSpec tiny_preset() {
  ModelSpec s;
  s.name = "san-tiny";
  s.stem_channels = 16;
  s.input_size = 32;
  s.classes = 10;
  s.stages = {StageSpec{16, 1, 3, false}, StageSpec{32, 1, 5, true}, StageSpec{64, 1, 5, true}};
  s.attention.r1 = 4;
  s.attention.r2 = 2;
  s.attention.share = 2;
  return s;
}

}  // namespace

std::string_view to_string(ModelFamily v) { return v == ModelFamily::san ? "san" : "resnet"; }

Index ModelSpec::stage_out(std::size_t i) const {
  return family == ModelFamily::resnet ? 4 * stages.at(i).channels : stages.at(i).channels;
}

std::vector<Index> ModelSpec::stage_resolutions() const {
  std::vector<Index> out;
  Index r = input_size;
  auto halve = [](Index v) { return (v + 1) / 2; };
  if (family == ModelFamily::resnet) r = halve(halve(r));
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (family == ModelFamily::san ? stages[i].pool : i > 0) r = halve(r);
    out.push_back(r);
  }
  return out;
}

void ModelSpec::validate() const {
  auto fail = [&](const std::string& why) { throw ConfigError("model '" + name + "': " + why); };
  if (in_channels < 1 || stem_channels < 1 || classes < 1 || input_size < 1) {
    fail("channel, class and input extents must be positive");
  }
  if (stages.empty()) fail("at least one stage is required");
  Index r = input_size;
  if (family == ModelFamily::resnet) r = (((r + 1) / 2) + 1) / 2;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    const std::string where = "stage " + std::to_string(i + 1) + ": ";
    if (st.channels < 1 || st.blocks < 0) fail(where + "channels must be positive and blocks non-negative");
    if (family == ModelFamily::san) {
      if (st.pool) {
        if (r % 2 != 0) fail(where + "pooling an odd extent " + std::to_string(r));
        r /= 2;
      }
      try {
        const FootprintSpec fp(st.footprint);
        attention_dims(st.channels, fp, attention);
      } catch (const ConfigError& e) {
        fail(where + e.what());
      }
    } else {
      if (st.blocks < 1) fail(where + "bottleneck stages need at least one block");
      if (st.footprint < 1 || st.footprint % 2 == 0) fail(where + "kernel must be odd and positive");
    }
  }
}

json ModelSpec::to_json() const {
  json stage_list = json::array();
  for (const StageSpec& s : stages) {
    stage_list.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"footprint", s.footprint}, {"pool", s.pool}});
  }
  json j{{"name", name},
         {"family", to_string(family)},
         {"in_channels", in_channels},
         {"stem_channels", stem_channels},
         {"input_size", input_size},
         {"classes", classes},
         {"stages", stage_list}};
  if (family == ModelFamily::san) j["attention"] = attention_to_json(attention);
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    const auto family = j.at("family").get<std::string>();
    if (family == "san") {
      s.family = ModelFamily::san;
    } else if (family == "resnet") {
      s.family = ModelFamily::resnet;
    } else {
      throw ConfigError("unknown model family '" + family + "'");
    }
    s.in_channels = j.at("in_channels").get<Index>();
    s.stem_channels = j.at("stem_channels").get<Index>();
    s.input_size = j.at("input_size").get<Index>();
    s.classes = j.at("classes").get<Index>();
    for (const auto& st : j.at("stages")) {
      s.stages.push_back(StageSpec{st.at("channels").get<Index>(), st.at("blocks").get<int>(),
                                   st.at("footprint").get<int>(), st.at("pool").get<bool>()});
    }
    if (s.family == ModelFamily::san) s.attention = attention_from_json(j.at("attention"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<std::string> model_names() {
  return {"san10", "san15", "san19", "san-tiny", "resnet26", "resnet38", "resnet50"};
}

ModelSpec model_preset(std::string_view name) {
  if (name == "san10") return san_preset("san10", {2, 1, 2, 4, 1});
  if (name == "san15") return san_preset("san15", {3, 2, 3, 5, 2});
  if (name == "san19") return san_preset("san19", {3, 3, 4, 6, 3});
  if (name == "san-tiny") return tiny_preset();
  if (name == "resnet26") return resnet_preset("resnet26", {1, 2, 4, 1});
  if (name == "resnet38") return resnet_preset("resnet38", {2, 3, 5, 2});
  if (name == "resnet50") return resnet_preset("resnet50", {3, 4, 6, 3});
  std::string known;
  for (const auto& n : model_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected one of " + known + ")");
}

void set_footprint(ModelSpec& spec, int k) {
  for (std::size_t i = 1; i < spec.stages.size(); ++i) spec.stages[i].footprint = k;
}

template <typename T>
Model<T> Model<T>::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.spec_ = spec;
  Index in = spec.stem_channels;
  if (spec.family == ModelFamily::san) {
    m.linear_stem_ = LinearStem<T>::create(spec.in_channels, spec.stem_channels, rng);
  } else {
    m.conv_stem_ = ConvStem<T>::create(spec.in_channels, spec.stem_channels, rng);
  }
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    Stage stage;
    if (spec.family == ModelFamily::san) {
      stage.transition = Transition<T>::create(in, st.channels, st.pool, rng);
      for (int b = 0; b < st.blocks; ++b) {
        stage.attention_blocks.push_back(SABlock<T>::create(SABlockSpec{st.channels, st.footprint, spec.attention}, rng));
      }
    } else {
      for (int b = 0; b < st.blocks; ++b) {
        const int stride = (b == 0 && i > 0) ? 2 : 1;
        stage.bottlenecks.push_back(Bottleneck<T>::create(BottleneckSpec{in, st.channels, st.footprint, stride}, rng));
        in = 4 * st.channels;
      }
    }
    in = spec.stage_out(i);
    m.stages_.push_back(std::move(stage));
  }
  m.head_ = Classifier<T>::create(in, spec.classes, rng);
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw DimensionError("model '" + spec_.name + "': expected input [N," + std::to_string(spec_.in_channels) +
                         ",H,W], got " + shape_str(x.shape()));
  }
  Tensor<T> h = spec_.family == ModelFamily::san ? linear_stem_.forward(x) : conv_stem_.forward(x, mode);
  for (Stage& stage : stages_) {
    if (spec_.family == ModelFamily::san) h = stage.transition.forward(h, mode);
    for (auto& block : stage.attention_blocks) h = block.forward(h, mode);
    for (auto& block : stage.bottlenecks) h = block.forward(h, mode);
  }
  return head_.forward(h, mode);
}

template <typename T>
void Model<T>::visit(const Visitor<T>& v) {
  if (spec_.family == ModelFamily::san) {
    linear_stem_.visit("stem", v);
  } else {
    conv_stem_.visit("stem", v);
  }
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string stage = "stage" + std::to_string(i + 1);
    Stage& s = stages_[i];
    if (spec_.family == ModelFamily::san) s.transition.visit(stage + ".transition", v);
    for (std::size_t b = 0; b < s.attention_blocks.size(); ++b) {
      s.attention_blocks[b].visit(stage + ".block" + std::to_string(b + 1), v);
    }
    for (std::size_t b = 0; b < s.bottlenecks.size(); ++b) {
      s.bottlenecks[b].visit(stage + ".block" + std::to_string(b + 1), v);
    }
  }
  head_.visit("head", v);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit(Visitor<T>{[&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); }, nullptr});
  return out;
}

template <typename T>
Index Model<T>::parameter_count() {
  Index n = 0;
  visit(Visitor<T>{[&](const std::string&, Tensor<T>& t) { n += t.numel(); }, nullptr});
  return n;
}

namespace {

// Flat view over every parameter and buffer of a model, in checkpoint order.
template <typename T>
struct StateEntry {
  std::string name;
  Shape shape;
  std::span<T> values;
};

template <typename T>
std::vector<StateEntry<T>> collect_state(Model<T>& model) {
  std::vector<StateEntry<T>> params, buffers;
  model.visit(Visitor<T>{
      [&](const std::string& name, Tensor<T>& t) { params.push_back({name, t.shape(), t.mutable_data()}); },
      [&](const std::string& name, std::vector<T>& b) {
        buffers.push_back({name, Shape{static_cast<Index>(b.size())}, std::span<T>(b)});
      }});
  params.insert(params.end(), buffers.begin(), buffers.end());
  return params;
}

}  // namespace

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  const auto state = collect_state(model);
  json tensors = json::array();
  for (const auto& e : state) tensors.push_back({{"name", e.name}, {"shape", e.shape}});
  const json header{{"version", kCheckpointVersion},
                    {"dtype", dtype_name<T>()},
                    {"spec", model.spec().to_json()},
                    {"tensors", tensors}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  write_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : state) write_values_le<T>(os, std::span<const T>(e.values.data(), e.values.size()));
  if (!os.flush()) throw FormatError("failed writing checkpoint: " + path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::string_view(magic, sizeof(magic)) != kCheckpointMagic) {
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  }
  const std::uint64_t length = read_u64_le(is);
  if (length > (std::uint64_t{1} << 26)) throw FormatError("checkpoint header too large");
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw FormatError("truncated checkpoint header");

  json header;
  ModelSpec spec;
  try {
    header = json::parse(text);
    if (header.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + header.at("version").dump());
    }
    if (header.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw FormatError("checkpoint dtype " + header.at("dtype").get<std::string>() + " does not match " +
                        std::string(dtype_name<T>()));
    }
    spec = ModelSpec::from_json(header.at("spec"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint spec rejected: ") + e.what());
  }

  Model<T> model = Model<T>::build(spec, 0);
  const auto state = collect_state(model);
  const json& listed = header.at("tensors");
  if (!listed.is_array() || listed.size() != state.size()) {
    throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " tensors, model has " +
                      std::to_string(state.size()));
  }
  std::vector<std::vector<T>> staged(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    try {
      const auto name = listed[i].at("name").get<std::string>();
      const auto shape = listed[i].at("shape").get<Shape>();
      if (name != state[i].name || shape != state[i].shape) {
        throw FormatError("checkpoint tensor " + std::to_string(i) + " is " + name + shape_str(shape) +
                          ", model expects " + state[i].name + shape_str(state[i].shape));
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed checkpoint tensor entry: ") + e.what());
    }
    staged[i].resize(state[i].values.size());
    read_values_le<T>(is, staged[i]);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint payload");
  for (std::size_t i = 0; i < state.size(); ++i) std::copy(staged[i].begin(), staged[i].end(), state[i].values.begin());
  return model;
}

template class Model<float>;
template class Model<double>;
template void save_checkpoint<float>(Model<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace san
