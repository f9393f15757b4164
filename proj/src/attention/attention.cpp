#include "san/attention.hpp"

#include <array>
#include <utility>

#include "san/errors.hpp"
#include "san/ops.hpp"

namespace san {
namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<OperatorKind, 4> kKinds{{{OperatorKind::pairwise, "pairwise"},
                                             {OperatorKind::patchwise, "patchwise"},
                                             {OperatorKind::scalar, "scalar"},
                                             {OperatorKind::conv, "conv"}}};
constexpr NameTable<Relation, 7> kRelations{{{Relation::summation, "summation"},
                                             {Relation::subtraction, "subtraction"},
                                             {Relation::concatenation, "concatenation"},
                                             {Relation::hadamard, "hadamard"},
                                             {Relation::dot, "dot"},
                                             {Relation::star_product, "star_product"},
                                             {Relation::clique_product, "clique_product"}}};
constexpr NameTable<PositionMode, 3> kPositions{{{PositionMode::none, "none"},
                                                 {PositionMode::absolute, "absolute"},
                                                 {PositionMode::relative, "relative"}}};
constexpr NameTable<TransformSharing, 3> kSharing{{{TransformSharing::distinct, "distinct"},
                                                   {TransformSharing::phi_psi, "phi_psi"},
                                                   {TransformSharing::all, "all"}}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "?";
}

template <typename E, std::size_t N>
E parse_name(const NameTable<E, N>& table, std::string_view s, const char* what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  std::string options;
  for (const auto& [e, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of " + options + ")");
}

}  // namespace

std::string_view to_string(OperatorKind v) { return name_of(kKinds, v); }
std::string_view to_string(Relation v) { return name_of(kRelations, v); }
std::string_view to_string(PositionMode v) { return name_of(kPositions, v); }
std::string_view to_string(TransformSharing v) { return name_of(kSharing, v); }
OperatorKind parse_operator_kind(std::string_view s) { return parse_name(kKinds, s, "operator kind"); }
Relation parse_relation(std::string_view s) { return parse_name(kRelations, s, "relation"); }
PositionMode parse_position_mode(std::string_view s) { return parse_name(kPositions, s, "position mode"); }
TransformSharing parse_transform_sharing(std::string_view s) {
  return parse_name(kSharing, s, "transform sharing");
}

bool is_pairwise_relation(Relation r) {
  return r == Relation::summation || r == Relation::subtraction || r == Relation::concatenation ||
         r == Relation::hadamard || r == Relation::dot;
}

bool is_patchwise_relation(Relation r) {
  return r == Relation::star_product || r == Relation::clique_product || r == Relation::concatenation;
}

AttentionDims attention_dims(Index channels, const FootprintSpec& fp, const AttentionConfig& cfg) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("attention at C=" + std::to_string(channels) + ": " + why);
  };
  if (channels < 1) fail("channel count must be positive");
  if (cfg.r1 < 1 || cfg.r2 < 1 || cfg.share < 1) fail("r1, r2 and share must be positive");
  if (channels % cfg.r2 != 0) fail("not divisible by r2=" + std::to_string(cfg.r2));

  AttentionDims d;
  d.channels = channels;
  d.mid = channels / cfg.r2;
  d.slots = fp.slots();
  if (cfg.kind == OperatorKind::conv) return d;

  if (cfg.sharing == TransformSharing::all) {
    if (cfg.r1 != cfg.r2) fail("sharing phi, psi and beta requires r1 == r2");
    d.rel = d.mid;
  } else {
    if (channels % cfg.r1 != 0) fail("not divisible by r1=" + std::to_string(cfg.r1));
    d.rel = channels / cfg.r1;
  }

  if (cfg.kind == OperatorKind::scalar) {
    d.share = d.mid;
    d.groups = 1;
    return d;
  }
  if (d.mid % cfg.share != 0) {
    fail("Cm=" + std::to_string(d.mid) + " not divisible by share=" + std::to_string(cfg.share));
  }
  d.share = cfg.share;
  d.groups = d.mid / cfg.share;
  if (cfg.gamma_depth < 1 || cfg.gamma_depth > 3) fail("gamma depth must be 1, 2 or 3");

  const Index k = d.slots;
  Index out = 0;
  if (cfg.kind == OperatorKind::pairwise) {
    if (!is_pairwise_relation(cfg.relation)) {
      fail("relation " + std::string(to_string(cfg.relation)) + " is not a pairwise relation");
    }
    switch (cfg.relation) {
      case Relation::concatenation: d.relation_width = 2 * d.rel; break;
      case Relation::dot: d.relation_width = 1; break;
      default: d.relation_width = d.rel; break;
    }
    d.position_width = cfg.position == PositionMode::none ? 0 : 2;
    out = d.groups;
  } else {
    if (!is_patchwise_relation(cfg.relation)) {
      fail("relation " + std::string(to_string(cfg.relation)) + " is not a patchwise relation");
    }
    switch (cfg.relation) {
      case Relation::star_product: d.relation_width = k; break;
      case Relation::clique_product: d.relation_width = k * k; break;
      default: d.relation_width = (k + 1) * d.rel; break;
    }
    out = k * d.groups;
  }
  d.gamma_widths.push_back(d.relation_width + d.position_width);
  for (int layer = 1; layer < cfg.gamma_depth; ++layer) {
    const bool last_hidden = layer == cfg.gamma_depth - 1;
    // Patchwise narrows to one weight per group before fanning out per slot.
    d.gamma_widths.push_back(cfg.kind == OperatorKind::patchwise && last_hidden ? d.groups : d.rel);
  }
  d.gamma_widths.push_back(out);
  return d;
}

template <typename T>
LinearParams<T> LinearParams<T>::zeros(Index in, Index out, bool with_bias) {
  LinearParams p;
  p.weight = Tensor<T>(Shape{out, in});
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>(Shape{out});
    p.bias.set_requires_grad(true);
  }
  return p;
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(Index channels, const FootprintSpec& fp,
                                              const AttentionConfig& cfg) {
  AttentionParams p;
  p.config = cfg;
  p.dims = attention_dims(channels, fp, cfg);
  const AttentionDims& d = p.dims;
  if (cfg.kind == OperatorKind::conv) {
    p.conv_kernel = Tensor<T>(Shape{d.mid, channels, fp.k(), fp.k()});
    p.conv_kernel.set_requires_grad(true);
    return p;
  }
  p.phi = LinearParams<T>::zeros(channels, d.rel, true);
  if (cfg.sharing == TransformSharing::distinct) p.psi = LinearParams<T>::zeros(channels, d.rel, true);
  if (cfg.sharing != TransformSharing::all) p.beta = LinearParams<T>::zeros(channels, d.mid, false);
  for (std::size_t i = 0; i + 1 < d.gamma_widths.size(); ++i) {
    p.gamma.push_back(LinearParams<T>::zeros(d.gamma_widths[i], d.gamma_widths[i + 1], true));
  }
  if (d.position_width > 0) p.position = LinearParams<T>::zeros(2, 2, true);
  return p;
}

template <typename T>
void AttentionParams<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  auto visit = [&](const std::string& name, LinearParams<T>& lp) {
    if (lp.weight.defined()) fn(name + ".weight", lp.weight);
    if (lp.bias.defined()) fn(name + ".bias", lp.bias);
  };
  if (conv_kernel.defined()) fn("conv.weight", conv_kernel);
  visit("phi", phi);
  visit("psi", psi);
  visit("beta", beta);
  for (std::size_t i = 0; i < gamma.size(); ++i) visit("gamma." + std::to_string(i), gamma[i]);
  visit("position", position);
}

template <typename T>
Tensor<T> normalized_coordinates(Index height, Index width) {
  if (height < 1 || width < 1) throw DimensionError("position grid needs H, W >= 1");
  std::vector<T> v(static_cast<std::size_t>(2 * height * width));
  auto coord = [](Index i, Index n) { return n == 1 ? T(0) : T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(n - 1); };
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      v[static_cast<std::size_t>(y * width + x)] = coord(y, height);
      v[static_cast<std::size_t>((height + y) * width + x)] = coord(x, width);
    }
  return Tensor<T>(Shape{2, height, width}, std::move(v));
}

template <typename T>
Tensor<T> position_features(Index height, Index width, const LinearParams<T>& position) {
  const Tensor<T> grid = reshape(normalized_coordinates<T>(height, width), Shape{1, 2, height, width});
  return reshape(linear(grid, position.weight, position.bias), Shape{2, height, width});
}

template <typename T>
Tensor<T> delta_pairwise(const Tensor<T>& phi_i, const Tensor<T>& psi_j, Relation relation) {
  if (phi_i.rank() != 4 || psi_j.rank() != 4 || phi_i.dim(1) != psi_j.dim(1) || phi_i.dim(2) != 1) {
    throw DimensionError("delta_pairwise: expected [N,d,1,S] and [N,d,K,S], got " + shape_str(phi_i.shape()) +
                         " and " + shape_str(psi_j.shape()));
  }
  switch (relation) {
    case Relation::summation: return add(phi_i, psi_j);
    case Relation::subtraction: return sub(phi_i, psi_j);
    case Relation::hadamard: return hadamard(phi_i, psi_j);
    case Relation::concatenation: return concat<T>({expand(phi_i, psi_j.shape()), psi_j}, 1);
    case Relation::dot: return channel_contract(phi_i, psi_j);
    default: break;
  }
  throw ConfigError("delta_pairwise: " + std::string(to_string(relation)) + " is not a pairwise relation");
}

template <typename T>
Tensor<T> delta_patchwise(const Tensor<T>& phi, const Tensor<T>& phi_patch, const Tensor<T>& psi_patch,
                          Relation relation) {
  if (psi_patch.rank() != 4) throw DimensionError("delta_patchwise: psi patch must be [N,d,K,S]");
  const Index n = psi_patch.dim(0), d = psi_patch.dim(1), k = psi_patch.dim(2), s = psi_patch.dim(3);
  switch (relation) {
    case Relation::star_product:
      return reshape(channel_contract(reshape(phi, Shape{n, d, 1, s}), psi_patch), Shape{n, k, s});
    case Relation::clique_product:
      return reshape(channel_contract(phi_patch, psi_patch), Shape{n, k * k, s});
    case Relation::concatenation:
      return concat<T>({reshape(phi, Shape{n, d, s}), reshape(transpose(psi_patch, 1, 2), Shape{n, k * d, s})}, 1);
    default: break;
  }
  throw ConfigError("delta_patchwise: " + std::string(to_string(relation)) + " is not a patchwise relation");
}

template <typename T>
Tensor<T> gamma_forward(const Tensor<T>& v, const std::vector<LinearParams<T>>& layers) {
  Tensor<T> h = v;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, layers[i].weight, layers[i].bias);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

namespace {

template <typename T>
void check_input(const Tensor<T>& x, const AttentionParams<T>& p, OperatorKind kind, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + ": input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) != p.dims.channels) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(x.dim(1)) + " channels, operator expects " +
                         std::to_string(p.dims.channels));
  }
  if (p.config.kind != kind) throw ConfigError(std::string(op) + ": parameters were built for another operator kind");
}

template <typename T>
struct Streams {
  Tensor<T> phi, psi, beta;
};

template <typename T>
Streams<T> transform(const Tensor<T>& x, const AttentionParams<T>& p) {
  Streams<T> s;
  s.phi = linear(x, p.phi.weight, p.phi.bias);
  s.psi = p.psi.weight.defined() ? linear(x, p.psi.weight, p.psi.bias) : s.phi;
  s.beta = p.beta.weight.defined() ? linear(x, p.beta.weight, p.beta.bias) : s.phi;
  return s;
}

// [N,C,H,W] -> [N,C,K,H*W]
template <typename T>
Tensor<T> patches(const Tensor<T>& x, const FootprintSpec& fp) {
  return reshape(unfold(x, fp), Shape{x.dim(0), x.dim(1), fp.slots(), x.dim(2) * x.dim(3)});
}

}  // namespace

template <typename T>
Tensor<T> pairwise_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp) {
  check_input(x, p, OperatorKind::pairwise, "pairwise_attention");
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3), s = h * w;
  const Index k = fp.slots();
  const AttentionDims& d = p.dims;
  const Streams<T> st = transform(x, p);

  Tensor<T> rel = delta_pairwise(reshape(st.phi, Shape{n, d.rel, 1, s}), patches(st.psi, fp), p.config.relation);
  if (p.config.position != PositionMode::none) {
    const Tensor<T> pos = reshape(position_features(h, w, p.position), Shape{1, 2, h, w});
    Tensor<T> pos_j = patches(pos, fp);
    if (p.config.position == PositionMode::relative) pos_j = sub(reshape(pos, Shape{1, 2, 1, s}), pos_j);
    rel = concat<T>({rel, expand(pos_j, Shape{n, 2, k, s})}, 1);
  }
  const Tensor<T> weights = gamma_forward(rel, p.gamma);  // [N,G,K,S]
  return reshape(grouped_aggregate(weights, patches(st.beta, fp)), Shape{n, d.mid, h, w});
}

template <typename T>
Tensor<T> patchwise_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp) {
  check_input(x, p, OperatorKind::patchwise, "patchwise_attention");
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3), s = h * w;
  const Index k = fp.slots();
  const AttentionDims& d = p.dims;
  const Streams<T> st = transform(x, p);

  const Tensor<T> phi_patch = p.config.relation == Relation::clique_product ? patches(st.phi, fp) : Tensor<T>();
  const Tensor<T> rel = delta_patchwise(reshape(st.phi, Shape{n, d.rel, s}), phi_patch, patches(st.psi, fp),
                                        p.config.relation);
  // gamma emits channel g * K + j: the weight of group g at slot j.
  const Tensor<T> weights = reshape(gamma_forward(rel, p.gamma), Shape{n, d.groups, k, s});
  return reshape(grouped_aggregate(weights, patches(st.beta, fp)), Shape{n, d.mid, h, w});
}

template <typename T>
Tensor<T> scalar_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp) {
  check_input(x, p, OperatorKind::scalar, "scalar_attention");
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3), s = h * w;
  const Streams<T> st = transform(x, p);
  Tensor<T> weights = channel_contract(reshape(st.phi, Shape{n, p.dims.rel, 1, s}), patches(st.psi, fp));
  if (p.config.normalize) weights = softmax(weights, 2);
  return reshape(grouped_aggregate(weights, patches(st.beta, fp)), Shape{n, p.dims.mid, h, w});
}

template <typename T>
Tensor<T> conv_aggregation(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp) {
  check_input(x, p, OperatorKind::conv, "conv_aggregation");
  return conv2d(x, p.conv_kernel, Tensor<T>(), 1, fp.pad());
}

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp) {
  switch (p.config.kind) {
    case OperatorKind::pairwise: return pairwise_attention(x, p, fp);
    case OperatorKind::patchwise: return patchwise_attention(x, p, fp);
    case OperatorKind::scalar: return scalar_attention(x, p, fp);
    case OperatorKind::conv: return conv_aggregation(x, p, fp);
  }
  throw ConfigError("unknown operator kind");
}

#define SAN_INSTANTIATE(T)                                                                                    \
  template struct LinearParams<T>;                                                                            \
  template struct AttentionParams<T>;                                                                         \
  template Tensor<T> normalized_coordinates<T>(Index, Index);                                                 \
  template Tensor<T> position_features<T>(Index, Index, const LinearParams<T>&);                              \
  template Tensor<T> delta_pairwise<T>(const Tensor<T>&, const Tensor<T>&, Relation);                         \
  template Tensor<T> delta_patchwise<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Relation);      \
  template Tensor<T> gamma_forward<T>(const Tensor<T>&, const std::vector<LinearParams<T>>&);                 \
  template Tensor<T> pairwise_attention<T>(const Tensor<T>&, const AttentionParams<T>&, const FootprintSpec&); \
  template Tensor<T> patchwise_attention<T>(const Tensor<T>&, const AttentionParams<T>&, const FootprintSpec&); \
  template Tensor<T> scalar_attention<T>(const Tensor<T>&, const AttentionParams<T>&, const FootprintSpec&);   \
  template Tensor<T> conv_aggregation<T>(const Tensor<T>&, const AttentionParams<T>&, const FootprintSpec&);   \
  template Tensor<T> attention_forward<T>(const Tensor<T>&, const AttentionParams<T>&, const FootprintSpec&);
SAN_INSTANTIATE(float)
SAN_INSTANTIATE(double)
#undef SAN_INSTANTIATE

}  // namespace san
