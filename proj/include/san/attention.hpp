#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "san/footprint.hpp"
#include "san/tensor.hpp"

namespace san {

enum class OperatorKind { pairwise, patchwise, scalar, conv };

// Pairwise relations: summation .. dot. Patchwise: star_product,
// clique_product, concatenation.
enum class Relation { summation, subtraction, concatenation, hadamard, dot, star_product, clique_product };

enum class PositionMode { none, absolute, relative };

// Which of the phi / psi / beta transforms share one linear map.
enum class TransformSharing { distinct, phi_psi, all };

std::string_view to_string(OperatorKind v);
std::string_view to_string(Relation v);
std::string_view to_string(PositionMode v);
std::string_view to_string(TransformSharing v);
OperatorKind parse_operator_kind(std::string_view s);
Relation parse_relation(std::string_view s);
PositionMode parse_position_mode(std::string_view s);
TransformSharing parse_transform_sharing(std::string_view s);

bool is_pairwise_relation(Relation r);
bool is_patchwise_relation(Relation r);

struct AttentionConfig {
  OperatorKind kind = OperatorKind::pairwise;
  Relation relation = Relation::subtraction;
  int gamma_depth = 2;
  int r1 = 16;
  int r2 = 4;
  int share = 8;
  PositionMode position = PositionMode::relative;
  // Softmax over footprint slots; scalar attention only.
  bool normalize = false;
  TransformSharing sharing = TransformSharing::distinct;

  bool operator==(const AttentionConfig&) const = default;
};

// Channel widths of one attention operator instance.
struct AttentionDims {
  Index channels = 0;   // C, input
  Index rel = 0;        // d = C / r1, phi/psi output
  Index mid = 0;        // Cm = C / r2, beta output and operator output
  Index share = 0;      // value channels per attention weight component
  Index groups = 0;     // Cm / share
  Index slots = 0;      // K = k^2
  Index relation_width = 0;
  Index position_width = 0;
  // Input width of gamma followed by the output width of each of its layers.
  std::vector<Index> gamma_widths;
};

// Validates divisibility and relation/kind compatibility; throws ConfigError.
AttentionDims attention_dims(Index channels, const FootprintSpec& fp, const AttentionConfig& cfg);

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined

  static LinearParams zeros(Index in, Index out, bool with_bias);
  Index in() const { return weight.dim(1); }
  Index out() const { return weight.dim(0); }
};

template <typename T>
struct AttentionParams {
  AttentionConfig config;
  AttentionDims dims;
  LinearParams<T> phi;
  LinearParams<T> psi;   // undefined weight when shared with phi
  LinearParams<T> beta;  // bias-free; undefined when shared with phi
  std::vector<LinearParams<T>> gamma;
  LinearParams<T> position;  // 2 -> 2, pairwise with position encoding only
  Tensor<T> conv_kernel;     // [Cm, C, k, k], conv kind only

  // Zero-valued parameters of the right shapes, all marked requires_grad.
  static AttentionParams create(Index channels, const FootprintSpec& fp, const AttentionConfig& cfg);

  // Visits every trainable tensor in declaration order.
  void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

// Normalized pixel coordinates, channel 0 = row, channel 1 = column, each in
// [-1, 1] (a length-1 axis maps to 0).
template <typename T>
Tensor<T> normalized_coordinates(Index height, Index width);

// Coordinates passed through the per-operator 2 -> 2 linear: [2, H, W].
template <typename T>
Tensor<T> position_features(Index height, Index width, const LinearParams<T>& position);

// phi_i [N,d,1,S] against psi_j [N,d,K,S] -> [N, width(relation), K, S].
template <typename T>
Tensor<T> delta_pairwise(const Tensor<T>& phi_i, const Tensor<T>& psi_j, Relation relation);

// phi [N,d,S], phi_patch / psi_patch [N,d,K,S] -> [N, width(relation), S].
// clique_product entries are ordered (j, k) row-major; concatenation is
// [phi_i, psi_j1, ..., psi_jK].
template <typename T>
Tensor<T> delta_patchwise(const Tensor<T>& phi, const Tensor<T>& phi_patch, const Tensor<T>& psi_patch,
                          Relation relation);

// Linear -> ReLU -> ... -> Linear along axis 1.
template <typename T>
Tensor<T> gamma_forward(const Tensor<T>& v, const std::vector<LinearParams<T>>& layers);

template <typename T>
Tensor<T> pairwise_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp);
template <typename T>
Tensor<T> patchwise_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp);
template <typename T>
Tensor<T> scalar_attention(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp);
template <typename T>
Tensor<T> conv_aggregation(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp);

// Dispatches on p.config.kind. x [N,C,H,W] -> [N,Cm,H,W].
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionParams<T>& p, const FootprintSpec& fp);

}  // namespace san
