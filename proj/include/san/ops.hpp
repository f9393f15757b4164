#pragma once

#include <vector>

#include "san/footprint.hpp"
#include "san/tensor.hpp"

// Differentiable primitives. Every function is instantiated for float and
// double. Feature maps are laid out N, C, then spatial axes; ops that act "per
// channel" treat axis 1 as the channel axis and flatten everything after it.
namespace san {

enum class Mode { train, eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit RunningStats(Index channels = 0)
      : mean(static_cast<std::size_t>(channels), T(0)),
        var(static_cast<std::size_t>(channels), T(1)) {}
};

// Numpy-style broadcasting elementwise ops (shapes are right-aligned).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
// Elementwise product; broadcasting lets a [N,G,1,...] weight scale a
// [N,G,share,...] value tensor group by group.
template <typename T> Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> expand(const Tensor<T>& x, Shape shape);

// out[n,o,s...] = sum_i weight[o,i] * x[n,i,s...] + bias[o]. x may be [N,C].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Cross-correlation, kernel [Cout, Cin, k, k], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias = {},
                 int stride = 1, int pad = 0);

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, Mode mode, double momentum = kBatchNormMomentum,
                     double eps = kBatchNormEpsilon);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel = 2, int stride = 2, int pad = 0);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);

// [N,C,H,W] -> [N,C,K,H,W]; slot s of location (h,w) holds
// x[n,c,h+dy_s,w+dx_s], or zero outside the map.
template <typename T> Tensor<T> unfold(const Tensor<T>& x, const FootprintSpec& fp);

// a [N,C,J,S], b [N,C,K,S] -> [N,J,K,S] with out[n,j,k,s] = sum_c a[n,c,j,s] b[n,c,k,s].
template <typename T> Tensor<T> channel_contract(const Tensor<T>& a, const Tensor<T>& b);

// weights [N,G,K,S], values [N,G*share,K,S] -> [N,G*share,S];
// out[n,c,s] = sum_k weights[n, c/share, k, s] * values[n,c,k,s].
template <typename T>
Tensor<T> grouped_aggregate(const Tensor<T>& weights, const Tensor<T>& values);

}  // namespace san
