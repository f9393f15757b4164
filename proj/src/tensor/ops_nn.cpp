#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"
#include "san/ops.hpp"

namespace san {
namespace {
using detail::Node;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, Mode mode, double momentum, double eps) {
  if (x.rank() < 2) throw DimensionError("batch_norm: input needs a channel axis, got " + shape_str(x.shape()));
  const Index n = x.dim(0);
  const Index channels = x.dim(1);
  const Index area = x.numel() / std::max<Index>(n * channels, 1);
  auto check = [&](Index len, const char* what) {
    if (len != channels) {
      throw DimensionError(std::string("batch_norm: ") + what + " length " + std::to_string(len) +
                           " does not match " + std::to_string(channels) + " channels");
    }
  };
  check(gamma.numel(), "gamma");
  check(beta.numel(), "beta");
  check(static_cast<Index>(stats.mean.size()), "running mean");
  check(static_cast<Index>(stats.var.size()), "running var");

  const Index count = n * area;
  if (mode == Mode::train && count == 0) throw DimensionError("batch_norm: empty batch in train mode");
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  std::vector<T> xhat(x.data().size());
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  std::vector<T> out(x.data().size());
  for (Index c = 0; c < channels; ++c) {
    T mu;
    T var;
    if (mode == Mode::train) {
      T acc = 0;
      for (Index i = 0; i < n; ++i) {
        const T* src = xd + (i * channels + c) * area;
        for (Index s = 0; s < area; ++s) acc += src[s];
      }
      mu = acc / static_cast<T>(count);
      T sq = 0;
      for (Index i = 0; i < n; ++i) {
        const T* src = xd + (i * channels + c) * area;
        for (Index s = 0; s < area; ++s) sq += (src[s] - mu) * (src[s] - mu);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      const T m = static_cast<T>(momentum);
      auto ci = static_cast<std::size_t>(c);
      stats.mean[ci] = (T(1) - m) * stats.mean[ci] + m * mu;
      stats.var[ci] = (T(1) - m) * stats.var[ci] + m * unbiased;
    } else {
      mu = stats.mean[static_cast<std::size_t>(c)];
      var = stats.var[static_cast<std::size_t>(c)];
    }
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[static_cast<std::size_t>(c)] = inv;
    for (Index i = 0; i < n; ++i) {
      const Index base = (i * channels + c) * area;
      for (Index s = 0; s < area; ++s) {
        const T h = (xd[base + s] - mu) * inv;
        xhat[static_cast<std::size_t>(base + s)] = h;
        out[static_cast<std::size_t>(base + s)] = gd[c] * h + bd[c];
      }
    }
  }
  const bool train = mode == Mode::train;
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "batch_norm",
      [n, channels, area, count, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const T* g = self.grad.data();
        T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        T* gg = ng.requires_grad ? ng.grad_buffer().data() : nullptr;
        T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        for (Index c = 0; c < channels; ++c) {
          T sum_g = 0;
          T sum_gx = 0;
          for (Index i = 0; i < n; ++i) {
            const Index base = (i * channels + c) * area;
            for (Index s = 0; s < area; ++s) {
              sum_g += g[base + s];
              sum_gx += g[base + s] * xhat[static_cast<std::size_t>(base + s)];
            }
          }
          if (gg) gg[c] += sum_gx;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;
          const T k = ng.data[static_cast<std::size_t>(c)] * inv_std[static_cast<std::size_t>(c)];
          for (Index i = 0; i < n; ++i) {
            const Index base = (i * channels + c) * area;
            for (Index s = 0; s < area; ++s) {
              if (train) {
                const T m = static_cast<T>(count);
                gx[base + s] += k / m *
                                (m * g[base + s] - sum_g - xhat[static_cast<std::size_t>(base + s)] * sum_gx);
              } else {
                gx[base + s] += k * g[base + s];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int pad) {
  if (x.rank() != 4) throw DimensionError("max_pool2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1 || pad < 0 || 2 * pad > kernel) {
    throw DimensionError("max_pool2d: invalid window (kernel " + std::to_string(kernel) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
  }
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) {
    throw DimensionError("max_pool2d: empty pooling window for input " + shape_str(x.shape()));
  }
  const Index ho = (h + 2 * pad - kernel) / stride + 1;
  const Index wo = (w + 2 * pad - kernel) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
  std::vector<Index> argmax(out.size());
  const T* xd = x.data().data();
  for (Index plane = 0; plane < n * c; ++plane) {
    const T* src = xd + plane * h * w;
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        Index best_at = -1;
        for (Index ky = 0; ky < kernel; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const T v = src[iy * w + ix];
            if (best_at < 0 || v > best || std::isnan(v)) {
              best = v;
              best_at = iy * w + ix;
            }
          }
        }
        const auto o = static_cast<std::size_t>((plane * ho + oy) * wo + ox);
        out[o] = best;
        argmax[o] = plane * h * w + best_at;
      }
  }
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {&x}, "max_pool2d",
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto gx = self.inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            gx[static_cast<std::size_t>(argmax[o])] += self.grad[o];
                          }
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw DimensionError("global_avg_pool: input must have spatial axes, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  const Index area = x.numel() / std::max<Index>(n * c, 1);
  if (area == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  std::vector<T> out(static_cast<std::size_t>(n * c));
  const T* xd = x.data().data();
  for (Index p = 0; p < n * c; ++p) {
    T acc = 0;
    for (Index s = 0; s < area; ++s) acc += xd[p * area + s];
    out[static_cast<std::size_t>(p)] = acc / static_cast<T>(area);
  }
  return make_result<T>(Shape{n, c}, std::move(out), {&x}, "global_avg_pool", [area](Node<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(area);
    for (std::size_t p = 0; p < self.grad.size(); ++p) {
      const T g = self.grad[p] * inv;
      for (Index s = 0; s < area; ++s) gx[p * static_cast<std::size_t>(area) + static_cast<std::size_t>(s)] += g;
    }
  });
}

namespace {

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& x, int axis, bool log_space) {
  axis = kernels::normalize_axis(axis, x.rank(), log_space ? "log_softmax" : "softmax");
  const auto split = kernels::split_at(x.shape(), axis);
  if (split.extent == 0) throw DimensionError("softmax over empty axis");
  const T* xd = x.data().data();
  std::vector<T> out(x.data().size());
  for (Index o = 0; o < split.outer; ++o)
    for (Index i = 0; i < split.inner; ++i) {
      const Index base = o * split.extent * split.inner + i;
      T peak = xd[base];
      for (Index e = 1; e < split.extent; ++e) peak = std::max(peak, xd[base + e * split.inner]);
      T total = 0;
      for (Index e = 0; e < split.extent; ++e) total += std::exp(xd[base + e * split.inner] - peak);
      const T log_total = std::log(total);
      for (Index e = 0; e < split.extent; ++e) {
        const T shifted = xd[base + e * split.inner] - peak;
        out[static_cast<std::size_t>(base + e * split.inner)] =
            log_space ? shifted - log_total : std::exp(shifted) / total;
      }
    }
  return make_result<T>(
      x.shape(), std::move(out), {&x}, log_space ? "log_softmax" : "softmax",
      [split, log_space](Node<T>& self) {
        auto gx = self.inputs[0]->grad_buffer();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        for (Index o = 0; o < split.outer; ++o)
          for (Index i = 0; i < split.inner; ++i) {
            const Index base = o * split.extent * split.inner + i;
            T dot = 0;
            for (Index e = 0; e < split.extent; ++e) {
              const Index at = base + e * split.inner;
              dot += log_space ? g[at] : g[at] * y[at];
            }
            for (Index e = 0; e < split.extent; ++e) {
              const Index at = base + e * split.inner;
              gx[static_cast<std::size_t>(at)] +=
                  log_space ? g[at] - std::exp(y[at]) * dot : y[at] * (g[at] - dot);
            }
          }
      });
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  return softmax_impl(x, axis, false);
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  return softmax_impl(x, axis, true);
}

#define SAN_INSTANTIATE(T)                                                                        \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                   RunningStats<T>&, Mode, double, double);                       \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int, int, int);                              \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                        \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                           \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, int);
SAN_INSTANTIATE_FLOATING(SAN_INSTANTIATE)
#undef SAN_INSTANTIATE

}  // namespace san
