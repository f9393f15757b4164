#include <algorithm>

#include "kernels.hpp"
#include "san/ops.hpp"

namespace san {
namespace {

using detail::Node;

// Visits every in-bounds (output row span, input row span) pair of unfold.
template <typename F>
void for_each_unfold_row(Index h, Index w, std::span<const SlotOffset> offsets, F&& fn) {
  const Index slots = static_cast<Index>(offsets.size());
  for (Index s = 0; s < slots; ++s) {
    const Index dy = offsets[static_cast<std::size_t>(s)].dy;
    const Index dx = offsets[static_cast<std::size_t>(s)].dx;
    const Index x_begin = std::max<Index>(0, -dx);
    const Index x_end = std::min<Index>(w, w - dx);
    if (x_begin >= x_end) continue;
    for (Index y = 0; y < h; ++y) {
      const Index sy = y + dy;
      if (sy < 0 || sy >= h) continue;
      // out offset within [K,H,W] plane, in offset within [H,W] plane, length
      fn((s * h + y) * w + x_begin, sy * w + x_begin + dx, x_end - x_begin);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> unfold(const Tensor<T>& x, const FootprintSpec& fp) {
  if (x.rank() != 4) throw DimensionError("unfold: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index slots = fp.slots();
  std::vector<T> out(static_cast<std::size_t>(n * c * slots * h * w), T(0));
  const T* xd = x.data().data();
  const auto offsets = fp.offsets();
  for (Index plane = 0; plane < n * c; ++plane) {
    const T* src = xd + plane * h * w;
    T* dst = out.data() + plane * slots * h * w;
    for_each_unfold_row(h, w, offsets, [&](Index o, Index i, Index len) {
      std::copy(src + i, src + i + len, dst + o);
    });
  }
  std::vector<SlotOffset> saved(offsets.begin(), offsets.end());
  return make_result<T>(Shape{n, c, slots, h, w}, std::move(out), {&x}, "unfold",
                        [n, c, h, w, slots, saved = std::move(saved)](Node<T>& self) {
                          auto gx = self.inputs[0]->grad_buffer();
                          for (Index plane = 0; plane < n * c; ++plane) {
                            const T* g = self.grad.data() + plane * slots * h * w;
                            T* dst = gx.data() + plane * h * w;
                            for_each_unfold_row(h, w, saved, [&](Index o, Index i, Index len) {
                              for (Index t = 0; t < len; ++t) dst[i + t] += g[o + t];
                            });
                          }
                        });
}

template <typename T>
Tensor<T> channel_contract(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
      a.dim(3) != b.dim(3)) {
    throw DimensionError("channel_contract: expected [N,C,J,S] and [N,C,K,S], got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index n = a.dim(0), c = a.dim(1), jn = a.dim(2), kn = b.dim(2), s = a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * jn * kn * s), T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch)
      for (Index j = 0; j < jn; ++j) {
        const T* ar = ad + ((i * c + ch) * jn + j) * s;
        for (Index k = 0; k < kn; ++k) {
          const T* br = bd + ((i * c + ch) * kn + k) * s;
          T* o = out.data() + ((i * jn + j) * kn + k) * s;
          for (Index t = 0; t < s; ++t) o[t] += ar[t] * br[t];
        }
      }
  return make_result<T>(
      Shape{n, jn, kn, s}, std::move(out), {&a, &b}, "channel_contract",
      [n, c, jn, kn, s](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        T* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
        T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        const T* g = self.grad.data();
        for (Index i = 0; i < n; ++i)
          for (Index ch = 0; ch < c; ++ch)
            for (Index j = 0; j < jn; ++j) {
              const Index a_at = ((i * c + ch) * jn + j) * s;
              for (Index k = 0; k < kn; ++k) {
                const Index b_at = ((i * c + ch) * kn + k) * s;
                const T* gr = g + ((i * jn + j) * kn + k) * s;
                if (ga) {
                  const T* br = nb.data.data() + b_at;
                  for (Index t = 0; t < s; ++t) ga[a_at + t] += gr[t] * br[t];
                }
                if (gb) {
                  const T* ar = na.data.data() + a_at;
                  for (Index t = 0; t < s; ++t) gb[b_at + t] += gr[t] * ar[t];
                }
              }
            }
      });
}

template <typename T>
Tensor<T> grouped_aggregate(const Tensor<T>& weights, const Tensor<T>& values) {
  if (weights.rank() != 4 || values.rank() != 4 || weights.dim(0) != values.dim(0) ||
      weights.dim(2) != values.dim(2) || weights.dim(3) != values.dim(3)) {
    throw DimensionError("grouped_aggregate: expected [N,G,K,S] and [N,C,K,S], got " +
                         shape_str(weights.shape()) + " and " + shape_str(values.shape()));
  }
  const Index n = values.dim(0), c = values.dim(1), kn = values.dim(2), s = values.dim(3);
  const Index groups = weights.dim(1);
  if (groups == 0 || c % groups != 0) {
    throw DimensionError("grouped_aggregate: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  }
  const Index share = c / groups;
  std::vector<T> out(static_cast<std::size_t>(n * c * s), T(0));
  const T* wd = weights.data().data();
  const T* vd = values.data().data();
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      const Index grp = ch / share;
      T* o = out.data() + (i * c + ch) * s;
      for (Index k = 0; k < kn; ++k) {
        const T* wr = wd + ((i * groups + grp) * kn + k) * s;
        const T* vr = vd + ((i * c + ch) * kn + k) * s;
        for (Index t = 0; t < s; ++t) o[t] += wr[t] * vr[t];
      }
    }
  return make_result<T>(
      Shape{n, c, s}, std::move(out), {&weights, &values}, "grouped_aggregate",
      [n, c, kn, s, groups, share](Node<T>& self) {
        Node<T>& nw = *self.inputs[0];
        Node<T>& nv = *self.inputs[1];
        T* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
        T* gv = nv.requires_grad ? nv.grad_buffer().data() : nullptr;
        for (Index i = 0; i < n; ++i)
          for (Index ch = 0; ch < c; ++ch) {
            const Index grp = ch / share;
            const T* go = self.grad.data() + (i * c + ch) * s;
            for (Index k = 0; k < kn; ++k) {
              const Index w_at = ((i * groups + grp) * kn + k) * s;
              const Index v_at = ((i * c + ch) * kn + k) * s;
              if (gw) {
                const T* vr = nv.data.data() + v_at;
                for (Index t = 0; t < s; ++t) gw[w_at + t] += go[t] * vr[t];
              }
              if (gv) {
                const T* wr = nw.data.data() + w_at;
                for (Index t = 0; t < s; ++t) gv[v_at + t] += go[t] * wr[t];
              }
            }
          }
      });
}

#define SAN_INSTANTIATE(T)                                                          \
  template Tensor<T> unfold<T>(const Tensor<T>&, const FootprintSpec&);             \
  template Tensor<T> channel_contract<T>(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> grouped_aggregate<T>(const Tensor<T>&, const Tensor<T>&);
SAN_INSTANTIATE_FLOATING(SAN_INSTANTIATE)
#undef SAN_INSTANTIATE

}  // namespace san
