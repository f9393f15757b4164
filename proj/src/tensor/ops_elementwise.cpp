#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels.hpp"
#include "san/ops.hpp"

namespace san {
namespace {

using detail::Node;

struct BroadcastPlan {
  Shape out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;
};

std::vector<Index> contiguous_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i + a.size()) - static_cast<std::ptrdiff_t>(rank);
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i + b.size()) - static_cast<std::ptrdiff_t>(rank);
    const Index ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const Index eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcast compatible");
    }
    p.out[i] = std::max(ea, eb);
    if (ea == 0 || eb == 0) p.out[i] = 0;
    if (ia >= 0 && ea != 1) p.stride_a[i] = sa[static_cast<std::size_t>(ia)];
    if (ib >= 0 && eb != 1) p.stride_b[i] = sb[static_cast<std::size_t>(ib)];
  }
  return p;
}

// Calls fn(out_offset, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& fn) {
  const std::size_t rank = p.out.size();
  const Index total = shape_numel(p.out);
  if (total == 0) return;
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  const Index inner = p.out[rank - 1];
  const Index sa_inner = p.stride_a[rank - 1];
  const Index sb_inner = p.stride_b[rank - 1];
  std::vector<Index> counter(rank, 0);
  Index base_a = 0;
  Index base_b = 0;
  for (Index o = 0; o < total; o += inner) {
    for (Index i = 0; i < inner; ++i) fn(o + i, base_a + i * sa_inner, base_b + i * sb_inner);
    // Advance the odometer over all but the innermost axis.
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      base_a += p.stride_a[d];
      base_b += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      base_a -= p.stride_a[d] * counter[d];
      base_b -= p.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* op) {
  std::vector<T> out;
  Shape out_shape;
  const bool same = a.shape() == b.shape();
  const auto da = a.data();
  const auto db = b.data();
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      case BinaryKind::mul: return x * y;
    }
    return T(0);
  };
  BroadcastPlan plan;
  if (same) {
    out_shape = a.shape();
    out.resize(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) out[i] = apply(da[i], db[i]);
  } else {
    plan = make_plan(a.shape(), b.shape(), op);
    out_shape = plan.out;
    out.resize(static_cast<std::size_t>(shape_numel(out_shape)));
    for_each_broadcast(plan, [&](Index o, Index ia, Index ib) {
      out[static_cast<std::size_t>(o)] = apply(da[static_cast<std::size_t>(ia)], db[static_cast<std::size_t>(ib)]);
    });
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), {&a, &b}, op,
      [kind, same, plan = std::move(plan)](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        const auto& g = self.grad;
        T* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
        T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        const T* va = na.data.data();
        const T* vb = nb.data.data();
        const T sign_b = kind == BinaryKind::sub ? T(-1) : T(1);
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (kind == BinaryKind::mul) {
              if (ga) ga[i] += g[i] * vb[i];
              if (gb) gb[i] += g[i] * va[i];
            } else {
              if (ga) ga[i] += g[i];
              if (gb) gb[i] += sign_b * g[i];
            }
          }
          return;
        }
        for_each_broadcast(plan, [&](Index o, Index ia, Index ib) {
          const T go = g[static_cast<std::size_t>(o)];
          if (kind == BinaryKind::mul) {
            if (ga) ga[ia] += go * vb[ib];
            if (gb) gb[ib] += go * va[ia];
          } else {
            if (ga) ga[ia] += go;
            if (gb) gb[ib] += sign_b * go;
          }
        });
      });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::sub, "sub");
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::mul, "hadamard");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto d = x.data();
  std::vector<T> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {&x}, "scale", [factor](Node<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto d = x.data();
  std::vector<T> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > T(0) || std::isnan(d[i]) ? d[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {&x}, "relu", [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    auto gx = in.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (in.data[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{}, std::vector<T>{total}, {&x}, "sum", [](Node<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (T& v : gx) v += g;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
  axis = kernels::normalize_axis(axis, x.rank(), "sum");
  const auto split = kernels::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  const auto d = x.data();
  std::vector<T> out(static_cast<std::size_t>(split.outer * split.inner), T(0));
  for (Index o = 0; o < split.outer; ++o) {
    for (Index e = 0; e < split.extent; ++e) {
      const T* src = d.data() + (o * split.extent + e) * split.inner;
      T* dst = out.data() + o * split.inner;
      for (Index i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "sum_axis",
                        [split](Node<T>& self) {
                          auto gx = self.inputs[0]->grad_buffer();
                          for (Index o = 0; o < split.outer; ++o) {
                            const T* g = self.grad.data() + o * split.inner;
                            for (Index e = 0; e < split.extent; ++e) {
                              T* dst = gx.data() + (o * split.extent + e) * split.inner;
                              for (Index i = 0; i < split.inner; ++i) dst[i] += g[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const Index n = x.numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Index inferred = -1;
  Index known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (inferred >= 0) throw DimensionError("reshape: more than one inferred extent");
      inferred = static_cast<Index>(i);
    } else {
      known *= shape[i];
    }
  }
  if (inferred >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer extent for " + shape_str(shape));
    }
    shape[static_cast<std::size_t>(inferred)] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, "reshape", [](Node<T>& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  const int rank = x.rank();
  axis0 = kernels::normalize_axis(axis0, rank, "transpose");
  axis1 = kernels::normalize_axis(axis1, rank, "transpose");
  if (axis0 > axis1) std::swap(axis0, axis1);
  const Shape& in_shape = x.shape();
  Shape out_shape = in_shape;
  std::swap(out_shape[static_cast<std::size_t>(axis0)], out_shape[static_cast<std::size_t>(axis1)]);
  // View the tensor as [A, P, B, Q, C] and swap P and Q.
  Index a = 1, b = 1, c = 1;
  for (int i = 0; i < axis0; ++i) a *= in_shape[static_cast<std::size_t>(i)];
  for (int i = axis0 + 1; i < axis1; ++i) b *= in_shape[static_cast<std::size_t>(i)];
  for (int i = axis1 + 1; i < rank; ++i) c *= in_shape[static_cast<std::size_t>(i)];
  const Index p = in_shape[static_cast<std::size_t>(axis0)];
  const Index q = in_shape[static_cast<std::size_t>(axis1)];
  auto index_in = [=](Index ia, Index ip, Index ib, Index iq, Index ic) {
    return (((ia * p + ip) * b + ib) * q + iq) * c + ic;
  };
  auto index_out = [=](Index ia, Index ip, Index ib, Index iq, Index ic) {
    return (((ia * q + iq) * b + ib) * p + ip) * c + ic;
  };
  auto permute = [=](const T* src, T* dst, bool accumulate) {
    for (Index ia = 0; ia < a; ++ia)
      for (Index iq = 0; iq < q; ++iq)
        for (Index ib = 0; ib < b; ++ib)
          for (Index ip = 0; ip < p; ++ip) {
            const T* s = src + index_in(ia, ip, ib, iq, 0);
            T* t = dst + index_out(ia, ip, ib, iq, 0);
            if (accumulate) {
              for (Index ic = 0; ic < c; ++ic) t[ic] += s[ic];
            } else {
              std::copy(s, s + c, t);
            }
          }
  };
  std::vector<T> out(x.data().size());
  permute(x.data().data(), out.data(), false);
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "transpose",
                        [=](Node<T>& self) {
                          auto gx = self.inputs[0]->grad_buffer();
                          // Walk the same index pairs with roles reversed.
                          for (Index ia = 0; ia < a; ++ia)
                            for (Index iq = 0; iq < q; ++iq)
                              for (Index ib = 0; ib < b; ++ib)
                                for (Index ip = 0; ip < p; ++ip) {
                                  const T* g = self.grad.data() + index_out(ia, ip, ib, iq, 0);
                                  T* t = gx.data() + index_in(ia, ip, ib, iq, 0);
                                  for (Index ic = 0; ic < c; ++ic) t[ic] += g[ic];
                                }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const int rank = xs.front().rank();
  axis = kernels::normalize_axis(axis, rank, "concat");
  Shape out_shape = xs.front().shape();
  Index total_extent = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && x.shape()[static_cast<std::size_t>(i)] != out_shape[static_cast<std::size_t>(i)]) {
        throw DimensionError("concat: " + shape_str(x.shape()) + " vs " + shape_str(out_shape));
      }
    }
    total_extent += x.shape()[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total_extent;
  const auto split = kernels::split_at(out_shape, axis);
  std::vector<Index> extents;
  extents.reserve(xs.size());
  for (const auto& x : xs) extents.push_back(x.shape()[static_cast<std::size_t>(axis)]);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  Index offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const T* src = xs[t].data().data();
    const Index block = extents[t] * split.inner;
    for (Index o = 0; o < split.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block,
                out.begin() + (o * total_extent + offset) * split.inner);
    }
    offset += extents[t];
  }
  return make_result<T>(std::move(out_shape), std::move(out), xs, "concat",
                        [split, extents, total_extent](Node<T>& self) {
                          Index off = 0;
                          for (std::size_t t = 0; t < extents.size(); ++t) {
                            Node<T>& in = *self.inputs[t];
                            const Index block = extents[t] * split.inner;
                            if (in.requires_grad) {
                              auto gx = in.grad_buffer();
                              for (Index o = 0; o < split.outer; ++o) {
                                const T* g = self.grad.data() + (o * total_extent + off) * split.inner;
                                T* dst = gx.data() + o * block;
                                for (Index i = 0; i < block; ++i) dst[i] += g[i];
                              }
                            }
                            off += extents[t];
                          }
                        });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, Shape shape) {
  BroadcastPlan plan = make_plan(x.shape(), shape, "expand");
  if (plan.out != shape) {
    throw DimensionError("expand: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto d = x.data();
  std::vector<T> out(static_cast<std::size_t>(shape_numel(shape)));
  for_each_broadcast(plan, [&](Index o, Index ia, Index) {
    out[static_cast<std::size_t>(o)] = d[static_cast<std::size_t>(ia)];
  });
  return make_result<T>(std::move(shape), std::move(out), {&x}, "expand",
                        [plan = std::move(plan)](Node<T>& self) {
                          auto gx = self.inputs[0]->grad_buffer();
                          for_each_broadcast(plan, [&](Index o, Index ia, Index) {
                            gx[static_cast<std::size_t>(ia)] += self.grad[static_cast<std::size_t>(o)];
                          });
                        });
}

#define SAN_INSTANTIATE(T)                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> hadamard<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                          \
  template Tensor<T> relu<T>(const Tensor<T>&);                              \
  template Tensor<T> sum<T>(const Tensor<T>&);                               \
  template Tensor<T> sum<T>(const Tensor<T>&, int, bool);                    \
  template Tensor<T> mean<T>(const Tensor<T>&);                              \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                    \
  template Tensor<T> transpose<T>(const Tensor<T>&, int, int);               \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);          \
  template Tensor<T> expand<T>(const Tensor<T>&, Shape);
SAN_INSTANTIATE_FLOATING(SAN_INSTANTIATE)
#undef SAN_INSTANTIATE

}  // namespace san
