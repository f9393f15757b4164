#include <algorithm>

#include "kernels.hpp"
#include "san/ops.hpp"

namespace san {
namespace {

using detail::Node;

template <typename T>
void check_bias(const Tensor<T>& bias, Index channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw DimensionError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(channels) + " output channels");
  }
}

struct ConvGeometry {
  Index n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  Index patch() const { return cin * kh * kw; }
  Index out_area() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_area();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index ky = 0; ky < g.kh; ++ky)
      for (Index kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_area();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 2) throw DimensionError("linear: input must have a channel axis, got " + shape_str(x.shape()));
  if (weight.rank() != 2 || weight.dim(1) != x.dim(1)) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  const Index n = x.dim(0);
  const Index cin = x.dim(1);
  const Index cout = weight.dim(0);
  check_bias(bias, cout, "linear");
  const Index area = x.numel() / std::max<Index>(n * cin, 1);
  Shape out_shape = x.shape();
  out_shape[1] = cout;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)), T(0));
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  const bool flat = x.rank() == 2;
  if (n > 0 && cout > 0 && cin > 0 && area > 0) {
    if (flat) {
      kernels::gemm(false, true, n, cout, cin, T(1), xd, cin, wd, cin, T(0), out.data(), cout);
    } else {
      for (Index i = 0; i < n; ++i) {
        kernels::gemm(false, false, cout, area, cin, T(1), wd, cin, xd + i * cin * area, area, T(0),
                      out.data() + i * cout * area, area);
      }
    }
  }
  if (bias.defined()) {
    const T* bd = bias.data().data();
    for (Index i = 0; i < n; ++i)
      for (Index o = 0; o < cout; ++o) {
        T* dst = out.data() + (i * cout + o) * area;
        for (Index s = 0; s < area; ++s) dst[s] += bd[o];
      }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      std::move(out_shape), std::move(out), inputs, "linear",
      [n, cin, cout, area, flat](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nw = *self.inputs[1];
        const T* g = self.grad.data();
        if (n == 0 || cin == 0 || cout == 0 || area == 0) return;
        if (nx.requires_grad) {
          T* gx = nx.grad_buffer().data();
          if (flat) {
            kernels::gemm(false, false, n, cin, cout, T(1), g, cout, nw.data.data(), cin, T(1), gx, cin);
          } else {
            for (Index i = 0; i < n; ++i) {
              kernels::gemm(true, false, cin, area, cout, T(1), nw.data.data(), cin, g + i * cout * area,
                            area, T(1), gx + i * cin * area, area);
            }
          }
        }
        if (nw.requires_grad) {
          T* gw = nw.grad_buffer().data();
          if (flat) {
            kernels::gemm(true, false, cout, cin, n, T(1), g, cout, nx.data.data(), cin, T(1), gw, cin);
          } else {
            for (Index i = 0; i < n; ++i) {
              kernels::gemm(false, true, cout, cin, area, T(1), g + i * cout * area, area,
                            nx.data.data() + i * cin * area, area, T(1), gw, cin);
            }
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto gb = self.inputs[2]->grad_buffer();
          for (Index i = 0; i < n; ++i)
            for (Index o = 0; o < cout; ++o) {
              const T* src = g + (i * cout + o) * area;
              T acc = 0;
              for (Index s = 0; s < area; ++s) acc += src[s];
              gb[static_cast<std::size_t>(o)] += acc;
            }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int pad) {
  if (x.rank() != 4) throw DimensionError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                   0, 0, stride, pad};
  if (geo.h + 2 * pad < geo.kh || geo.w + 2 * pad < geo.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  geo.ho = (geo.h + 2 * pad - geo.kh) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.kw) / stride + 1;
  check_bias(bias, geo.cout, "conv2d");

  Shape out_shape{geo.n, geo.cout, geo.ho, geo.wo};
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)), T(0));
  std::vector<T> cols(geo.pointwise() ? 0 : static_cast<std::size_t>(geo.patch() * geo.out_area()));
  const T* xd = x.data().data();
  const T* kd = kernel.data().data();
  const Index in_size = geo.cin * geo.h * geo.w;
  const Index out_size = geo.cout * geo.out_area();
  for (Index i = 0; i < geo.n; ++i) {
    const T* src = xd + i * in_size;
    if (!geo.pointwise()) {
      im2col(src, geo, cols.data());
      src = cols.data();
    }
    kernels::gemm(false, false, geo.cout, geo.out_area(), geo.patch(), T(1), kd, geo.patch(), src,
                  geo.out_area(), T(0), out.data() + i * out_size, geo.out_area());
  }
  if (bias.defined()) {
    const T* bd = bias.data().data();
    for (Index i = 0; i < geo.n; ++i)
      for (Index o = 0; o < geo.cout; ++o) {
        T* dst = out.data() + i * out_size + o * geo.out_area();
        for (Index s = 0; s < geo.out_area(); ++s) dst[s] += bd[o];
      }
  }
  std::vector<Tensor<T>> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      std::move(out_shape), std::move(out), inputs, "conv2d", [geo, in_size, out_size](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nk = *self.inputs[1];
        const T* g = self.grad.data();
        std::vector<T> cols(static_cast<std::size_t>(geo.patch() * geo.out_area()));
        T* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
        T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
        for (Index i = 0; i < geo.n; ++i) {
          const T* gi = g + i * out_size;
          if (gk) {
            const T* src = nx.data.data() + i * in_size;
            if (!geo.pointwise()) {
              im2col(src, geo, cols.data());
              src = cols.data();
            }
            kernels::gemm(false, true, geo.cout, geo.patch(), geo.out_area(), T(1), gi, geo.out_area(),
                          src, geo.out_area(), T(1), gk, geo.patch());
          }
          if (gx) {
            if (geo.pointwise()) {
              kernels::gemm(true, false, geo.patch(), geo.out_area(), geo.cout, T(1), nk.data.data(),
                            geo.patch(), gi, geo.out_area(), T(1), gx + i * in_size, geo.out_area());
            } else {
              kernels::gemm(true, false, geo.patch(), geo.out_area(), geo.cout, T(1), nk.data.data(),
                            geo.patch(), gi, geo.out_area(), T(0), cols.data(), geo.out_area());
              col2im_add(cols.data(), geo, gx + i * in_size);
            }
          }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto gb = self.inputs[2]->grad_buffer();
          for (Index i = 0; i < geo.n; ++i)
            for (Index o = 0; o < geo.cout; ++o) {
              const T* src = g + i * out_size + o * geo.out_area();
              T acc = 0;
              for (Index s = 0; s < geo.out_area(); ++s) acc += src[s];
              gb[static_cast<std::size_t>(o)] += acc;
            }
        }
      });
}

#define SAN_INSTANTIATE(T)                                                                     \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);
SAN_INSTANTIATE_FLOATING(SAN_INSTANTIATE)
#undef SAN_INSTANTIATE

}  // namespace san
