#include <cmath>
#include <random>

#include "san/errors.hpp"
#include "san/verify.hpp"

namespace san {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& e : v) e = dist(rng);
  return Tensor<double>(shape, std::move(v));
}

void randomize(AttentionParams<double>& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  p.for_each([&](const std::string&, Tensor<double>& t) {
    for (double& v : t.mutable_data()) v = dist(rng);
  });
}

namespace reference {
namespace {

using Vec = std::vector<double>;

// weight [out, in] applied to one feature vector.
Vec affine(const Tensor<double>& weight, const Tensor<double>& bias, const Vec& in) {
  const Index out = weight.dim(0), width = weight.dim(1);
  Vec r(static_cast<std::size_t>(out), 0.0);
  for (Index o = 0; o < out; ++o) {
    double acc = bias.defined() ? bias.data()[static_cast<std::size_t>(o)] : 0.0;
    for (Index i = 0; i < width; ++i) acc += weight.at({o, i}) * in[static_cast<std::size_t>(i)];
    r[static_cast<std::size_t>(o)] = acc;
  }
  return r;
}

double dot(const Vec& a, const Vec& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vec mlp(const std::vector<LinearParams<double>>& layers, Vec v) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    v = affine(layers[l].weight, layers[l].bias, v);
    if (l + 1 < layers.size()) {
      for (double& e : v) e = std::max(e, 0.0);
    }
  }
  return v;
}

struct Pixels {
  Index h = 0, w = 0;
  std::vector<Vec> at;  // row-major pixels
  const Vec& operator()(Index y, Index x) const { return at[static_cast<std::size_t>(y * w + x)]; }
};

Pixels pixels_of(const Tensor<double>& x, Index n) {
  Pixels p{x.dim(2), x.dim(3), {}};
  const Index c = x.dim(1);
  for (Index y = 0; y < p.h; ++y)
    for (Index xx = 0; xx < p.w; ++xx) {
      Vec v(static_cast<std::size_t>(c));
      for (Index ch = 0; ch < c; ++ch) v[static_cast<std::size_t>(ch)] = x.at({n, ch, y, xx});
      p.at.push_back(std::move(v));
    }
  return p;
}

Pixels transformed(const Pixels& in, const LinearParams<double>& lp) {
  Pixels out{in.h, in.w, {}};
  for (const Vec& v : in.at) out.at.push_back(affine(lp.weight, lp.bias, v));
  return out;
}

double coordinate(Index i, Index n) { return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1); }

Vec position_at(const LinearParams<double>& lp, Index y, Index x, Index h, Index w) {
  return affine(lp.weight, lp.bias, Vec{coordinate(y, h), coordinate(x, w)});
}

}  // namespace

Tensor<double> linear(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>& bias) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = weight.dim(0);
  if (weight.dim(1) != cin) throw DimensionError("reference linear: channel mismatch");
  Tensor<double> out(Shape{n, cout, h, w});
  auto o = out.mutable_data();
  for (Index b = 0; b < n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          double acc = bias.defined() ? bias.data()[static_cast<std::size_t>(co)] : 0.0;
          for (Index ci = 0; ci < cin; ++ci) acc += weight.at({co, ci}) * x.at({b, ci, y, xx});
          o[static_cast<std::size_t>(((b * cout + co) * h + y) * w + xx)] = acc;
        }
  return out;
}

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& kernel, int stride, int pad) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = kernel.dim(0), k = kernel.dim(2);
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  Tensor<double> out(Shape{n, cout, ho, wo});
  auto o = out.mutable_data();
  for (Index b = 0; b < n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index y = 0; y < ho; ++y)
        for (Index xx = 0; xx < wo; ++xx) {
          double acc = 0;
          for (Index ci = 0; ci < cin; ++ci)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index sy = y * stride + ky - pad, sx = xx * stride + kx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += kernel.at({co, ci, ky, kx}) * x.at({b, ci, sy, sx});
              }
          o[static_cast<std::size_t>(((b * cout + co) * ho + y) * wo + xx)] = acc;
        }
  return out;
}

Tensor<double> attention(const Tensor<double>& x, const AttentionParams<double>& p, const FootprintSpec& fp) {
  const AttentionConfig& cfg = p.config;
  if (cfg.kind == OperatorKind::conv) return conv2d(x, p.conv_kernel, 1, fp.pad());
  const AttentionDims& d = p.dims;
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Index slots = fp.slots();
  const auto offsets = fp.offsets();
  Tensor<double> out(Shape{n, d.mid, h, w});
  auto o = out.mutable_data();
  const Vec zero_rel(static_cast<std::size_t>(d.rel), 0.0);

  for (Index b = 0; b < n; ++b) {
    const Pixels input = pixels_of(x, b);
    const Pixels phi = transformed(input, p.phi);
    const Pixels psi = p.psi.weight.defined() ? transformed(input, p.psi) : phi;
    const Pixels beta = p.beta.weight.defined() ? transformed(input, p.beta) : phi;
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) {
        auto inside = [&](Index s) {
          const Index sy = y + offsets[static_cast<std::size_t>(s)].dy;
          const Index sx = xx + offsets[static_cast<std::size_t>(s)].dx;
          return sy >= 0 && sy < h && sx >= 0 && sx < w;
        };
        auto neighbour = [&](const Pixels& m, Index s) -> const Vec& {
          if (!inside(s)) return zero_rel;
          return m(y + offsets[static_cast<std::size_t>(s)].dy, xx + offsets[static_cast<std::size_t>(s)].dx);
        };
        // weight[s][g]: weight of group g at slot s.
        std::vector<Vec> weight(static_cast<std::size_t>(slots));
        const Vec& phi_i = phi(y, xx);

        if (cfg.kind == OperatorKind::pairwise) {
          for (Index s = 0; s < slots; ++s) {
            if (!inside(s)) continue;
            const Vec& psi_j = neighbour(psi, s);
            Vec v;
            switch (cfg.relation) {
              case Relation::summation:
                for (Index c = 0; c < d.rel; ++c) v.push_back(phi_i[c] + psi_j[c]);
                break;
              case Relation::subtraction:
                for (Index c = 0; c < d.rel; ++c) v.push_back(phi_i[c] - psi_j[c]);
                break;
              case Relation::hadamard:
                for (Index c = 0; c < d.rel; ++c) v.push_back(phi_i[c] * psi_j[c]);
                break;
              case Relation::concatenation:
                v = phi_i;
                v.insert(v.end(), psi_j.begin(), psi_j.end());
                break;
              case Relation::dot: v.push_back(dot(phi_i, psi_j)); break;
              default: throw ConfigError("reference: not a pairwise relation");
            }
            if (cfg.position != PositionMode::none) {
              const Index sy = y + offsets[static_cast<std::size_t>(s)].dy;
              const Index sx = xx + offsets[static_cast<std::size_t>(s)].dx;
              const Vec pj = position_at(p.position, sy, sx, h, w);
              if (cfg.position == PositionMode::relative) {
                const Vec pi = position_at(p.position, y, xx, h, w);
                v.push_back(pi[0] - pj[0]);
                v.push_back(pi[1] - pj[1]);
              } else {
                v.push_back(pj[0]);
                v.push_back(pj[1]);
              }
            }
            weight[static_cast<std::size_t>(s)] = mlp(p.gamma, v);
          }
        } else if (cfg.kind == OperatorKind::patchwise) {
          Vec v;
          switch (cfg.relation) {
            case Relation::star_product:
              for (Index s = 0; s < slots; ++s) v.push_back(dot(phi_i, neighbour(psi, s)));
              break;
            case Relation::clique_product:
              for (Index j = 0; j < slots; ++j)
                for (Index k = 0; k < slots; ++k) v.push_back(dot(neighbour(phi, j), neighbour(psi, k)));
              break;
            case Relation::concatenation:
              v = phi_i;
              for (Index s = 0; s < slots; ++s) {
                const Vec& psi_j = neighbour(psi, s);
                v.insert(v.end(), psi_j.begin(), psi_j.end());
              }
              break;
            default: throw ConfigError("reference: not a patchwise relation");
          }
          const Vec all = mlp(p.gamma, v);
          for (Index s = 0; s < slots; ++s) {
            Vec& ws = weight[static_cast<std::size_t>(s)];
            for (Index g = 0; g < d.groups; ++g) ws.push_back(all[static_cast<std::size_t>(g * slots + s)]);
          }
        } else {
          Vec logits;
          for (Index s = 0; s < slots; ++s) logits.push_back(dot(phi_i, neighbour(psi, s)));
          if (cfg.normalize) {
            double top = logits[0];
            for (double l : logits) top = std::max(top, l);
            double total = 0;
            for (double& l : logits) total += (l = std::exp(l - top));
            for (double& l : logits) l /= total;
          }
          for (Index s = 0; s < slots; ++s) weight[static_cast<std::size_t>(s)] = Vec{logits[static_cast<std::size_t>(s)]};
        }

        for (Index c = 0; c < d.mid; ++c) {
          double acc = 0;
          for (Index s = 0; s < slots; ++s) {
            if (!inside(s)) continue;
            acc += weight[static_cast<std::size_t>(s)][static_cast<std::size_t>(c / d.share)] *
                   neighbour(beta, s)[static_cast<std::size_t>(c)];
          }
          o[static_cast<std::size_t>(((b * d.mid + c) * h + y) * w + xx)] = acc;
        }
      }
  }
  return out;
}

}  // namespace reference
}  // namespace san
