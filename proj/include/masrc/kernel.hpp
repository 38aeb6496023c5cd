#pragma once

// Differentiable building blocks. Every op has a forward and a hand-derived
// backward; backward functions take the upstream gradient and return the
// gradients of the op's inputs. Ops are pure and templated on the scalar
// type so training can run in float and gradient checks in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "masrc/error.hpp"
#include "masrc/tensor.hpp"

namespace masrc {

// Piecewise-linear decisions (relu gates, pool winners, probability clamps)
// of one forward pass. In record mode every decision is stored with its
// distance to the kink. In replay mode the stored decisions are reused, so a
// perturbed evaluation stays on the same linear piece as the recorded one;
// flips whose recorded margin is below near_kink are flagged.
struct KinkTrace {
  enum class Mode { record, replay };

  Mode mode = Mode::record;
  std::vector<std::size_t> decisions;
  std::vector<double> margins;
  std::size_t cursor = 0;
  double near_kink = 1e-6;
  std::size_t flips = 0;
  bool flipped_near_kink = false;

  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (auto v : margins) m = std::min(m, v);
    return m;
  }

  KinkTrace replay() const {
    KinkTrace t = *this;
    t.mode = Mode::replay;
    t.cursor = 0;
    t.flips = 0;
    t.flipped_near_kink = false;
    return t;
  }

  std::size_t decide(std::size_t live, double margin) {
    if (mode == Mode::record) {
      decisions.push_back(live);
      margins.push_back(std::abs(margin));
      return live;
    }
    require(cursor < decisions.size(), "kink replay: forward pass took more decisions than recorded");
    const std::size_t i = cursor++;
    if (decisions[i] != live) {
      ++flips;
      if (margins[i] < near_kink) flipped_near_kink = true;
    }
    return decisions[i];
  }

  bool complete() const { return mode == Mode::record || cursor == decisions.size(); }
};

inline constexpr double kProbabilityFloor = 1e-7;
inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Matrix products

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul shape mismatch: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<S> c = Tensor<S>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    S* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S aip = a(i, p);
      if (aip == S{0}) continue;
      const S* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

// a^T * b
template <typename S>
Tensor<S> matmul_tn(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(),
          "matmul_tn shape mismatch: " + shape_string(a.shape()) + "^T * " +
              shape_string(b.shape()));
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor<S> c = Tensor<S>::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const S* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const S api = a(p, i);
      if (api == S{0}) continue;
      S* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

// a * b^T
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_nt shape mismatch: " + shape_string(a.shape()) + " * " +
              shape_string(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<S> c = Tensor<S>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      S acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  return c;
}

// ---------------------------------------------------------------------------
// GCN smoothing: A * X * W

template <typename S>
Tensor<S> gcn_smooth(const Tensor<S>& x, const Tensor<S>& adj, const Tensor<S>& w) {
  require(adj.rank() == 2 && adj.rows() == adj.cols() && adj.rows() == x.rows(),
          "gcn_smooth: adjacency " + shape_string(adj.shape()) + " does not match features " +
              shape_string(x.shape()));
  return matmul(adj, matmul(x, w));
}

template <typename S>
struct GcnGrad {
  Tensor<S> dx, dadj, dw;
};

template <typename S>
GcnGrad<S> gcn_smooth_backward(const Tensor<S>& x, const Tensor<S>& adj, const Tensor<S>& w,
                               const Tensor<S>& dy) {
  const Tensor<S> xw = matmul(x, w);
  const Tensor<S> dxw = matmul_tn(adj, dy);
  return {matmul_nt(dxw, w), matmul_nt(dy, xw), matmul_tn(x, dxw)};
}

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis of each row

template <typename S>
struct LayerNormCache {
  Tensor<S> normalized;
  std::vector<S> inv_std;
};

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = kLayerNormEps, LayerNormCache<S>* cache = nullptr) {
  require(x.rank() == 2 && x.cols() >= 2, "layer_norm needs a matrix with at least 2 columns");
  require(gamma.size() == x.cols() && beta.size() == x.cols(),
          "layer_norm: affine parameters do not match feature width " +
              std::to_string(x.cols()));
  const std::size_t n = x.rows(), d = x.cols();
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());
  std::vector<S> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    S mean{0};
    for (auto v : row) mean += v;
    mean /= static_cast<S>(d);
    S var{0};
    for (auto v : row) var += (v - mean) * (v - mean);
    var /= static_cast<S>(d);
    const S r = S{1} / std::sqrt(var + static_cast<S>(eps));
    inv_std[i] = r;
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (row[j] - mean) * r;
      out(i, j) = gamma[j] * xhat(i, j) + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename S>
struct LayerNormGrad {
  Tensor<S> dx, dgamma, dbeta;
};

template <typename S>
LayerNormGrad<S> layer_norm_backward(const LayerNormCache<S>& cache, const Tensor<S>& gamma,
                                     const Tensor<S>& dy) {
  const auto& xhat = cache.normalized;
  const std::size_t n = xhat.rows(), d = xhat.cols();
  LayerNormGrad<S> g{Tensor<S>(xhat.shape()), Tensor<S>(gamma.shape()), Tensor<S>(gamma.shape())};
  std::vector<S> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    S sum_dxhat{0}, sum_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      g.dgamma[j] += dy(i, j) * xhat(i, j);
      g.dbeta[j] += dy(i, j);
      dxhat[j] = dy(i, j) * gamma[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat(i, j);
    }
    const S scale = cache.inv_std[i] / static_cast<S>(d);
    for (std::size_t j = 0; j < d; ++j)
      g.dx(i, j) = scale * (static_cast<S>(d) * dxhat[j] - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Tensor<S> relu(const Tensor<S>& x, KinkTrace* trace = nullptr) {
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    bool on = x[i] > S{0};
    if (trace) on = trace->decide(on ? 1u : 0u, static_cast<double>(x[i])) != 0;
    y[i] = on ? x[i] : S{0};
  }
  return y;
}

// Gradient is taken as zero at exactly 0.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& pre, const Tensor<S>& dy) {
  Tensor<S> dx(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > S{0} ? dy[i] : S{0};
  return dx;
}

template <typename S>
S sigmoid(S z) {
  if (z >= S{0}) return S{1} / (S{1} + std::exp(-z));
  const S e = std::exp(z);
  return e / (S{1} + e);
}

template <typename S>
S clamp_probability(S p) {
  return std::clamp(p, static_cast<S>(kProbabilityFloor), static_cast<S>(1.0 - kProbabilityFloor));
}

// -y log p - (1 - y) log(1 - p), with p clamped away from {0, 1}.
template <typename S>
S bce_loss(S p, S y) {
  require(std::isfinite(static_cast<double>(p)), "bce_loss: non-finite probability");
  const S q = clamp_probability(p);
  return -y * std::log(q) - (S{1} - y) * std::log(S{1} - q);
}

namespace detail {
// 0 inside the clamp range, 1 below it, 2 above it.
template <typename S>
std::size_t clamp_side(S p) {
  if (p < static_cast<S>(kProbabilityFloor)) return 1;
  if (p > static_cast<S>(1.0 - kProbabilityFloor)) return 2;
  return 0;
}

template <typename S>
double clamp_margin(S p) {
  const double q = static_cast<double>(p);
  return std::min(std::abs(q - kProbabilityFloor), std::abs(q - (1.0 - kProbabilityFloor)));
}
}  // namespace detail

// bce(clamp(sigmoid(z)), y) as a function of the logit. With a trace the
// clamp state is a recorded decision like a relu gate.
template <typename S>
S bce_with_logit(S z, S y, KinkTrace* trace = nullptr) {
  std::size_t side = detail::clamp_side(sigmoid(z));
  if (trace) side = trace->decide(side, detail::clamp_margin(sigmoid(z)));
  if (side != 0) {
    const S q = static_cast<S>(side == 1 ? kProbabilityFloor : 1.0 - kProbabilityFloor);
    return -y * std::log(q) - (S{1} - y) * std::log(S{1} - q);
  }
  // log sigmoid(z) and log(1 - sigmoid(z)) without cancellation
  const S log_p = z >= S{0} ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  const S log_q = log_p - z;
  return -y * log_p - (S{1} - y) * log_q;
}

// d bce(clamp(sigmoid(z)), y) / dz. Zero where the clamp is active.
template <typename S>
S bce_logit_grad(S z, S y) {
  const S p = sigmoid(z);
  return detail::clamp_side(p) != 0 ? S{0} : p - y;
}

// ---------------------------------------------------------------------------
// Row-wise softmax with -inf marking absent entries. An all -inf row maps to
// the zero row.

template <typename S>
bool is_masked(S v) {
  return std::isinf(v) && v < S{0};
}

template <typename S>
Tensor<S> masked_softmax(const Tensor<S>& e) {
  require(e.rank() == 2, "masked_softmax needs a matrix");
  Tensor<S> p(e.shape());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto row = e.row(i);
    S peak = -std::numeric_limits<S>::infinity();
    for (auto v : row)
      if (!is_masked(v)) peak = std::max(peak, v);
    if (is_masked(peak)) continue;
    S total{0};
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (is_masked(row[j])) continue;
      p(i, j) = std::exp(row[j] - peak);
      total += p(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) p(i, j) /= total;
  }
  return p;
}

template <typename S>
Tensor<S> masked_softmax_backward(const Tensor<S>& p, const Tensor<S>& dp) {
  Tensor<S> de(p.shape());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    S dot{0};
    for (std::size_t j = 0; j < p.cols(); ++j) dot += p(i, j) * dp(i, j);
    for (std::size_t j = 0; j < p.cols(); ++j) de(i, j) = p(i, j) * (dp(i, j) - dot);
  }
  return de;
}

// ---------------------------------------------------------------------------
// Cosine similarity

template <typename S>
std::vector<S> row_squared_norms(const Tensor<S>& x, const char* who) {
  std::vector<S> sq(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    S ss{0};
    for (auto v : x.row(i)) ss += v * v;
    if (!(ss > S{0}))
      throw ValidationError(std::string(who) + ": zero-norm feature row " + std::to_string(i));
    sq[i] = ss;
  }
  return sq;
}

template <typename S>
std::vector<S> row_norms(const Tensor<S>& x, const char* who) {
  auto norms = row_squared_norms(x, who);
  for (auto& v : norms) v = std::sqrt(v);
  return norms;
}

// C(a, b) = cos(a_row, b_row) for every row pair.
template <typename S>
Tensor<S> cross_cosine(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "cross_cosine: feature widths differ");
  const auto sa = row_squared_norms(a, "cosine"), sb = row_squared_norms(b, "cosine");
  Tensor<S> c = matmul_nt(a, b);
  // Dividing by sqrt(|a|^2 |b|^2) keeps cos(x, x) exactly 1.
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) /= std::sqrt(sa[i] * sb[j]);
  return c;
}

template <typename S>
Tensor<S> cosine_matrix(const Tensor<S>& x) {
  Tensor<S> c = cross_cosine(x, x);
  for (std::size_t i = 0; i < x.rows(); ++i) c(i, i) = S{1};
  return c;
}

template <typename S>
struct CosineGrad {
  Tensor<S> da, db;
};

template <typename S>
CosineGrad<S> cross_cosine_backward(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& c,
                                    const Tensor<S>& dc) {
  const auto na = row_norms(a, "cosine"), nb = row_norms(b, "cosine");
  const std::size_t d = a.cols();
  CosineGrad<S> g{Tensor<S>(a.shape()), Tensor<S>(b.shape())};
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const S gij = dc(i, j);
      if (gij == S{0}) continue;
      const S inv = S{1} / (na[i] * nb[j]);
      const S ca = c(i, j) / (na[i] * na[i]);
      const S cb = c(i, j) / (nb[j] * nb[j]);
      for (std::size_t k = 0; k < d; ++k) {
        g.da(i, k) += gij * (b(j, k) * inv - ca * a(i, k));
        g.db(j, k) += gij * (a(i, k) * inv - cb * b(j, k));
      }
    }
  return g;
}

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, zero "same" padding, odd square kernels.
// input (C_in, H, W), filters (C_out, C_in, K, K), bias (C_out).

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  require(x.rank() == 3 && w.rank() == 4 && w.extent(1) == x.extent(0) &&
              w.extent(2) == w.extent(3) && w.extent(2) % 2 == 1 && bias.size() == w.extent(0),
          "conv2d shape mismatch: input " + shape_string(x.shape()) + ", filters " +
              shape_string(w.shape()));
  const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t cout = w.extent(0), k = w.extent(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<S> y(Shape{cout, h, wd});
  for (std::size_t co = 0; co < cout; ++co) {
    S* yc = y.data() + co * h * wd;
    std::fill(yc, yc + h * wd, bias[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const S* xc = x.data() + ci * h * wd;
      const S* wk = w.data() + (co * cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
        const std::size_t oy1 = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h), static_cast<std::ptrdiff_t>(h) - dy));
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t ox1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(wd), static_cast<std::ptrdiff_t>(wd) - dx));
          const S wv = wk[ky * k + kx];
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            S* yr = yc + oy * wd;
            const S* xr = xc + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy) + dy) * wd;
            for (std::size_t ox = ox0; ox < ox1; ++ox)
              yr[ox] += wv * xr[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox) + dx)];
          }
        }
      }
    }
  }
  return y;
}

template <typename S>
struct ConvGrad {
  Tensor<S> dx, dw, dbias;
};

template <typename S>
ConvGrad<S> conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy) {
  const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t cout = w.extent(0), k = w.extent(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  ConvGrad<S> g{Tensor<S>(x.shape()), Tensor<S>(w.shape()), Tensor<S>(Shape{cout})};
  for (std::size_t co = 0; co < cout; ++co) {
    const S* gc = dy.data() + co * h * wd;
    S db{0};
    for (std::size_t i = 0; i < h * wd; ++i) db += gc[i];
    g.dbias[co] = db;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const S* xc = x.data() + ci * h * wd;
      S* dxc = g.dx.data() + ci * h * wd;
      const S* wk = w.data() + (co * cin + ci) * k * k;
      S* dwk = g.dw.data() + (co * cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dyo = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dyo));
        const std::size_t oy1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(h), static_cast<std::ptrdiff_t>(h) - dyo));
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dxo = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dxo));
          const std::size_t ox1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(wd), static_cast<std::ptrdiff_t>(wd) - dxo));
          const S wv = wk[ky * k + kx];
          S acc{0};
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const S* gr = gc + oy * wd;
            const std::size_t iy = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy) + dyo);
            const S* xr = xc + iy * wd;
            S* dxr = dxc + iy * wd;
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              const std::size_t ix = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox) + dxo);
              acc += gr[ox] * xr[ix];
              dxr[ix] += wv * gr[ox];
            }
          }
          dwk[ky * k + kx] += acc;
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2, floor. Ties go to the first position in
// row-major window order.

template <typename S>
struct PoolResult {
  Tensor<S> out;
  std::vector<std::size_t> argmax;  // flat input index per output entry
};

template <typename S>
PoolResult<S> maxpool2d(const Tensor<S>& x, KinkTrace* trace = nullptr) {
  require(x.rank() == 3, "maxpool2d needs a (C, H, W) tensor");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t oh = h / 2, ow = w / 2;
  require(oh >= 1 && ow >= 1, "maxpool2d: input " + shape_string(x.shape()) + " collapses");
  PoolResult<S> r{Tensor<S>(Shape{c, oh, ow}), std::vector<std::size_t>(c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (ch * h + 2 * oy) * w + 2 * ox;
        S best_v = x[best];
        S second = -std::numeric_limits<S>::infinity();
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const std::size_t idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > best_v) {
              second = best_v;
              best_v = x[idx];
              best = idx;
            } else {
              second = std::max(second, x[idx]);
            }
          }
        if (trace) {
          // A tie among zeros comes from inactive relus, which the relu
          // trace already covers.
          const double m = best_v != S{0} ? static_cast<double>(best_v - second)
                                          : std::numeric_limits<double>::infinity();
          best = trace->decide(best, m);
          best_v = x[best];
        }
        r.out[o] = best_v;
        r.argmax[o] = best;
      }
  return r;
}

template <typename S>
Tensor<S> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<S>& dy) {
  Tensor<S> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected: y = W x + b with W (out, in).

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require(w.rank() == 2 && w.cols() == x.size() && b.size() == w.rows(),
          "linear shape mismatch: weight " + shape_string(w.shape()) + ", input length " +
              std::to_string(x.size()));
  Tensor<S> y(Shape{w.rows()});
  for (std::size_t o = 0; o < w.rows(); ++o) {
    S acc = b[o];
    const S* wr = w.data() + o * w.cols();
    for (std::size_t i = 0; i < x.size(); ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
  return y;
}

template <typename S>
struct LinearGrad {
  Tensor<S> dx, dw, db;
};

template <typename S>
LinearGrad<S> linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy) {
  LinearGrad<S> g{Tensor<S>(x.shape()), Tensor<S>(w.shape()), Tensor<S>(Shape{w.rows()})};
  for (std::size_t o = 0; o < w.rows(); ++o) {
    const S go = dy[o];
    g.db[o] = go;
    if (go == S{0}) continue;
    const S* wr = w.data() + o * w.cols();
    S* dwr = g.dw.data() + o * w.cols();
    for (std::size_t i = 0; i < x.size(); ++i) {
      dwr[i] = go * x[i];
      g.dx[i] += wr[i] * go;
    }
  }
  return g;
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (auto v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace masrc
