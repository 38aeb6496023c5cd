#pragma once

// Multi-shot comparison detection: compare the two halves of a window through
// a context similarity matrix, encode it with a small VGG-style CNN and
// classify the center shot with an MLP.

#include <array>
#include <string>
#include <vector>

#include "masrc/kernel.hpp"
#include "masrc/param_store.hpp"
#include "masrc/random.hpp"

namespace masrc::mcd {

// Conv widths 1 -> 32 -> 64 -> 64 -> 64, 3x3 kernels, pool after 2 and 4.
inline constexpr std::array<std::size_t, 5> kChannels{1, 32, 64, 64, 64};
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kHidden = 128;

inline std::size_t encoded_side(std::size_t side) { return side / 2 / 2; }

inline std::size_t flattened_length(std::size_t side) {
  const std::size_t s = encoded_side(side);
  return kChannels.back() * s * s;
}

// cos(x_a, x_{h+b}) for the left half rows a and right half rows b, h = T/2.
template <typename S>
Tensor<S> context_term(const Tensor<S>& x) {
  require(x.rank() == 2 && x.rows() % 2 == 0, "context similarity needs an even window");
  const std::size_t h = x.rows() / 2, d = x.cols();
  Tensor<S> left = Tensor<S>::matrix(h, d), right = Tensor<S>::matrix(h, d);
  std::copy_n(x.data(), h * d, left.data());
  std::copy_n(x.data() + h * d, h * d, right.data());
  return cross_cosine(left, right);
}

template <typename S>
Tensor<S> context_term_backward(const Tensor<S>& x, const Tensor<S>& dm) {
  const std::size_t h = x.rows() / 2, d = x.cols();
  Tensor<S> left = Tensor<S>::matrix(h, d), right = Tensor<S>::matrix(h, d);
  std::copy_n(x.data(), h * d, left.data());
  std::copy_n(x.data() + h * d, h * d, right.data());
  const Tensor<S> c = cross_cosine(left, right);
  auto g = cross_cosine_backward(left, right, c, dm);
  Tensor<S> dx(x.shape());
  std::copy_n(g.da.data(), h * d, dx.data());
  std::copy_n(g.db.data(), h * d, dx.data() + h * d);
  return dx;
}

// M(a, b) = cos(lr_a, lr_b') + cos(sr_a, sr_b'); entries in [-2, 2].
template <typename S>
Tensor<S> context_similarity(const Tensor<S>& long_range, const Tensor<S>& short_range) {
  require(long_range.rows() == short_range.rows(), "context_similarity: window lengths differ");
  Tensor<S> m = context_term(long_range);
  m += context_term(short_range);
  return m;
}

struct McdParams {
  std::array<SlotId, 4> conv_weight{}, conv_bias{};
  SlotId fc1_weight = 0, fc1_bias = 0, fc2_weight = 0, fc2_bias = 0;
  std::size_t side = 0;

  template <typename S>
  static McdParams add(ParamStore<S>& store, std::size_t side, const std::string& prefix = "mcd") {
    require(side >= 4, "mcd: similarity side " + std::to_string(side) +
                           " is below 4 and collapses under pooling");
    McdParams p;
    p.side = side;
    for (std::size_t l = 0; l < 4; ++l) {
      const std::string n = prefix + ".conv" + std::to_string(l + 1);
      p.conv_weight[l] = store.add(n + ".weight", Shape{kChannels[l + 1], kChannels[l], kKernel, kKernel});
      p.conv_bias[l] = store.add(n + ".bias", Shape{kChannels[l + 1]});
    }
    p.fc1_weight = store.add(prefix + ".fc1.weight", Shape{kHidden, flattened_length(side)});
    p.fc1_bias = store.add(prefix + ".fc1.bias", Shape{kHidden});
    p.fc2_weight = store.add(prefix + ".fc2.weight", Shape{1, kHidden});
    p.fc2_bias = store.add(prefix + ".fc2.bias", Shape{1});
    return p;
  }

  // Glorot weights, zero biases.
  template <typename S>
  void init(ParamStore<S>& store, Rng& rng) const {
    for (std::size_t l = 0; l < 4; ++l) {
      const std::size_t kk = kKernel * kKernel;
      glorot_uniform(store.value(conv_weight[l]), kChannels[l] * kk, kChannels[l + 1] * kk, rng);
      store.value(conv_bias[l]).fill(S{0});
    }
    glorot_uniform(store.value(fc1_weight), flattened_length(side), kHidden, rng);
    store.value(fc1_bias).fill(S{0});
    glorot_uniform(store.value(fc2_weight), kHidden, 1, rng);
    store.value(fc2_bias).fill(S{0});
  }
};

template <typename S>
struct McdCache {
  std::array<Tensor<S>, 4> conv_in;
  std::array<Tensor<S>, 4> conv_pre;
  std::array<PoolResult<S>, 2> pools;
  Tensor<S> flat;
  Tensor<S> hidden_pre;
  Tensor<S> hidden;
  S logit{};
};

// Returns the logit; the probability is sigmoid(logit).
template <typename S>
S encode_logit(const ParamStore<S>& store, const McdParams& p, const Tensor<S>& m,
               McdCache<S>* cache = nullptr, KinkTrace* trace = nullptr) {
  require(m.rank() == 2 && m.rows() == p.side && m.cols() == p.side,
          "encode: similarity matrix " + shape_string(m.shape()) + " does not match side " +
              std::to_string(p.side));
  McdCache<S> local;
  McdCache<S>& c = cache ? *cache : local;
  Tensor<S> h(Shape{1, p.side, p.side}, std::vector<S>(m.values().begin(), m.values().end()));
  std::size_t pool = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    c.conv_in[l] = std::move(h);
    c.conv_pre[l] = conv2d_forward(c.conv_in[l], store.value(p.conv_weight[l]), store.value(p.conv_bias[l]));
    h = relu(c.conv_pre[l], trace);
    if (l == 1 || l == 3) {
      c.pools[pool] = maxpool2d(h, trace);
      h = c.pools[pool].out;
      ++pool;
    }
  }
  const std::size_t flat_len = h.size();
  c.flat = Tensor<S>(Shape{flat_len}, std::move(h.storage()));
  c.hidden_pre = linear(c.flat, store.value(p.fc1_weight), store.value(p.fc1_bias));
  c.hidden = relu(c.hidden_pre, trace);
  c.logit = linear(c.hidden, store.value(p.fc2_weight), store.value(p.fc2_bias))[0];
  return c.logit;
}

template <typename S>
S encode_and_classify(const ParamStore<S>& store, const McdParams& p, const Tensor<S>& m) {
  return clamp_probability(sigmoid(encode_logit(store, p, m)));
}

// Backpropagates d(loss)/d(logit); returns d(loss)/dM.
template <typename S>
Tensor<S> encode_backward(const ParamStore<S>& store, const McdParams& p, const McdCache<S>& c,
                          S dlogit, GradBuffer<S>& grads) {
  Tensor<S> dout(Shape{1}, dlogit);
  auto g2 = linear_backward(c.hidden, store.value(p.fc2_weight), dout);
  grads[p.fc2_weight] += g2.dw;
  grads[p.fc2_bias] += g2.db;
  auto g1 = linear_backward(c.flat, store.value(p.fc1_weight), relu_backward(c.hidden_pre, g2.dx));
  grads[p.fc1_weight] += g1.dw;
  grads[p.fc1_bias] += g1.db;

  const std::size_t s = encoded_side(p.side);
  Tensor<S> g(Shape{kChannels.back(), s, s}, std::move(g1.dx.storage()));
  std::size_t pool = 2;
  for (std::size_t l = 4; l-- > 0;) {
    if (l == 1 || l == 3) {
      --pool;
      g = maxpool2d_backward(c.conv_pre[l].shape(), c.pools[pool].argmax, g);
    }
    g = relu_backward(c.conv_pre[l], g);
    auto cg = conv2d_backward(c.conv_in[l], store.value(p.conv_weight[l]), g);
    grads[p.conv_weight[l]] += cg.dw;
    grads[p.conv_bias[l]] += cg.dbias;
    g = std::move(cg.dx);
  }
  return Tensor<S>(Shape{p.side, p.side}, std::move(g.storage()));
}

}  // namespace masrc::mcd
