#pragma once

#include "masrc/kernel.hpp"
#include "masrc/param_store.hpp"
#include "masrc/random.hpp"

namespace masrc {

// T x T weighted adjacency. Entry (i, j) weights the edge from shot j into
// shot i. Pre-softmax graphs use -inf for absent edges.
template <typename S>
struct EdgeMatrix {
  Tensor<S> weights;

  std::size_t size() const { return weights.rows(); }
  S operator()(std::size_t i, std::size_t j) const { return weights(i, j); }
};

// Slots for one residual GCN layer: Y = LN(X + relu(A X W)).
struct GcnBlockSlots {
  SlotId weight = 0;
  SlotId gamma = 0;
  SlotId beta = 0;

  template <typename S>
  static GcnBlockSlots add(ParamStore<S>& store, const std::string& prefix, const std::string& ln,
                           std::size_t dim) {
    GcnBlockSlots s;
    s.weight = store.add(prefix + ".weight", Shape{dim, dim});
    s.gamma = store.add(ln + ".gamma", Shape{dim});
    s.beta = store.add(ln + ".beta", Shape{dim});
    return s;
  }

  template <typename S>
  void init(ParamStore<S>& store, Rng& rng) const {
    auto& w = store.value(weight);
    glorot_uniform(w, w.rows(), w.cols(), rng);
    store.value(gamma).fill(S{1});
    store.value(beta).fill(S{0});
  }
};

template <typename S>
struct GcnBlockCache {
  Tensor<S> input;
  Tensor<S> adj;
  Tensor<S> pre;  // A X W, before relu
  LayerNormCache<S> ln;
};

template <typename S>
Tensor<S> gcn_block_forward(const ParamStore<S>& store, const GcnBlockSlots& slots,
                            const Tensor<S>& x, const Tensor<S>& adj, GcnBlockCache<S>* cache,
                            KinkTrace* trace) {
  Tensor<S> pre = gcn_smooth(x, adj, store.value(slots.weight));
  Tensor<S> z = relu(pre, trace);
  z += x;
  LayerNormCache<S> ln;
  Tensor<S> y = layer_norm(z, store.value(slots.gamma), store.value(slots.beta), kLayerNormEps,
                           cache ? &ln : nullptr);
  if (cache) {
    cache->input = x;
    cache->adj = adj;
    cache->pre = std::move(pre);
    cache->ln = std::move(ln);
  }
  return y;
}

template <typename S>
struct GcnBlockGrad {
  Tensor<S> dx;
  Tensor<S> dadj;
};

// Accumulates parameter gradients into grads and returns input/adjacency
// gradients.
template <typename S>
GcnBlockGrad<S> gcn_block_backward(const ParamStore<S>& store, const GcnBlockSlots& slots,
                                   const GcnBlockCache<S>& cache, const Tensor<S>& dy,
                                   GradBuffer<S>& grads) {
  auto ln = layer_norm_backward(cache.ln, store.value(slots.gamma), dy);
  grads[slots.gamma] += ln.dgamma;
  grads[slots.beta] += ln.dbeta;
  const Tensor<S> dpre = relu_backward(cache.pre, ln.dx);
  auto g = gcn_smooth_backward(cache.input, cache.adj, store.value(slots.weight), dpre);
  grads[slots.weight] += g.dw;
  g.dx += ln.dx;
  return {std::move(g.dx), std::move(g.dadj)};
}

}  // namespace masrc
