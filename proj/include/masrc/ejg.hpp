#pragma once

// Entity jumping graph: a per-window top-k cosine graph over entity
// features, followed by two residual GCN layers producing long-range
// features.

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "masrc/graph_block.hpp"
#include "masrc/kernel.hpp"

namespace masrc::ejg {

// Row i keeps S(i, j) for its k most similar other shots; ties go to the
// smaller column index. The diagonal is never selected.
template <typename S>
EdgeMatrix<S> ejg_edges(const Tensor<S>& sim, std::size_t k) {
  const std::size_t t = sim.rows();
  require(sim.rank() == 2 && sim.cols() == t, "ejg_edges needs a square similarity matrix");
  require(k >= 1 && k + 1 <= t, "ejg_edges: k=" + std::to_string(k) + " out of range for T=" +
                                    std::to_string(t));
  EdgeMatrix<S> e{Tensor<S>::matrix(t, t)};
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < t; ++i) {
    cols.clear();
    for (std::size_t j = 0; j < t; ++j)
      if (j != i) cols.push_back(j);
    std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k), cols.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) e.weights(i, cols[r]) = sim(i, cols[r]);
  }
  return e;
}

// D^-1/2 (max(E, E^T)^+ + I) D^-1/2, with negative weights clamped to 0.
template <typename S>
Tensor<S> normalize_adjacency(const EdgeMatrix<S>& e) {
  const std::size_t t = e.size();
  Tensor<S> a = Tensor<S>::matrix(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const S w = std::max(e(i, j), e(j, i));
      a(i, j) = w > S{0} ? w : S{0};
    }
  for (std::size_t i = 0; i < t; ++i) a(i, i) += S{1};
  std::vector<S> inv_sqrt_deg(t);
  for (std::size_t i = 0; i < t; ++i) {
    S deg{0};
    for (std::size_t j = 0; j < t; ++j) deg += a(i, j);
    inv_sqrt_deg[i] = S{1} / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) a(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

template <typename S>
Tensor<S> build_adjacency(const Tensor<S>& x, std::size_t k) {
  return normalize_adjacency(ejg_edges(cosine_matrix(x), k));
}

// Two independent residual GCN layers over one modality.
struct EjgParams {
  std::array<GcnBlockSlots, 2> layers;
  std::size_t dim = 0;

  template <typename S>
  static EjgParams add(ParamStore<S>& store, std::size_t dim, const std::string& prefix = "ejg") {
    EjgParams p;
    p.dim = dim;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string n = std::to_string(i + 1);
      p.layers[i] = GcnBlockSlots::add(store, prefix + ".gcn" + n, prefix + ".ln" + n, dim);
    }
    return p;
  }

  template <typename S>
  void init(ParamStore<S>& store, Rng& rng) const {
    for (const auto& l : layers) l.init(store, rng);
  }
};

template <typename S>
struct EldCache {
  std::array<GcnBlockCache<S>, 2> layers;
};

// Long-range features. The graph is built from the raw window features and
// is constant with respect to gradients.
template <typename S>
Tensor<S> eld_forward(const ParamStore<S>& store, const EjgParams& p, const Tensor<S>& x,
                      std::size_t k, EldCache<S>* cache = nullptr, KinkTrace* trace = nullptr) {
  require(x.rank() == 2 && x.cols() == p.dim,
          "eld_forward: features " + shape_string(x.shape()) + " do not match width " +
              std::to_string(p.dim));
  const Tensor<S> adj = build_adjacency(x, k);
  Tensor<S> h = x;
  for (std::size_t i = 0; i < 2; ++i)
    h = gcn_block_forward(store, p.layers[i], h, adj, cache ? &cache->layers[i] : nullptr, trace);
  return h;
}

// Returns the gradient with respect to the input features.
template <typename S>
Tensor<S> eld_backward(const ParamStore<S>& store, const EjgParams& p, const EldCache<S>& cache,
                       const Tensor<S>& dy, GradBuffer<S>& grads) {
  Tensor<S> g = dy;
  for (std::size_t i = 2; i-- > 0;)
    g = gcn_block_backward(store, p.layers[i], cache.layers[i], g, grads).dx;
  return g;
}

}  // namespace masrc::ejg
