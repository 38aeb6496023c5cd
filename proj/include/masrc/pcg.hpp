#pragma once

// Place continuity graph. Shots with locally maximal similar-shot counts are
// wide shots; every other (detail) shot is affiliated to one wide shot. Two
// message-passing stages then run detail -> wide and wide -> detail over
// bilinear edge scores normalized by masked softmax.

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "masrc/graph_block.hpp"
#include "masrc/kernel.hpp"

namespace masrc::pcg {

inline constexpr std::size_t kNoAffiliation = std::numeric_limits<std::size_t>::max();

struct WideDetailPartition {
  std::vector<int> counts;
  std::vector<std::size_t> wide;
  std::vector<std::size_t> detail;
  // affiliation[i] is the wide shot of detail shot i, kNoAffiliation for
  // wide shots.
  std::vector<std::size_t> affiliation;

  bool operator==(const WideDetailPartition&) const = default;
};

// n_i = #{j : S(i, j) > mean(S)}, j over the whole window including i.
template <typename S>
std::vector<int> similar_count(const Tensor<S>& sim) {
  const std::size_t t = sim.rows();
  S mean{0};
  for (auto v : sim.values()) mean += v;
  mean /= static_cast<S>(sim.size());
  std::vector<int> n(t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j)
      if (sim(i, j) > mean) ++n[i];
  return n;
}

// Strict local maxima of n with -inf beyond both ends. Falls back to the
// first argmax so the wide set is never empty.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> select_wide(
    const std::vector<int>& n) {
  require(n.size() >= 2, "select_wide needs at least 2 counts");
  const std::size_t t = n.size();
  std::vector<bool> is_wide(t, false);
  bool any = false;
  for (std::size_t i = 0; i < t; ++i) {
    const bool above_left = i == 0 || n[i] > n[i - 1];
    const bool above_right = i + 1 == t || n[i] > n[i + 1];
    if (above_left && above_right) is_wide[i] = any = true;
  }
  if (!any) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t; ++i)
      if (n[i] > n[best]) best = i;
    is_wide[best] = true;
  }
  std::vector<std::size_t> wide, detail;
  for (std::size_t i = 0; i < t; ++i) (is_wide[i] ? wide : detail).push_back(i);
  return {std::move(wide), std::move(detail)};
}

// j*_i = argmax_{j in W} S(i, j) + 1/|i - j|; ties go to the nearer wide
// shot, then the smaller index.
template <typename S>
std::vector<std::size_t> affiliate(const Tensor<S>& sim, const std::vector<std::size_t>& wide,
                                   const std::vector<std::size_t>& detail) {
  require(!wide.empty(), "affiliate: wide set is empty");
  std::vector<std::size_t> aff(sim.rows(), kNoAffiliation);
  for (auto i : detail) {
    std::size_t best = kNoAffiliation;
    S best_score{};
    std::size_t best_dist = 0;
    for (auto j : wide) {
      const std::size_t dist = i > j ? i - j : j - i;
      const S score = sim(i, j) + S{1} / static_cast<S>(dist);
      const bool better = best == kNoAffiliation || score > best_score ||
                          (score == best_score && (dist < best_dist || (dist == best_dist && j < best)));
      if (better) {
        best = j;
        best_score = score;
        best_dist = dist;
      }
    }
    aff[i] = best;
  }
  return aff;
}

template <typename S>
WideDetailPartition build_partition(const Tensor<S>& place) {
  const Tensor<S> sim = cosine_matrix(place);
  WideDetailPartition p;
  p.counts = similar_count(sim);
  std::tie(p.wide, p.detail) = select_wide(p.counts);
  p.affiliation = affiliate(sim, p.wide, p.detail);
  return p;
}

// (row, col) positions that carry a finite edge score.
using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

// Wide row j*_i aggregates from detail column i.
inline EdgeList d2w_pairs(const WideDetailPartition& p) {
  EdgeList e;
  for (auto i : p.detail) e.emplace_back(p.affiliation[i], i);
  return e;
}

// Detail row i aggregates from its wide column j*_i.
inline EdgeList w2d_pairs(const WideDetailPartition& p) {
  EdgeList e;
  for (auto i : p.detail) e.emplace_back(i, p.affiliation[i]);
  return e;
}

// E(r, c) = (W1 x_r)^T (W2 x_c) on the listed pairs, -inf elsewhere.
template <typename S>
EdgeMatrix<S> bilinear_edges(const Tensor<S>& x, const EdgeList& pairs, const Tensor<S>& w1,
                             const Tensor<S>& w2) {
  const Tensor<S> u = matmul_nt(x, w1);
  const Tensor<S> v = matmul_nt(x, w2);
  EdgeMatrix<S> e{Tensor<S>::matrix(x.rows(), x.rows(), -std::numeric_limits<S>::infinity())};
  for (auto [r, c] : pairs) {
    S acc{0};
    for (std::size_t k = 0; k < u.cols(); ++k) acc += u(r, k) * v(c, k);
    e.weights(r, c) = acc;
  }
  return e;
}

template <typename S>
struct BilinearGrad {
  Tensor<S> dx, dw1, dw2;
};

template <typename S>
BilinearGrad<S> bilinear_edges_backward(const Tensor<S>& x, const EdgeList& pairs,
                                        const Tensor<S>& w1, const Tensor<S>& w2,
                                        const Tensor<S>& de) {
  const Tensor<S> u = matmul_nt(x, w1);
  const Tensor<S> v = matmul_nt(x, w2);
  Tensor<S> du(u.shape()), dv(v.shape());
  for (auto [r, c] : pairs) {
    const S g = de(r, c);
    for (std::size_t k = 0; k < u.cols(); ++k) {
      du(r, k) += g * v(c, k);
      dv(c, k) += g * u(r, k);
    }
  }
  BilinearGrad<S> out{matmul(du, w1), matmul_tn(du, x), matmul_tn(dv, x)};
  out.dx += matmul(dv, w2);
  return out;
}

struct PcgParams {
  SlotId d2w_w1 = 0, d2w_w2 = 0, w2d_w1 = 0, w2d_w2 = 0;
  std::array<GcnBlockSlots, 2> stages;  // 0: detail->wide, 1: wide->detail
  std::size_t dim = 0;

  template <typename S>
  static PcgParams add(ParamStore<S>& store, std::size_t dim, const std::string& prefix = "pcg") {
    PcgParams p;
    p.dim = dim;
    const Shape sq{dim, dim};
    p.d2w_w1 = store.add(prefix + ".d2w.w1", sq);
    p.d2w_w2 = store.add(prefix + ".d2w.w2", sq);
    p.w2d_w1 = store.add(prefix + ".w2d.w1", sq);
    p.w2d_w2 = store.add(prefix + ".w2d.w2", sq);
    p.stages[0] = GcnBlockSlots::add(store, prefix + ".gcn1", prefix + ".ln1", dim);
    p.stages[1] = GcnBlockSlots::add(store, prefix + ".gcn2", prefix + ".ln2", dim);
    return p;
  }

  template <typename S>
  void init(ParamStore<S>& store, Rng& rng) const {
    for (auto id : {d2w_w1, d2w_w2, w2d_w1, w2d_w2}) glorot_uniform(store.value(id), dim, dim, rng);
    for (const auto& s : stages) s.init(store, rng);
  }
};

template <typename S>
EdgeMatrix<S> d2w_edges(const ParamStore<S>& store, const PcgParams& p, const Tensor<S>& x,
                        const WideDetailPartition& part) {
  return bilinear_edges(x, d2w_pairs(part), store.value(p.d2w_w1), store.value(p.d2w_w2));
}

template <typename S>
EdgeMatrix<S> w2d_edges(const ParamStore<S>& store, const PcgParams& p, const Tensor<S>& x,
                        const WideDetailPartition& part) {
  return bilinear_edges(x, w2d_pairs(part), store.value(p.w2d_w1), store.value(p.w2d_w2));
}

template <typename S>
struct PsdCache {
  WideDetailPartition partition;
  Tensor<S> input;
  Tensor<S> d2w_features;
  Tensor<S> d2w_softmax;
  Tensor<S> w2d_softmax;
  std::array<GcnBlockCache<S>, 2> stages;
};

// Short-range features. The partition comes from the raw window features
// and is constant; edge scores are differentiable.
template <typename S>
Tensor<S> psd_forward(const ParamStore<S>& store, const PcgParams& p, const Tensor<S>& x,
                      PsdCache<S>* cache = nullptr, KinkTrace* trace = nullptr) {
  require(x.rank() == 2 && x.cols() == p.dim,
          "psd_forward: features " + shape_string(x.shape()) + " do not match width " +
              std::to_string(p.dim));
  WideDetailPartition part = build_partition(x);
  Tensor<S> a1 = masked_softmax(d2w_edges(store, p, x, part).weights);
  Tensor<S> x1 = gcn_block_forward(store, p.stages[0], x, a1, cache ? &cache->stages[0] : nullptr, trace);
  Tensor<S> a2 = masked_softmax(w2d_edges(store, p, x1, part).weights);
  Tensor<S> x2 = gcn_block_forward(store, p.stages[1], x1, a2, cache ? &cache->stages[1] : nullptr, trace);
  if (cache) {
    cache->partition = std::move(part);
    cache->input = x;
    cache->d2w_features = std::move(x1);
    cache->d2w_softmax = std::move(a1);
    cache->w2d_softmax = std::move(a2);
  }
  return x2;
}

template <typename S>
Tensor<S> psd_backward(const ParamStore<S>& store, const PcgParams& p, const PsdCache<S>& cache,
                       const Tensor<S>& dy, GradBuffer<S>& grads) {
  auto g2 = gcn_block_backward(store, p.stages[1], cache.stages[1], dy, grads);
  const Tensor<S> de2 = masked_softmax_backward(cache.w2d_softmax, g2.dadj);
  auto b2 = bilinear_edges_backward(cache.d2w_features, w2d_pairs(cache.partition),
                                    store.value(p.w2d_w1), store.value(p.w2d_w2), de2);
  grads[p.w2d_w1] += b2.dw1;
  grads[p.w2d_w2] += b2.dw2;
  Tensor<S> dx1 = std::move(g2.dx);
  dx1 += b2.dx;

  auto g1 = gcn_block_backward(store, p.stages[0], cache.stages[0], dx1, grads);
  const Tensor<S> de1 = masked_softmax_backward(cache.d2w_softmax, g1.dadj);
  auto b1 = bilinear_edges_backward(cache.input, d2w_pairs(cache.partition),
                                    store.value(p.d2w_w1), store.value(p.d2w_w2), de1);
  grads[p.d2w_w1] += b1.dw1;
  grads[p.d2w_w2] += b1.dw2;
  Tensor<S> dx = std::move(g1.dx);
  dx += b1.dx;
  return dx;
}

}  // namespace masrc::pcg
