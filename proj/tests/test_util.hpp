#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masrc/masrc.hpp"
#include "oracles/graph_oracle.hpp"

namespace testing_util {

using masrc::Tensor;

template <typename S = double>
Tensor<S> random_tensor(masrc::Shape shape, masrc::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline oracle::Mat to_mat(const Tensor<double>& t) {
  oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline std::vector<double> to_vec(const Tensor<double>& t) {
  return {t.values().begin(), t.values().end()};
}

// Fixed random readout sum(out * R): turns a tensor-valued op into a scalar
// objective with a non-trivial upstream gradient R.
struct Readout {
  Tensor<double> weights;

  double value(const Tensor<double>& out) const {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  }
};

inline Readout make_readout(const masrc::Shape& shape, masrc::Rng& rng) {
  return {random_tensor(shape, rng)};
}

// Random window features away from zero rows.
inline Tensor<double> random_features(std::size_t t, std::size_t d, masrc::Rng& rng) {
  return random_tensor(masrc::Shape{t, d}, rng, -1.0, 1.0);
}

// Features with planted clusters: shots in the same run share a centroid.
inline Tensor<double> clustered_features(const std::vector<std::size_t>& runs, std::size_t d,
                                         double noise, masrc::Rng& rng) {
  std::size_t t = 0;
  for (auto r : runs) t += r;
  Tensor<double> x = Tensor<double>::matrix(t, d);
  std::size_t row = 0;
  for (auto r : runs) {
    std::vector<double> c(d);
    for (auto& v : c) v = rng.normal();
    for (std::size_t i = 0; i < r; ++i, ++row)
      for (std::size_t k = 0; k < d; ++k) x(row, k) = c[k] + noise * rng.normal();
  }
  return x;
}

inline oracle::BlockParams block_params(const masrc::ParamStore<double>& store,
                                        const masrc::GcnBlockSlots& s) {
  return {to_mat(store.value(s.weight)), to_vec(store.value(s.gamma)), to_vec(store.value(s.beta))};
}

inline oracle::ShortRangeParams short_range_params(const masrc::ParamStore<double>& store,
                                                   const masrc::pcg::PcgParams& p) {
  return {to_mat(store.value(p.d2w_w1)), to_mat(store.value(p.d2w_w2)),
          to_mat(store.value(p.w2d_w1)), to_mat(store.value(p.w2d_w2)),
          block_params(store, p.stages[0]), block_params(store, p.stages[1])};
}

// Perturb every slot with noise so gradient checks do not sit on the
// symmetric initial point (gamma = 1, beta = 0, zero biases).
inline void jitter(masrc::ParamStore<double>& store, masrc::Rng& rng, double scale = 0.1) {
  for (masrc::SlotId id = 0; id < store.slot_count(); ++id)
    for (auto& v : store.value(id).values()) v += scale * rng.uniform(-1.0, 1.0);
}

// Component-level checks: entries whose gradient is tiny compared with the
// finite-difference truncation error are compared on absolute error 1e-6.
inline masrc::GradCheckOptions component_check() {
  masrc::GradCheckOptions o;
  o.denominator_floor = 1e-2;
  return o;
}

}  // namespace testing_util
