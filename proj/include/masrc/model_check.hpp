#pragma once

// Finite-difference verification of the full model: BCE of one random
// window against analytic gradients over every registered slot.

#include <cstdint>
#include <vector>

#include "masrc/grad_check.hpp"
#include "masrc/model.hpp"

namespace masrc {

struct ModelCheckOptions {
  ModelConfig model;
  std::size_t dim = 8;
  GradCheckOptions check{.max_entries_per_slot = 64};
};

struct ModelCheckResult {
  std::uint64_t seed = 0;
  GradCheckReport report;
};

inline ModelCheckResult check_model_gradients(const ModelCheckOptions& opt, std::uint64_t seed) {
  const Model model(opt.model, opt.dim, opt.dim);
  ParamStore<double> params = model.init_params<double>(seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  Tensor<double> entity = Tensor<double>::matrix(opt.model.window, opt.dim);
  Tensor<double> place = Tensor<double>::matrix(opt.model.window, opt.dim);
  for (auto& v : entity.values()) v = rng.normal();
  for (auto& v : place.values()) v = rng.normal();
  const double target = static_cast<double>(rng.below(2));
  auto f = [&](const ParamStore<double>& s, GradBuffer<double>* g, KinkTrace* t) {
    return model.loss(s, entity, place, target, g, t);
  };
  GradCheckOptions check = opt.check;
  check.sample_seed = seed;
  return {seed, grad_check(f, params, check)};
}

}  // namespace masrc
