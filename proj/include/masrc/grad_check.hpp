#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "masrc/error.hpp"
#include "masrc/kernel.hpp"
#include "masrc/param_store.hpp"
#include "masrc/random.hpp"

namespace masrc {

struct GradCheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-4;
  // Magnitudes below this are compared on an absolute scale.
  double denominator_floor = 1e-6;
  // Entries that flip a kink decision recorded this close to the kink are
  // excluded; other flips are absorbed by replaying the recorded decisions.
  double near_kink = 1e-6;
  // 0 checks every entry; otherwise larger slots are checked on a seeded
  // sample of this many entries (plus the directional check below).
  std::size_t max_entries_per_slot = 0;
  std::uint64_t sample_seed = 0;
  // Also compare along one random unit direction spanning the whole slot.
  bool directional = true;
};

struct SlotCheck {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  // Entries whose +-eps perturbation flips a relu/pool/clamp decision lying
  // within near_kink of its kink.
  std::size_t excluded = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool directional_checked = false;
  double directional_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  double value = 0.0;
  std::vector<SlotCheck> slots;

  bool passed() const {
    return std::all_of(slots.begin(), slots.end(), [](const SlotCheck& s) { return s.passed; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& s : slots) m = std::max({m, s.max_rel_error, s.directional_rel_error});
    return m;
  }
  std::size_t checked() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.checked;
    return n;
  }
  std::size_t excluded() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.excluded;
    return n;
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Objective: double(const ParamStore<double>&, GradBuffer<double>* grads,
// KinkTrace* trace). When grads is non-null it must be filled with the
// analytic gradient (it arrives zeroed).
template <typename Objective>
GradCheckReport grad_check(Objective&& f, ParamStore<double>& params,
                           const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  GradBuffer<double> grads = params.make_grad_buffer();
  KinkTrace base;
  base.near_kink = opt.near_kink;
  report.value = f(std::as_const(params), &grads, &base);
  if (!std::isfinite(report.value)) throw NumericError("grad_check: objective is not finite");

  auto probe = [&](KinkTrace& trace) {
    trace = base.replay();
    const double v = f(std::as_const(params), nullptr, &trace);
    if (!std::isfinite(v)) throw NumericError("grad_check: objective not finite under perturbation");
    require(trace.complete(), "grad_check: perturbed pass took fewer decisions than recorded");
    return v;
  };

  for (SlotId id = 0; id < params.slot_count(); ++id) {
    SlotCheck sc;
    sc.name = params.name(id);
    auto& value = params.value(id);
    const auto& grad = grads[id];
    sc.size = value.size();

    std::vector<std::size_t> entries(value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opt.max_entries_per_slot && entries.size() > opt.max_entries_per_slot) {
      Rng rng(opt.sample_seed * 1000003u + id);
      rng.shuffle(entries);
      entries.resize(opt.max_entries_per_slot);
      std::sort(entries.begin(), entries.end());
    }

    for (auto e : entries) {
      const double orig = value[e];
      KinkTrace tp, tm;
      value[e] = orig + opt.eps;
      const double fp = probe(tp);
      value[e] = orig - opt.eps;
      const double fm = probe(tm);
      value[e] = orig;
      if (tp.flipped_near_kink || tm.flipped_near_kink) {
        ++sc.excluded;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double rel = relative_error(grad[e], numeric, opt.denominator_floor);
      ++sc.checked;
      if (rel > sc.max_rel_error) {
        sc.max_rel_error = rel;
        sc.worst_analytic = grad[e];
        sc.worst_numeric = numeric;
      }
    }

    if (opt.directional && value.size() > 1) {
      Rng rng(opt.sample_seed * 7919u + id + 17u);
      std::vector<double> dir(value.size());
      const double scale = 1.0 / std::sqrt(static_cast<double>(value.size()));
      for (auto& d : dir) d = (rng.below(2) ? 1.0 : -1.0) * scale;
      const std::vector<double> orig(value.values().begin(), value.values().end());
      double analytic = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) analytic += grad[i] * dir[i];
      KinkTrace tp, tm;
      for (std::size_t i = 0; i < dir.size(); ++i) value[i] = orig[i] + opt.eps * dir[i];
      const double fp = probe(tp);
      for (std::size_t i = 0; i < dir.size(); ++i) value[i] = orig[i] - opt.eps * dir[i];
      const double fm = probe(tm);
      std::copy(orig.begin(), orig.end(), value.values().begin());
      if (!tp.flipped_near_kink && !tm.flipped_near_kink) {
        sc.directional_checked = true;
        sc.directional_rel_error =
            relative_error(analytic, (fp - fm) / (2.0 * opt.eps), opt.denominator_floor);
      }
    }

    sc.passed = sc.checked > 0 && sc.max_rel_error < opt.tolerance &&
                sc.directional_rel_error < opt.tolerance;
    report.slots.push_back(std::move(sc));
  }
  return report;
}

}  // namespace masrc
