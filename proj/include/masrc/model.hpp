#pragma once

// Full pipeline: per-modality relation graphs, context similarity, CNN
// detector. Which graphs run is configurable to cover the ablation grid.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "masrc/data_io.hpp"
#include "masrc/ejg.hpp"
#include "masrc/kernel.hpp"
#include "masrc/mcd.hpp"
#include "masrc/param_store.hpp"
#include "masrc/pcg.hpp"

namespace masrc {

enum class Modality { entity, place, both };

NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {{Modality::entity, "entity"},
                                        {Modality::place, "place"},
                                        {Modality::both, "both"}})

inline Modality parse_modality(const std::string& s) {
  if (s == "entity") return Modality::entity;
  if (s == "place") return Modality::place;
  if (s == "both") return Modality::both;
  throw ValidationError("unknown modality '" + s + "' (expected entity, place or both)");
}

struct ModelConfig {
  std::size_t window = 14;
  std::size_t top_k = 4;
  Modality modality = Modality::both;
  // Long-range (entity jumping) graph on/off.
  bool eld = true;
  // Short-range (place continuity) graph on/off.
  bool psd = true;
  // Route entity features through the short-range graph and place features
  // through the long-range graph instead.
  bool swap_scales = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, window, top_k, modality, eld, psd,
                                                swap_scales)

inline void validate(const ModelConfig& c) {
  require(c.window >= 8 && c.window % 2 == 0,
          "window must be even and at least 8 (the detector needs a side of 4), got " +
              std::to_string(c.window));
  require(c.top_k >= 1 && c.top_k < c.window,
          "top_k must lie in [1, window-1], got " + std::to_string(c.top_k));
}

enum class GraphKind { none, long_range, short_range };

struct Branch {
  bool entity_source = true;
  GraphKind graph = GraphKind::none;
  std::optional<ejg::EjgParams> long_range;
  std::optional<pcg::PcgParams> short_range;
};

template <typename S>
struct BranchCache {
  Tensor<S> output;
  ejg::EldCache<S> eld;
  pcg::PsdCache<S> psd;
};

template <typename S>
struct ForwardCache {
  std::vector<BranchCache<S>> branches;
  Tensor<S> similarity;
  mcd::McdCache<S> detector;
  S logit{};
};

class Model {
 public:
  Model(ModelConfig config, std::size_t dim_entity, std::size_t dim_place)
      : config_(config), dim_entity_(dim_entity), dim_place_(dim_place) {
    validate(config_);
    require(dim_entity >= 2 && dim_place >= 2, "feature dims must be at least 2");
    ParamStore<float> layout;
    build(layout);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t dim_entity() const { return dim_entity_; }
  std::size_t dim_place() const { return dim_place_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const mcd::McdParams& detector() const { return detector_; }

  // Registered layout with no initialization (all zeros).
  template <typename S>
  ParamStore<S> make_layout() const {
    ParamStore<S> store;
    Model copy = *this;
    copy.build(store);
    return store;
  }

  template <typename S>
  ParamStore<S> init_params(std::uint64_t seed) const {
    ParamStore<S> store = make_layout<S>();
    Rng rng(seed);
    for (const auto& b : branches_) {
      if (b.long_range) b.long_range->init(store, rng);
      if (b.short_range) b.short_range->init(store, rng);
    }
    detector_.init(store, rng);
    return store;
  }

  std::string meta_json() const {
    nlohmann::json j;
    j["model"] = config_;
    j["dim_entity"] = dim_entity_;
    j["dim_place"] = dim_place_;
    return j.dump();
  }

  template <typename S>
  S forward_logit(const ParamStore<S>& store, const Tensor<S>& entity, const Tensor<S>& place,
                  ForwardCache<S>* cache = nullptr, KinkTrace* trace = nullptr) const {
    require(entity.rows() == config_.window && place.rows() == config_.window,
            "window has " + std::to_string(entity.rows()) + " rows, model expects " +
                std::to_string(config_.window));
    require(entity.cols() == dim_entity_ && place.cols() == dim_place_,
            "window feature dims " + std::to_string(entity.cols()) + "/" +
                std::to_string(place.cols()) + " do not match model dims " +
                std::to_string(dim_entity_) + "/" + std::to_string(dim_place_));
    ForwardCache<S> local;
    ForwardCache<S>& c = cache ? *cache : local;
    c.branches.assign(branches_.size(), {});
    Tensor<S> m;
    for (std::size_t bi = 0; bi < branches_.size(); ++bi) {
      const Branch& b = branches_[bi];
      const Tensor<S>& x = b.entity_source ? entity : place;
      auto& bc = c.branches[bi];
      switch (b.graph) {
        case GraphKind::none: bc.output = x; break;
        case GraphKind::long_range:
          bc.output = ejg::eld_forward(store, *b.long_range, x, config_.top_k, &bc.eld, trace);
          break;
        case GraphKind::short_range:
          bc.output = pcg::psd_forward(store, *b.short_range, x, &bc.psd, trace);
          break;
      }
      Tensor<S> term = mcd::context_term(bc.output);
      if (bi == 0) {
        m = std::move(term);
      } else {
        m += term;
      }
    }
    c.similarity = m;
    c.logit = mcd::encode_logit(store, detector_, m, &c.detector, trace);
    return c.logit;
  }

  template <typename S>
  S predict(const ParamStore<S>& store, const WindowSample& w) const {
    const S z = forward_logit(store, w.entity.cast<S>(), w.place.cast<S>());
    return clamp_probability(sigmoid(z));
  }

  // Accumulates d(loss)/d(params) for one window into grads.
  template <typename S>
  void backward(const ParamStore<S>& store, const ForwardCache<S>& c, S dlogit,
                GradBuffer<S>& grads) const {
    const Tensor<S> dm = mcd::encode_backward(store, detector_, c.detector, dlogit, grads);
    for (std::size_t bi = 0; bi < branches_.size(); ++bi) {
      const Branch& b = branches_[bi];
      const auto& bc = c.branches[bi];
      if (b.graph == GraphKind::none) continue;
      const Tensor<S> dx = mcd::context_term_backward(bc.output, dm);
      if (b.graph == GraphKind::long_range)
        ejg::eld_backward(store, *b.long_range, bc.eld, dx, grads);
      else
        pcg::psd_backward(store, *b.short_range, bc.psd, dx, grads);
    }
  }

  // BCE of one window against target; fills grads when non-null.
  template <typename S>
  S loss(const ParamStore<S>& store, const Tensor<S>& entity, const Tensor<S>& place, S target,
         GradBuffer<S>* grads, KinkTrace* trace = nullptr, S* probability = nullptr) const {
    ForwardCache<S> cache;
    const S z = forward_logit(store, entity, place, grads ? &cache : nullptr, trace);
    const S p = clamp_probability(sigmoid(z));
    if (probability) *probability = p;
    if (grads) backward(store, cache, bce_logit_grad(z, target), *grads);
    return bce_with_logit(z, target, trace);
  }

 private:
  template <typename S>
  void build(ParamStore<S>& store) {
    branches_.clear();
    const bool use_entity = config_.modality != Modality::place;
    const bool use_place = config_.modality != Modality::entity;
    const GraphKind entity_graph = config_.swap_scales
                                       ? (config_.psd ? GraphKind::short_range : GraphKind::none)
                                       : (config_.eld ? GraphKind::long_range : GraphKind::none);
    const GraphKind place_graph = config_.swap_scales
                                      ? (config_.eld ? GraphKind::long_range : GraphKind::none)
                                      : (config_.psd ? GraphKind::short_range : GraphKind::none);
    auto add_branch = [&](bool entity_source, GraphKind kind) {
      Branch b;
      b.entity_source = entity_source;
      b.graph = kind;
      const std::size_t dim = entity_source ? dim_entity_ : dim_place_;
      if (kind == GraphKind::long_range) b.long_range = ejg::EjgParams::add(store, dim);
      if (kind == GraphKind::short_range) b.short_range = pcg::PcgParams::add(store, dim);
      branches_.push_back(std::move(b));
    };
    if (use_entity) add_branch(true, entity_graph);
    if (use_place) add_branch(false, place_graph);
    detector_ = mcd::McdParams::add(store, config_.window / 2);
  }

  ModelConfig config_;
  std::size_t dim_entity_;
  std::size_t dim_place_;
  std::vector<Branch> branches_;
  mcd::McdParams detector_;
};

}  // namespace masrc
