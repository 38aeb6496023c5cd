#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "masrc/data_io.hpp"
#include "masrc/error.hpp"
#include "masrc/metrics.hpp"
#include "masrc/model.hpp"
#include "masrc/param_store.hpp"
#include "masrc/random.hpp"

namespace masrc {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear ramp 0 -> peak over warmup_steps, then
// cosine decay to 0 at total_steps.

inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
  const std::size_t warmup = std::max<std::size_t>(warmup_steps, 1);
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps <= warmup) return peak;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct OptimizerState {
  std::vector<Tensor<S>> first_moment;
  std::vector<Tensor<S>> second_moment;
  std::uint64_t step = 0;

  explicit OptimizerState(const ParamStore<S>& store)
      : first_moment(store.make_grad_buffer()), second_moment(store.make_grad_buffer()) {}
};

// Uses the gradients held in the store. Rejects the whole step, without
// touching anything, if any gradient is non-finite.
template <typename S>
void adam_step(ParamStore<S>& store, OptimizerState<S>& state, double lr, const AdamConfig& cfg = {}) {
  for (SlotId id = 0; id < store.slot_count(); ++id)
    if (!all_finite(store.grad(id)))
      throw NumericError("adam_step: non-finite gradient in slot '" + store.name(id) + "'");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  for (SlotId id = 0; id < store.slot_count(); ++id) {
    auto& w = store.value(id);
    const auto& g = store.grad(id);
    auto& m = state.first_moment[id];
    auto& v = state.second_moment[id];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (S{1} - b1) * g[i];
      v[i] = b2 * v[i] + (S{1} - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      w[i] = static_cast<S>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration

enum class Regime { supervised, self_supervised, transfer };

NLOHMANN_JSON_SERIALIZE_ENUM(Regime, {{Regime::supervised, "supervised"},
                                      {Regime::self_supervised, "self_supervised"},
                                      {Regime::transfer, "transfer"}})

inline Regime parse_regime(const std::string& s) {
  if (s == "supervised") return Regime::supervised;
  if (s == "self_supervised") return Regime::self_supervised;
  if (s == "transfer") return Regime::transfer;
  throw ValidationError("unknown regime '" + s + "' (expected supervised, self_supervised or transfer)");
}

struct TrainConfig {
  Regime regime = Regime::supervised;
  ModelConfig model;
  std::size_t batch_size = 64;
  // Supervised and self-supervised runs.
  double peak_lr = 1e-4;
  // Transfer runs: pre-training and fine-tuning rates.
  double pretrain_lr = 1e-3;
  double fine_tune_lr = 1e-5;
  std::size_t epochs = 20;
  // Transfer pre-training epochs; 0 means the same as epochs.
  std::size_t pretrain_epochs = 0;
  std::size_t warmup_epochs = 1;
  // Early stopping on validation AP.
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  // 0 reads MASRC_THREADS, defaulting to 1.
  std::size_t threads = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, regime, model, batch_size, peak_lr,
                                                pretrain_lr, fine_tune_lr, epochs, pretrain_epochs,
                                                warmup_epochs, patience, seed, threshold, threads)

inline void validate(const TrainConfig& c) {
  validate(c.model);
  require(c.batch_size >= 1, "batch_size must be at least 1");
  require(c.epochs >= 1, "epochs must be at least 1");
  require(c.peak_lr > 0.0 && c.pretrain_lr > 0.0 && c.fine_tune_lr > 0.0,
          "learning rates must be positive");
  require(c.warmup_epochs >= 1, "warmup_epochs must be at least 1");
}

// MASRC_THREADS caps the worker count. A request of 0 means use the cap,
// or one worker when it is unset.
inline std::size_t resolve_threads(std::size_t requested) {
  std::size_t cap = 0;
  if (const char* env = std::getenv("MASRC_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) cap = static_cast<std::size_t>(v);
  }
  if (!requested) return cap ? cap : 1;
  return cap ? std::min(requested, cap) : requested;
}

// ---------------------------------------------------------------------------
// Parallel helpers. Work is split into contiguous index ranges; results are
// always combined in index order so outputs do not depend on worker count.

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / threads; i < (w + 1) * n / threads; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

enum class Target { labels, pseudo_labels };

inline const Labels& targets_of(const ShotSequence& seq, Target target) {
  const auto& l = target == Target::labels ? seq.labels : seq.pseudo_labels;
  if (!l)
    throw ValidationError("video '" + seq.video_id + "' has no " +
                          (target == Target::labels ? "labels" : "pseudo labels"));
  return *l;
}

template <typename S>
std::vector<double> predict_video(const Model& model, const ParamStore<S>& params,
                                  const ShotSequence& seq, std::size_t threads = 1) {
  std::vector<double> scores(seq.num_shots());
  parallel_for(seq.num_shots(), threads, [&](std::size_t t) {
    scores[t] = static_cast<double>(model.predict(params, cut_window(seq, t, model.config().window)));
  });
  return scores;
}

struct EvalResult {
  metrics::SplitMetrics metrics;
  double loss = 0.0;
  std::vector<std::vector<double>> scores;
};

template <typename S>
EvalResult evaluate(const Model& model, const ParamStore<S>& params,
                    const std::vector<ShotSequence>& videos, Target target, double threshold,
                    std::size_t threads = 1) {
  EvalResult r;
  std::vector<metrics::VideoScores> vs;
  double loss = 0.0;
  std::size_t count = 0;
  for (const auto& seq : videos) {
    auto scores = predict_video(model, params, seq, threads);
    const auto& labels = targets_of(seq, target);
    for (std::size_t t = 0; t < scores.size(); ++t) {
      loss += bce_loss(scores[t], static_cast<double>(labels[t]));
      ++count;
    }
    vs.push_back({seq.video_id, scores, labels});
    r.scores.push_back(std::move(scores));
  }
  r.metrics = metrics::evaluate_split(vs, threshold);
  r.loss = loss / static_cast<double>(count);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::string phase;
  std::size_t epoch = 0;
  std::string split;
  double ap = 0.0, miou = 0.0, f1 = 0.0, loss = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return nlohmann::json{{"phase", e.phase}, {"epoch", e.epoch}, {"split", e.split}, {"ap", e.ap},
                        {"miou", e.miou},   {"f1", e.f1},       {"loss", e.loss}};
}

struct TrainResult {
  ParamStore<float> params;
  std::vector<EpochLog> log;
  // Transfer runs: the selected pre-training checkpoint, and the parameters
  // the fine-tuning phase actually started from.
  std::optional<ParamStore<float>> pretrained;
  std::optional<ParamStore<float>> finetune_start;
  std::size_t best_epoch = 0;
  double best_val_ap = 0.0;
};

struct PhaseSpec {
  std::string name;
  Target target = Target::labels;
  double peak_lr = 1e-4;
  std::size_t epochs = 1;
};

struct PhaseOutcome {
  ParamStore<float> start;
  ParamStore<float> best;
  std::size_t best_epoch = 0;
  double best_ap = -1.0;
};

namespace detail {

struct SampleRef {
  std::size_t video = 0;
  std::size_t shot = 0;
};

inline PhaseOutcome run_phase(const Model& model, ParamStore<float> params,
                              const std::vector<ShotSequence>& train_set,
                              const std::vector<ShotSequence>& val_set, const TrainConfig& cfg,
                              const PhaseSpec& phase, std::uint64_t shuffle_seed,
                              std::vector<EpochLog>& log) {
  const std::size_t threads = resolve_threads(cfg.threads);
  std::vector<SampleRef> samples;
  for (std::size_t v = 0; v < train_set.size(); ++v)
    for (std::size_t t = 0; t < train_set[v].num_shots(); ++t) samples.push_back({v, t});
  require(!samples.empty(), "training set has no shots");

  const std::size_t steps_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * phase.epochs;
  const std::size_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  // Validation and model selection use ground truth when the validation
  // videos carry it.
  const bool val_has_labels = std::all_of(val_set.begin(), val_set.end(),
                                          [](const ShotSequence& s) { return s.labels.has_value(); });
  const Target val_target = val_has_labels ? Target::labels : phase.target;

  OptimizerState<float> opt(params);
  Rng shuffle_rng(shuffle_seed);
  std::vector<GradBuffer<float>> window_grads(std::min(cfg.batch_size, samples.size()),
                                              params.make_grad_buffer());
  std::vector<float> window_loss(window_grads.size());
  std::vector<float> window_prob(window_grads.size());

  PhaseOutcome out{params, params, 0, -1.0};
  std::size_t stale = 0, step = 0;
  for (std::size_t epoch = 1; epoch <= phase.epochs; ++epoch) {
    shuffle_rng.shuffle(samples);
    std::vector<std::vector<double>> online(train_set.size());
    for (std::size_t v = 0; v < train_set.size(); ++v) online[v].assign(train_set[v].num_shots(), 0.0);
    double epoch_loss = 0.0;

    for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size, ++step) {
      const std::size_t batch = std::min(cfg.batch_size, samples.size() - begin);
      parallel_for(batch, threads, [&](std::size_t i) {
        const auto& ref = samples[begin + i];
        const auto& seq = train_set[ref.video];
        const WindowSample w = cut_window(seq, ref.shot, model.config().window);
        const float y = static_cast<float>(targets_of(seq, phase.target)[ref.shot]);
        auto& g = window_grads[i];
        for (auto& t : g) t.fill(0.0f);
        window_loss[i] = model.loss(params, w.entity, w.place, y, &g, nullptr, &window_prob[i]);
      });
      params.zero_grad();
      for (std::size_t i = 0; i < batch; ++i) {
        for (SlotId id = 0; id < params.slot_count(); ++id) params.grad(id) += window_grads[i][id];
        epoch_loss += window_loss[i];
        online[samples[begin + i].video][samples[begin + i].shot] = window_prob[i];
      }
      const float inv = 1.0f / static_cast<float>(batch);
      for (auto& g : params.grads())
        for (auto& x : g.values()) x *= inv;
      adam_step(params, opt, lr_at(step, total_steps, warmup_steps, phase.peak_lr));
    }

    std::vector<metrics::VideoScores> train_scores;
    for (std::size_t v = 0; v < train_set.size(); ++v)
      train_scores.push_back({train_set[v].video_id, online[v], targets_of(train_set[v], phase.target)});
    const auto tm = metrics::evaluate_split(train_scores, cfg.threshold);
    log.push_back({phase.name, epoch, "train", tm.ap, tm.miou, tm.f1,
                   epoch_loss / static_cast<double>(samples.size())});

    const auto& selection_set = val_set.empty() ? train_set : val_set;
    const auto ev = evaluate(model, params, selection_set, val_set.empty() ? phase.target : val_target,
                             cfg.threshold, threads);
    log.push_back({phase.name, epoch, val_set.empty() ? "train_eval" : "val", ev.metrics.ap,
                   ev.metrics.miou, ev.metrics.f1, ev.loss});

    if (ev.metrics.ap > out.best_ap) {
      out.best_ap = ev.metrics.ap;
      out.best_epoch = epoch;
      out.best = params;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return out;
}

inline bool all_have(const std::vector<ShotSequence>& videos, Target t) {
  return std::all_of(videos.begin(), videos.end(), [&](const ShotSequence& s) {
    return t == Target::labels ? s.labels.has_value() : s.pseudo_labels.has_value();
  });
}

}  // namespace detail

inline TrainResult train(const std::vector<ShotSequence>& train_set,
                         const std::vector<ShotSequence>& val_set, const TrainConfig& cfg) {
  validate(cfg);
  require(!train_set.empty(), "training set is empty");
  const auto dim_e = train_set.front().dim_entity(), dim_p = train_set.front().dim_place();
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      require(s.dim_entity() == dim_e && s.dim_place() == dim_p,
              "video '" + s.video_id + "' has feature dims that differ from the first training video");

  const bool need_labels = cfg.regime != Regime::self_supervised;
  const bool need_pseudo = cfg.regime != Regime::supervised;
  if (need_labels && !detail::all_have(train_set, Target::labels))
    throw ValidationError("regime requires ground-truth labels on every training video");
  if (need_pseudo && !detail::all_have(train_set, Target::pseudo_labels))
    throw ValidationError("regime requires pseudo labels on every training video");

  const Model model(cfg.model, dim_e, dim_p);
  TrainResult result;
  ParamStore<float> params = model.init_params<float>(cfg.seed);

  auto finish = [&](PhaseOutcome o) {
    result.params = std::move(o.best);
    result.best_epoch = o.best_epoch;
    result.best_val_ap = o.best_ap;
  };

  switch (cfg.regime) {
    case Regime::supervised:
      finish(detail::run_phase(model, std::move(params), train_set, val_set, cfg,
                               {"supervised", Target::labels, cfg.peak_lr, cfg.epochs},
                               cfg.seed ^ 0x5eedu, result.log));
      break;
    case Regime::self_supervised:
      finish(detail::run_phase(model, std::move(params), train_set, val_set, cfg,
                               {"self_supervised", Target::pseudo_labels, cfg.peak_lr, cfg.epochs},
                               cfg.seed ^ 0x5eedu, result.log));
      break;
    case Regime::transfer: {
      const std::size_t pre_epochs = cfg.pretrain_epochs ? cfg.pretrain_epochs : cfg.epochs;
      auto pre = detail::run_phase(model, std::move(params), train_set, val_set, cfg,
                                   {"pretrain", Target::pseudo_labels, cfg.pretrain_lr, pre_epochs},
                                   cfg.seed ^ 0x5eedu, result.log);
      result.pretrained = pre.best;
      auto fine = detail::run_phase(model, std::move(pre.best), train_set, val_set, cfg,
                                    {"finetune", Target::labels, cfg.fine_tune_lr, cfg.epochs},
                                    cfg.seed ^ 0xf17eu, result.log);
      result.finetune_start = fine.start;
      finish(std::move(fine));
      break;
    }
  }
  return result;
}

}  // namespace masrc
