#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "masrc/data_io.hpp"
#include "masrc/error.hpp"
#include "masrc/random.hpp"

namespace masrc {

// Synthetic videos with planted scene structure. Each scene has one place
// centroid and a small pool of recurring entities.
struct SynthConfig {
  std::size_t num_videos = 20;
  std::size_t scenes_per_video = 8;
  std::size_t min_shots_per_scene = 4;
  std::size_t max_shots_per_scene = 10;
  std::size_t dim_entity = 16;
  std::size_t dim_place = 16;
  // Ratio of noise norm to centroid norm (centroids are unit length).
  double place_noise = 0.8;
  double entity_noise = 0.8;
  std::size_t entity_pool_size = 2;
  // Probability a shot shows one of its scene's recurring entities; other
  // shots get a one-off random entity.
  double entity_recurrence = 0.8;
  // Probability each interior pseudo boundary is shifted by one shot.
  double pseudo_label_jitter = 0.3;
  std::string id_prefix = "synth";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, num_videos, scenes_per_video,
                                                min_shots_per_scene, max_shots_per_scene,
                                                dim_entity, dim_place, place_noise, entity_noise,
                                                entity_pool_size, entity_recurrence,
                                                pseudo_label_jitter, id_prefix)

inline void validate(const SynthConfig& c) {
  require(c.num_videos >= 1, "synth config: num_videos must be at least 1");
  require(c.scenes_per_video >= 1, "synth config: scenes_per_video must be at least 1");
  require(c.min_shots_per_scene >= 1 && c.min_shots_per_scene <= c.max_shots_per_scene,
          "synth config: need 1 <= min_shots_per_scene <= max_shots_per_scene");
  require(c.dim_entity >= 2 && c.dim_place >= 2, "synth config: feature dims must be at least 2");
  require(c.place_noise >= 0.0 && c.entity_noise >= 0.0, "synth config: noise must be >= 0");
  require(c.entity_pool_size >= 1, "synth config: entity_pool_size must be at least 1");
  require(c.entity_recurrence >= 0.0 && c.entity_recurrence <= 1.0,
          "synth config: entity_recurrence must lie in [0, 1]");
  require(c.pseudo_label_jitter >= 0.0 && c.pseudo_label_jitter <= 1.0,
          "synth config: pseudo_label_jitter must lie in [0, 1]");
}

namespace detail {

inline std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// centroid + isotropic noise with expected norm ~= noise.
inline void emit_row(std::span<float> dst, const std::vector<double>& centroid, double noise,
                     Rng& rng) {
  const double sigma = noise / std::sqrt(static_cast<double>(centroid.size()));
  for (std::size_t k = 0; k < centroid.size(); ++k)
    dst[k] = static_cast<float>(centroid[k] + (sigma > 0.0 ? sigma * rng.normal() : 0.0));
}

}  // namespace detail

inline ShotSequence synth_video(const SynthConfig& c, Rng& rng, std::string video_id) {
  std::vector<std::size_t> scene_lengths(c.scenes_per_video);
  for (auto& len : scene_lengths)
    len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(c.min_shots_per_scene),
                                               static_cast<std::int64_t>(c.max_shots_per_scene)));
  std::size_t n = 0;
  for (auto len : scene_lengths) n += len;

  ShotSequence seq;
  seq.video_id = std::move(video_id);
  seq.entity = Tensor<float>::matrix(n, c.dim_entity);
  seq.place = Tensor<float>::matrix(n, c.dim_place);
  Labels labels(n, 0);

  std::size_t shot = 0;
  for (auto len : scene_lengths) {
    const auto place = detail::random_unit(c.dim_place, rng);
    std::vector<std::vector<double>> pool;
    for (std::size_t p = 0; p < c.entity_pool_size; ++p)
      pool.push_back(detail::random_unit(c.dim_entity, rng));
    for (std::size_t s = 0; s < len; ++s, ++shot) {
      detail::emit_row(seq.place.row(shot), place, c.place_noise, rng);
      if (rng.uniform() < c.entity_recurrence) {
        detail::emit_row(seq.entity.row(shot), pool[rng.below(pool.size())], c.entity_noise, rng);
      } else {
        detail::emit_row(seq.entity.row(shot), detail::random_unit(c.dim_entity, rng),
                         c.entity_noise, rng);
      }
    }
    labels[shot - 1] = 1;
  }

  Labels pseudo = labels;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (labels[i] != 1 || rng.uniform() >= c.pseudo_label_jitter) continue;
    const std::size_t target = rng.below(2) ? i + 1 : (i == 0 ? i + 1 : i - 1);
    if (target + 1 < n && pseudo[target] == 0 && pseudo[i] == 1) {
      pseudo[i] = 0;
      pseudo[target] = 1;
    }
  }
  pseudo.back() = 1;

  seq.labels = std::move(labels);
  seq.pseudo_labels = std::move(pseudo);
  return seq;
}

// Pure function of (config, seed).
inline std::vector<ShotSequence> synth_generate(const SynthConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  std::vector<ShotSequence> out;
  out.reserve(c.num_videos);
  for (std::size_t v = 0; v < c.num_videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "_%04zu", v);
    out.push_back(synth_video(c, rng, c.id_prefix + id));
  }
  return out;
}

inline double boundary_rate(const std::vector<ShotSequence>& videos) {
  std::size_t shots = 0, boundaries = 0;
  for (const auto& v : videos) {
    shots += v.num_shots();
    if (v.labels)
      for (auto l : *v.labels) boundaries += static_cast<std::size_t>(l);
  }
  return shots ? static_cast<double>(boundaries) / static_cast<double>(shots) : 0.0;
}

}  // namespace masrc
