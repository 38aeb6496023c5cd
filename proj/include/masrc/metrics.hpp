#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "masrc/error.hpp"

namespace masrc::metrics {

// Average precision: sum over distinct score thresholds (descending) of
// (recall gain) x (precision at that threshold). Tied scores enter as one
// block, so all-equal scores give AP equal to the positive rate; without
// ties this is the mean of precision at each positive's rank.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "average_precision: scores and labels differ in length");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  require(positives > 0, "average_precision: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t seen = 0, tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, block_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      block_tp += labels[order[j]] == 1;
      ++j;
    }
    seen += j - i;
    tp += block_tp;
    if (block_tp)
      ap += static_cast<double>(block_tp) / static_cast<double>(positives) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

// Inclusive [start, end] shot intervals covering 0..N-1.
struct SceneSegmentation {
  std::vector<std::pair<std::size_t, std::size_t>> scenes;

  std::size_t num_shots() const { return scenes.empty() ? 0 : scenes.back().second + 1; }
  bool operator==(const SceneSegmentation&) const = default;
};

// The last shot always closes the final scene.
inline SceneSegmentation boundaries_to_scenes(const std::vector<int>& labels) {
  require(!labels.empty(), "boundaries_to_scenes: empty label list");
  SceneSegmentation seg;
  std::size_t start = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1 || i + 1 == labels.size()) {
      seg.scenes.emplace_back(start, i);
      start = i + 1;
    }
  return seg;
}

inline std::vector<int> scenes_to_boundaries(const SceneSegmentation& seg) {
  std::vector<int> labels(seg.num_shots(), 0);
  for (const auto& [s, e] : seg.scenes) labels[e] = 1;
  return labels;
}

inline double interval_iou(std::pair<std::size_t, std::size_t> a, std::pair<std::size_t, std::size_t> b) {
  const std::size_t lo = std::max(a.first, b.first), hi = std::min(a.second, b.second);
  const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
  const double uni = static_cast<double>(a.second - a.first + 1 + b.second - b.first + 1) - inter;
  return inter / uni;
}

enum class MiouMode { symmetric, ground_truth_only };

namespace detail {
inline double directional_miou(const SceneSegmentation& from, const SceneSegmentation& to) {
  double total = 0.0;
  for (const auto& s : from.scenes) {
    double best = 0.0;
    for (const auto& o : to.scenes) best = std::max(best, interval_iou(s, o));
    total += best;
  }
  return total / static_cast<double>(from.scenes.size());
}
}  // namespace detail

// Symmetric: 0.5 * (mean over gt of best IoU + mean over pred of best IoU).
inline double miou(const SceneSegmentation& pred, const SceneSegmentation& gt,
                   MiouMode mode = MiouMode::symmetric) {
  require(!pred.scenes.empty() && !gt.scenes.empty(), "miou: empty segmentation");
  require(pred.num_shots() == gt.num_shots(),
          "miou: segmentations cover " + std::to_string(pred.num_shots()) + " and " +
              std::to_string(gt.num_shots()) + " shots");
  const double gt_side = detail::directional_miou(gt, pred);
  if (mode == MiouMode::ground_truth_only) return gt_side;
  return 0.5 * (gt_side + detail::directional_miou(pred, gt));
}

inline std::vector<int> binarize(const std::vector<double>& scores, double threshold) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
  return out;
}

inline double f1_at(const std::vector<double>& scores, const std::vector<int>& labels,
                    double threshold = 0.5) {
  require(scores.size() == labels.size(), "f1_at: scores and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] != 1) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

struct VideoScores {
  std::string video_id;
  std::vector<double> scores;
  std::vector<int> labels;
};

struct VideoMetrics {
  std::string video_id;
  double ap = 0.0, miou = 0.0, f1 = 0.0;
};

struct SplitMetrics {
  double ap = 0.0;           // pooled over all shots of the split
  double miou = 0.0;         // mean over videos
  double f1 = 0.0;           // pooled
  double ap_video_mean = 0.0;
  std::vector<VideoMetrics> videos;
};

inline SplitMetrics evaluate_split(const std::vector<VideoScores>& videos, double threshold = 0.5,
                                   MiouMode mode = MiouMode::symmetric) {
  require(!videos.empty(), "evaluate_split: no videos");
  SplitMetrics m;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (const auto& v : videos) {
    all_scores.insert(all_scores.end(), v.scores.begin(), v.scores.end());
    all_labels.insert(all_labels.end(), v.labels.begin(), v.labels.end());
    VideoMetrics vm;
    vm.video_id = v.video_id;
    vm.ap = average_precision(v.scores, v.labels);
    vm.f1 = f1_at(v.scores, v.labels, threshold);
    vm.miou = miou(boundaries_to_scenes(binarize(v.scores, threshold)), boundaries_to_scenes(v.labels), mode);
    m.miou += vm.miou;
    m.ap_video_mean += vm.ap;
    m.videos.push_back(std::move(vm));
  }
  m.miou /= static_cast<double>(videos.size());
  m.ap_video_mean /= static_cast<double>(videos.size());
  m.ap = average_precision(all_scores, all_labels);
  m.f1 = f1_at(all_scores, all_labels, threshold);
  return m;
}

}  // namespace masrc::metrics
