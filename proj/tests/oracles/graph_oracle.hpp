#pragma once

// Straight-from-the-equations reference for the relation graphs. Shares no
// code with the library: plain nested vectors, naive loops, brute-force
// selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

inline Mat cosine_all(const Mat& x) {
  Mat s = zeros(x.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) s[i][j] = i == j ? 1.0 : cosine(x[i], x[j]);
  return s;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// y = W x for a d x d matrix W stored row-major as rows.
inline std::vector<double> apply(const Mat& w, const std::vector<double>& x) {
  std::vector<double> y(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) y[i] = dot(w[i], x);
  return y;
}

// Column j is kept in row i iff fewer than k other columns beat it, where
// "beat" means larger similarity, or equal similarity and smaller index.
inline Mat topk_edges(const Mat& s, std::size_t k) {
  const std::size_t t = s.size();
  Mat e = zeros(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      if (j == i) continue;
      std::size_t ahead = 0;
      for (std::size_t l = 0; l < t; ++l) {
        if (l == i || l == j) continue;
        if (s[i][l] > s[i][j] || (s[i][l] == s[i][j] && l < j)) ++ahead;
      }
      if (ahead < k) e[i][j] = s[i][j];
    }
  return e;
}

inline Mat normalized_adjacency(const Mat& e) {
  const std::size_t t = e.size();
  Mat a = zeros(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const double w = std::max(std::max(e[i][j], 0.0), std::max(e[j][i], 0.0));
      a[i][j] = w + (i == j ? 1.0 : 0.0);
    }
  std::vector<double> deg(t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) deg[i] += a[i][j];
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) a[i][j] /= std::sqrt(deg[i] * deg[j]);
  return a;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v / d;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean) / d;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = gamma[j] * (x[i][j] - mean) / std::sqrt(var + 1e-5) + beta[j];
  }
  return y;
}

struct BlockParams {
  Mat weight;
  std::vector<double> gamma, beta;
};

// LN(X + relu(A X W))
inline Mat residual_block(const Mat& x, const Mat& a, const BlockParams& p) {
  Mat h = mul(mul(a, x), p.weight);
  Mat z = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) z[i][j] += std::max(h[i][j], 0.0);
  return layer_norm(z, p.gamma, p.beta);
}

inline Mat long_range(const Mat& x, std::size_t k, const BlockParams& l1, const BlockParams& l2) {
  const Mat a = normalized_adjacency(topk_edges(cosine_all(x), k));
  return residual_block(residual_block(x, a, l1), a, l2);
}

struct Partition {
  std::vector<int> counts;
  std::vector<bool> wide;
  std::vector<long> affiliation;  // -1 for wide shots
};

inline Partition partition(const Mat& x) {
  const Mat s = cosine_all(x);
  const std::size_t t = s.size();
  double mean = 0.0;
  for (const auto& row : s)
    for (double v : row) mean += v;
  mean /= static_cast<double>(t * t);
  Partition p;
  p.counts.assign(t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) p.counts[i] += s[i][j] > mean ? 1 : 0;

  p.wide.assign(t, false);
  bool any = false;
  for (std::size_t i = 0; i < t; ++i) {
    const long left = i == 0 ? std::numeric_limits<long>::min() : p.counts[i - 1];
    const long right = i + 1 == t ? std::numeric_limits<long>::min() : p.counts[i + 1];
    if (p.counts[i] > left && p.counts[i] > right) p.wide[i] = any = true;
  }
  if (!any) {
    int best = p.counts[0];
    for (int c : p.counts) best = std::max(best, c);
    for (std::size_t i = 0; i < t; ++i)
      if (p.counts[i] == best) {
        p.wide[i] = true;
        break;
      }
  }

  p.affiliation.assign(t, -1);
  for (std::size_t i = 0; i < t; ++i) {
    if (p.wide[i]) continue;
    double best_score = -std::numeric_limits<double>::infinity();
    long best = -1;
    for (std::size_t j = 0; j < t; ++j) {
      if (!p.wide[j]) continue;
      const double dist = std::abs(static_cast<double>(i) - static_cast<double>(j));
      const double score = s[i][j] + 1.0 / dist;
      bool take = score > best_score;
      if (score == best_score) {
        const double best_dist = std::abs(static_cast<double>(i) - static_cast<double>(best));
        take = dist < best_dist;  // equal distance keeps the earlier (smaller) index
      }
      if (take) {
        best_score = score;
        best = static_cast<long>(j);
      }
    }
    p.affiliation[i] = best;
  }
  return p;
}

inline Mat softmax_rows(const Mat& e) {
  Mat p = zeros(e.size(), e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : e[i]) peak = std::max(peak, v);
    if (std::isinf(peak)) continue;
    double total = 0.0;
    for (double v : e[i]) total += std::isinf(v) ? 0.0 : std::exp(v - peak);
    for (std::size_t j = 0; j < e.size(); ++j)
      p[i][j] = std::isinf(e[i][j]) ? 0.0 : std::exp(e[i][j] - peak) / total;
  }
  return p;
}

struct ShortRangeParams {
  Mat d2w_w1, d2w_w2, w2d_w1, w2d_w2;
  BlockParams stage1, stage2;
};

struct ShortRangeTrace {
  Partition partition;
  Mat d2w_softmax, w2d_softmax, d2w_features, output;
};

inline ShortRangeTrace short_range(const Mat& x, const ShortRangeParams& p) {
  ShortRangeTrace tr;
  tr.partition = partition(x);
  const std::size_t t = x.size();
  const double ninf = -std::numeric_limits<double>::infinity();

  Mat e1(t, std::vector<double>(t, ninf));
  for (std::size_t i = 0; i < t; ++i) {
    const long j = tr.partition.affiliation[i];
    if (j < 0) continue;
    e1[j][i] = dot(apply(p.d2w_w1, x[j]), apply(p.d2w_w2, x[i]));
  }
  tr.d2w_softmax = softmax_rows(e1);
  tr.d2w_features = residual_block(x, tr.d2w_softmax, p.stage1);

  const Mat& x1 = tr.d2w_features;
  Mat e2(t, std::vector<double>(t, ninf));
  for (std::size_t i = 0; i < t; ++i) {
    const long j = tr.partition.affiliation[i];
    if (j < 0) continue;
    e2[i][j] = dot(apply(p.w2d_w1, x1[i]), apply(p.w2d_w2, x1[j]));
  }
  tr.w2d_softmax = softmax_rows(e2);
  tr.output = residual_block(x1, tr.w2d_softmax, p.stage2);
  return tr;
}

}  // namespace oracle
