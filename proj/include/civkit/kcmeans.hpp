#pragma once

// Exact K-conditional-means: optimal weighted clustering of per-category
// means on the real line into at most k clusters.
//
// The objective over raw observations, sum_i (r_i - m(z_i))^2, differs from
// sum_g n_g (mu_g - m(g))^2 only by the within-category sum of squares, so the
// problem is solved on (n_g, mu_g) alone. An optimal clustering of points on a
// line is contiguous in sorted order, which gives the dynamic program
//
//   cost[j][m] = min_{m <= s <= j} cost[s-1][m-1] + segcost(s, j)
//
// over the sorted distinct means. Categories sharing a mean always share a
// cluster, so the fitted cluster values are strictly increasing.

#include "civkit/dataset.hpp"
#include "civkit/error.hpp"
#include "civkit/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace civkit {

template <class Scalar = double>
struct KCMeansModel {
  int k = 1;
  int k_effective = 1;
  /// Start position (in sorted-mean order of categories) of clusters 1..k_effective-1.
  std::vector<int> breaks;
  /// Cluster values, strictly increasing.
  VectorX<Scalar> alphas;
  /// Category code -> cluster index.
  std::vector<int> assignment;
  /// sum_g n_g (mu_g - alpha_{assignment(g)})^2
  Scalar objective = 0;

  int num_categories() const { return static_cast<int>(assignment.size()); }

  Scalar predict(int code) const {
    if (code < 0 || code >= num_categories()) {
      throw DomainError("category code " + std::to_string(code) + " unknown to the model (G = " +
                        std::to_string(num_categories()) + ")");
    }
    return alphas[assignment[static_cast<size_t>(code)]];
  }
};

template <class Scalar>
Scalar predict(const KCMeansModel<Scalar>& model, int code) {
  return model.predict(code);
}

namespace detail {

// Sorted means with ties merged into a single weighted point.
template <class Scalar>
struct DistinctPoints {
  std::vector<Scalar> values;
  std::vector<Scalar> weights;
  /// first_category[p] = sorted position of the first category in point p; size D+1.
  std::vector<int> first_position;

  int size() const { return static_cast<int>(values.size()); }
};

template <class Scalar>
DistinctPoints<Scalar> distinct_points(const CategoryStats<Scalar>& stats) {
  DistinctPoints<Scalar> pts;
  const int g = stats.num_categories();
  for (int pos = 0; pos < g; ++pos) {
    const int code = stats.order[static_cast<size_t>(pos)];
    const Scalar mu = stats.means[code];
    const Scalar w = static_cast<Scalar>(stats.counts[static_cast<size_t>(code)]);
    if (pts.values.empty() || mu != pts.values.back()) {
      pts.values.push_back(mu);
      pts.weights.push_back(w);
      pts.first_position.push_back(pos);
    } else {
      pts.weights.back() += w;
    }
  }
  pts.first_position.push_back(g);
  return pts;
}

// O(1) weighted SSE of a run of sorted points from centered prefix sums.
template <class Scalar>
class SegmentCost {
 public:
  explicit SegmentCost(const DistinctPoints<Scalar>& pts) {
    const int d = pts.size();
    Scalar total_w = 0, total_wx = 0;
    for (int p = 0; p < d; ++p) {
      total_w += pts.weights[static_cast<size_t>(p)];
      total_wx += pts.weights[static_cast<size_t>(p)] * pts.values[static_cast<size_t>(p)];
    }
    const Scalar center = total_wx / total_w;
    w_.assign(static_cast<size_t>(d) + 1, Scalar(0));
    s1_.assign(static_cast<size_t>(d) + 1, Scalar(0));
    s2_.assign(static_cast<size_t>(d) + 1, Scalar(0));
    for (int p = 0; p < d; ++p) {
      const auto i = static_cast<size_t>(p);
      const Scalar w = pts.weights[i];
      const Scalar v = pts.values[i] - center;
      w_[i + 1] = w_[i] + w;
      s1_[i + 1] = s1_[i] + w * v;
      s2_[i + 1] = s2_[i] + w * v * v;
    }
  }

  /// Cost of points first..last inclusive (0-based).
  Scalar operator()(int first, int last) const {
    const auto a = static_cast<size_t>(first);
    const auto b = static_cast<size_t>(last) + 1;
    const Scalar w = w_[b] - w_[a];
    const Scalar s1 = s1_[b] - s1_[a];
    const Scalar s2 = s2_[b] - s2_[a];
    const Scalar c = s2 - s1 * s1 / w;
    return c > Scalar(0) ? c : Scalar(0);
  }

 private:
  std::vector<Scalar> w_, s1_, s2_;
};

// Builds the model for a partition of the distinct points, given as the start
// indices of segments 1..m-1.
template <class Scalar>
KCMeansModel<Scalar> model_from_partition(const CategoryStats<Scalar>& stats,
                                          const DistinctPoints<Scalar>& pts,
                                          const std::vector<int>& point_breaks, int k) {
  const int g = stats.num_categories();
  const int m = static_cast<int>(point_breaks.size()) + 1;
  KCMeansModel<Scalar> model;
  model.k = k;
  model.k_effective = m;
  model.assignment.assign(static_cast<size_t>(g), 0);
  model.alphas = VectorX<Scalar>::Zero(m);
  for (int b : point_breaks) model.breaks.push_back(pts.first_position[static_cast<size_t>(b)]);

  std::vector<Scalar> weight(static_cast<size_t>(m), Scalar(0));
  int cluster = 0;
  for (int pos = 0; pos < g; ++pos) {
    while (cluster < m - 1 && pos >= model.breaks[static_cast<size_t>(cluster)]) ++cluster;
    const int code = stats.order[static_cast<size_t>(pos)];
    const Scalar w = static_cast<Scalar>(stats.counts[static_cast<size_t>(code)]);
    model.assignment[static_cast<size_t>(code)] = cluster;
    model.alphas[cluster] += w * stats.means[code];
    weight[static_cast<size_t>(cluster)] += w;
  }
  for (int c = 0; c < m; ++c) model.alphas[c] /= weight[static_cast<size_t>(c)];

  Scalar objective = 0;
  for (int code = 0; code < g; ++code) {
    const Scalar dev = stats.means[code] - model.alphas[model.assignment[static_cast<size_t>(code)]];
    objective += static_cast<Scalar>(stats.counts[static_cast<size_t>(code)]) * dev * dev;
  }
  model.objective = objective;
  return model;
}

template <class Scalar>
void check_inputs(const CategoryStats<Scalar>& stats, int k) {
  if (k < 1) throw DomainError("number of clusters k must be at least 1, got " + std::to_string(k));
  const int g = stats.num_categories();
  if (g == 0) throw ValidationError("category stats are empty");
  if (stats.means.size() != g || static_cast<int>(stats.order.size()) != g) {
    throw ValidationError("category stats fields differ in length");
  }
  for (int c = 0; c < g; ++c) {
    if (stats.counts[static_cast<size_t>(c)] <= 0) throw ValidationError("category counts must be positive");
    if (!std::isfinite(static_cast<double>(stats.means[c]))) throw ValidationError("non-finite category mean");
  }
}

}  // namespace detail

/// Global minimizer of the weighted within-cluster sum of squares over all
/// assignments of categories to at most k clusters. O(G^2 k) time, O(G k) space.
/// Split ties are broken toward the smallest start index of the last segment.
template <class Scalar>
KCMeansModel<Scalar> fit_kcmeans(const CategoryStats<Scalar>& stats, int k) {
  detail::check_inputs(stats, k);
  const auto pts = detail::distinct_points(stats);
  const int d = pts.size();
  const int m_max = std::min(k, d);
  const detail::SegmentCost<Scalar> seg(pts);

  // cost[m][j]: best cost of points 0..j in m+1 segments; start[m][j]: first
  // point of the last segment.
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  std::vector<std::vector<Scalar>> cost(static_cast<size_t>(m_max), std::vector<Scalar>(static_cast<size_t>(d), inf));
  std::vector<std::vector<int>> start(static_cast<size_t>(m_max), std::vector<int>(static_cast<size_t>(d), 0));
  for (int j = 0; j < d; ++j) cost[0][static_cast<size_t>(j)] = seg(0, j);
  for (int m = 1; m < m_max; ++m) {
    auto& row = cost[static_cast<size_t>(m)];
    const auto& prev = cost[static_cast<size_t>(m) - 1];
    for (int j = m; j < d; ++j) {
      Scalar best = inf;
      int best_s = m;
      for (int s = m; s <= j; ++s) {
        const Scalar c = prev[static_cast<size_t>(s) - 1] + seg(s, j);
        if (c < best) {
          best = c;
          best_s = s;
        }
      }
      row[static_cast<size_t>(j)] = best;
      start[static_cast<size_t>(m)][static_cast<size_t>(j)] = best_s;
    }
  }

  std::vector<int> point_breaks(static_cast<size_t>(m_max) - 1);
  int j = d - 1;
  for (int m = m_max - 1; m >= 1; --m) {
    const int s = start[static_cast<size_t>(m)][static_cast<size_t>(j)];
    point_breaks[static_cast<size_t>(m) - 1] = s;
    j = s - 1;
  }
  return detail::model_from_partition(stats, pts, point_breaks, k);
}

inline constexpr int kBruteForceMaxCategories = 15;

/// Exhaustive search over contiguous partitions of the sorted means; a test
/// oracle for fit_kcmeans. Refuses G > 15.
template <class Scalar>
KCMeansModel<Scalar> brute_force_kcmeans(const CategoryStats<Scalar>& stats, int k) {
  detail::check_inputs(stats, k);
  if (stats.num_categories() > kBruteForceMaxCategories) {
    throw DomainError("brute-force K-conditional-means refuses G = " +
                      std::to_string(stats.num_categories()) + " > " +
                      std::to_string(kBruteForceMaxCategories));
  }
  const auto pts = detail::distinct_points(stats);
  const int d = pts.size();
  const int m = std::min(k, d);
  const detail::SegmentCost<Scalar> seg(pts);

  // Enumerate increasing break vectors 1 <= b_1 < ... < b_{m-1} <= d-1.
  std::vector<int> breaks(static_cast<size_t>(m) - 1);
  for (int i = 0; i < m - 1; ++i) breaks[static_cast<size_t>(i)] = i + 1;
  std::vector<int> best_breaks;
  Scalar best = std::numeric_limits<Scalar>::infinity();

  auto later_breaks_smaller = [](const std::vector<int>& a, const std::vector<int>& b) {
    for (size_t i = a.size(); i-- > 0;) {
      if (a[i] != b[i]) return a[i] < b[i];
    }
    return false;
  };

  while (true) {
    Scalar total = 0;
    int first = 0;
    for (int b : breaks) {
      total = total + seg(first, b - 1);
      first = b;
    }
    total = total + seg(first, d - 1);
    if (total < best || (total == best && later_breaks_smaller(breaks, best_breaks))) {
      best = total;
      best_breaks = breaks;
    }
    // Next combination.
    int i = m - 2;
    while (i >= 0 && breaks[static_cast<size_t>(i)] == d - 1 - (m - 2 - i)) --i;
    if (i < 0) break;
    ++breaks[static_cast<size_t>(i)];
    for (int t = i + 1; t < m - 1; ++t) breaks[static_cast<size_t>(t)] = breaks[static_cast<size_t>(t) - 1] + 1;
  }
  return detail::model_from_partition(stats, pts, best_breaks, k);
}

}  // namespace civkit
