#pragma once

#include "liediff/core.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace liediff {

enum class W2Method { exact_assignment, sliced };

inline const char* to_string(W2Method m) { return m == W2Method::exact_assignment ? "exact_assignment" : "sliced"; }

struct W2Result {
  double raw_w2 = 0.0;
  double normalized_w2 = 0.0;
  std::size_t n_samples = 0;
  W2Method method = W2Method::exact_assignment;
};

inline constexpr Eigen::Index kExactAssignmentLimit = 2048;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Minimum-cost perfect matching on a dense square cost matrix (shortest augmenting paths with
// potentials, O(n^3)). Returns the column assigned to each row.
inline std::vector<int> solve_assignment(const RowMat& cost) {
  const int n = static_cast<int>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based bookkeeping; row 0 / column 0 are the virtual source
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

inline double w2_exact(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::SizeMismatch,
          "w2_exact needs equal batch shapes");
  require(a.rows() <= kExactAssignmentLimit, ErrorKind::TooLarge,
          "w2_exact is limited to n <= " + std::to_string(kExactAssignmentLimit));
  const Eigen::Index n = a.rows();
  if (n == 0) return 0.0;
  RowMat cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) cost.row(i) = (b.rowwise() - a.row(i)).rowwise().squaredNorm().transpose();
  const auto assign = solve_assignment(cost);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += (a.row(i) - b.row(assign[i])).squaredNorm();
  return std::sqrt(total / n);
}

inline double w2_sorted_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : std::sqrt(acc / a.size());
}

inline double w2_sliced(const Mat& a, const Mat& b, int n_projections, Rng& rng) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::SizeMismatch,
          "w2_sliced needs equal batch shapes");
  require(n_projections >= 1, ErrorKind::InvalidParams, "w2_sliced needs at least one projection");
  const Eigen::Index n = a.rows(), d = a.cols();
  if (n == 0) return 0.0;
  double acc = 0.0;
  std::vector<double> pa(n), pb(n);
  for (int p = 0; p < n_projections; ++p) {
    Vec dir = rng.normal_vec(d);
    dir /= dir.norm();
    Eigen::Map<Vec>(pa.data(), n) = a * dir;
    Eigen::Map<Vec>(pb.data(), n) = b * dir;
    const double w = w2_sorted_1d(pa, pb);
    acc += w * w;
  }
  return std::sqrt(acc / n_projections);
}

// distance from samples to target, divided by the distance from the prior pushforward to target
inline W2Result normalized_w2(const Mat& samples, const Mat& target, const Mat& prior, Rng& rng,
                              int n_projections = 256) {
  W2Result r;
  r.n_samples = static_cast<std::size_t>(samples.rows());
  r.method = samples.rows() <= kExactAssignmentLimit ? W2Method::exact_assignment : W2Method::sliced;
  auto dist = [&](const Mat& a, const Mat& b) {
    return r.method == W2Method::exact_assignment ? w2_exact(a, b) : w2_sliced(a, b, n_projections, rng);
  };
  r.raw_w2 = dist(samples, target);
  const double base = dist(prior, target);
  r.normalized_w2 = base > 0.0 ? r.raw_w2 / base : 0.0;
  return r;
}

}  // namespace liediff
