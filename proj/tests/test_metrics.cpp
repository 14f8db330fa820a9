#include "liediff/metrics.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace liediff;

namespace {

Mat gaussian_batch(Rng& rng, int n, int d, double shift = 0.0) {
  Mat m(n, d);
  for (int i = 0; i < n; ++i) m.row(i) = (rng.normal_vec(d).array() + shift).transpose();
  return m;
}

// minimum over all permutations
double brute_force_w2(const Mat& a, const Mat& b) {
  std::vector<int> perm(a.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (int i = 0; i < a.rows(); ++i) c += (a.row(i) - b.row(perm[i])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / a.rows());
}

}  // namespace

TEST(W2Exact, Examples) {
  Mat a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  EXPECT_NEAR(w2_exact(a, b), 5.0, 1e-14);
  Rng rng(Seed{1});
  const Mat x = gaussian_batch(rng, 50, 3);
  EXPECT_EQ(w2_exact(x, x), 0.0);
  const Mat flipped = x.colwise().reverse();
  EXPECT_NEAR(w2_exact(x, flipped), 0.0, 1e-14);
  Mat p(2, 2), q(2, 2);
  p << 0, 0, 1, 0;
  q << 1, 0, 0, 0;
  EXPECT_EQ(w2_exact(p, q), 0.0);
}

TEST(W2Exact, MatchesBruteForce) {
  Rng rng(Seed{2});
  for (int rep = 0; rep < 20; ++rep) {
    const Mat a = gaussian_batch(rng, 7, 2), b = gaussian_batch(rng, 7, 2, 0.5);
    EXPECT_NEAR(w2_exact(a, b), brute_force_w2(a, b), 1e-12);
  }
}

TEST(W2Exact, MatchesSortingInOneDimension) {
  Rng rng(Seed{3});
  const Mat a = gaussian_batch(rng, 300, 1), b = gaussian_batch(rng, 300, 1, 1.0);
  std::vector<double> va(a.data(), a.data() + 300), vb(b.data(), b.data() + 300);
  EXPECT_NEAR(w2_exact(a, b), w2_sorted_1d(va, vb), 1e-12);
}

TEST(W2Exact, MetricProperties) {
  Rng rng(Seed{4});
  const Mat a = gaussian_batch(rng, 100, 3), b = gaussian_batch(rng, 100, 3, 0.7),
            c = gaussian_batch(rng, 100, 3, -0.4);
  EXPECT_NEAR(w2_exact(a, b), w2_exact(b, a), 1e-12);
  EXPECT_LE(w2_exact(a, c), w2_exact(a, b) + w2_exact(b, c) + 1e-12);
}

TEST(W2Exact, Errors) {
  try {
    w2_exact(Mat::Zero(3, 2), Mat::Zero(4, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SizeMismatch);
  }
  try {
    w2_exact(Mat::Zero(kExactAssignmentLimit + 1, 1), Mat::Zero(kExactAssignmentLimit + 1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
  }
}

TEST(W2Sliced, IdenticalBatchesGiveZero) {
  Rng rng(Seed{8});
  const Mat a = gaussian_batch(rng, 100, 3);
  EXPECT_EQ(w2_sliced(a, a, 16, rng), 0.0);
}

TEST(W2Sliced, EqualsExactInOneDimension) {
  Rng rng(Seed{5});
  const Mat a = gaussian_batch(rng, 200, 1), b = gaussian_batch(rng, 200, 1, 2.0);
  EXPECT_NEAR(w2_sliced(a, b, 8, rng), w2_exact(a, b), 1e-12);
}

TEST(W2Sliced, LowerBoundsExact) {
  Rng rng(Seed{6});
  const Mat a = gaussian_batch(rng, 512, 2), b = gaussian_batch(rng, 512, 2, 1.0);
  const double exact = w2_exact(a, b), sliced = w2_sliced(a, b, 256, rng);
  EXPECT_LE(sliced, exact);
  // a pure shift in 2-D: sliced distance is the shift over sqrt(2)
  EXPECT_NEAR(sliced, exact / std::sqrt(2.0), 0.1 * exact);
}

TEST(NormalizedW2, PicksMethodBySize) {
  Rng rng(Seed{7});
  const Mat t = gaussian_batch(rng, 64, 2), p = gaussian_batch(rng, 64, 2, 3.0);
  const auto r = normalized_w2(t, t, p, rng);
  EXPECT_EQ(r.method, W2Method::exact_assignment);
  EXPECT_EQ(r.normalized_w2, 0.0);
  const auto q = normalized_w2(p, t, p, rng);
  EXPECT_NEAR(q.normalized_w2, 1.0, 1e-12);
  const Mat big = gaussian_batch(rng, kExactAssignmentLimit + 1, 2);
  EXPECT_EQ(normalized_w2(big, big, big, rng).method, W2Method::sliced);
}
