#include "liediff/metrics.hpp"
#include "liediff/sde.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace liediff;

namespace {

GroupAction so2() { return make_group(GroupId::SO2Dilation); }
GroupAction so3() { return make_group(GroupId::SO3Dilation); }
GroupAction translation(int n) {
  GroupParams p;
  p.n = n;
  return make_group(GroupId::TranslationN, p);
}

Eigen::Matrix2d rot90() {
  Eigen::Matrix2d j;
  j << 0, -1, 1, 0;
  return j;
}

// probabilists' Gauss-Hermite rule via the Golub-Welsch eigenproblem
std::pair<Vec, Vec> gauss_hermite(int m) {
  Mat jac = Mat::Zero(m, m);
  for (int k = 1; k < m; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Mat> es(jac);
  const Vec w = es.eigenvectors().row(0).transpose().array().square();
  return {es.eigenvalues(), w};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double ks_statistic(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double n = v.size();
  double d = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = normal_cdf(v[i]);
    d = std::max({d, f - i / n, (i + 1) / n - f});
  }
  return d;
}

NoiseSchedule constant_schedule(int T, double beta) {
  NoiseSchedule s;
  s.T = T;
  double acp = 1;
  for (int k = 0; k < T; ++k) {
    s.beta.push_back(beta);
    acp *= 1 - beta;
    s.alpha_bar.push_back(std::sqrt(acp));
    s.sigma.push_back(std::sqrt(1 - acp));
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------- forward

TEST(Forward, NoNoiseReturnsInput) {
  const auto g = so3();
  const Vec x0{{0.4, -1.1, 0.7}};
  const auto d = forward_draw(g, x0, 1.0, 0.0, Vec{{0.3, 2.0, -1.0}});
  EXPECT_LT((d.x_t - x0).norm(), 1e-9);
}

TEST(Forward, SO2FullyNoisedExample) {
  const auto g = so2();
  const double sig = 0.7, a = 0.3, b = -1.2;
  const auto d = forward_draw(g, Vec{{1.0, 0.0}}, 0.0, sig, Vec{{a, b}});
  const Vec expected = std::exp(sig * a) * Vec{{std::cos(sig * b), std::sin(sig * b)}};
  EXPECT_LT((d.x_t - expected).norm(), 1e-12);
}

TEST(Forward, DrawIsReconstructible) {
  const auto g = so3();
  const auto s = make_schedule(ScheduleKind::cosine, 50);
  Rng rng(Seed{3});
  const Vec x0{{0.4, -1.1, 0.7}};
  for (int t : {0, 10, 49}) {
    const auto d = forward_sample(g, s, x0, t, rng);
    EXPECT_EQ(d.t, t);
    EXPECT_LT((d.tau_t - (s.alpha_bar[t] * g.to_flow(x0) + s.sigma[t] * d.eta)).norm(), 1e-12);
    EXPECT_LT((d.x_t - g.from_flow(d.tau_t)).norm(), 1e-12);
  }
  EXPECT_THROW(forward_sample(g, s, x0, 50, rng), Error);
}

TEST(Forward, SingularStartIsRejected) {
  const auto s = make_schedule(ScheduleKind::cosine, 10);
  Rng rng(Seed{1});
  try {
    forward_sample(so2(), s, Vec::Zero(2), 3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularPoint);
  }
}

// ---------------------------------------------------------------- Euler-Maruyama

TEST(EulerMaruyama, ZeroDynamicsIsConstant) {
  const auto g = so3();
  const Vec x0{{0.4, -1.1, 0.7}};
  Rng rng(Seed{2});
  auto zero = [](double) { return 0.0; };
  auto f = [](const Vec& tau, double) { return Vec(Vec::Zero(tau.size())); };
  const auto tr = euler_maruyama_forward(g, x0, zero, zero, f, 1.0, 50, rng);
  ASSERT_EQ(tr.states.rows(), 51);
  for (int k = 0; k <= 50; ++k) EXPECT_LT((tr.states.row(k).transpose() - x0).norm(), 1e-14);
}

TEST(EulerMaruyama, TranslationIsPlainEulerMaruyama) {
  const auto g = translation(3);
  const Vec x0{{1.0, -2.0, 0.5}};
  auto beta = [](double t) { return 0.5 + t; };
  auto gamma = [](double t) { return std::sqrt(0.5 + t); };
  auto f = [](const Vec& tau, double) { return Vec(-0.5 * tau); };
  Rng a(Seed{9}), b(Seed{9});
  const int steps = 100;
  const double dt = 2.0 / steps;
  const auto tr = euler_maruyama_forward(g, x0, beta, gamma, f, 2.0, steps, a);
  Vec x = x0;
  for (int n = 0; n < steps; ++n) {
    const double t = n * dt;
    const Vec dw = std::sqrt(dt) * b.normal_vec(3);
    x = x + beta(t) * (-0.5 * x) * dt + gamma(t) * dw;
    EXPECT_LT((tr.states.row(n + 1).transpose() - x).norm(), 1e-12);
  }
}

// Terminal law for the affine drift f = -tau/2 with beta = gamma^2 = 1, coupled to the exact
// flow-coordinate OU solution through the shared Brownian increments.
TEST(EulerMaruyama, SO2ReachesExponentialNormalLaw) {
  const auto g = so2();
  const int n = 1024, steps = 8000;
  const double t_end = 8.0;
  Mat em(n, 2), exact(n, 2);
  auto one = [](double) { return 1.0; };
  auto f = [](const Vec& tau, double) { return Vec(-0.5 * tau); };
  for (int c = 0; c < n; ++c) {
    Rng rng(mix_seed(77, c));
    Vec te = Vec::Zero(2);
    auto noise = [&](int, double dt) {
      const Vec dw = std::sqrt(dt) * rng.normal_vec(2);
      te = te * std::exp(-dt / 2) + dw * std::sqrt((1 - std::exp(-dt)) / dt);
      return dw;
    };
    const auto tr = euler_maruyama_forward(g, Vec{{1.0, 0.0}}, one, one, f, t_end, steps, noise);
    em.row(c) = tr.states.row(steps);
    exact.row(c) = g.from_flow(te).transpose();
  }
  Rng proj(Seed{5});
  EXPECT_LE(w2_sliced(em, exact, 256, proj), 0.05);
}

// ---------------------------------------------------------------- conditional score

TEST(ConditionalScore, Examples) {
  EXPECT_TRUE(conditional_score(0.5, Vec{{1.0, -2.0}}).isApprox(Vec{{-2.0, 4.0}}));
  EXPECT_EQ(conditional_score(0.3, Vec::Zero(3)), Vec::Zero(3));
  try {
    conditional_score(0.0, Vec::Ones(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateTime);
  }
}

TEST(ConditionalScore, MatchesFiniteDifferenceOfGaussianLogDensity) {
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const int t = 40;
  const Vec tau0{{0.3, -0.8, 1.1}};
  const Vec eta{{0.5, 1.5, -0.2}};
  const Vec tau = s.alpha_bar[t] * tau0 + s.sigma[t] * eta;
  auto logp = [&](const Vec& y) {
    return -0.5 * (y - s.alpha_bar[t] * tau0).squaredNorm() / (s.sigma[t] * s.sigma[t]);
  };
  const Vec sc = conditional_score(s, t, eta);
  for (int i = 0; i < 3; ++i) {
    Vec p = tau, m = tau;
    p[i] += 1e-5;
    m[i] -= 1e-5;
    EXPECT_NEAR(sc[i], (logp(p) - logp(m)) / 2e-5, 1e-5);
  }
}

// ---------------------------------------------------------------- reverse

TEST(Reverse, TranslationMatchesStandardDiffusion) {
  const auto g = translation(3);
  const auto s = make_schedule(ScheduleKind::cosine, 40);
  auto score = [](const Vec& x, int t) { return Vec(-x * (1.0 + 0.01 * t)); };
  const std::size_t n = 8;
  const auto res = sample(g, s, score, n, Seed{21});
  ASSERT_EQ(res.batch.size(), n);
  for (std::size_t c = 0; c < n; ++c) {
    Rng rng(mix_seed(21, c));
    Vec x = rng.normal_vec(3);
    for (int t = s.T - 1; t >= 0; --t) {
      Vec eta = rng.normal_vec(3);
      if (t == 0) eta.setZero();
      x = x + s.beta[t] * (0.5 * x + score(x, t)) + std::sqrt(s.beta[t]) * eta;
    }
    EXPECT_LT((res.batch.x.row(c).transpose() - x).norm(), 1e-12);
  }
}

TEST(Reverse, TranslationForwardIsStandardDiffusion) {
  const auto g = translation(2);
  const auto s = make_schedule(ScheduleKind::linear, 100);
  Rng a(Seed{4}), b(Seed{4});
  const Vec x0{{2.0, -1.0}};
  for (int t : {0, 50, 99}) {
    const auto d = forward_sample(g, s, x0, t, a);
    const Vec ref = s.alpha_bar[t] * x0 + s.sigma[t] * b.normal_vec(2);
    EXPECT_LT((d.x_t - ref).norm(), 1e-12);
  }
}

TEST(Reverse, SO2ZeroScoreStepIsHalfTauDrift) {
  const auto g = so2();
  const Vec tau{{0.4, 1.1}};
  const Vec x = g.from_flow(tau);
  const double beta = 0.02;
  ReverseOptions opt;
  const auto r = reverse_update(g, beta, x, Vec::Zero(2), Vec::Zero(2), opt);
  const Vec v_s = 0.5 * (tau[0] * x + tau[1] * (rot90() * x));
  const Vec v_d = 2.0 * x;  // divergence scalars (2, 0); Casimir vanishes
  EXPECT_LT((r.x - (x + beta * (v_s + v_d))).norm(), 1e-14);
}

TEST(Reverse, FlowAndCartesianConventionsAgree) {
  const auto g = so3();
  const Vec x{{0.4, -1.1, 0.7}};
  const Vec s_flow{{0.2, -0.5, 0.9}};
  const Vec eta{{0.1, 0.3, -0.2}};
  ReverseOptions cart, flow;
  flow.convention = ScoreConvention::flow;
  const auto a = reverse_update(g, 0.01, x, Vec(s_flow - g.divergence_scalars(x)), eta, cart);
  const auto b = reverse_update(g, 0.01, x, s_flow, eta, flow);
  EXPECT_LT((a.x - b.x).norm(), 1e-12);
}

// Pure rotation: radial score, drift and noise masked out. The expected radius change is computed
// by Gauss-Hermite quadrature over the angular noise.
TEST(Reverse, RadiusDriftIsSecondOrderWithCorrections) {
  const auto g = so2();
  const auto [nodes, weights] = gauss_hermite(40);
  const Vec x = g.from_flow(Vec{{0.3, 0.8}});
  auto mean_radius_change = [&](double beta, double casimir_sign) {
    ReverseOptions opt;
    opt.active = Vec{{0.0, 1.0}};
    opt.casimir_sign = casimir_sign;
    double acc = 0;
    for (int k = 0; k < nodes.size(); ++k) {
      const auto r = reverse_update(g, beta, x, Vec{{0.0, 0.7}}, Vec{{0.0, nodes[k]}}, opt);
      acc += weights[k] * r.x.norm();
    }
    return acc / x.norm() - 1.0;
  };
  for (double beta : {1e-2, 1e-3}) {
    EXPECT_LT(std::abs(mean_radius_change(beta, 1.0)), beta * beta);
    // without the Casimir correction the noise pushes outward at first order
    EXPECT_NEAR(mean_radius_change(beta, 0.0), 0.5 * beta, 0.1 * beta);
  }
}

TEST(Reverse, ActiveCasimirMatchesFullFieldWhenUnmasked) {
  const auto g = so3();
  const Vec x{{0.4, -1.1, 0.7}};
  EXPECT_LT((active_casimir(g, x, Vec::Ones(3)) - g.casimir_field(x)).norm(), 1e-12);
  GroupParams p;
  p.chain = Mat{{0, 0, 0}, {1.5, 0, 0}, {2, 1.4, 0}, {3.5, 1.5, 0.3}, {4, 2.9, 0.1}};
  const auto tor = make_group(GroupId::Torsion, p);
  const Vec cx = flatten_points(p.chain);
  EXPECT_LT((active_casimir(tor, cx, Vec::Ones(tor.dim_g())) - tor.casimir_field(cx)).norm(), 1e-5);
}

// ---------------------------------------------------------------- sampling

TEST(Sample, EmptyRequestGivesEmptyBatch) {
  const auto s = make_schedule(ScheduleKind::cosine, 10);
  const auto res = sample(so2(), s, [](const Vec&, int) { return Vec(Vec::Zero(2)); }, 0, Seed{1});
  EXPECT_EQ(res.batch.size(), 0u);
  EXPECT_EQ(res.batch.dropped, 0u);
}

TEST(Sample, PriorPassesKolmogorovSmirnov) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 2);
  const std::size_t n = 4000;
  SampleOptions opt;
  opt.record_chains = n;
  const auto res = sample(g, s, [](const Vec&, int) { return Vec(Vec::Zero(2)); }, n, Seed{8}, opt);
  ASSERT_EQ(res.trajectories.size(), n);
  std::vector<double> r, th;
  for (const auto& tr : res.trajectories) {
    const Vec tau = g.to_flow(tr.states.row(0).transpose());
    r.push_back(tau[0]);
    th.push_back(tau[1]);
  }
  const double crit = 1.628 / std::sqrt(double(n));  // 0.01 level
  EXPECT_LT(ks_statistic(r), crit);
  EXPECT_LT(ks_statistic(th), crit);
}

TEST(Sample, SeedDeterminesBatch) {
  const auto g = so3();
  const auto s = make_schedule(ScheduleKind::cosine, 20);
  GaussianTauTarget target{Vec{{0.1, 1.2, 0.3}}, Vec{{0.2, 0.2, 0.3}}};
  const auto fn = target.score_fn(g, s, ScoreConvention::cartesian);
  const auto a = sample(g, s, fn, 16, Seed{5});
  const auto b = sample(g, s, fn, 16, Seed{5});
  EXPECT_EQ(a.batch.x, b.batch.x);
}

TEST(Sample, ExactScoreRecoversGaussianTarget) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  GaussianTauTarget target{Vec{{0.0, 0.5}}, Vec{{0.2, 0.3}}};
  const std::size_t n = 1024;
  const auto res = sample(g, s, target.score_fn(g, s, ScoreConvention::cartesian), n, Seed{11});
  ASSERT_EQ(res.batch.size(), n);
  Rng rng(Seed{12});
  const Mat truth = target.sample(g, n, rng);
  EXPECT_LE(w2_exact(res.batch.x, truth), 0.1);
}

TEST(Sample, SmallNoiseReproducesData) {
  const auto g = so3();
  const auto s = constant_schedule(20, 1e-4);
  const Vec x0{{0.4, -1.1, 0.7}};
  const Vec tau0 = g.to_flow(x0);
  Rng rng(Seed{13});
  for (int rep = 0; rep < 20; ++rep) {
    Vec x = forward_sample(g, s, x0, s.T - 1, rng).x_t;
    ReverseOptions opt;
    opt.convention = ScoreConvention::flow;
    for (int t = s.T - 1; t >= 0; --t) {
      const Vec tau = lift_flow_coords(g, g.to_flow(x), tau0);
      const Vec eta = (tau - s.alpha_bar[t] * tau0) / s.sigma[t];
      x = reverse_step(g, s, x, t, conditional_score(s, t, eta), rng, opt).x;
    }
    EXPECT_LE((x - x0).norm(), 0.05);
  }
}

// ---------------------------------------------------------------- bridge

TEST(Bridge, VarianceGrowsAsCumulativeBeta) {
  const auto g = so2();
  const auto b = make_bridge_schedule(50, 2.0);
  const Vec x0{{1.0, 0.5}};
  const Vec tau0 = g.to_flow(x0);
  Rng rng(Seed{17});
  const int n = 20000;
  for (int t : {0, 25, 49}) {
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += (bridge_forward(g, b, x0, t, rng).tau_t - tau0)[0];
    // radial coordinate has no wrapping; second moment per coordinate
    double var = 0;
    for (int i = 0; i < n; ++i) var += std::pow((bridge_forward(g, b, x0, t, rng).tau_t - tau0)[0], 2);
    var /= n;
    EXPECT_NEAR(var, b.cumvar[t], 5.0 * b.cumvar[t] * std::sqrt(2.0 / n));
    EXPECT_NEAR(acc / n, 0.0, 5.0 * b.sigma(t) / std::sqrt(double(n)));
  }
}

TEST(Bridge, RotationOnlyTransportKeepsRadius) {
  const auto g = so2();
  const auto b = make_bridge_schedule(30, 3.0);
  Mat src(5, 2);
  src << 1, 0, 0, 2, -0.5, 0.5, 3, -1, 0.2, -0.1;
  SampleOptions opt{bridge_defaults(), 0};
  opt.reverse.active = Vec{{0.0, 1.0}};
  const auto res = bridge_sample(
      g, b, [](const Vec& x, int) { return Vec{{0.3, -std::atan2(x[1], x[0])}}; }, src, Seed{3}, opt);
  ASSERT_EQ(res.batch.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(res.batch.x.row(i).norm(), src.row(i).norm(), 1e-12);
}
