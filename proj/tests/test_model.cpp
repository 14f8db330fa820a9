#include "liediff/metrics.hpp"
#include "liediff/model.hpp"

#include <gtest/gtest.h>

using namespace liediff;

namespace {

GroupAction so2() { return make_group(GroupId::SO2Dilation); }
GroupAction translation(int n) {
  GroupParams p;
  p.n = n;
  return make_group(GroupId::TranslationN, p);
}

NetConfig small_net(Activation a = Activation::silu) {
  NetConfig c;
  c.hidden_width = 16;
  c.hidden_layers = 2;
  c.time_dim = 8;
  c.activation = a;
  return c;
}

// loss = sum(weights .* out) + 0.5 |out|^2 over a small batch
double toy_loss(const ScoreNetwork& net, const Mat& x, const std::vector<double>& u, const Mat& w) {
  const Mat out = net.forward(x, u);
  return (w.array() * out.array()).sum() + 0.5 * out.squaredNorm();
}

}  // namespace

TEST(ScoreNetwork, ZeroHeadOutputsZero) {
  Rng rng(Seed{1});
  NetConfig c;
  c.zero_head = true;
  ScoreNetwork net(3, 3, c, rng);
  EXPECT_EQ(net(Vec{{1.0, -2.0, 0.5}}, 17.0), Vec::Zero(3));
  EXPECT_EQ(net.layer_sizes(), (std::vector<int>{35, 128, 128, 128, 3}));
}

TEST(ScoreNetwork, SameSeedSameOutput) {
  Rng a(Seed{4}), b(Seed{4});
  const ScoreNetwork n1(2, 2, NetConfig{}, a), n2(2, 2, NetConfig{}, b);
  const Vec x{{0.3, -0.7}};
  const Vec y1 = net_forward(n1, x, 12), y2 = net_forward(n2, x, 12);
  EXPECT_EQ(std::memcmp(y1.data(), y2.data(), sizeof(double) * 2), 0);
}

TEST(ScoreNetwork, ParameterRoundTrip) {
  Rng rng(Seed{5});
  ScoreNetwork net(2, 3, small_net(), rng);
  const Vec p = net.parameters();
  EXPECT_EQ(static_cast<std::size_t>(p.size()), net.parameter_count());
  ScoreNetwork other(2, 3, small_net(), rng);
  other.set_parameters(p);
  EXPECT_EQ(other.parameters(), p);
  EXPECT_THROW(other.set_parameters(Vec::Zero(3)), Error);
}

TEST(ScoreNetwork, BatchedForwardMatchesSingle) {
  Rng rng(Seed{6});
  ScoreNetwork net(3, 2, small_net(), rng);
  const Mat x = Mat::Random(3, 5);
  const std::vector<double> u{1, 2.5, 7, 40, 100};
  const Mat out = net.forward(x, u);
  for (int b = 0; b < 5; ++b) EXPECT_LT((out.col(b) - net(x.col(b), u[b])).norm(), 1e-14);
}

TEST(ScoreNetwork, GradientMatchesFiniteDifferences) {
  for (auto act : {Activation::silu, Activation::tanh}) {
    Rng rng(Seed{7});
    ScoreNetwork net(3, 2, small_net(act), rng);
    const Mat x = Mat::Random(3, 4);
    const std::vector<double> u{1, 13, 55, 99};
    const Mat w = Mat::Random(2, 4);
    ScoreNetwork::Tape tape;
    const Mat out = net.forward(x, u, &tape);
    const Vec grad = net.backward(tape, w + out);
    const Vec p0 = net.parameters();
    const double h = 1e-4;
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
      Vec p = p0;
      p[i] += h;
      net.set_parameters(p);
      const double lp = toy_loss(net, x, u, w);
      p[i] -= 2 * h;
      net.set_parameters(p);
      const double lm = toy_loss(net, x, u, w);
      const double fd = (lp - lm) / (2 * h);
      EXPECT_LE(std::abs(fd - grad[i]), 1e-4 * std::max(1.0, std::abs(fd))) << "parameter " << i;
    }
    net.set_parameters(p0);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam opt{0.1};
  Vec p{{1.0, -1.0}};
  opt.update(p, Vec{{3.0, -0.5}});
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -0.9, 1e-7);
}

TEST(TrainScore, EmptyDatasetIsRejected) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 10);
  Rng rng(Seed{1});
  ScoreNetwork net(2, 2, small_net(), rng);
  try {
    train_score(net, g, s, Mat(0, 2), TrainConfig{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidParams);
  }
}

TEST(TrainScore, ConvergesToConditionalScoreForOnePoint) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const int t = 60;
  const Vec x0{{1.2, 0.4}};
  const Vec tau0 = g.to_flow(x0);
  Rng rng(Seed{2});
  NetConfig nc;
  nc.hidden_width = 64;
  nc.hidden_layers = 2;
  ScoreNetwork net(2, 2, nc, rng);
  TrainConfig cfg;
  cfg.steps = 5000;
  cfg.fixed_time = t;
  const auto rep = train_score(net, g, s, Mat(x0.transpose()), cfg, rng);
  ASSERT_EQ(rep.losses.size(), 5000u);
  const auto score = network_score_fn(net, s);
  double gap = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const auto d = forward_draw(g, x0, s.alpha_bar[t], s.sigma[t], rng.normal_vec(2));
    const Vec tau = lift_flow_coords(g, g.to_flow(d.x_t), tau0);
    const Vec exact = -(tau - s.alpha_bar[t] * tau0) / (s.sigma[t] * s.sigma[t]);
    gap += (score(d.x_t, t) - exact).squaredNorm() / 2;
  }
  EXPECT_LE(gap / n, 1e-2);
}

// radially symmetric target: the angular component of the learned score stays small
TEST(TrainScore, AngularScoreIsFlatForRadialTarget) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  Mat data(4000, 2);
  Rng rng(Seed{3});
  for (int i = 0; i < data.rows(); ++i) {
    const double r = (i % 2 ? 2.5 : 1.0) + 0.1 * rng.normal(), a = rng.uniform(0, 2 * kPi);
    data.row(i) << r * std::cos(a), r * std::sin(a);
  }
  NetConfig nc;
  nc.hidden_width = 64;
  nc.hidden_layers = 2;
  ScoreNetwork net(2, 2, nc, rng);
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.fixed_time = 20;
  train_score(net, g, s, data, cfg, rng);
  double ang = 0, rad = 0;
  for (double r : {0.8, 1.2, 1.8, 2.4, 3.0})
    for (int k = 0; k < 12; ++k) {
      const Vec sc = net_forward(net, Vec{{r * std::cos(k * kPi / 6), r * std::sin(k * kPi / 6)}}, 20);
      rad += std::abs(sc[0]);
      ang += std::abs(sc[1]);
    }
  EXPECT_LE(ang, 0.2 * rad);
}

TEST(TrainScore, LossIsFiniteAndLogged) {
  const auto g = translation(2);
  const auto s = make_schedule(ScheduleKind::cosine, 20);
  Rng rng(Seed{4});
  ScoreNetwork net(2, 2, small_net(), rng);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 8;
  const auto rep = train_score(net, g, s, Mat::Random(20, 2), cfg, rng);
  EXPECT_EQ(rep.losses.size(), 50u);
  for (double l : rep.losses) EXPECT_TRUE(std::isfinite(l));
  EXPECT_EQ(rep.final_loss, rep.losses.back());
}

// ---------------------------------------------------------------- flow matching

TEST(CfmTarget, OnPathReducesToMeanVelocity) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const Vec tau0{{0.3, 0.9}};
  const double u = 37.4;
  const Vec tau = s.alpha_at(u) * tau0;
  const Vec x = g.from_flow(tau);
  const Vec v = cfm_target(g, s, x, tau, tau0, u);
  EXPECT_LT((v - g.fundamental_matrix(x) * (s.d_alpha_at(u) * tau0)).norm(), 1e-14);
  EXPECT_THROW(cfm_target(g, s, x, tau, tau0, 0.0), Error);
}

TEST(CfmTarget, TranslationIsLinearGaussianTarget) {
  const auto g = translation(2);
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const Vec x0{{1.0, -2.0}}, x{{0.5, 0.4}};
  const double u = 63.2;
  const Vec mu = s.alpha_at(u) * x0;
  const Vec expected = s.d_alpha_at(u) * x0 + (s.d_sigma_at(u) / s.sigma_at(u)) * (x - mu);
  EXPECT_LT((cfm_target(g, s, x, x, x0, u) - expected).norm(), 1e-14);
}

TEST(CfmTarget, ConditionalPathIsRecoveredByBackwardIntegration) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  Rng rng(Seed{9});
  for (int rep = 0; rep < 10; ++rep) {
    const Vec x0 = g.from_flow(Vec{{rng.normal() * 0.5, rng.uniform(-3, 3)}});
    const Vec tau0 = g.to_flow(x0), eta = rng.normal_vec(2);
    const Vec x_end = g.from_flow(s.alpha_at(s.T) * tau0 + s.sigma_at(s.T) * eta);
    const Vec back = heun_integrate(
        g, [&](const Vec& x, double u) { return cfm_conditional_field(g, s, x, tau0, eta, u); }, x_end, s.T, 0.0, 1000);
    EXPECT_LE((back - x0).norm(), 1e-3);
  }
}

TEST(CfmConditionalField, MatchesPathVelocityBeyondThePole) {
  const auto g = make_group(GroupId::SO3Dilation);
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const Vec tau0{{0.1, 0.4, 1.0}}, eta{{-0.3, -1.5, 0.7}};
  const double h = 1e-5;
  auto path = [&](double u) { return g.from_flow(s.alpha_at(u) * tau0 + s.sigma_at(u) * eta); };
  int reflected = 0;
  // probes stay off the schedule knots, where the path velocity has kinks
  for (double u = 5.3; u < 95.0; u += 7.5) {
    const double polar = s.alpha_at(u) * tau0[1] + s.sigma_at(u) * eta[1];
    if (polar < 0.0) ++reflected;
    const Vec fd = (path(u + h) - path(u - h)) / (2 * h);
    EXPECT_LT((cfm_conditional_field(g, s, path(u), tau0, eta, u) - fd).norm(), 1e-6 * (1.0 + fd.norm())) << u;
  }
  EXPECT_GT(reflected, 0);
}

TEST(TrainBridge, LossDecreasesAndScoreIsRescaled) {
  const auto g = so2();
  const auto b = make_bridge_schedule(50, 6.0);
  Rng rng(Seed{5});
  Mat targets(500, 2);
  for (Eigen::Index i = 0; i < targets.rows(); ++i) targets.row(i) = g.from_flow(Vec{{rng.normal() * 0.3, 0.0}}).transpose();
  ScoreNetwork net(2, 2, small_net(), rng);
  TrainConfig cfg;
  cfg.steps = 600;
  cfg.batch_size = 64;
  const auto rep = train_bridge(net, g, b, targets, Vec{{0.0, 1.0}}, cfg, rng);
  EXPECT_LT(window_mean(rep.losses, 500, 600), window_mean(rep.losses, 0, 50));
  const Vec x{{0.6, 0.8}};
  const auto score = bridge_score_fn(net, b);
  EXPECT_LT((score(x, 10) - net_forward(net, x, 10) / b.sigma(10)).norm(), 1e-15);
}

TEST(OdeSample, ZeroFieldGivesPriorPushforward) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 10);
  Rng rng(Seed{1});
  NetConfig nc = small_net();
  nc.zero_head = true;
  const ScoreNetwork net(2, 2, nc, rng);
  const auto batch = ode_sample(net, g, s, 16, Seed{3}, 20);
  ASSERT_EQ(batch.size(), 16);
  for (int c = 0; c < 16; ++c) {
    Rng chain(mix_seed(3, c));
    EXPECT_LT((batch.x.row(c).transpose() - g.from_flow(chain.normal_vec(2))).norm(), 1e-14);
  }
}

TEST(OdeSample, OracleFieldRecoversGaussianTarget) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  const GaussianTauTarget target{Vec{{0.2, 0.5}}, Vec{{0.3, 0.4}}};
  const int n = 1024;
  Mat out(n, 2);
  for (int c = 0; c < n; ++c) {
    Rng chain(mix_seed(8, c));
    out.row(c) = heun_integrate(
                     g, [&](const Vec& x, double u) { return gaussian_target_velocity(g, s, target, x, u); },
                     g.from_flow(chain.normal_vec(2)), s.T, 0.0, 200)
                     .transpose();
  }
  Rng rng(Seed{12});
  EXPECT_LE(w2_exact(out, target.sample(g, n, rng)), 0.1);
}

TEST(TrainCfm, LossDecreases) {
  const auto g = so2();
  const auto s = make_schedule(ScheduleKind::cosine, 100);
  Rng rng(Seed{4});
  const GaussianTauTarget target{Vec{{0.2, 0.5}}, Vec{{0.3, 0.4}}};
  const Mat data = target.sample(g, 2000, rng);
  NetConfig nc;
  nc.hidden_width = 64;
  nc.hidden_layers = 2;
  ScoreNetwork net(2, 2, nc, rng);
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.loss_kind = LossKind::flow_matching;
  const auto rep = train_cfm(net, g, s, data, cfg, rng);
  EXPECT_LT(window_mean(rep.losses, 1000, 1500), window_mean(rep.losses, 0, 100));
}
