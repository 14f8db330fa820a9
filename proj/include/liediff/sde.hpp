#pragma once

#include "liediff/lie_core.hpp"
#include "liediff/parallel.hpp"
#include "liediff/schedule.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace liediff {

struct ForwardDraw {
  Vec x_t;
  Vec tau_t;
  Vec eta;
  int t = 0;
};

struct Trajectory {
  Mat states;  // (steps + 1) x dim_x
  std::vector<double> times;
  Seed seed{};
  bool clamped = false;
};

// tau_t = abar tau_0 + sigma eta
inline ForwardDraw forward_draw(const GroupAction& g, const Vec& x0, double abar, double sigma, const Vec& eta, int t = 0) {
  const Vec tau = abar * g.to_flow(x0) + sigma * eta;
  return {g.from_flow(tau), tau, eta, t};
}

inline ForwardDraw forward_sample(const GroupAction& g, const NoiseSchedule& s, const Vec& x0, int t, Rng& rng) {
  require(t >= 0 && t < s.T, ErrorKind::InvalidParams, "time index outside [0, T)");
  return forward_draw(g, x0, s.alpha_bar[t], s.sigma[t], rng.normal_vec(g.dim_g()), t);
}

// pushes a radius or an axial coordinate out of the singular set
inline Vec clamp_state(const GroupAction& g, Vec x, bool* clamped = nullptr) {
  require(x.allFinite(), ErrorKind::NonFiniteState, "state is not finite");
  if (g.singular_margin(x) >= kSingularEps) return x;
  if (clamped) *clamped = true;
  if (g.has_radial() && x.norm() < kSingularEps) {
    if (x.norm() == 0.0) x[0] = 2 * kSingularEps;
    else x *= 2 * kSingularEps / x.norm();
  }
  if (g.id() == GroupId::SO3Dilation && std::hypot(x[0], x[1]) < kSingularEps) x[0] += kSingularEps;
  if (g.id() == GroupId::SO4Dilation || g.id() == GroupId::SONDilation)
    if (g.singular_margin(x) < kSingularEps) x[x.size() - 1] += kSingularEps;
  return x;
}

using FlowDrift = std::function<Vec(const Vec& tau, double t)>;
using RateFn = std::function<double(double)>;
using NoiseFn = std::function<Vec(int step, double dt)>;  // Brownian increment for a step

struct EulerMaruyamaOptions {
  bool lift_angles = true;  // evaluate the drift on continuously unwrapped flow coordinates
};

// dx = [beta Pi f(tau) + gamma^2/2 Casimir] dt + gamma Pi dW
inline Trajectory euler_maruyama_forward(const GroupAction& g, const Vec& x0, const RateFn& beta_fn,
                                         const RateFn& gamma_fn, const FlowDrift& f_fn, double t_end, int steps,
                                         const NoiseFn& noise, EulerMaruyamaOptions opt = {}) {
  require(steps >= 1, ErrorKind::InvalidParams, "euler_maruyama_forward needs steps >= 1");
  g.check_point(x0);
  Trajectory tr;
  tr.states.resize(steps + 1, g.dim_x());
  tr.states.row(0) = x0.transpose();
  tr.times.push_back(0.0);
  const double dt = t_end / steps;
  Vec x = x0;
  Vec tau = g.to_flow(x0);
  for (int n = 0; n < steps; ++n) {
    const double t = n * dt;
    x = clamp_state(g, x, &tr.clamped);
    const Vec principal = g.to_flow(x);
    // a reflected representative flips the matching field column
    const FlowImage lifted = opt.lift_angles ? lift_flow_image(g, principal, tau)
                                             : FlowImage{principal, Vec::Ones(principal.size())};
    tau = lifted.tau;
    const Mat pi = g.fundamental_matrix(x);
    const double gam = gamma_fn(t);
    const Vec dw = noise(n, dt);
    x = x + (beta_fn(t) * (pi * lifted.sign.cwiseProduct(f_fn(tau, t))) + 0.5 * gam * gam * g.casimir_field(x)) * dt +
        gam * (pi * dw);
    require(x.allFinite(), ErrorKind::NonFiniteState, "euler_maruyama_forward diverged at step " + std::to_string(n));
    tr.states.row(n + 1) = x.transpose();
    tr.times.push_back(t + dt);
  }
  return tr;
}

inline Trajectory euler_maruyama_forward(const GroupAction& g, const Vec& x0, const RateFn& beta_fn,
                                         const RateFn& gamma_fn, const FlowDrift& f_fn, double t_end, int steps,
                                         Rng& rng, EulerMaruyamaOptions opt = {}) {
  const int d = g.dim_g();
  return euler_maruyama_forward(
      g, x0, beta_fn, gamma_fn, f_fn, t_end, steps,
      [&](int, double dt) { return Vec(std::sqrt(dt) * rng.normal_vec(d)); }, opt);
}

inline Vec conditional_score(double sigma, const Vec& eta) {
  require(sigma > 0.0, ErrorKind::DegenerateTime, "conditional score needs sigma > 0");
  return -eta / sigma;
}

inline Vec conditional_score(const NoiseSchedule& s, int t, const Vec& eta) { return conditional_score(s.sigma[t], eta); }

// ---------------------------------------------------------------- reverse sampler

// cartesian: the score is L log p of the density of x.
// flow: the score is the gradient of log p over flow coordinates, which is what the noise-prediction
// objective learns; the two differ by the divergence scalars of the generators.
enum class ScoreConvention { cartesian, flow };
enum class ReverseUpdate { linearized, exponential };

struct ReverseOptions {
  ScoreConvention convention = ScoreConvention::cartesian;
  ReverseUpdate update = ReverseUpdate::linearized;
  bool drift = true;             // include the 1/2 tau term; off for the zero-drift bridge
  bool deterministic_last = true;
  double casimir_sign = 1.0;     // -1 reproduces a sign misreading, kept for comparison only
  std::optional<Vec> active;     // per-generator 0/1 mask
};

struct ReverseResult {
  Vec x;
  bool clamped = false;
};

inline Vec masked(const Vec& v, const std::optional<Vec>& mask) { return mask ? Vec(v.cwiseProduct(*mask)) : v; }

// sum of A_i^2 x over the active generators; the full sum is the Casimir field
inline Vec active_casimir(const GroupAction& g, const Vec& x, const std::optional<Vec>& mask) {
  if (!mask) return g.casimir_field(x);
  Vec c = Vec::Zero(g.dim_x());
  for (int i = 0; i < g.dim_g(); ++i) {
    if ((*mask)[i] == 0.0) continue;
    if (auto a = g.generator_matrix(i, x)) {
      c += (*mask)[i] * (*a) * ((*a) * x);
    } else {
      // every flow without a dense generator rotates about an axis fixed along its own orbit
      const double h = 1e-4;
      c += (*mask)[i] * (g.flow(i, h, x) - 2.0 * x + g.flow(i, -h, x)) / (h * h);
    }
  }
  return c;
}

// one step of the discretized reverse SDE given the noise draw eta
inline ReverseResult reverse_update(const GroupAction& g, double beta, const Vec& x_in, const Vec& score,
                                    const Vec& eta, const ReverseOptions& opt) {
  require(score.size() == g.dim_g(), ErrorKind::SizeMismatch, "score length must equal dim_g");
  ReverseResult out;
  const Vec x = clamp_state(g, x_in, &out.clamped);
  const Vec tau = g.to_flow(x);
  const Vec drift = opt.drift ? Vec(0.5 * tau) : Vec::Zero(g.dim_g());
  const bool need_div = opt.update == ReverseUpdate::linearized ? true : opt.convention == ScoreConvention::cartesian;
  const Vec div = need_div ? g.divergence_scalars(x) : Vec::Zero(g.dim_g());

  if (opt.update == ReverseUpdate::exponential) {
    const Vec flow_score = opt.convention == ScoreConvention::flow ? score : Vec(score + div);
    const Vec step = masked(beta * (drift + flow_score) + std::sqrt(beta) * eta, opt.active);
    out.x = g.group_exp_apply(step, x);
    return out;
  }

  const Vec cart = opt.convention == ScoreConvention::cartesian ? score : Vec(score - div);
  const Mat pi = g.fundamental_matrix(x);
  const Vec v_s = pi * masked(drift + cart, opt.active);
  const Vec v_c = active_casimir(g, x, opt.active);
  const Vec v_d = pi * masked(div, opt.active);
  const Vec v = v_s + opt.casimir_sign * 0.5 * v_c + v_d;
  out.x = x + beta * v + std::sqrt(beta) * (pi * masked(eta, opt.active));
  return out;
}

inline ReverseResult reverse_step(const GroupAction& g, const NoiseSchedule& s, const Vec& x_t, int t, const Vec& score,
                                  Rng& rng, const ReverseOptions& opt) {
  Vec eta = rng.normal_vec(g.dim_g());
  if (t == 0 && opt.deterministic_last) eta.setZero();
  return reverse_update(g, s.beta[t], x_t, score, eta, opt);
}

using ScoreFn = std::function<Vec(const Vec& x, int t)>;

struct SampleOptions {
  ReverseOptions reverse;
  std::size_t record_chains = 0;  // trajectories kept for the first chains
};

struct SampleResult {
  SampleBatch batch;
  std::vector<Trajectory> trajectories;
  std::size_t clamped_chains = 0;
  std::string first_failure;  // message of the lowest-index failed chain
};

namespace detail {

// shared reverse loop: chain c starts at x_start(c, rng) and walks t = T-1 .. 0
template <class Start>
SampleResult run_reverse(const GroupAction& g, const std::vector<double>& betas, const ScoreFn& score_fn,
                         std::size_t n, Seed seed, const SampleOptions& opt, Start&& x_start) {
  const int T = static_cast<int>(betas.size());
  std::vector<Vec> finals(n);
  std::vector<char> ok(n, 0), clamped(n, 0);
  std::vector<std::string> why(n);
  std::vector<Trajectory> traj(std::min(n, opt.record_chains));
  parallel_for(n, [&](std::size_t c) {
    Rng rng(mix_seed(seed.value, c));
    Vec x = x_start(c, rng);
    const bool rec = c < traj.size();
    if (rec) {
      traj[c].states.resize(T + 1, g.dim_x());
      traj[c].states.row(0) = x.transpose();
      traj[c].times.push_back(T);
      traj[c].seed = Seed{mix_seed(seed.value, c)};
    }
    try {
      for (int t = T - 1; t >= 0; --t) {
        Vec eta = rng.normal_vec(g.dim_g());
        if (t == 0 && opt.reverse.deterministic_last) eta.setZero();
        const Vec sc = score_fn(clamp_state(g, x), t);
        auto r = reverse_update(g, betas[t], x, sc, eta, opt.reverse);
        if (!r.x.allFinite())
          fail(ErrorKind::NonFiniteState, "chain " + std::to_string(c) + " at step " + std::to_string(t));
        clamped[c] |= r.clamped;
        x = std::move(r.x);
        if (rec) {
          traj[c].states.row(T - t) = x.transpose();
          traj[c].times.push_back(t);
        }
      }
      finals[c] = x;
      ok[c] = 1;
    } catch (const Error& e) {
      ok[c] = 0;
      why[c] = e.what();
    }
  });
  SampleResult res;
  std::size_t good = std::count(ok.begin(), ok.end(), 1);
  res.batch.x.resize(good, g.dim_x());
  std::size_t r = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (ok[c]) res.batch.x.row(r++) = finals[c].transpose();
    else if (res.first_failure.empty()) res.first_failure = "chain " + std::to_string(c) + ": " + why[c];
    res.clamped_chains += clamped[c];
  }
  res.batch.group = g.name();
  res.batch.seed = seed;
  res.batch.dropped = n - good;
  res.trajectories = std::move(traj);
  return res;
}

}  // namespace detail

// reverse sampler from the tau-Gaussian prior
inline SampleResult sample(const GroupAction& g, const NoiseSchedule& s, const ScoreFn& score_fn, std::size_t n,
                           Seed seed, const SampleOptions& opt = {}) {
  return detail::run_reverse(g, s.beta, score_fn, n, seed, opt,
                             [&](std::size_t, Rng& rng) { return g.from_flow(rng.normal_vec(g.dim_g())); });
}

// draws from the tau-Gaussian prior pushed through the flow map
inline Mat prior_pushforward(const GroupAction& g, std::size_t n, Rng& rng) {
  Mat out(n, g.dim_x());
  for (std::size_t i = 0; i < n; ++i) out.row(i) = g.from_flow(rng.normal_vec(g.dim_g())).transpose();
  return out;
}

// ---------------------------------------------------------------- bridge

inline ForwardDraw bridge_forward(const GroupAction& g, const BridgeSchedule& b, const Vec& x0, int t, Rng& rng) {
  require(t >= 0 && t < b.T, ErrorKind::InvalidParams, "time index outside [0, T)");
  return forward_draw(g, x0, 1.0, b.sigma(t), rng.normal_vec(g.dim_g()), t);
}

inline ReverseOptions bridge_defaults() {
  ReverseOptions r;
  r.convention = ScoreConvention::flow;
  r.update = ReverseUpdate::exponential;
  r.drift = false;
  return r;
}

// transports the given source states through the zero-drift reverse chain
inline SampleResult bridge_sample(const GroupAction& g, const BridgeSchedule& b, const ScoreFn& score_fn,
                                  const Mat& sources, Seed seed, SampleOptions opt = {bridge_defaults(), 0}) {
  opt.reverse.drift = false;
  return detail::run_reverse(g, b.beta, score_fn, sources.rows(), seed, opt,
                             [&](std::size_t c, Rng&) { return Vec(sources.row(c).transpose()); });
}

// ---------------------------------------------------------------- analytic oracle

// target whose flow coordinates are independent Gaussians
struct GaussianTauTarget {
  Vec mean, sd;

  Mat sample(const GroupAction& g, std::size_t n, Rng& rng) const {
    Mat out(n, g.dim_x());
    for (std::size_t i = 0; i < n; ++i)
      out.row(i) = g.from_flow(mean + sd.cwiseProduct(rng.normal_vec(mean.size()))).transpose();
    return out;
  }

  // gradient over flow coordinates of the noised marginal, summed over equivalent representations
  Vec flow_score(const GroupAction& g, double abar, double sigma, const Vec& x) const {
    const Vec var = (abar * abar) * sd.cwiseProduct(sd) + Vec::Constant(sd.size(), sigma * sigma);
    const Vec mu = abar * mean;
    const auto images = flow_images(g, g.to_flow(x));
    std::vector<double> logw;
    logw.reserve(images.size());
    for (const auto& im : images) logw.push_back(-0.5 * ((im.tau - mu).array().square() / var.array()).sum());
    const double mx = *std::max_element(logw.begin(), logw.end());
    Vec acc = Vec::Zero(mean.size());
    double z = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const double w = std::exp(logw[i] - mx);
      z += w;
      acc += w * images[i].sign.cwiseProduct(Vec(-(images[i].tau - mu).array() / var.array()));
    }
    return acc / z;
  }

  ScoreFn score_fn(const GroupAction& g, const NoiseSchedule& s, ScoreConvention conv) const {
    return [this, &g, &s, conv](const Vec& x, int t) {
      Vec sc = flow_score(g, s.alpha_bar[t], s.sigma[t], x);
      if (conv == ScoreConvention::cartesian) sc -= g.divergence_scalars(x);
      return sc;
    };
  }
};

}  // namespace liediff
