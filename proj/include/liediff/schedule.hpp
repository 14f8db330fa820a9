#pragma once

#include "liediff/core.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace liediff {

enum class ScheduleKind { cosine, linear };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "linear"; }
inline std::optional<ScheduleKind> parse_schedule_kind(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear") return ScheduleKind::linear;
  return std::nullopt;
}

// Index k in [0, T) is diffusion step k+1; continuous time u runs over [0, T] with data at u = 0.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int T = 0;
  std::vector<double> beta, alpha_bar, sigma;

  // intrinsic OU time reached at index k: tau_k = abar tau_0 + sigma eta  <=>  s = -2 log abar
  double intrinsic_time(int k) const { return -2.0 * std::log(alpha_bar[k]); }

  // continuous interpolant: the angle phi = atan2(sigma, abar) is piecewise linear in u through (0, 0) and
  // (k+1, phi_k), so abar = cos phi and sigma = sin phi stay on the unit circle with bounded derivatives
  double phase_at(double u) const {
    const auto [k, w] = segment(u);
    const double lo = k == 0 ? 0.0 : phase(k - 1);
    return lo + w * (phase(k) - lo);
  }
  double d_phase_at(double u) const {
    const int k = segment(u).first;
    return phase(k) - (k == 0 ? 0.0 : phase(k - 1));
  }
  double sigma_at(double u) const { return std::sin(phase_at(u)); }
  double alpha_at(double u) const { return std::cos(phase_at(u)); }
  double d_sigma_at(double u) const { return std::cos(phase_at(u)) * d_phase_at(u); }
  double d_alpha_at(double u) const { return -std::sin(phase_at(u)) * d_phase_at(u); }

 private:
  // segment index k covers u in [k, k+1]
  double phase(int k) const { return std::atan2(sigma[k], alpha_bar[k]); }
  std::pair<int, double> segment(double u) const {
    int k = static_cast<int>(std::floor(u));
    k = std::clamp(k, 0, T - 1);
    return {k, u - k};
  }
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  require(T >= 2, ErrorKind::InvalidParams, "schedule needs T >= 2, got " + std::to_string(T));
  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.beta.resize(T);
  if (kind == ScheduleKind::cosine) {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos(((t / T + offset) / (1.0 + offset)) * kPi / 2.0);
      return c * c;
    };
    for (int k = 1; k <= T; ++k) s.beta[k - 1] = std::min(1.0 - f(k) / f(k - 1), 0.999);
  } else {
    // the usual [1e-4, 2e-2] range is stated for 1000 steps; rescale so shorter chains still reach the prior
    const double scale = 1000.0 / T;
    for (int k = 0; k < T; ++k)
      s.beta[k] = std::min(scale * (1e-4 + (2e-2 - 1e-4) * k / (T - 1.0)), 0.999);
  }
  double acp = 1.0;
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  for (int k = 0; k < T; ++k) {
    acp *= 1.0 - s.beta[k];
    s.alpha_bar[k] = std::sqrt(acp);
    s.sigma[k] = std::sqrt(1.0 - acp);
  }
  require(s.alpha_bar.back() <= 0.05, ErrorKind::InvalidParams,
          "schedule does not reach the prior: final alpha_bar " + std::to_string(s.alpha_bar.back()));
  return s;
}

// zero-drift schedule: tau_t = tau_0 + sqrt(cumvar_t) eta
struct BridgeSchedule {
  int T = 0;
  std::vector<double> beta, cumvar;
  double sigma(int k) const { return std::sqrt(cumvar[k]); }
};

inline BridgeSchedule make_bridge_schedule(int T, double total_variance, double beta_min = 1e-4) {
  require(T >= 2, ErrorKind::InvalidParams, "bridge schedule needs T >= 2");
  const double beta_max = 2.0 * total_variance / T - beta_min;
  require(beta_max > beta_min, ErrorKind::InvalidParams, "total variance too small for the step count");
  BridgeSchedule b;
  b.T = T;
  double acc = 0.0;
  for (int k = 0; k < T; ++k) {
    b.beta.push_back(beta_min + (beta_max - beta_min) * k / (T - 1.0));
    acc += b.beta.back();
    b.cumvar.push_back(acc);
  }
  return b;
}

// adaptive Simpson on [a, b]
inline double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double tol = 1e-10) {
  struct Rec {
    const std::function<double(double)>& f;
    double run(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) const {
      const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double diff = left + right - whole;
      if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
      return run(a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + run(m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
    }
  };
  if (a == b) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return Rec{f}.run(a, b, fa, fm, fb, whole, tol, 50);
}

// (exp(-int beta), sqrt(1 - exp(-int beta))) for a continuous-time rate
inline std::pair<double, double> ou_solution(const std::function<double(double)>& beta_fn, double t) {
  const double integral = integrate_adaptive(beta_fn, 0.0, t, 1e-10);
  const double m = std::exp(-integral);
  return {m, std::sqrt(1.0 - m)};
}

}  // namespace liediff
