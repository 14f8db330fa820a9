#pragma once

#include "liediff/sde.hpp"

#include <chrono>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace liediff {

enum class Activation { silu, tanh };

inline const char* to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }
inline std::optional<Activation> parse_activation(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  return std::nullopt;
}

struct NetConfig {
  int hidden_width = 128;
  int hidden_layers = 3;
  int time_dim = 32;
  Activation activation = Activation::silu;
  bool zero_head = false;
  bool sigma_scaled = true;  // score head divided by sigma_t
};

// Feed-forward net on [x, sinusoidal(u)]; u is continuous time in [0, T], step index k sits at u = k + 1.
class ScoreNetwork {
 public:
  // activations cached by a batched forward pass, consumed by backward()
  struct Tape {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activations of hidden layers
  };

  ScoreNetwork() = default;

  ScoreNetwork(int dim_in, int dim_out, const NetConfig& cfg, Rng& rng) : cfg_(cfg), dim_in_(dim_in) {
    require(dim_in >= 1 && dim_out >= 1, ErrorKind::InvalidParams, "network needs positive input/output sizes");
    require(cfg.hidden_layers >= 1 && cfg.hidden_width >= 1, ErrorKind::InvalidParams, "network needs a hidden layer");
    require(cfg.time_dim >= 2 && cfg.time_dim % 2 == 0, ErrorKind::InvalidParams, "time_dim must be even and >= 2");
    sizes_.push_back(dim_in + cfg.time_dim);
    for (int l = 0; l < cfg.hidden_layers; ++l) sizes_.push_back(cfg.hidden_width);
    sizes_.push_back(dim_out);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(double(sizes_[l]));
      Mat w(sizes_[l + 1], sizes_[l]);
      Vec b(sizes_[l + 1]);
      for (auto& v : w.reshaped()) v = rng.uniform(-bound, bound);
      for (auto& v : b) v = rng.uniform(-bound, bound);
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
    }
    if (cfg.zero_head) {
      weights_.back().setZero();
      biases_.back().setZero();
    }
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  int dim_in() const { return dim_in_; }
  int dim_out() const { return sizes_.empty() ? 0 : sizes_.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }
  Vec parameters() const {
    Vec p(parameter_count());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      p.segment(o, weights_[l].size()) = weights_[l].reshaped();
      o += weights_[l].size();
      p.segment(o, biases_[l].size()) = biases_[l];
      o += biases_[l].size();
    }
    return p;
  }
  void set_parameters(const Vec& p) {
    require(static_cast<std::size_t>(p.size()) == parameter_count(), ErrorKind::SizeMismatch,
            "parameter vector length mismatch");
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      weights_[l].reshaped() = p.segment(o, weights_[l].size());
      o += weights_[l].size();
      biases_[l] = p.segment(o, biases_[l].size());
      o += biases_[l].size();
    }
  }

  Vec embed_time(double u) const {
    const int half = cfg_.time_dim / 2;
    Vec e(cfg_.time_dim);
    for (int i = 0; i < half; ++i) {
      const double w = std::exp(-std::log(10000.0) * i / half);
      e[i] = std::sin(u * w);
      e[half + i] = std::cos(u * w);
    }
    return e;
  }

  // x: dim_in x B, u: B times; returns dim_out x B
  Mat forward(const Mat& x, std::span<const double> u, Tape* tape = nullptr) const {
    require(x.rows() == dim_in_ && static_cast<std::size_t>(x.cols()) == u.size(), ErrorKind::SizeMismatch,
            "network input shape mismatch");
    Mat h(sizes_[0], x.cols());
    h.topRows(dim_in_) = x;
    for (Eigen::Index b = 0; b < x.cols(); ++b) h.col(b).tail(cfg_.time_dim) = embed_time(u[b]);
    if (tape) {
      tape->inputs.clear();
      tape->pre.clear();
    }
    const std::size_t last = weights_.size() - 1;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Mat z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (tape) tape->inputs.push_back(h);
      if (l == last) return z;
      h = activate(z);
      if (tape) tape->pre.push_back(std::move(z));
    }
    return h;
  }

  Vec operator()(const Vec& x, double u) const {
    const double t[1] = {u};
    return forward(x, t).col(0);
  }

  // gradient of sum(d_out .* output) over the flat parameter vector
  Vec backward(const Tape& tape, const Mat& d_out) const {
    Vec grad(parameter_count());
    std::vector<Eigen::Index> offset(weights_.size());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      offset[l] = o;
      o += weights_[l].size() + biases_[l].size();
    }
    Mat delta = d_out;
    for (std::size_t l = weights_.size(); l-- > 0;) {
      const Mat gw = delta * tape.inputs[l].transpose();
      grad.segment(offset[l], gw.size()) = gw.reshaped();
      grad.segment(offset[l] + gw.size(), biases_[l].size()) = delta.rowwise().sum();
      if (l == 0) break;
      delta = (weights_[l].transpose() * delta).cwiseProduct(activate_grad(tape.pre[l - 1]));
    }
    return grad;
  }

  const std::vector<Mat>& weights() const { return weights_; }
  const std::vector<Vec>& biases() const { return biases_; }

 private:
  Mat activate(const Mat& z) const {
    if (cfg_.activation == Activation::tanh) return z.array().tanh();
    return z.array() / (1.0 + (-z.array()).exp());
  }
  Mat activate_grad(const Mat& z) const {
    if (cfg_.activation == Activation::tanh) return 1.0 - z.array().tanh().square();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
    return s * (1.0 + z.array() * (1.0 - s));
  }

  NetConfig cfg_;
  int dim_in_ = 0;
  std::vector<int> sizes_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

inline Vec net_forward(const ScoreNetwork& net, const Vec& x, int t_index) { return net(x, t_index + 1.0); }

// ---------------------------------------------------------------- optimizer

struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vec m{}, v{};
  long step = 0;

  void update(Vec& params, const Vec& grad) {
    if (m.size() != params.size()) {
      m = Vec::Zero(params.size());
      v = Vec::Zero(params.size());
    }
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, double(step)), c2 = 1.0 - std::pow(beta2, double(step));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

// ---------------------------------------------------------------- training

enum class LossKind { score_matching, flow_matching };

inline const char* to_string(LossKind k) { return k == LossKind::score_matching ? "score_matching" : "flow_matching"; }

struct TrainConfig {
  int batch_size = 256;
  int steps = 20000;
  double learning_rate = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Seed seed{0};
  LossKind loss_kind = LossKind::score_matching;
  std::optional<int> fixed_time;  // train at one step index only
  bool sigma_weighted = true;     // multiply each sample's loss by sigma_t^2
};

struct TrainReport {
  std::vector<double> losses;  // one per step
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  Seed seed{};
  LossKind loss_kind = LossKind::score_matching;
};

inline double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  end = std::min(end, v.size());
  if (begin >= end) return 0.0;
  return std::accumulate(v.begin() + begin, v.begin() + end, 0.0) / double(end - begin);
}

namespace detail {

inline std::vector<Vec> flow_coords_of(const GroupAction& g, const Mat& data) {
  require(data.rows() >= 1, ErrorKind::InvalidParams, "training needs a non-empty dataset");
  require(data.cols() == g.dim_x(), ErrorKind::SizeMismatch, "dataset width does not match the group");
  std::vector<Vec> tau(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) tau[i] = g.to_flow(data.row(i).transpose());
  return tau;
}

inline void check_config(const TrainConfig& cfg) {
  require(cfg.batch_size >= 1, ErrorKind::InvalidParams, "batch_size must be >= 1");
  require(cfg.learning_rate > 0.0, ErrorKind::InvalidParams, "learning_rate must be > 0");
  require(cfg.steps >= 0, ErrorKind::InvalidParams, "steps must be >= 0");
}

// shared loop: fill(batch, x, u, rng) draws inputs, loss_grad(out, x) returns (loss, d_out)
template <class Fill, class LossGrad>
TrainReport run_training(ScoreNetwork& net, const TrainConfig& cfg, Rng& rng, Fill&& fill, LossGrad&& loss_grad) {
  check_config(cfg);
  const auto start = std::chrono::steady_clock::now();
  TrainReport rep;
  rep.seed = cfg.seed;
  rep.loss_kind = cfg.loss_kind;
  rep.losses.reserve(cfg.steps);
  Adam opt{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps};
  Vec params = net.parameters();
  Mat x(net.dim_in(), cfg.batch_size);
  std::vector<double> u(cfg.batch_size);
  ScoreNetwork::Tape tape;
  for (int step = 0; step < cfg.steps; ++step) {
    fill(x, u, rng);
    const Mat out = net.forward(x, u, &tape);
    auto [loss, d_out] = loss_grad(out, x);
    require(std::isfinite(loss), ErrorKind::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    const Vec grad = net.backward(tape, d_out);
    opt.update(params, grad);
    require(params.allFinite(), ErrorKind::NonFiniteLoss, "non-finite parameters at step " + std::to_string(step));
    net.set_parameters(params);
    rep.losses.push_back(loss);
  }
  rep.final_loss = rep.losses.empty() ? 0.0 : rep.losses.back();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace detail

// mean over the batch of |s(x_t, t) + eta / sigma_t|^2, x_t drawn by the closed-form forward process
inline TrainReport train_score(ScoreNetwork& net, const GroupAction& g, const NoiseSchedule& s, const Mat& data,
                               const TrainConfig& cfg, Rng& rng) {
  require(net.dim_in() == g.dim_x() && net.dim_out() == g.dim_g(), ErrorKind::SizeMismatch,
          "network shape does not match the group");
  const auto tau0 = detail::flow_coords_of(g, data);
  Mat target(g.dim_g(), cfg.batch_size);
  Vec scale(cfg.batch_size), weight(cfg.batch_size);
  auto fill = [&](Mat& x, std::vector<double>& u, Rng& r) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Vec& t0 = tau0[r.index(tau0.size())];
      const int t = cfg.fixed_time ? *cfg.fixed_time : static_cast<int>(r.index(s.T));
      const Vec eta = r.normal_vec(g.dim_g());
      const Vec tau = s.alpha_bar[t] * t0 + s.sigma[t] * eta;
      x.col(b) = g.from_flow(tau);
      u[b] = t + 1.0;
      target.col(b) = -representative_sign(g, x.col(b), tau).cwiseProduct(eta) / s.sigma[t];
      scale[b] = net.config().sigma_scaled ? 1.0 / s.sigma[t] : 1.0;
      weight[b] = cfg.sigma_weighted ? s.sigma[t] * s.sigma[t] : 1.0;
    }
  };
  auto loss_grad = [&](const Mat& out, const Mat&) {
    const double n = double(cfg.batch_size);
    const Mat diff = out * scale.asDiagonal() - target;
    const double loss = (diff.colwise().squaredNorm().transpose().array() * weight.array()).sum() / n;
    return std::pair<double, Mat>{loss, 2.0 * diff * (weight.cwiseProduct(scale)).asDiagonal() / n};
  };
  return detail::run_training(net, cfg, rng, fill, loss_grad);
}

// score function for the sampler; the network is trained on flow-coordinate scores
inline ScoreFn network_score_fn(const ScoreNetwork& net, const NoiseSchedule& s) {
  return [&net, &s](const Vec& x, int t) {
    Vec out = net_forward(net, x, t);
    if (net.config().sigma_scaled) out /= s.sigma[t];
    return out;
  };
}

inline SampleOptions network_sample_options() {
  SampleOptions o;
  o.reverse.convention = ScoreConvention::flow;
  return o;
}

// ---------------------------------------------------------------- bridge

// zero-drift noising of the targets, tau_t = tau0 + sigma_t (mask * eta); inactive generators see no noise
inline TrainReport train_bridge(ScoreNetwork& net, const GroupAction& g, const BridgeSchedule& b, const Mat& targets,
                                const std::optional<Vec>& active, const TrainConfig& cfg, Rng& rng) {
  require(net.dim_in() == g.dim_x() && net.dim_out() == g.dim_g(), ErrorKind::SizeMismatch,
          "network shape does not match the group");
  require(!active || active->size() == g.dim_g(), ErrorKind::SizeMismatch, "mask length must equal dim_g");
  const auto tau0 = detail::flow_coords_of(g, targets);
  Mat target(g.dim_g(), cfg.batch_size);
  Vec scale(cfg.batch_size), weight(cfg.batch_size);
  auto fill = [&](Mat& x, std::vector<double>& u, Rng& r) {
    for (int k = 0; k < cfg.batch_size; ++k) {
      const Vec& t0 = tau0[r.index(tau0.size())];
      const int t = cfg.fixed_time ? *cfg.fixed_time : static_cast<int>(r.index(b.T));
      const Vec eta = masked(r.normal_vec(g.dim_g()), active);
      const double sd = b.sigma(t);
      const Vec tau = t0 + sd * eta;
      x.col(k) = g.from_flow(tau);
      u[k] = t + 1.0;
      target.col(k) = -representative_sign(g, x.col(k), tau).cwiseProduct(eta) / sd;
      scale[k] = net.config().sigma_scaled ? 1.0 / sd : 1.0;
      weight[k] = cfg.sigma_weighted ? sd * sd : 1.0;
    }
  };
  auto loss_grad = [&](const Mat& out, const Mat&) {
    const double n = double(cfg.batch_size);
    const Mat diff = out * scale.asDiagonal() - target;
    const double loss = (diff.colwise().squaredNorm().transpose().array() * weight.array()).sum() / n;
    return std::pair<double, Mat>{loss, 2.0 * diff * (weight.cwiseProduct(scale)).asDiagonal() / n};
  };
  return detail::run_training(net, cfg, rng, fill, loss_grad);
}

inline ScoreFn bridge_score_fn(const ScoreNetwork& net, const BridgeSchedule& b) {
  return [&net, &b](const Vec& x, int t) {
    Vec out = net_forward(net, x, t);
    if (net.config().sigma_scaled) out /= b.sigma(t);
    return out;
  };
}

// ---------------------------------------------------------------- flow matching

// Pi(x) [abar'(u) tau0 + sigma'(u) eta]: velocity d x / d u along the conditional path with fixed eta
inline Vec cfm_conditional_field(const GroupAction& g, const NoiseSchedule& s, const Vec& x, const Vec& tau0,
                                 const Vec& eta, double u) {
  const Vec sign = representative_sign(g, x, s.alpha_at(u) * tau0 + s.sigma_at(u) * eta);
  return g.fundamental_matrix(x) * sign.cwiseProduct(s.d_alpha_at(u) * tau0 + s.d_sigma_at(u) * eta);
}

inline Vec cfm_target(const GroupAction& g, const NoiseSchedule& s, const Vec& x_t, const Vec& tau_t,
                      const Vec& tau0, double u) {
  const double sig = s.sigma_at(u);
  require(sig > 0.0, ErrorKind::DegenerateTime, "flow-matching target needs sigma > 0");
  const double a = s.alpha_at(u);
  return g.fundamental_matrix(x_t) * representative_sign(g, x_t, tau_t)
                                        .cwiseProduct(s.d_alpha_at(u) * tau0 + (s.d_sigma_at(u) / sig) * (tau_t - a * tau0));
}

// Heun integration of dx/du = velocity(x, u) from u_start to u_end
template <class Velocity>
Vec heun_integrate(const GroupAction& g, Velocity&& velocity, Vec x, double u_start, double u_end, int steps) {
  require(steps >= 1, ErrorKind::InvalidParams, "heun_integrate needs steps >= 1");
  const double h = (u_end - u_start) / steps;
  // stage times sit just inside the step so a schedule with kinks is read on the segment being crossed
  const double inset = 1e-9 * h;
  for (int k = 0; k < steps; ++k) {
    const double u = u_start + k * h;
    x = clamp_state(g, x);
    const Vec k1 = velocity(x, u + inset);
    const Vec xe = clamp_state(g, Vec(x + h * k1));
    const Vec k2 = velocity(xe, u + h - inset);
    x += 0.5 * h * (k1 + k2);
    require(x.allFinite(), ErrorKind::NonFiniteState, "heun_integrate diverged at step " + std::to_string(k));
  }
  return x;
}

// The network emits generator coefficients for d x / d s with s = u / T, so targets stay O(1).
inline TrainReport train_cfm(ScoreNetwork& net, const GroupAction& g, const NoiseSchedule& s, const Mat& data,
                             const TrainConfig& cfg, Rng& rng) {
  require(net.dim_in() == g.dim_x() && net.dim_out() == g.dim_g(), ErrorKind::SizeMismatch,
          "network shape does not match the group");
  const auto tau0 = detail::flow_coords_of(g, data);
  std::vector<Mat> pis(cfg.batch_size);
  Mat target(g.dim_x(), cfg.batch_size);
  auto fill = [&](Mat& x, std::vector<double>& u, Rng& r) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Vec& t0 = tau0[r.index(tau0.size())];
      const double ub = std::max(r.uniform() * s.T, 1e-6);
      const Vec eta = r.normal_vec(g.dim_g());
      const Vec tau = s.alpha_at(ub) * t0 + s.sigma_at(ub) * eta;
      const Vec xb = g.from_flow(tau);
      x.col(b) = xb;
      u[b] = ub;
      pis[b] = g.fundamental_matrix(xb);
      target.col(b) =
          s.T * (pis[b] * representative_sign(g, xb, tau).cwiseProduct(s.d_alpha_at(ub) * t0 + s.d_sigma_at(ub) * eta));
    }
  };
  auto loss_grad = [&](const Mat& out, const Mat&) {
    const double n = double(cfg.batch_size);
    Mat d(out.rows(), out.cols());
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Vec r = pis[b] * out.col(b) - target.col(b);
      loss += r.squaredNorm();
      d.col(b) = 2.0 * pis[b].transpose() * r / n;
    }
    return std::pair<double, Mat>{loss / n, d};
  };
  return detail::run_training(net, cfg, rng, fill, loss_grad);
}

inline Vec cfm_velocity(const GroupAction& g, const NoiseSchedule& s, const ScoreNetwork& net, const Vec& x, double u) {
  return g.fundamental_matrix(x) * net(x, u) / double(s.T);
}

// integrates the learned field from the tau-Gaussian prior at u = T down to u = 0
inline SampleBatch ode_sample(const ScoreNetwork& net, const GroupAction& g, const NoiseSchedule& s, std::size_t n,
                              Seed seed, int steps = 500) {
  std::vector<Vec> finals(n);
  std::vector<char> ok(n, 0);
  parallel_for(n, [&](std::size_t c) {
    Rng rng(mix_seed(seed.value, c));
    try {
      finals[c] = heun_integrate(
          g, [&](const Vec& x, double u) { return cfm_velocity(g, s, net, x, u); },
          g.from_flow(rng.normal_vec(g.dim_g())), s.T, 0.0, steps);
      ok[c] = 1;
    } catch (const Error&) {
    }
  });
  SampleBatch out;
  const std::size_t good = std::count(ok.begin(), ok.end(), 1);
  out.x.resize(good, g.dim_x());
  std::size_t r = 0;
  for (std::size_t c = 0; c < n; ++c)
    if (ok[c]) out.x.row(r++) = finals[c].transpose();
  out.group = g.name();
  out.seed = seed;
  out.dropped = n - good;
  return out;
}

// exact marginal velocity coefficients for a Gaussian-in-tau target (per-coordinate posterior means)
inline Vec gaussian_target_velocity(const GroupAction& g, const NoiseSchedule& s, const GaussianTauTarget& target,
                                    const Vec& x, double u) {
  const double a = s.alpha_at(u), sig = s.sigma_at(u);
  const Vec tau = g.to_flow(x);
  const Vec var = (a * a) * target.sd.cwiseAbs2() + Vec::Constant(tau.size(), sig * sig);
  const Vec resid = (tau - a * target.mean).cwiseQuotient(var);
  const Vec post_tau0 = target.mean + a * target.sd.cwiseAbs2().cwiseProduct(resid);
  const Vec post_eta = sig * resid;
  return g.fundamental_matrix(x) * (s.d_alpha_at(u) * post_tau0 + s.d_sigma_at(u) * post_eta);
}

}  // namespace liediff
