#pragma once

#include "liediff/io.hpp"

namespace liediff {

// artifacts land in the output directory under fixed names
struct ArtifactPaths {
  std::filesystem::path dir;
  std::filesystem::path data() const { return dir / "data.csv"; }
  std::filesystem::path checkpoint() const { return dir / "model.ckpt.json"; }
  std::filesystem::path train_report() const { return dir / "train_report.json"; }
  std::filesystem::path bridge_checkpoint() const { return dir / "bridge.ckpt.json"; }
  std::filesystem::path transported() const { return dir / "transported.csv"; }
};

inline std::filesystem::path sidecar(const std::filesystem::path& p) {
  auto s = p;
  s.replace_extension(".meta.json");
  return s;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create directory " + dir.string() + ": " + ec.message());
}

inline void save_csv_with_meta(const Mat& x, const std::filesystem::path& path, const json& meta) {
  SampleBatch b;
  b.x = x;
  save_csv(b, path);
  write_text_atomic(sidecar(path), dump(meta));
}

inline Mat training_data(const RunConfig& c) {
  if (!c.dataset_path.empty()) return load_csv(c.dataset_path).x;
  return generate(c.dataset).x;
}

// ---------------------------------------------------------------- generate

inline std::filesystem::path cmd_generate(const RunConfig& c) {
  const ArtifactPaths out{c.output_dir};
  ensure_dir(out.dir);
  const auto batch = generate(c.dataset);
  save_csv_with_meta(batch.x, out.data(), metadata("dataset", c.echo, c.seed, {{"dataset", to_string(c.dataset.name)}}));
  return out.data();
}

// ---------------------------------------------------------------- train

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainReport report;
};

inline TrainOutcome train_model(const RunConfig& c, const Mat& data) {
  const auto g = c.make_group();
  const auto s = make_schedule(c.schedule, c.T);
  Rng init(Seed{mix_seed(c.seed.value, 3)});
  ScoreNetwork net(g.dim_x(), g.dim_g(), c.net, init);
  Rng rng(c.train.seed);
  TrainOutcome o;
  o.report = c.train.loss_kind == LossKind::score_matching ? train_score(net, g, s, data, c.train, rng)
                                                           : train_cfm(net, g, s, data, c.train, rng);
  auto& ck = o.checkpoint;
  ck.kind = c.train.loss_kind == LossKind::score_matching ? ModelKind::score : ModelKind::flow_matching;
  ck.config = c.echo;
  ck.seed = c.seed.value;
  set_schedule(ck, s);
  set_network(ck, net);
  ck.train_steps = c.train.steps;
  return o;
}

inline TrainOutcome cmd_train(const RunConfig& c) {
  const ArtifactPaths out{c.output_dir};
  ensure_dir(out.dir);
  auto o = train_model(c, training_data(c));
  save_checkpoint(o.checkpoint, out.checkpoint());
  json rep = to_json(o.report);
  rep["config"] = config_json(c.echo);
  write_text_atomic(out.train_report(), dump(rep));
  return o;
}

// ---------------------------------------------------------------- sample

inline constexpr std::size_t kTrajectoryCap = 64;

struct SampleRequest {
  std::size_t n = 2048;
  Seed seed{};
  std::size_t trajectory_chains = 0;
  bool unsafe_large = false;
  std::optional<Mat> sources;  // bridge checkpoints transport these
};

inline void check_trajectory_request(const SampleRequest& r) {
  require(r.trajectory_chains <= kTrajectoryCap || r.unsafe_large, ErrorKind::TooLarge,
          "trajectory dumps are capped at " + std::to_string(kTrajectoryCap) + " chains; pass --unsafe-large to exceed");
}

inline GroupAction checkpoint_group(const Checkpoint& ck) { return make_run_config(ck.config).make_group(); }

inline SampleResult sample_checkpoint(const Checkpoint& ck, const SampleRequest& r) {
  check_trajectory_request(r);
  const auto cfg = make_run_config(ck.config);
  const auto g = cfg.make_group();
  const auto net = ck.network();
  switch (ck.kind) {
    case ModelKind::score: {
      const auto s = ck.noise_schedule();
      auto opt = network_sample_options();
      opt.reverse.update = cfg.update;
      opt.record_chains = r.trajectory_chains;
      return sample(g, s, network_score_fn(net, s), r.n, r.seed, opt);
    }
    case ModelKind::flow_matching: {
      require(r.trajectory_chains == 0, ErrorKind::InvalidParams, "trajectories are recorded for SDE samplers only");
      SampleResult res;
      res.batch = ode_sample(net, g, ck.noise_schedule(), r.n, r.seed, cfg.ode_steps);
      return res;
    }
    case ModelKind::bridge: {
      require(r.sources.has_value(), ErrorKind::InvalidParams, "bridge checkpoints need source states");
      const auto b = ck.bridge_schedule();
      SampleOptions opt{bridge_defaults(), r.trajectory_chains};
      opt.reverse.active = cfg.bridge_active;
      return bridge_sample(g, b, bridge_score_fn(net, b), *r.sources, r.seed, opt);
    }
  }
  fail(ErrorKind::InvalidParams, "unknown checkpoint kind");
}

// long format: chain, step, x1..xn; step 0 is the prior draw
inline std::string trajectories_csv(const std::vector<Trajectory>& traj, int dim) {
  std::string out = "chain,step," + csv_header(dim) + "\n";
  char buf[32];
  for (std::size_t c = 0; c < traj.size(); ++c)
    for (Eigen::Index k = 0; k < traj[c].states.rows(); ++k) {
      out += std::to_string(c) + "," + std::to_string(k);
      for (Eigen::Index j = 0; j < traj[c].states.cols(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", traj[c].states(k, j));
        out += buf;
      }
      out += "\n";
    }
  return out;
}

struct SampleFiles {
  std::filesystem::path samples;
  std::optional<std::filesystem::path> trajectories, prior;
};

inline SampleResult cmd_sample(const std::filesystem::path& checkpoint, const SampleRequest& r, const SampleFiles& f) {
  const auto ck = load_checkpoint(checkpoint);
  const auto res = sample_checkpoint(ck, r);
  const json extra = {{"checkpoint", checkpoint.string()},
                      {"n_requested", r.n},
                      {"dropped", res.batch.dropped},
                      {"clamped_chains", res.clamped_chains},
                      {"first_failure", res.first_failure}};
  save_csv_with_meta(res.batch.x, f.samples, metadata("samples", ck.config, r.seed, extra));
  if (f.trajectories) {
    write_text_atomic(*f.trajectories, trajectories_csv(res.trajectories, checkpoint_group(ck).dim_x()));
  }
  if (f.prior) {
    Rng rng(Seed{mix_seed(r.seed.value, 0x9e3779b9)});
    save_csv_with_meta(prior_pushforward(checkpoint_group(ck), r.n, rng), *f.prior,
                       metadata("prior", ck.config, r.seed));
  }
  return res;
}

// ---------------------------------------------------------------- bridge

struct BridgeOutcome {
  Checkpoint checkpoint;
  TrainReport report;
  Mat sources, targets, transported;
  double mean_abs_angle = 0.0;    // wrapped terminal angle
  double max_radius_error = 0.0;  // |r_out - r_in|
  std::size_t dropped = 0;
};

// paired data: the first half of the columns are sources, the second half targets
inline BridgeOutcome run_bridge(const RunConfig& c, const Mat& pairs) {
  const auto g = c.make_group();
  require(pairs.cols() == 2 * g.dim_x(), ErrorKind::SizeMismatch, "bridge data needs source and target columns");
  BridgeOutcome o;
  o.sources = pairs.leftCols(g.dim_x());
  o.targets = pairs.rightCols(g.dim_x());
  const auto b = make_bridge_schedule(c.bridge_T, c.bridge_variance);
  Rng init(Seed{mix_seed(c.seed.value, 3)});
  ScoreNetwork net(g.dim_x(), g.dim_g(), c.net, init);
  Rng rng(c.train.seed);
  o.report = train_bridge(net, g, b, o.targets, c.bridge_active, c.train, rng);

  auto& ck = o.checkpoint;
  ck.kind = ModelKind::bridge;
  ck.config = c.echo;
  ck.seed = c.seed.value;
  set_schedule(ck, b);
  set_network(ck, net);
  ck.train_steps = c.train.steps;

  SampleRequest req;
  req.seed = Seed{mix_seed(c.seed.value, 4)};
  req.sources = o.sources;
  const auto res = sample_checkpoint(ck, req);
  require(res.batch.dropped == 0, ErrorKind::NonFiniteState, "bridge transport lost chains: " + res.first_failure);
  o.transported = res.batch.x;
  if (g.id() == GroupId::SO2Dilation) {
    for (Eigen::Index i = 0; i < o.transported.rows(); ++i) {
      const Vec y = o.transported.row(i).transpose();
      o.mean_abs_angle += std::abs(std::atan2(y[1], y[0]));
      o.max_radius_error = std::max(o.max_radius_error, std::abs(y.norm() - o.sources.row(i).norm()));
    }
    o.mean_abs_angle /= double(std::max<Eigen::Index>(1, o.transported.rows()));
  }
  return o;
}

inline BridgeOutcome cmd_bridge(const RunConfig& c) {
  const ArtifactPaths out{c.output_dir};
  ensure_dir(out.dir);
  const Mat pairs = c.dataset_path.empty() ? generate(c.dataset).x : load_csv(c.dataset_path).x;
  auto o = run_bridge(c, pairs);
  save_checkpoint(o.checkpoint, out.bridge_checkpoint());
  save_csv_with_meta(o.transported, out.transported(),
                     metadata("bridge_transport", c.echo, c.seed,
                              {{"mean_abs_angle", o.mean_abs_angle}, {"max_radius_error", o.max_radius_error}}));
  return o;
}

// ---------------------------------------------------------------- eval

inline W2Result cmd_eval(const std::filesystem::path& samples, const std::filesystem::path& target,
                         const std::filesystem::path& prior, Seed seed) {
  const Mat s = load_csv(samples).x, t = load_csv(target).x, p = load_csv(prior).x;
  require(s.cols() == t.cols() && s.cols() == p.cols(), ErrorKind::SizeMismatch, "eval inputs differ in width");
  // the reference sets are subsampled to the sample count so the assignment stays square
  Rng rng(seed);
  auto take = [&](const Mat& m) {
    require(m.rows() >= s.rows(), ErrorKind::SizeMismatch, "reference set smaller than the sample set");
    std::vector<Eigen::Index> idx(m.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(s.rows());
    return Mat(m(idx, Eigen::all));
  };
  return normalized_w2(s, take(t), take(p), rng);
}

// ---------------------------------------------------------------- verify

inline VerifyReport cmd_verify(Seed seed, const VerifyOptions& opt) { return run_all(seed, opt); }

}  // namespace liediff
