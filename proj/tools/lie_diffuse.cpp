// lie_diffuse: data generation, training, sampling, bridging, evaluation and identity checks.
// Exit codes: 0 success, 1 verification or eval failure, 2 usage error, 3 runtime error.

#include "liediff/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace liediff;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --config plus one flag per config key
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key/value config file")->check(CLI::ExistingFile);
    for (const auto& k : config_keys()) app->add_option("--" + k.name, values[k.name], k.help);
  }

  RunConfig resolve(CLI::App* app) const {
    KeyValues flags;
    for (const auto& k : config_keys())
      if (app->count("--" + k.name) > 0) flags[k.name] = values.at(k.name);
    try {
      return make_run_config(resolve_config(file.empty() ? KeyValues{} : load_config(file), flags));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
};

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") std::cout << dump(j);
  else write_text_atomic(path, dump(j));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lie-group diffusion toolkit"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, bridge_flags;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset CSV and its metadata");
  gen_flags.attach(gen);
  auto* train = app.add_subcommand("train", "train a score or flow-matching network");
  train_flags.attach(train);
  auto* bridge = app.add_subcommand("bridge", "train a bridge on paired data and transport the sources");
  bridge_flags.attach(bridge);

  std::string ckpt, out, traj_out, prior_out, source;
  std::size_t n = 2048, chains = 0;
  std::uint64_t sample_seed = 0;
  bool unsafe_large = false;
  auto* smp = app.add_subcommand("sample", "draw samples from a checkpoint");
  smp->add_option("--checkpoint", ckpt, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  smp->add_option("--n", n, "number of chains");
  smp->add_option("--seed", sample_seed, "sampling seed")->required();
  smp->add_option("--out", out, "samples CSV")->required();
  smp->add_option("--trajectories", traj_out, "per-step trajectory CSV");
  smp->add_option("--chains", chains, "chains kept in the trajectory CSV (at most 64)");
  smp->add_flag("--unsafe-large", unsafe_large, "lift the trajectory cap");
  smp->add_option("--prior-out", prior_out, "also write n prior pushforward draws here");
  smp->add_option("--source", source, "source CSV for bridge checkpoints")->check(CLI::ExistingFile);

  std::string samples, target, prior, eval_out;
  std::uint64_t eval_seed = 0;
  double max_w2 = std::numeric_limits<double>::infinity();
  auto* ev = app.add_subcommand("eval", "normalized W2 of samples against a target set");
  ev->add_option("--samples", samples)->required()->check(CLI::ExistingFile);
  ev->add_option("--target", target)->required()->check(CLI::ExistingFile);
  ev->add_option("--prior", prior, "prior pushforward draws")->required()->check(CLI::ExistingFile);
  ev->add_option("--seed", eval_seed, "seed for subsampling and projections")->required();
  ev->add_option("--out", eval_out, "W2Result JSON (stdout when omitted)");
  ev->add_option("--max-w2", max_w2, "exit 1 when the normalized W2 exceeds this");

  VerifyOptions vopt;
  std::uint64_t verify_seed = 0;
  std::string verify_out;
  bool quick = false;
  auto* ver = app.add_subcommand("verify", "run the identity suite");
  ver->add_option("--seed", verify_seed, "seed")->required();
  ver->add_option("--out", verify_out, "VerifyReport JSON (stdout when omitted)");
  ver->add_flag("--quick", quick, "fewer points and no forward-equivalence runs");
  ver->add_option("--tol.completeness", vopt.tol.completeness);
  ver->add_option("--tol.commutator", vopt.tol.commutator);
  ver->add_option("--tol.divergence", vopt.tol.divergence);
  ver->add_option("--tol.jacobian", vopt.tol.jacobian);
  ver->add_option("--tol.forward_w2", vopt.tol.forward_w2);
  ver->add_option("--tol.so2_pathwise", vopt.tol.so2_pathwise);
  ver->add_option("--tol.so2_terminal_w2", vopt.tol.so2_terminal_w2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      const auto c = gen_flags.resolve(gen);
      std::cout << cmd_generate(c).string() << "\n";
    } else if (train->parsed()) {
      const auto c = train_flags.resolve(train);
      const auto o = cmd_train(c);
      std::cout << "final_loss " << o.report.final_loss << " wall_seconds " << o.report.wall_seconds << "\n";
    } else if (bridge->parsed()) {
      const auto c = bridge_flags.resolve(bridge);
      const auto o = cmd_bridge(c);
      std::cout << "mean_abs_angle " << o.mean_abs_angle << " max_radius_error " << o.max_radius_error << "\n";
    } else if (smp->parsed()) {
      SampleRequest r;
      r.n = n;
      r.seed = Seed{sample_seed};
      r.unsafe_large = unsafe_large;
      r.trajectory_chains = traj_out.empty() ? 0 : (chains ? chains : std::min(n, kTrajectoryCap));
      if (r.trajectory_chains > kTrajectoryCap && !unsafe_large)
        throw UsageError("--chains above " + std::to_string(kTrajectoryCap) + " needs --unsafe-large");
      if (!source.empty()) {
        r.sources = load_csv(source).x;
        r.n = static_cast<std::size_t>(r.sources->rows());
      }
      SampleFiles f{out, {}, {}};
      if (!traj_out.empty()) f.trajectories = traj_out;
      if (!prior_out.empty()) f.prior = prior_out;
      const auto res = cmd_sample(ckpt, r, f);
      std::cout << "samples " << res.batch.size() << " dropped " << res.batch.dropped << "\n";
      if (!res.first_failure.empty()) std::cerr << "first failure: " << res.first_failure << "\n";
    } else if (ev->parsed()) {
      const auto r = cmd_eval(samples, target, prior, Seed{eval_seed});
      write_json(eval_out, to_json(r));
      return r.normalized_w2 <= max_w2 ? kOk : kCheckFailed;
    } else if (ver->parsed()) {
      if (quick) {
        vopt.completeness_points = 1000;
        vopt.field_points = 100;
        vopt.forward = false;
        vopt.so2_samples = 512;
      }
      const auto rep = cmd_verify(Seed{verify_seed}, vopt);
      write_json(verify_out, to_json(rep));
      for (const auto& rec : rep.records)
        if (!rec.ok()) std::cerr << "FAIL " << rec.check_id << " " << rec.group_id << " " << rec.max_error << "\n";
      return rep.all_ok() ? kOk : kCheckFailed;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::TooLarge ? kUsage : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
