// Command-line front end: Q^G pretraining, training runs, evaluation,
// seed aggregation and plotting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qguide/config.hpp"
#include "qguide/harness.hpp"
#include "qguide/metrics.hpp"
#include "qguide/plot.hpp"
#include "qguide/runtime.hpp"
#include "qguide/snapshot.hpp"

namespace fs = std::filesystem;
using namespace qguide;

namespace {

bool is_seed_metrics(const fs::path& p) {
  const auto name = p.filename().string();
  return name.rfind("seed_", 0) == 0 && p.extension() == ".csv" && name.find(".timing.") == std::string::npos;
}

int cmd_pretrain(const std::string& env_name, std::int64_t steps, const fs::path& out,
                 const std::string& config_path, std::uint64_t seed) {
  ExperimentConfig cfg = config_path.empty() ? make_default_config(parse_dynamics(env_name), GuidanceVariant::static_qg)
                                             : load_config(config_path);
  if (!config_path.empty() && to_string(cfg.env) != env_name)
    throw ConfigError("--env does not match the env in " + config_path);
  cfg.guide_pretrain_seed = seed;
  const PretrainReport r = pretrain_and_save(cfg, steps, out);
  std::printf("wrote %s\n", out.string().c_str());
  std::printf("guide success during collection: %.3f\n", r.collection_success_rate);
  if (!r.holdout_residuals.empty())
    std::printf("held-out TD residual: first %.5f last %.5f\n", r.holdout_residuals.front(),
                r.holdout_residuals.back());
  return 0;
}

int cmd_train(const fs::path& config_path, std::uint64_t seed, bool verbose) {
  const ExperimentConfig cfg = load_config(config_path);
  RunOptions opts;
  opts.quiet = !verbose;
  const RunResult r = run_experiment(cfg, seed, opts);
  std::printf("wrote %s (%zu evaluations, final success %.2f)\n", r.metrics_path.string().c_str(),
              r.rows.size(), r.rows.empty() ? 0.0 : r.rows.back().success_rate);
  return 0;
}

int cmd_evaluate(const fs::path& snapshot_dir, const std::string& env_name, bool guide, int test_size,
                 std::uint64_t test_seed) {
  const Dynamics env = parse_dynamics(env_name);
  const GoalEnvSpec spec = make_env_spec(env);
  const auto test_set = make_test_set(spec, test_size, test_seed);
  double rate = 0.0;
  if (guide) {
    const GuideController g = make_guide(spec);
    rate = evaluate_policy([&](const Observation& o) { return guide_action(g, o); }, spec, test_set);
  } else {
    Snapshot s = load_snapshot(snapshot_dir / "actor.qgnn");
    if (s.role != "actor") throw ConfigError("actor.qgnn does not hold an actor snapshot");
    if (s.net.input_size() != spec.state_dim + 2 * spec.goal_dim || s.net.output_size() != spec.action_dim)
      throw ConfigError("actor snapshot does not fit environment " + env_name);
    const Mlp& actor = s.net;
    rate = evaluate_policy(
        [&](const Observation& o) {
          return Vector(actor.forward(make_features(o.state, o.desired_goal, o.achieved_goal)).col(0));
        },
        spec, test_set);
  }
  std::printf("%s success rate: %.4f\n", env_name.c_str(), rate);
  return 0;
}

int cmd_aggregate(const fs::path& runs) {
  if (!fs::is_directory(runs)) throw ConfigError(runs.string() + " is not a directory");
  std::map<fs::path, std::vector<fs::path>> groups;
  for (const auto& e : fs::recursive_directory_iterator(runs))
    if (e.is_regular_file() && is_seed_metrics(e.path())) groups[e.path().parent_path()].push_back(e.path());
  if (groups.empty()) throw ConfigError("no seed_*.csv metrics files under " + runs.string());
  for (auto& [dir, files] : groups) {
    std::sort(files.begin(), files.end());
    AggregateCurve curve = aggregate_seed_files(files);
    auto sidecar = files.front();
    sidecar.replace_extension(".config");
    if (fs::exists(sidecar)) {
      const ExperimentConfig cfg = load_config(sidecar);
      curve.env = to_string(cfg.env);
      curve.variant = to_string(cfg.variant) + (cfg.tag.empty() ? "" : "-" + cfg.tag);
    } else {
      curve.env = dir.parent_path().filename().string();
      curve.variant = dir.filename().string();
    }
    write_curve(dir / "curve.csv", curve);
    std::printf("%s: %zu seeds -> %s\n", dir.string().c_str(), files.size(), (dir / "curve.csv").string().c_str());
  }
  return 0;
}

int cmd_plot(const fs::path& curves_dir, const fs::path& out) {
  std::vector<AggregateCurve> curves;
  if (fs::is_directory(curves_dir))
    for (const auto& e : fs::recursive_directory_iterator(curves_dir))
      if (e.is_regular_file() && e.path().filename() == "curve.csv") curves.push_back(read_curve(e.path()));
  std::sort(curves.begin(), curves.end(),
            [](const auto& a, const auto& b) { return std::tie(a.env, a.variant) < std::tie(b.env, b.variant); });
  for (const auto& p : emit_plots(curves, out)) std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  qguide::tune_allocator();
  CLI::App app{"Guided TD3+HER experiments with Q-filtered behaviour cloning"};
  app.require_subcommand(1);

  std::string env_name, config_path, variant_name = "static_qg";
  std::int64_t steps = 50000;
  fs::path out, runs, curves, snapshot;
  std::uint64_t seed = 0, test_seed = 7, pretrain_seed = 1234;
  int test_size = 100;
  bool verbose = false, guide = false;

  auto* pre = app.add_subcommand("pretrain-guide", "Fit the guide's Q-function and write it as a snapshot");
  pre->add_option("--env", env_name, "point_reach | planar_push | planar_slide")->required();
  pre->add_option("--steps", steps, "Environment steps of guide data")->required();
  pre->add_option("--out", out, "Output snapshot file")->required();
  pre->add_option("--config", config_path, "Experiment config supplying hyperparameters");
  pre->add_option("--seed", pretrain_seed, "Pretraining seed");

  auto* train = app.add_subcommand("train", "Run one seed of an experiment");
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--seed", seed, "Seed")->required();
  train->add_flag("-v,--verbose", verbose, "Log every evaluation");

  auto* eval = app.add_subcommand("evaluate", "Success rate of a saved actor (or the guide) on the test set");
  eval->add_option("--snapshot", snapshot, "Agent snapshot directory");
  eval->add_option("--env", env_name, "Environment")->required();
  eval->add_flag("--guide", guide, "Evaluate the guiding controller instead of a snapshot");
  eval->add_option("--test-size", test_size, "Number of test episodes");
  eval->add_option("--test-seed", test_seed, "Test set seed");

  auto* agg = app.add_subcommand("aggregate", "Mean/std curves across seeds (writes curve.csv per run directory)");
  agg->add_option("--runs", runs, "Directory tree with seed_*.csv files")->required();

  auto* plot = app.add_subcommand("plot", "SVG panels from curve.csv files");
  plot->add_option("--curves", curves, "Directory tree with curve.csv files")->required();
  plot->add_option("--out", out, "Output directory")->required();

  auto* show = app.add_subcommand("print-config", "Print the resolved default config");
  show->add_option("--env", env_name, "Environment")->required();
  show->add_option("--variant", variant_name, "Guidance variant");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pre) return cmd_pretrain(env_name, steps, out, config_path, pretrain_seed);
    if (*train) return cmd_train(config_path, seed, verbose);
    if (*eval) {
      if (!guide && snapshot.empty()) throw ConfigError("evaluate needs --snapshot DIR or --guide");
      return cmd_evaluate(snapshot, env_name, guide, test_size, test_seed);
    }
    if (*agg) return cmd_aggregate(runs);
    if (*plot) return cmd_plot(curves, out);
    if (*show) {
      std::cout << write_config(make_default_config(parse_dynamics(env_name), parse_variant(variant_name)));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
