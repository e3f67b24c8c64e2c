// clothlab: demonstration collection, training, evaluation and metrics.

#include "clothlab/harness.hpp"
#include "clothlab/errors.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using namespace clothlab;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  std::string task;
  int preset = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "base seed");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
  cmd->add_option("--task", c.task, "diagonal | axis | flatten");
  cmd->add_option("--preset", c.preset, "algorithm preset 1-8")->check(CLI::Range(1, 8));
}

// File values first, then flags on top; the task key resets task defaults
// so it has to go in the same apply call.
ExperimentConfig load_config(const Common& c, CLI::App* cmd, bool* explicit_presets = nullptr) {
  KeyValues kv;
  if (!c.config.empty()) kv = read_key_values(c.config);
  if (!c.task.empty()) kv["task"] = c.task;
  if (cmd->count("--seed")) kv["seed"] = std::to_string(c.seed);
  if (cmd->count("--preset")) {
    kv.erase("presets");
    kv["preset"] = std::to_string(c.preset);
  }
  if (explicit_presets) *explicit_presets = kv.count("preset") || kv.count("presets");
  ExperimentConfig cfg;
  cfg.apply(kv);
  return cfg;
}

EnvFactory env_factory(const ExperimentConfig& cfg, int max_operations) {
  EpisodeConfig ec = default_episode(cfg.task);
  ec.max_operations = max_operations;
  ec.change_threshold = cfg.demo.episode.change_threshold;
  const PlantConfig plant = cfg.plant;
  return [ec, plant](std::mt19937_64& rng) { return init_episode(ec, rng, plant); };
}

void print_record(const MetricsRecord& r, int rank_reward, int rank_sigma) {
  std::cout << "preset " << r.preset << "  R_avg " << std::fixed << std::setprecision(3)
            << r.derived.r_avg << "  sigma_avg " << r.derived.sigma_avg << "  rank " << rank_reward
            << "  rank_sigma " << rank_sigma << std::defaultfloat << "\n";
}

int cmd_collect(const Common& c, CLI::App* cmd) {
  ExperimentConfig cfg = load_config(c, cmd);
  cfg.demo_file.clear();
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const DemoCollection col = collect_demos(cfg.task, cfg.attempts(), cfg.threshold(),
                                           cfg.demo_rounds, cfg.demo, rng);
  for (std::size_t i = 0; i < col.episodes.size(); ++i) {
    const auto& e = col.episodes[i];
    std::cout << "episode " << i << "  ops " << e.transitions.size() << "  reward "
              << e.final_reward << "  metric " << e.final_metric << (e.failed ? "  failed" : "")
              << "\n";
  }
  fs::create_directories(c.out_dir);
  const fs::path path = fs::path(c.out_dir) / "demos.txt";
  save_dataset(path, col.dataset);
  std::cout << "kept " << col.dataset.episodes.size() << " episodes ("
            << col.dataset.transition_count() << " transitions) -> " << path.string() << "\n";
  return 0;
}

int run_and_report(const ExperimentConfig& cfg, const Common& c) {
  const ExperimentResult res = run_experiment(cfg, c.out_dir);
  for (std::size_t q = 0; q < res.records.size(); ++q) {
    print_record(res.records[q], res.ranks.reward[q], res.ranks.sigma[q]);
  }
  std::cout << "results in " << (fs::path(c.out_dir) / cfg.name).string() << "\n";
  return 0;
}

int cmd_train(const Common& c, CLI::App* cmd) {
  ExperimentConfig cfg = load_config(c, cmd);
  if (cfg.presets.size() > 1) cfg.presets.resize(1);
  return run_and_report(cfg, c);
}

int cmd_ablate(const Common& c, CLI::App* cmd) {
  bool given = false;
  ExperimentConfig cfg = load_config(c, cmd, &given);
  if (!given) cfg.presets = {1, 2, 3, 4, 5, 6, 7, 8};
  return run_and_report(cfg, c);
}

int cmd_eval(const Common& c, CLI::App* cmd, const std::string& model_path, int episodes) {
  ExperimentConfig cfg = load_config(c, cmd);
  const Agent agent = load_model(fs::path(model_path));
  if (agent.config.task != cfg.task) {
    cfg.apply(KeyValues{{"task", to_string(agent.config.task)}});
  }
  const int n = episodes > 0 ? episodes : cfg.agent.test_rounds;
  const std::vector<double> r =
      evaluate(agent, env_factory(cfg, agent.config.max_operations), n, cfg.seed);
  for (std::size_t i = 0; i < r.size(); ++i) std::cout << "episode " << i << "  reward " << r[i] << "\n";
  std::cout << "mean " << std::accumulate(r.begin(), r.end(), 0.0) / r.size() << "\n";
  return 0;
}

int cmd_metrics(const Common& c, CLI::App* cmd, std::string exp_dir, bool csv,
                const std::vector<int>& compare) {
  if (exp_dir.empty()) exp_dir = (fs::path(c.out_dir) / load_config(c, cmd).name).string();
  std::vector<int> presets;
  for (const auto& e : fs::directory_iterator(exp_dir)) {
    const std::string n = e.path().filename().string();
    if (e.is_directory() && n.size() == 1 && n[0] >= '1' && n[0] <= '8') presets.push_back(n[0] - '0');
  }
  if (presets.empty()) throw Error("no preset directories under '" + exp_dir + "'");
  std::sort(presets.begin(), presets.end());
  std::vector<MetricsRecord> recs;
  std::vector<RewardMetrics> all;
  for (int p : presets) {
    recs.push_back(load_preset_metrics(fs::path(exp_dir) / std::to_string(p), p));
    all.push_back(recs.back().derived);
    std::ofstream out(fs::path(exp_dir) / std::to_string(p) / "curve.csv");
    write_curve_csv(out, recs.back().derived);
  }
  const Rankings ranks = rankings(all);
  if (csv) {
    for (std::size_t q = 0; q < recs.size(); ++q) {
      std::cout << "# preset " << recs[q].preset << "\n";
      write_curve_csv(std::cout, all[q]);
    }
  } else {
    for (std::size_t q = 0; q < recs.size(); ++q) print_record(recs[q], ranks.reward[q], ranks.sigma[q]);
  }
  if (compare.size() == 2) {
    auto find = [&](int p) -> const RewardMetrics& {
      for (std::size_t q = 0; q < recs.size(); ++q) {
        if (recs[q].preset == p) return all[q];
      }
      throw PreconditionError("preset " + std::to_string(p) + " has no results");
    };
    const CurveSimilarity s = compare_curves(find(compare[0]), find(compare[1]));
    std::cout << "RCS " << s.reward.css << "  RDT " << s.reward.dtw << "  RPC " << s.reward.pcc << "\n";
    std::cout << "SCS " << s.sigma.css << "  SDT " << s.sigma.dtw << "  SPC " << s.sigma.pcc << "\n";
  }
  return 0;
}

int cmd_sim_dump(const Common& c, CLI::App* cmd, int grasp, const std::vector<double>& place) {
  const ExperimentConfig cfg = load_config(c, cmd);
  std::mt19937_64 rng(cfg.seed);
  const ClothEnv env = init_episode(default_episode(cfg.task), rng, cfg.plant);
  const StateVector& s = env.observation();
  const int k = endpoint_count(cfg.task);
  if (grasp < 0 || grasp >= k) throw PreconditionError("--grasp must be in 0.." + std::to_string(k - 1));
  Vec3 target = is_fold(cfg.task) ? s.endpoint((grasp + 2) % k) : s.centroid();
  if (!place.empty()) target = Vec3(place[0], place[1], place[2]);
  MotionParams motion = cfg.plant.motion;
  motion.record_trajectory = true;
  const PickPlaceResult r = execute_pick_place(env.cloth(), s.endpoint(grasp), target,
                                               env.topology(), cfg.plant.sim, motion);
  fs::create_directories(c.out_dir);
  const fs::path path = fs::path(c.out_dir) / "trajectory.txt";
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_trajectory(out, r.trajectory);
  std::cout << r.trajectory.size() << " frames, particle " << r.grasped << " -> " << path.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloth manipulation learning from NMPC demonstrations"};
  app.require_subcommand(1);

  Common collect_o, train_o, eval_o, ablate_o, metrics_o, dump_o;
  auto* collect = app.add_subcommand("collect-nmpc", "collect NMPC demonstrations");
  add_common(collect, collect_o);
  auto* train = app.add_subcommand("train", "train one preset over the configured seeds");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_common(eval, eval_o);
  std::string model_path;
  int episodes = 0;
  eval->add_option("--model", model_path, "model.txt from a training run")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "test episodes");
  auto* ablate = app.add_subcommand("ablate", "train several presets (all eight by default)");
  add_common(ablate, ablate_o);
  auto* metrics = app.add_subcommand("metrics", "recompute metrics from raw reward files");
  add_common(metrics, metrics_o);
  std::string exp_dir;
  bool csv = false;
  std::vector<int> compare;
  metrics->add_option("--exp-dir", exp_dir, "experiment directory (default <out-dir>/<name>)");
  metrics->add_flag("--csv", csv, "print epoch,R_avg_t,sigma_t curves");
  metrics->add_option("--compare", compare, "two presets to compare")->expected(2);
  auto* dump = app.add_subcommand("sim-dump", "dump the trajectory of one pick-and-place");
  add_common(dump, dump_o);
  int grasp = 0;
  std::vector<double> place;
  dump->add_option("--grasp", grasp, "endpoint index");
  dump->add_option("--place", place, "placement point x y z")->expected(3);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) return cmd_collect(collect_o, collect);
    if (*train) return cmd_train(train_o, train);
    if (*eval) return cmd_eval(eval_o, eval, model_path, episodes);
    if (*ablate) return cmd_ablate(ablate_o, ablate);
    if (*metrics) return cmd_metrics(metrics_o, metrics, exp_dir, csv, compare);
    if (*dump) return cmd_sim_dump(dump_o, dump, grasp, place);
  } catch (const clothlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
