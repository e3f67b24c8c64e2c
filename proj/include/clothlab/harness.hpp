#pragma once

// Experiment orchestration, metrics, persistence and configuration files.

#include "clothlab/agent.hpp"
#include "clothlab/dataset.hpp"
#include "clothlab/nmpc.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace clothlab {

// ---------------------------------------------------------------- metrics

/// raw[i][t][j]: seed i, test epoch t, test episode j.
using RawRewards = std::vector<std::vector<std::vector<double>>>;

struct RewardMetrics {
  std::vector<std::vector<double>> seed_means;  // R_avg^{i,t}
  std::vector<double> r_avg_t;                  // R_avg^t
  std::vector<double> sigma_t;                  // population std over seeds
  double r_avg = 0.0;
  double sigma_avg = 0.0;
};

RewardMetrics reward_metrics(const RawRewards& raw);

/// Rank 1 goes to the largest value; ties keep input order.
std::vector<int> rank_descending(const std::vector<double>& values);

struct Rankings {
  std::vector<int> reward;  // by descending R_avg
  std::vector<int> sigma;   // by descending sigma_avg (the most stable gets the largest rank)
};

Rankings rankings(const std::vector<RewardMetrics>& algorithms);

/// Centered moving average of width 3, shrinking at both ends.
std::vector<double> smooth3(const std::vector<double>& values);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
/// Sum of |a_i - b_j| along the optimal monotone alignment.
double dtw_distance(const std::vector<double>& a, const std::vector<double>& b);
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct Similarity {
  double css = 0.0;
  double dtw = 0.0;
  double pcc = 0.0;
};

Similarity similarity_metrics(const std::vector<double>& a, const std::vector<double>& b);

/// RCS/RDT/RPC on the reward curves, SCS/SDT/SPC on the std curves.
struct CurveSimilarity {
  Similarity reward;
  Similarity sigma;
};

CurveSimilarity compare_curves(const RewardMetrics& a, const RewardMetrics& b);

// ---------------------------------------------------------------- persistence

inline constexpr const char* kDatasetMagic = "CLOTHLAB-DATASET v1";
inline constexpr const char* kModelMagic = "CLOTHLAB-MODEL v1";
inline constexpr const char* kMetricsMagic = "CLOTHLAB-METRICS v1";

void save_dataset(std::ostream& out, const DemoDataset& data);
DemoDataset load_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const DemoDataset& data);
DemoDataset load_dataset(const std::filesystem::path& path);

void save_model(std::ostream& out, const Agent& agent);
Agent load_model(std::istream& in);
void save_model(const std::filesystem::path& path, const Agent& agent);
Agent load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------- config

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; '#' starts a comment. Throws FormatError.
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

enum class Mode { Simple, Challenging };

struct ExperimentConfig {
  std::string name = "exp";
  TaskKind task = TaskKind::DiagonalFold;
  Mode mode = Mode::Simple;
  std::vector<int> presets{1};
  int seeds = 3;
  std::uint64_t seed = 1;  // first seed; seed i is seed + i
  int demo_rounds = 20;    // kept demonstration episodes
  int demo_attempts = 0;   // NMPC episodes tried; 0 picks max(30, 2 * demo_rounds)
  double demo_threshold = -1.0;  // r_ts; negative picks the task default
  std::string demo_file;   // load instead of collecting when set
  AgentConfig agent = AgentConfig::defaults(TaskKind::DiagonalFold);
  DemoConfig demo = DemoConfig::defaults(TaskKind::DiagonalFold);
  PlantConfig plant = default_plant();

  static ExperimentConfig defaults(TaskKind task);
  /// Applies recognised keys; unknown keys raise PreconditionError.
  void apply(const KeyValues& kv);
  void validate() const;
  int max_operations() const;
  int attempts() const;
  double threshold() const;
};

struct SeedRun {
  std::uint64_t seed = 0;
  TrainLog log;
};

struct MetricsRecord {
  int preset = 1;
  std::vector<std::uint64_t> seeds;
  std::vector<int> test_rounds;  // training rounds completed at each test epoch
  RawRewards raw;
  RewardMetrics derived;
};

struct ExperimentResult {
  DemoDataset demos;
  std::vector<MetricsRecord> records;  // one per preset, in config order
  Rankings ranks;
};

/// Writes <out>/<name>/demos.txt, and per preset and seed
/// <out>/<name>/<preset>/<seed>/{metrics.txt,model.txt}, plus
/// <out>/<name>/<preset>/summary.txt and <out>/<name>/rankings.txt.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir);

/// Demonstrations per config: loaded from demo_file or collected with NMPC.
DemoDataset experiment_demos(const ExperimentConfig& config);

void write_seed_metrics(std::ostream& out, int preset, std::uint64_t seed, const TrainLog& log);
/// Reads one seed file: test rounds and rewards per test epoch.
std::vector<TestRecord> read_seed_metrics(std::istream& in);
void write_summary(std::ostream& out, const MetricsRecord& record);
/// epoch,R_avg_t,sigma_t with the window-3 smoothing.
void write_curve_csv(std::ostream& out, const RewardMetrics& metrics);

/// Re-reads <dir>/<seed>/metrics.txt for every seed directory under a preset directory.
MetricsRecord load_preset_metrics(const std::filesystem::path& preset_dir, int preset);

}  // namespace clothlab
