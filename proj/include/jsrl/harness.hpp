#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jsrl/checkpoint.hpp"
#include "jsrl/encoder.hpp"
#include "jsrl/env.hpp"
#include "jsrl/instances.hpp"
#include "jsrl/policy_rl.hpp"
#include "jsrl/value_rl.hpp"

namespace jsrl {

enum class Family { Value, Policy };

/// Everything one training run needs. `settings()` / `apply()` round-trip it
/// through the flat key-value form used by config files and checkpoints.
struct RunConfig {
  ProblemKind problem = ProblemKind::Fjsp;
  int jobs = 6;
  int machines = 6;
  Family family = Family::Value;
  PgAlgorithm pg_algorithm = PgAlgorithm::PPO;
  RainbowConfig rainbow = RainbowConfig::for_problem(ProblemKind::Fjsp);
  PGConfig pg = PGConfig::for_algorithm(PgAlgorithm::PPO);
  ModelConfig model;
  int episodes = 0;  // 0: 3000 for sizes up to 20x5, 5000 beyond
  int validation_size = 100;
  int validation_period = 10;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: nothing is written
  int workers = 1;
  bool checkpoints = true;

  int resolved_episodes() const;
  /// dqn, ddqn, per, dueling, noisy, distributional, multistep, rainbow, or a
  /// '+'-joined toggle list (value-based); reinforce, a2c, ppo, vmpo (policy-gradient).
  std::string algorithm_name() const;
  /// Resets the learner config to the defaults of `name` for the current problem.
  void set_algorithm(const std::string& name);
  /// Applies settings in dependency order (problem and size, then algorithm, then
  /// the rest). Throws ParameterError on unknown keys or bad values.
  void apply(const std::map<std::string, std::string>& settings);
  std::map<std::string, std::string> settings() const;
  void validate() const;
  ModelConfig learner_model() const;
};

/// Instance of the run's problem and size drawn from `seed`.
ProblemInstance make_instance(ProblemKind kind, int jobs, int machines, std::uint64_t seed);
/// The fixed validation set of a run (depends only on problem, size, count and seed).
std::vector<std::shared_ptr<const ProblemInstance>> validation_set(const RunConfig& run);
/// Training instance `index` (episode-major) of a run.
std::shared_ptr<const ProblemInstance> training_instance(const RunConfig& run, std::uint64_t index);

// ---------------------------------------------------------------------------
// Greedy decoding

enum class DecodeMode { Policy, QValue, Distributional };

/// Noise-free copy of a trained model plus how to read its head.
struct Decoder {
  Model model;
  DecodeMode mode = DecodeMode::Policy;
  AtomGrid grid;

  /// Index of the greedy action for every graph of `batch`.
  std::vector<std::size_t> choose(const GraphBatch& batch) const;
};

Decoder make_decoder(const Model& model, const RunConfig& run);
/// Rebuilds the decoder from the run settings stored in a checkpoint.
Decoder make_decoder(const Checkpoint& ckpt);

/// Drives every state to termination with greedy actions, `batch_limit` graphs per forward pass.
void run_greedy(const Decoder& decoder, std::vector<ScheduleState>& states, std::size_t batch_limit = 64);
/// Greedy makespans of a set of instances (used for validation).
std::vector<double> greedy_makespans(const Decoder& decoder,
                                     std::span<const std::shared_ptr<const ProblemInstance>> instances);

struct EvalSet {
  std::string name;
  std::vector<std::string> instance_names;
  std::vector<std::shared_ptr<const ProblemInstance>> instances;
  std::map<std::string, double> references;  // by instance name; may be partial
};

struct EvalReport {
  std::string algorithm;
  std::string set;
  std::vector<std::string> instances;
  std::vector<double> makespans;
  std::vector<double> references;  // NaN without a reference
  std::vector<double> gaps;        // NaN without a reference
  std::vector<double> seconds;
  std::vector<int> starts;  // rollouts per instance (1 for greedy)
  std::vector<std::vector<ScheduledOp>> schedules;

  double mean_makespan() const;
  /// Mean over instances that have a reference; NaN if none do.
  double mean_gap() const;
};

/// Argmax decoding per instance; every schedule passes check_schedule (ContractViolation otherwise).
EvalReport evaluate_greedy(const Decoder& decoder, const EvalSet& set, int workers = 1);
/// One greedy rollout per initial action; keeps the shortest schedule per instance.
EvalReport evaluate_multistart(const Decoder& decoder, const EvalSet& set, int workers = 1);

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  std::string algorithm;
  int episode = 0;                   // 1-based
  double loss = 0.0;                 // NaN when no gradient step happened
  double epsilon = 0.0;              // NaN for policy-gradient learners
  double validation_makespan = 0.0;  // NaN on episodes without validation
  double seconds = 0.0;              // wall-clock of the episode including validation
};

struct ValidationPoint {
  int episode = 0;
  double mean_makespan = 0.0;
};

struct TrainResult {
  Checkpoint best;
  double best_validation = 0.0;
  int best_episode = 0;
  double first_validation = 0.0;
  std::vector<MetricsRow> metrics;
  std::vector<ValidationPoint> validations;
  double seconds = 0.0;
};

/// Validates after episode 1 and after every `validation_period`-th episode; the
/// best checkpoint is kept (and written to out_dir/best.ckpt) whenever the
/// validation mean improves. Metrics go to out_dir/metrics.csv and validation.csv,
/// also when training aborts with TrainingError.
TrainResult train(const RunConfig& run, const std::function<void(const MetricsRow&)>& progress = {});

// ---------------------------------------------------------------------------
// Reports

std::string format_number(double v);  // shortest round-trip form, empty for NaN

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);
void write_validation_csv(const std::string& path, std::span<const ValidationPoint> points);
std::string eval_csv(const EvalReport& report);

/// Writes eval_<set>.csv per set, summary.csv, significance.csv (pairwise
/// Wilcoxon over per-instance makespans within each set) and validation_curves.csv.
/// Returns the written paths. Throws IoError naming the path on failure.
std::vector<std::string> emit_report(std::span<const EvalReport> reports, std::span<const MetricsRow> metrics,
                                     const std::string& out_dir);

}  // namespace jsrl
