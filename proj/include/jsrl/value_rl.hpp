#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "jsrl/encoder.hpp"
#include "jsrl/instances.hpp"
#include "jsrl/optim.hpp"
#include "jsrl/rng.hpp"

namespace jsrl {

/// The six Rainbow toggles and the value-learning hyperparameters.
struct RainbowConfig {
  bool ddqn = false;
  bool per = false;
  bool dueling = false;
  bool noisy = false;
  bool distributional = false;
  bool multistep = false;

  int n_steps = 4;
  int atoms = 51;
  double v_min = -50.0;
  double v_max = 0.0;
  double gamma = 0.99;
  int buffer_capacity = 20000;
  int batch_size = 32;
  int target_period = 10;  // episodes between hard target copies
  double lr = 2e-4;
  double per_alpha = 0.4;
  double per_beta_start = 0.4;
  double per_beta_end = 1.0;
  double per_eps = 1e-5;
  double eps_decay = 600.0;
  double eps_min = 0.1;
  int updates_per_step = 1;

  /// Problem-specific defaults: n-step length and atom support.
  static RainbowConfig for_problem(ProblemKind kind);
  /// Sets the six toggles from bits 0..5 (ddqn, per, dueling, noisy, distributional, multistep).
  static RainbowConfig from_mask(unsigned mask, ProblemKind kind);
  unsigned mask() const;

  void validate() const;
  int effective_steps() const { return multistep ? n_steps : 1; }
  /// Copies the head-shaping toggles into an encoder config.
  ModelConfig shape_model(ModelConfig base) const;
};

/// Exploration rate for a zero-based episode index: max(exp(-e/600), 0.1), or 0 with noisy nets.
double epsilon(int episode, const RainbowConfig& cfg);
double epsilon(int episode);

// ---------------------------------------------------------------------------
// Transitions and n-step aggregation

/// One environment step as seen by the learner.
struct StepRecord {
  std::shared_ptr<const Observation> state;
  int action = 0;  // index into state->actions
  double reward = 0.0;
  std::shared_ptr<const Observation> next;  // null when done
  bool done = false;
};

struct Transition {
  std::shared_ptr<const Observation> state;
  int action = 0;
  double reward = 0.0;
  std::shared_ptr<const Observation> next;  // state n steps ahead, null when done
  bool done = false;
  double discount = 1.0;  // gamma^K
};

/// Folds window[0..K) into one transition, K = min(n, steps up to and including
/// the first terminal step, window size): r = sum gamma^k r_k, s' = state after
/// step K-1, discount gamma^K.
Transition nstep_aggregate(std::span<const StepRecord> window, int n, double gamma);

/// Per-episode sliding window that emits n-step transitions as they complete
/// and flushes truncated ones when the episode ends.
class NStepAccumulator {
 public:
  NStepAccumulator(int n, double gamma) : n_(n), gamma_(gamma) {}
  std::vector<Transition> push(StepRecord step);
  void clear() { window_.clear(); }
  std::size_t pending() const { return window_.size(); }

 private:
  int n_;
  double gamma_;
  std::deque<StepRecord> window_;
};

// ---------------------------------------------------------------------------
// Replay

/// Binary sum tree over a fixed number of leaves; O(log N) update and prefix search.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);
  void set(std::size_t index, double value);
  double get(std::size_t index) const { return nodes_[leaf_base_ + index]; }
  double total() const { return nodes_[1]; }
  /// Leaf whose cumulative range contains `mass` in [0, total()).
  std::size_t find(double mass) const;
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t leaf_base_;
  std::vector<double> nodes_;
};

/// Ring buffer of transitions with optional proportional prioritization.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, bool prioritized, double alpha = 0.4, double eps = 1e-5);

  /// New transitions receive the running maximum priority (1 initially).
  void add(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool prioritized() const { return prioritized_; }
  const Transition& at(std::size_t index) const { return items_[index]; }

  struct Sample {
    std::vector<std::size_t> indices;
    std::vector<double> weights;  // importance weights normalized by the batch maximum; all 1 when uniform
  };
  /// Draws `batch` indices with replacement: uniformly, or with P(i) proportional to p_i^alpha.
  Sample sample(std::size_t batch, double beta, Rng& rng) const;
  /// Sets p_i = |td_i| + eps for each sampled index.
  void update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors);
  /// Sampling probability of slot `index` under the current priorities.
  double probability(std::size_t index) const;
  double priority(std::size_t index) const { return raw_priority_[index]; }
  double max_priority() const { return max_priority_; }

 private:
  std::size_t capacity_;
  bool prioritized_;
  double alpha_;
  double eps_;
  std::vector<Transition> items_;
  std::vector<double> raw_priority_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  double max_priority_ = 1.0;
  SumTree tree_;
};

// ---------------------------------------------------------------------------
// Targets

/// y = r when done; otherwise r + discount * Q_target(s', a'), where a' maximizes
/// Q_target (DQN, `q_online_next` empty) or Q_online (DDQN). Ties pick the lowest index.
double td_target_value(double reward, bool done, double discount, std::span<const double> q_target_next,
                       std::span<const double> q_online_next = {});

/// Fixed categorical support z_i = v_min + i * dz.
struct AtomGrid {
  double v_min = -50.0;
  double v_max = 0.0;
  int atoms = 51;
  double delta() const { return (v_max - v_min) / (atoms - 1); }
  double atom(int i) const { return v_min + i * delta(); }
};

/// Projects r + discount * z (or r alone when done) back onto the grid, splitting
/// each atom's mass linearly between its two neighbours.
std::vector<double> categorical_project(double reward, bool done, double discount, std::span<const double> next_probs,
                                        const AtomGrid& grid);

/// Per-sample scalar targets for a batch (DQN or DDQN according to cfg.ddqn).
std::vector<double> td_targets(std::span<const Transition* const> batch, const Model& online, const Model& target,
                               const RainbowConfig& cfg);
/// Per-sample projected target distributions (batch x atoms); next action by expected value.
Eigen::MatrixXd categorical_targets(std::span<const Transition* const> batch, const Model& online, const Model& target,
                                    const RainbowConfig& cfg);

/// Greedy scalar value per action: q-values, or the expected value of each action's distribution.
std::vector<double> action_values(const Model& model, const Observation& obs, const AtomGrid* grid);
/// Same, for every graph of a batch (concatenated in batch action order).
std::vector<double> action_values(const Model& model, const GraphBatch& batch, const AtomGrid* grid);

// ---------------------------------------------------------------------------
// Learners

struct EpisodeStats {
  double makespan = 0.0;
  double episode_return = 0.0;
  double mean_loss = 0.0;  // NaN when no update happened
  int updates = 0;
  std::vector<double> losses;  // one entry per gradient step
};

/// Rainbow learner with every extension independently switchable.
class RainbowAgent {
 public:
  RainbowAgent(const RainbowConfig& cfg, const ModelConfig& base, std::uint64_t seed);

  const RainbowConfig& config() const { return cfg_; }
  Model& online() { return online_; }
  const Model& online() const { return online_; }
  const Model& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const AtomGrid* grid() const { return cfg_.distributional ? &grid_ : nullptr; }

  /// Action index for `obs`: epsilon-greedy over greedy values (noise drives exploration when noisy).
  std::size_t act(const Observation& obs, int episode);
  /// Stores one environment step (through the n-step window).
  void remember(StepRecord step);
  /// One gradient step; nullopt while the buffer holds fewer than a batch.
  std::optional<double> train_step();
  void sync_target();
  /// Fraction of training completed, drives the PER beta schedule.
  void set_progress(double fraction) { progress_ = std::clamp(fraction, 0.0, 1.0); }
  double beta() const;

  /// Plays one training episode on `instance`; `episode` is zero-based. Syncs the
  /// target network after every `target_period`-th episode.
  EpisodeStats run_episode(std::shared_ptr<const ProblemInstance> instance, int episode);

 private:
  RainbowConfig cfg_;
  AtomGrid grid_;
  Rng rng_;
  Model online_;
  Model target_;
  Adam optimizer_;
  ReplayBuffer buffer_;
  NStepAccumulator nstep_;
  double progress_ = 0.0;
};

/// Plain DQN written without any extension hooks: uniform replay, epsilon-greedy,
/// one-step max target, mean squared error. Kept separate from RainbowAgent as a
/// reference implementation; with every toggle off the two must agree exactly.
class DqnAgent {
 public:
  DqnAgent(const RainbowConfig& cfg, const ModelConfig& base, std::uint64_t seed);

  Model& online() { return online_; }
  const Model& online() const { return online_; }
  std::size_t act(const Observation& obs, int episode);
  std::optional<double> train_step();
  EpisodeStats run_episode(std::shared_ptr<const ProblemInstance> instance, int episode);

 private:
  RainbowConfig cfg_;
  Rng rng_;
  Model online_;
  Model target_;
  Adam optimizer_;
  std::vector<Transition> buffer_;
  std::size_t next_ = 0;
};

}  // namespace jsrl
