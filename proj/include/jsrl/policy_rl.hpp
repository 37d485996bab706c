#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jsrl/autodiff.hpp"
#include "jsrl/encoder.hpp"
#include "jsrl/instances.hpp"
#include "jsrl/optim.hpp"
#include "jsrl/rng.hpp"

namespace jsrl {

enum class PgAlgorithm { Reinforce, A2C, PPO, VMPO };

const char* to_string(PgAlgorithm algorithm);
/// Accepts reinforce, a2c, ppo, vmpo (case-insensitive, '-' ignored). Throws ParameterError.
PgAlgorithm parse_pg_algorithm(const std::string& name);

struct PGConfig {
  PgAlgorithm algorithm = PgAlgorithm::PPO;
  double gamma = 1.0;
  double lr = 2e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double clip = 0.2;
  int epochs = 3;     // gradient passes per batch for PPO and V-MPO
  int parallel = 20;  // instances collected per episode
  double eta_init = 1.0;
  double alpha_init = 1.0;
  double eps_eta = 0.01;
  double eps_alpha_lo = 0.001;
  double eps_alpha_hi = 0.01;
  double multiplier_floor = 1e-8;
  bool normalize_advantages = false;
  int chunk_size = 64;  // states per forward pass; gradients accumulate across chunks

  /// Defaults for one algorithm (parallel 20 for PPO/V-MPO, 32 otherwise).
  static PGConfig for_algorithm(PgAlgorithm algorithm);
  void validate() const;
  int update_epochs() const;
  bool uses_critic() const { return algorithm != PgAlgorithm::Reinforce; }
  bool uses_entropy() const { return algorithm != PgAlgorithm::VMPO; }
  ModelConfig shape_model(ModelConfig base) const;
};

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectoryStep {
  std::shared_ptr<const Observation> obs;
  int action = 0;         // index into obs->actions
  double log_prob = 0.0;  // log pi(a|s) at collection
  double reward = 0.0;
  double value = 0.0;             // critic estimate at collection, 0 without a critic
  std::vector<double> log_probs;  // whole feasible-action distribution at collection
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool terminal = false;
  double makespan = 0.0;
  double initial_estimate = 0.0;  // C(S_0)
};

/// Rolls out one episode per instance in lockstep, sampling from the masked policy.
std::vector<Trajectory> collect(std::span<const std::shared_ptr<const ProblemInstance>> instances, const Model& model,
                                Rng& rng);

/// Suffix-discounted sums G_t = sum_k gamma^k r_{t+k}.
std::vector<double> returns(std::span<const double> rewards, double gamma);
std::vector<double> returns(const Trajectory& trajectory, double gamma);

// ---------------------------------------------------------------------------
// Losses

/// One flattened training sample.
struct PgSample {
  const Observation* obs = nullptr;
  int action = 0;
  double ret = 0.0;        // G_t
  double advantage = 0.0;  // G_t - V(s_t) at collection (G_t without a critic)
  double old_log_prob = 0.0;
  const std::vector<double>* old_log_probs = nullptr;
};

std::vector<PgSample> flatten(const std::vector<Trajectory>& trajectories, const PGConfig& cfg);

/// Differentiable per-state quantities for a set of samples.
struct PolicyForward {
  GraphBatch batch;
  ad::Var log_probs;  // A x 1 over every feasible action
  ad::Var chosen;     // B x 1, log pi(a_t|s_t)
  ad::Var entropy;    // B x 1
  ad::Var values;     // B x 1, invalid without a critic
};
PolicyForward policy_forward(ad::Tape& tape, const Model& model, std::span<const PgSample> samples);

/// Loss value plus its parts. Means divide by `denominator` (the full batch size),
/// so summing chunk losses reproduces the loss of the whole batch.
struct LossTerms {
  ad::Var total;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
};

LossTerms loss_reinforce(ad::Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                         double denominator = 0.0);
LossTerms loss_a2c(ad::Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                   double denominator = 0.0);
/// Clipped surrogate; the old log-probs are each sample's old_log_prob.
LossTerms loss_ppo(ad::Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                   double denominator = 0.0);

/// min(rho * A, clip(rho, 1 - delta, 1 + delta) * A).
double ppo_surrogate(double ratio, double advantage, double clip);

/// Kept set: indices with advantage >= the batch median (ties kept).
std::vector<std::size_t> vmpo_kept(std::span<const double> advantages);
/// psi = softmax(A / eta) over the kept advantages.
std::vector<double> vmpo_weights(std::span<const double> kept_advantages, double eta);

struct TemperatureLoss {
  double value = 0.0;
  double grad = 0.0;  // d/d eta
};
/// eta * eps_eta + eta * log(mean exp(A / eta)) over the kept advantages.
TemperatureLoss vmpo_temperature_loss(std::span<const double> kept_advantages, double eta, double eps_eta);

/// KL(pi_target || pi_theta) per state, on the full feasible-action distribution.
double categorical_kl(std::span<const double> target_log_probs, std::span<const double> log_probs);

struct VmpoMultipliers {
  ad::Parameter eta{"vmpo.eta", ad::Mat::Constant(1, 1, 1.0)};
  ad::Parameter alpha{"vmpo.alpha", ad::Mat::Constant(1, 1, 1.0)};
};

/// V-MPO losses over `samples` (a chunk of the batch) given precomputed psi per
/// sample (0 outside the kept set). `total` differentiates into the model through
/// L_pi, sg[alpha] * KL and the critic, and into alpha through alpha * (eps_alpha - sg[KL]).
/// The temperature loss is separate (vmpo_temperature_loss).
struct VmpoTerms {
  ad::Var total;       // theta_loss + alpha_objective
  ad::Var theta_loss;  // L_pi + sg[alpha] * KL + critic: what the model parameters descend
  ad::Var alpha_objective;  // alpha * (eps_alpha - sg[KL])
  double policy = 0.0;  // L_pi
  double alpha_loss = 0.0;
  double value = 0.0;  // critic MSE, unweighted
  double kl = 0.0;     // mean KL over the chunk's share
};
VmpoTerms vmpo_losses(ad::Tape& tape, const Model& model, std::span<const PgSample> samples, std::span<const double> psi,
                      const VmpoMultipliers& multipliers, double eps_alpha, const PGConfig& cfg,
                      double denominator = 0.0);

// ---------------------------------------------------------------------------
// Learner

struct UpdateStats {
  bool skipped = false;
  int gradient_steps = 0;
  int samples = 0;
  std::vector<double> losses;  // total loss per gradient step
  double policy = 0.0;         // last step's parts
  double value = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double eta = 0.0;
  double alpha = 0.0;
};

/// Optimizer and multiplier state carried across updates.
struct PgState {
  Adam optimizer;
  VmpoMultipliers multipliers;
  Rng rng{0};
};

/// One REINFORCE/A2C step or `epochs` PPO/V-MPO steps on a collected batch.
/// Throws TrainingError on a non-finite loss or gradient.
UpdateStats pg_update(Model& model, const std::vector<Trajectory>& trajectories, const PGConfig& cfg, PgState& state);

struct PgEpisodeStats {
  double mean_makespan = 0.0;
  double mean_return = 0.0;
  UpdateStats update;
};

class PolicyAgent {
 public:
  PolicyAgent(const PGConfig& cfg, const ModelConfig& base, std::uint64_t seed);

  const PGConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const PgState& state() const { return state_; }

  /// Collects one trajectory per instance, then updates.
  PgEpisodeStats run_episode(std::span<const std::shared_ptr<const ProblemInstance>> instances);

 private:
  PGConfig cfg_;
  Rng rng_;
  Model model_;
  PgState state_;
};

}  // namespace jsrl
