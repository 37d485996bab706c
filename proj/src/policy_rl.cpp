#include "jsrl/policy_rl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "jsrl/env.hpp"
#include "jsrl/errors.hpp"

namespace jsrl {

using ad::Mat;
using ad::Tape;
using ad::Var;

const char* to_string(PgAlgorithm algorithm) {
  switch (algorithm) {
    case PgAlgorithm::Reinforce: return "reinforce";
    case PgAlgorithm::A2C: return "a2c";
    case PgAlgorithm::PPO: return "ppo";
    case PgAlgorithm::VMPO: return "vmpo";
  }
  return "?";
}

PgAlgorithm parse_pg_algorithm(const std::string& name) {
  std::string key;
  for (char c : name)
    if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "reinforce") return PgAlgorithm::Reinforce;
  if (key == "a2c") return PgAlgorithm::A2C;
  if (key == "ppo") return PgAlgorithm::PPO;
  if (key == "vmpo") return PgAlgorithm::VMPO;
  throw ParameterError("unknown policy-gradient algorithm '" + name + "'");
}

PGConfig PGConfig::for_algorithm(PgAlgorithm algorithm) {
  PGConfig c;
  c.algorithm = algorithm;
  c.parallel = (algorithm == PgAlgorithm::PPO || algorithm == PgAlgorithm::VMPO) ? 20 : 32;
  return c;
}

void PGConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0, 1]");
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (!(value_coef >= 0.0) || !(entropy_coef >= 0.0)) throw ParameterError("loss coefficients must be >= 0");
  if (!(clip > 0.0 && clip < 1.0)) throw ParameterError("clip threshold must lie in (0, 1)");
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (parallel < 1) throw ParameterError("parallel instance count must be >= 1");
  if (chunk_size < 1) throw ParameterError("chunk size must be >= 1");
  if (!(eta_init > 0.0) || !(alpha_init > 0.0)) throw ParameterError("V-MPO multipliers must start positive");
  if (!(eps_eta >= 0.0)) throw ParameterError("eps_eta must be >= 0");
  if (!(eps_alpha_lo > 0.0 && eps_alpha_lo <= eps_alpha_hi)) throw ParameterError("eps_alpha range must be 0 < lo <= hi");
}

int PGConfig::update_epochs() const {
  return (algorithm == PgAlgorithm::PPO || algorithm == PgAlgorithm::VMPO) ? epochs : 1;
}

ModelConfig PGConfig::shape_model(ModelConfig base) const {
  base.critic = uses_critic();
  base.atoms = 1;
  base.dueling = false;
  base.noisy = false;
  return base;
}

// ---------------------------------------------------------------------------
// Collection

std::vector<Trajectory> collect(std::span<const std::shared_ptr<const ProblemInstance>> instances, const Model& model,
                                Rng& rng) {
  std::vector<Trajectory> out(instances.size());
  std::vector<ScheduleState> states;
  states.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    states.push_back(reset(instances[i]));
    out[i].initial_estimate = states.back().partial_makespan();
  }
  const bool critic = model.config().critic;
  std::vector<std::size_t> live;
  std::vector<std::shared_ptr<const Observation>> obs;
  std::vector<const Observation*> ptrs;
  for (;;) {
    live.clear();
    obs.clear();
    ptrs.clear();
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i].is_terminal()) continue;
      live.push_back(i);
      obs.push_back(std::make_shared<const Observation>(observe(states[i])));
      ptrs.push_back(obs.back().get());
    }
    if (live.empty()) break;
    const GraphBatch batch = make_batch(ptrs);
    Tape tape(false);
    const Embeddings emb = encode(tape, model, batch);
    const Mat lp = policy_log_probs(tape, model, batch, emb).value();
    Mat v;
    if (critic) v = state_values(tape, model, emb).value();
    for (std::size_t g = 0; g < live.size(); ++g) {
      const int lo = batch.action_offset[g], hi = batch.action_offset[g + 1];
      TrajectoryStep step;
      step.obs = obs[g];
      step.log_probs.resize(static_cast<std::size_t>(hi - lo));
      std::vector<double> probs(step.log_probs.size());
      for (int a = lo; a < hi; ++a) {
        step.log_probs[static_cast<std::size_t>(a - lo)] = lp(a, 0);
        probs[static_cast<std::size_t>(a - lo)] = std::exp(lp(a, 0));
      }
      const std::size_t a = rng.categorical(probs);
      step.action = static_cast<int>(a);
      step.log_prob = step.log_probs[a];
      step.value = critic ? v(static_cast<Eigen::Index>(g), 0) : 0.0;
      ScheduleState& s = states[live[g]];
      step.reward = s.apply(step.obs->actions[a]);
      out[live[g]].steps.push_back(std::move(step));
    }
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    out[i].terminal = true;
    out[i].makespan = states[i].makespan();
  }
  return out;
}

std::vector<double> returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

std::vector<double> returns(const Trajectory& trajectory, double gamma) {
  std::vector<double> r;
  r.reserve(trajectory.steps.size());
  for (const auto& s : trajectory.steps) r.push_back(s.reward);
  return returns(r, gamma);
}

// ---------------------------------------------------------------------------
// Losses

std::vector<PgSample> flatten(const std::vector<Trajectory>& trajectories, const PGConfig& cfg) {
  std::vector<PgSample> out;
  for (const auto& tr : trajectories) {
    const std::vector<double> g = returns(tr, cfg.gamma);
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const TrajectoryStep& s = tr.steps[t];
      PgSample x;
      x.obs = s.obs.get();
      x.action = s.action;
      x.ret = g[t];
      x.advantage = g[t] - s.value;
      x.old_log_prob = s.log_prob;
      x.old_log_probs = &s.log_probs;
      out.push_back(x);
    }
  }
  if (cfg.normalize_advantages && out.size() > 1) {
    double mean = 0.0;
    for (const auto& x : out) mean += x.advantage;
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (const auto& x : out) var += (x.advantage - mean) * (x.advantage - mean);
    const double sd = std::sqrt(var / static_cast<double>(out.size()));
    for (auto& x : out) x.advantage = (x.advantage - mean) / (sd + 1e-8);
  }
  return out;
}

PolicyForward policy_forward(Tape& tape, const Model& model, std::span<const PgSample> samples) {
  std::vector<const Observation*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(s.obs);
  PolicyForward f;
  f.batch = make_batch(ptrs);
  const Embeddings emb = encode(tape, model, f.batch);
  f.log_probs = policy_log_probs(tape, model, f.batch, emb);
  std::vector<int> rows(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].action < 0 || f.batch.action_offset[i] + samples[i].action >= f.batch.action_offset[i + 1])
      throw ContractViolation("policy_forward: action index out of range");
    rows[i] = f.batch.action_offset[i] + samples[i].action;
  }
  f.chosen = ad::gather_rows(f.log_probs, rows);
  // H = -sum p log p per state
  const Var plogp = ad::mul(ad::exp(f.log_probs), f.log_probs);
  f.entropy = -ad::segment_sum(plogp, f.batch.action_graph, f.batch.num_graphs);
  if (model.config().critic) f.values = state_values(tape, model, emb);
  return f;
}

namespace {

double resolve(double denominator, std::size_t n) { return denominator > 0.0 ? denominator : static_cast<double>(n); }

Mat column(std::span<const PgSample> samples, double PgSample::*field) {
  Mat m(static_cast<Eigen::Index>(samples.size()), 1);
  for (std::size_t i = 0; i < samples.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = samples[i].*field;
  return m;
}

/// sum (V - G)^2 / denom
Var value_mse(const PolicyForward& f, std::span<const PgSample> samples, double denom) {
  if (!f.values.valid()) throw ContractViolation("critic loss needs a model with a critic head");
  return ad::scale(ad::sum(ad::square(ad::add_const(f.values, -column(samples, &PgSample::ret)))), 1.0 / denom);
}

LossTerms finish(Var policy, const PolicyForward& f, std::span<const PgSample> samples, const PGConfig& cfg,
                 double denom, bool critic) {
  LossTerms out;
  Var ent = ad::scale(ad::sum(f.entropy), 1.0 / denom);
  out.policy = policy.scalar();
  out.entropy = ent.scalar();
  Var total = policy - ent * cfg.entropy_coef;
  if (critic) {
    Var v = value_mse(f, samples, denom);
    out.value = v.scalar();
    total = total + v * cfg.value_coef;
  }
  out.total = total;
  return out;
}

}  // namespace

LossTerms loss_reinforce(Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                         double denominator) {
  const double denom = resolve(denominator, samples.size());
  const PolicyForward f = policy_forward(tape, model, samples);
  Var pol = ad::scale(ad::sum(ad::mul_const(f.chosen, column(samples, &PgSample::ret))), -1.0 / denom);
  return finish(pol, f, samples, cfg, denom, false);
}

LossTerms loss_a2c(Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                   double denominator) {
  const double denom = resolve(denominator, samples.size());
  const PolicyForward f = policy_forward(tape, model, samples);
  Var pol = ad::scale(ad::sum(ad::mul_const(f.chosen, column(samples, &PgSample::advantage))), -1.0 / denom);
  return finish(pol, f, samples, cfg, denom, true);
}

double ppo_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

LossTerms loss_ppo(Tape& tape, const Model& model, std::span<const PgSample> samples, const PGConfig& cfg,
                   double denominator) {
  const double denom = resolve(denominator, samples.size());
  const PolicyForward f = policy_forward(tape, model, samples);
  const Mat adv = column(samples, &PgSample::advantage);
  const Var ratio = ad::exp(ad::add_const(f.chosen, -column(samples, &PgSample::old_log_prob)));
  const Var surr = ad::minimum(ad::mul_const(ratio, adv), ad::mul_const(ad::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  Var pol = ad::scale(ad::sum(surr), -1.0 / denom);
  return finish(pol, f, samples, cfg, denom, true);
}

std::vector<std::size_t> vmpo_kept(std::span<const double> advantages) {
  if (advantages.empty()) return {};
  std::vector<double> sorted(advantages.begin(), advantages.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (advantages[i] >= median) kept.push_back(i);
  return kept;
}

std::vector<double> vmpo_weights(std::span<const double> kept_advantages, double eta) {
  if (!(eta > 0.0)) throw ContractViolation("vmpo_weights: eta must be positive");
  std::vector<double> w(kept_advantages.size());
  if (w.empty()) return w;
  const double m = *std::max_element(kept_advantages.begin(), kept_advantages.end());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp((kept_advantages[i] - m) / eta));
  for (double& x : w) x /= z;
  return w;
}

TemperatureLoss vmpo_temperature_loss(std::span<const double> kept_advantages, double eta, double eps_eta) {
  if (kept_advantages.empty()) return {};
  if (!(eta > 0.0)) throw ContractViolation("vmpo_temperature_loss: eta must be positive");
  const double m = *std::max_element(kept_advantages.begin(), kept_advantages.end());
  double s = 0.0;
  for (double a : kept_advantages) s += std::exp((a - m) / eta);
  const double n = static_cast<double>(kept_advantages.size());
  const double log_mean = m / eta + std::log(s / n);  // log mean exp(A / eta)
  const std::vector<double> psi = vmpo_weights(kept_advantages, eta);
  double weighted = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) weighted += psi[i] * kept_advantages[i];
  return {eta * eps_eta + eta * log_mean, eps_eta + log_mean - weighted / eta};
}

double categorical_kl(std::span<const double> target_log_probs, std::span<const double> log_probs) {
  if (target_log_probs.size() != log_probs.size()) throw ContractViolation("categorical_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    const double p = std::exp(target_log_probs[i]);
    if (p > 0.0) kl += p * (target_log_probs[i] - log_probs[i]);
  }
  return kl;
}

VmpoTerms vmpo_losses(Tape& tape, const Model& model, std::span<const PgSample> samples, std::span<const double> psi,
                      const VmpoMultipliers& multipliers, double eps_alpha, const PGConfig& cfg, double denominator) {
  if (psi.size() != samples.size()) throw ContractViolation("vmpo_losses: psi length mismatch");
  const double denom = resolve(denominator, samples.size());
  const PolicyForward f = policy_forward(tape, model, samples);
  VmpoTerms out;

  Mat w(static_cast<Eigen::Index>(psi.size()), 1);
  for (std::size_t i = 0; i < psi.size(); ++i) w(static_cast<Eigen::Index>(i), 0) = psi[i];
  Var pol = -ad::sum(ad::mul_const(f.chosen, w));
  out.policy = pol.scalar();

  const auto actions = static_cast<Eigen::Index>(f.batch.num_actions());
  Mat old_lp(actions, 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& v = *samples[i].old_log_probs;
    const int lo = f.batch.action_offset[i];
    if (static_cast<int>(v.size()) != f.batch.action_offset[i + 1] - lo)
      throw ContractViolation("vmpo_losses: stored distribution does not match the state's actions");
    for (std::size_t a = 0; a < v.size(); ++a) old_lp(lo + static_cast<Eigen::Index>(a), 0) = v[a];
  }
  const Mat old_p = old_lp.array().exp().matrix();
  // KL(pi_old || pi) per state = sum_a p_old (log p_old - log p)
  const Var kl_terms = ad::mul_const(ad::add_const(-f.log_probs, old_lp), old_p);
  const Var kl_sum = ad::sum(ad::segment_sum(kl_terms, f.batch.action_graph, f.batch.num_graphs));
  out.kl = kl_sum.scalar() / denom;

  const double alpha = multipliers.alpha.value(0, 0);
  const Var kl_part = ad::scale(kl_sum, alpha / denom);  // sg[alpha] * KL
  const double chunk = static_cast<double>(samples.size());
  const Var alpha_part = ad::mul_scalar(tape.constant_scalar((chunk * eps_alpha - kl_sum.scalar()) / denom),
                                        tape.param(multipliers.alpha));  // alpha * (eps - sg[KL])
  out.alpha_loss = kl_part.scalar() + alpha_part.scalar();

  Var theta = pol + kl_part;
  if (model.config().critic) {
    Var v = value_mse(f, samples, denom);
    out.value = v.scalar();
    theta = theta + v * cfg.value_coef;
  }
  out.theta_loss = theta;
  out.alpha_objective = alpha_part;
  out.total = theta + alpha_part;
  return out;
}

// ---------------------------------------------------------------------------
// Update

namespace {

std::string describe(const PGConfig& cfg, int step, double total, const UpdateStats& s) {
  std::ostringstream os;
  os << to_string(cfg.algorithm) << " update, gradient step " << step << ": non-finite loss " << total
     << " (policy " << s.policy << ", value " << s.value << ", entropy " << s.entropy << ", kl " << s.kl << ")";
  return os.str();
}

}  // namespace

UpdateStats pg_update(Model& model, const std::vector<Trajectory>& trajectories, const PGConfig& cfg, PgState& state) {
  UpdateStats stats;
  const std::vector<PgSample> samples = flatten(trajectories, cfg);
  stats.samples = static_cast<int>(samples.size());
  const bool vmpo = cfg.algorithm == PgAlgorithm::VMPO;
  // V-MPO needs at least two samples for a meaningful median split.
  if (samples.size() < (vmpo ? 2u : 1u)) {
    stats.skipped = true;
    return stats;
  }
  std::vector<ad::Parameter*> params = model.parameters();
  if (vmpo) {
    params.push_back(&state.multipliers.eta);
    params.push_back(&state.multipliers.alpha);
  }

  std::vector<std::size_t> kept;
  std::vector<double> kept_adv;
  if (vmpo) {
    std::vector<double> adv;
    adv.reserve(samples.size());
    for (const auto& s : samples) adv.push_back(s.advantage);
    kept = vmpo_kept(adv);
    for (std::size_t i : kept) kept_adv.push_back(adv[i]);
  }

  const double denom = static_cast<double>(samples.size());
  const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_size);
  for (int e = 0; e < cfg.update_epochs(); ++e) {
    for (auto* p : params) p->zero_grad();
    double total = 0.0;
    double policy = 0.0, value = 0.0, entropy = 0.0, kl = 0.0;
    std::vector<double> psi;
    double eps_alpha = 0.0;
    if (vmpo) {
      eps_alpha = std::exp(state.rng.uniform(std::log(cfg.eps_alpha_lo), std::log(cfg.eps_alpha_hi)));
      const double eta = state.multipliers.eta.value(0, 0);
      const TemperatureLoss tl = vmpo_temperature_loss(kept_adv, eta, cfg.eps_eta);
      state.multipliers.eta.grad(0, 0) += tl.grad;
      total += tl.value;
      psi.assign(samples.size(), 0.0);
      const std::vector<double> w = vmpo_weights(kept_adv, eta);
      for (std::size_t k = 0; k < kept.size(); ++k) psi[kept[k]] = w[k];
    }
    for (std::size_t lo = 0; lo < samples.size(); lo += chunk) {
      const std::size_t n = std::min(chunk, samples.size() - lo);
      const std::span<const PgSample> part(samples.data() + lo, n);
      Tape tape;
      Var loss;
      if (vmpo) {
        const VmpoTerms t = vmpo_losses(tape, model, part, std::span<const double>(psi.data() + lo, n),
                                        state.multipliers, eps_alpha, cfg, denom);
        loss = t.total;
        policy += t.policy;
        value += t.value;
        kl += t.kl;
      } else {
        LossTerms t;
        switch (cfg.algorithm) {
          case PgAlgorithm::Reinforce: t = loss_reinforce(tape, model, part, cfg, denom); break;
          case PgAlgorithm::A2C: t = loss_a2c(tape, model, part, cfg, denom); break;
          default: t = loss_ppo(tape, model, part, cfg, denom); break;
        }
        loss = t.total;
        policy += t.policy;
        value += t.value;
        entropy += t.entropy;
      }
      total += loss.scalar();
      tape.backward(loss);
    }
    stats.policy = policy;
    stats.value = value;
    stats.entropy = entropy;
    stats.kl = kl;
    if (!std::isfinite(total)) throw TrainingError(describe(cfg, e, total, stats));
    state.optimizer.step(params);
    if (vmpo) {
      auto& eta = state.multipliers.eta.value(0, 0);
      auto& alpha = state.multipliers.alpha.value(0, 0);
      eta = std::max(eta, cfg.multiplier_floor);
      alpha = std::max(alpha, cfg.multiplier_floor);
    }
    stats.losses.push_back(total);
    ++stats.gradient_steps;
  }
  stats.eta = state.multipliers.eta.value(0, 0);
  stats.alpha = state.multipliers.alpha.value(0, 0);
  return stats;
}

PolicyAgent::PolicyAgent(const PGConfig& cfg, const ModelConfig& base, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  model_ = Model(cfg_.shape_model(base), rng_);
  state_.optimizer = Adam(Adam::Options{cfg_.lr});
  state_.multipliers.eta.value(0, 0) = cfg_.eta_init;
  state_.multipliers.alpha.value(0, 0) = cfg_.alpha_init;
  state_.rng = Rng(derive_seed(seed, 1));
}

PgEpisodeStats PolicyAgent::run_episode(std::span<const std::shared_ptr<const ProblemInstance>> instances) {
  PgEpisodeStats out;
  const std::vector<Trajectory> trajectories = collect(instances, model_, rng_);
  for (const auto& t : trajectories) {
    out.mean_makespan += t.makespan;
    for (const auto& s : t.steps) out.mean_return += s.reward;
  }
  if (!trajectories.empty()) {
    out.mean_makespan /= static_cast<double>(trajectories.size());
    out.mean_return /= static_cast<double>(trajectories.size());
  }
  out.update = pg_update(model_, trajectories, cfg_, state_);
  return out;
}

}  // namespace jsrl
