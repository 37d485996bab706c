#include "jsrl/value_rl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jsrl/errors.hpp"

namespace jsrl {

using ad::Mat;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

RainbowConfig RainbowConfig::for_problem(ProblemKind kind) {
  RainbowConfig c;
  if (kind == ProblemKind::Jssp) {
    c.n_steps = 2;
    c.v_min = -600.0;
    c.v_max = -50.0;
  } else {
    c.n_steps = 4;
    c.v_min = -50.0;
    c.v_max = 0.0;
  }
  return c;
}

RainbowConfig RainbowConfig::from_mask(unsigned mask, ProblemKind kind) {
  if (mask > 63u) throw ParameterError("rainbow mask must be in [0, 63]");
  RainbowConfig c = for_problem(kind);
  c.ddqn = mask & 1u;
  c.per = mask & 2u;
  c.dueling = mask & 4u;
  c.noisy = mask & 8u;
  c.distributional = mask & 16u;
  c.multistep = mask & 32u;
  return c;
}

unsigned RainbowConfig::mask() const {
  return (ddqn ? 1u : 0u) | (per ? 2u : 0u) | (dueling ? 4u : 0u) | (noisy ? 8u : 0u) | (distributional ? 16u : 0u) |
         (multistep ? 32u : 0u);
}

void RainbowConfig::validate() const {
  if (!(v_min < v_max)) throw ParameterError("rainbow: v_min must be below v_max");
  if (atoms < 2) throw ParameterError("rainbow: atoms must be >= 2");
  if (n_steps < 1) throw ParameterError("rainbow: n_steps must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("rainbow: gamma must be in (0, 1]");
  if (buffer_capacity < 1 || batch_size < 1) throw ParameterError("rainbow: buffer_capacity and batch_size must be >= 1");
  if (target_period < 1) throw ParameterError("rainbow: target_period must be >= 1");
  if (!(lr > 0.0)) throw ParameterError("rainbow: lr must be positive");
  if (per_alpha < 0.0 || per_beta_start < 0.0 || per_beta_end < 0.0 || !(per_eps > 0.0))
    throw ParameterError("rainbow: PER exponents must be >= 0 and per_eps > 0");
  if (!(eps_decay > 0.0) || eps_min < 0.0 || eps_min > 1.0) throw ParameterError("rainbow: bad epsilon schedule");
  if (updates_per_step < 0) throw ParameterError("rainbow: updates_per_step must be >= 0");
}

ModelConfig RainbowConfig::shape_model(ModelConfig base) const {
  base.dueling = dueling;
  base.noisy = noisy;
  base.atoms = distributional ? atoms : 1;
  base.critic = false;
  return base;
}

double epsilon(int episode, const RainbowConfig& cfg) {
  if (cfg.noisy) return 0.0;
  if (episode < 0) throw ParameterError("epsilon: negative episode");
  return std::max(std::exp(-static_cast<double>(episode) / cfg.eps_decay), cfg.eps_min);
}

double epsilon(int episode) { return epsilon(episode, RainbowConfig{}); }

// ---------------------------------------------------------------------------
// n-step

Transition nstep_aggregate(std::span<const StepRecord> window, int n, double gamma) {
  if (window.empty()) throw ContractViolation("nstep_aggregate: empty window");
  if (n < 1) throw ParameterError("nstep_aggregate: n must be >= 1");
  Transition t;
  t.state = window[0].state;
  t.action = window[0].action;
  t.reward = window[0].reward;
  double g = gamma;
  std::size_t last = 0;
  const std::size_t limit = std::min(static_cast<std::size_t>(n), window.size());
  for (std::size_t k = 1; k < limit && !window[k - 1].done; ++k) {
    t.reward += g * window[k].reward;
    g *= gamma;
    last = k;
  }
  t.discount = g;
  t.done = window[last].done;
  t.next = t.done ? nullptr : window[last].next;
  return t;
}

std::vector<Transition> NStepAccumulator::push(StepRecord step) {
  std::vector<Transition> out;
  const bool done = step.done;
  window_.push_back(std::move(step));
  std::vector<StepRecord> view;
  auto emit_front = [&] {
    view.assign(window_.begin(), window_.end());
    out.push_back(nstep_aggregate(view, n_, gamma_));
    window_.pop_front();
  };
  if (static_cast<int>(window_.size()) >= n_) emit_front();
  if (done)
    while (!window_.empty()) emit_front();
  return out;
}

// ---------------------------------------------------------------------------
// Replay

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ParameterError("SumTree: capacity must be >= 1");
  leaf_base_ = 1;
  while (leaf_base_ < capacity) leaf_base_ <<= 1;
  nodes_.assign(2 * leaf_base_, 0.0);
}

void SumTree::set(std::size_t index, double value) {
  if (index >= capacity_) throw ContractViolation("SumTree: index out of range");
  std::size_t i = leaf_base_ + index;
  nodes_[i] = value;
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < leaf_base_) {
    const std::size_t left = 2 * i;
    if (mass < nodes_[left] || nodes_[left + 1] <= 0.0) {
      i = left;
    } else {
      mass -= nodes_[left];
      i = left + 1;
    }
  }
  std::size_t index = i - leaf_base_;
  // Rounding can land on an empty leaf at the far end; walk back to a live one.
  while (index > 0 && (index >= capacity_ || nodes_[leaf_base_ + index] <= 0.0)) --index;
  return index;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, bool prioritized, double alpha, double eps)
    : capacity_(capacity), prioritized_(prioritized), alpha_(alpha), eps_(eps), tree_(prioritized ? capacity : 1) {
  if (capacity == 0) throw ParameterError("ReplayBuffer: capacity must be >= 1");
  items_.resize(capacity);
  raw_priority_.assign(capacity, 0.0);
}

void ReplayBuffer::add(Transition t) {
  items_[next_] = std::move(t);
  if (prioritized_) {
    raw_priority_[next_] = max_priority_;
    tree_.set(next_, std::pow(max_priority_, alpha_));
  }
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

ReplayBuffer::Sample ReplayBuffer::sample(std::size_t batch, double beta, Rng& rng) const {
  if (size_ == 0) throw ContractViolation("ReplayBuffer: sampling from an empty buffer");
  Sample s;
  s.indices.reserve(batch);
  s.weights.assign(batch, 1.0);
  if (!prioritized_) {
    for (std::size_t i = 0; i < batch; ++i) s.indices.push_back(rng.uniform_index(size_));
    return s;
  }
  const double total = tree_.total();
  double max_w = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t idx = tree_.find(rng.uniform() * total);
    s.indices.push_back(idx);
    const double p = tree_.get(idx) / total;
    s.weights[i] = std::pow(static_cast<double>(size_) * p, -beta);
    max_w = std::max(max_w, s.weights[i]);
  }
  for (double& w : s.weights) w /= max_w;
  return s;
}

void ReplayBuffer::update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors) {
  if (!prioritized_) return;
  if (indices.size() != td_errors.size()) throw ContractViolation("update_priorities: length mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (!std::isfinite(td_errors[i])) throw TrainingError("update_priorities: non-finite TD error");
    const double p = std::abs(td_errors[i]) + eps_;
    raw_priority_[indices[i]] = p;
    tree_.set(indices[i], std::pow(p, alpha_));
    max_priority_ = std::max(max_priority_, p);
  }
}

double ReplayBuffer::probability(std::size_t index) const {
  if (index >= size_) return 0.0;
  if (!prioritized_) return 1.0 / static_cast<double>(size_);
  return tree_.get(index) / tree_.total();
}

// ---------------------------------------------------------------------------
// Targets

namespace {

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct NextBatch {
  std::vector<int> sample_of_graph;  // which batch entry each graph belongs to
  std::vector<const Observation*> observations;
};

NextBatch gather_next(std::span<const Transition* const> batch) {
  NextBatch nb;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->done) continue;
    if (!batch[i]->next) throw ContractViolation("transition without next state is not marked done");
    nb.sample_of_graph.push_back(static_cast<int>(i));
    nb.observations.push_back(batch[i]->next.get());
  }
  return nb;
}

Mat forward_log_distribution(const Model& model, const GraphBatch& b) {
  Tape t(false);
  return q_log_distribution(t, model, b, encode(t, model, b)).value();
}

std::vector<double> expected_values(const Mat& log_probs, const AtomGrid& grid) {
  std::vector<double> v(static_cast<std::size_t>(log_probs.rows()), 0.0);
  for (Eigen::Index a = 0; a < log_probs.rows(); ++a) {
    double s = 0.0;
    for (int i = 0; i < grid.atoms; ++i) s += std::exp(log_probs(a, i)) * grid.atom(i);
    v[static_cast<std::size_t>(a)] = s;
  }
  return v;
}

}  // namespace

double td_target_value(double reward, bool done, double discount, std::span<const double> q_target_next,
                       std::span<const double> q_online_next) {
  if (done) return reward;
  if (q_target_next.empty()) throw ContractViolation("td_target_value: no next-state actions");
  std::size_t a;
  if (q_online_next.empty()) {
    a = argmax_lowest(q_target_next);
  } else {
    if (q_online_next.size() != q_target_next.size()) throw ContractViolation("td_target_value: length mismatch");
    a = argmax_lowest(q_online_next);
  }
  return reward + discount * q_target_next[a];
}

std::vector<double> categorical_project(double reward, bool done, double discount, std::span<const double> next_probs,
                                        const AtomGrid& grid) {
  const int n = grid.atoms;
  const double dz = grid.delta();
  std::vector<double> m(static_cast<std::size_t>(n), 0.0);
  auto place = [&](double tz, double mass) {
    tz = std::clamp(tz, grid.v_min, grid.v_max);
    double b = (tz - grid.v_min) / dz;
    const double rb = std::round(b);
    if (std::abs(b - rb) < 1e-9) b = rb;
    const auto l = static_cast<int>(std::floor(b));
    const auto u = static_cast<int>(std::ceil(b));
    if (l == u) {
      m[static_cast<std::size_t>(l)] += mass;
    } else {
      m[static_cast<std::size_t>(l)] += mass * (static_cast<double>(u) - b);
      m[static_cast<std::size_t>(u)] += mass * (b - static_cast<double>(l));
    }
  };
  if (done) {
    place(reward, 1.0);
    return m;
  }
  if (static_cast<int>(next_probs.size()) != n) throw ContractViolation("categorical_project: distribution size mismatch");
  for (int j = 0; j < n; ++j) place(reward + discount * grid.atom(j), next_probs[static_cast<std::size_t>(j)]);
  return m;
}

std::vector<double> td_targets(std::span<const Transition* const> batch, const Model& online, const Model& target,
                               const RainbowConfig& cfg) {
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) y[i] = batch[i]->reward;
  const NextBatch nb = gather_next(batch);
  if (nb.observations.empty()) return y;
  const GraphBatch b = make_batch(nb.observations);
  Mat q_target, q_online;
  {
    Tape t(false);
    q_target = q_values(t, target, b, encode(t, target, b)).value();
  }
  if (cfg.ddqn) {
    Tape t(false);
    q_online = q_values(t, online, b, encode(t, online, b)).value();
  }
  for (int g = 0; g < b.num_graphs; ++g) {
    const Transition& tr = *batch[static_cast<std::size_t>(nb.sample_of_graph[static_cast<std::size_t>(g)])];
    const int lo = b.action_offset[static_cast<std::size_t>(g)], hi = b.action_offset[static_cast<std::size_t>(g) + 1];
    const std::span<const double> qt(q_target.data() + lo, static_cast<std::size_t>(hi - lo));
    std::span<const double> qo;
    if (cfg.ddqn) qo = std::span<const double>(q_online.data() + lo, static_cast<std::size_t>(hi - lo));
    y[static_cast<std::size_t>(nb.sample_of_graph[static_cast<std::size_t>(g)])] =
        td_target_value(tr.reward, false, tr.discount, qt, qo);
  }
  return y;
}

Mat categorical_targets(std::span<const Transition* const> batch, const Model& online, const Model& target,
                        const RainbowConfig& cfg) {
  const AtomGrid grid{cfg.v_min, cfg.v_max, cfg.atoms};
  Mat out(static_cast<Eigen::Index>(batch.size()), cfg.atoms);
  const NextBatch nb = gather_next(batch);
  Mat target_logp, online_logp;
  GraphBatch b;
  if (!nb.observations.empty()) {
    b = make_batch(nb.observations);
    target_logp = forward_log_distribution(target, b);
    if (cfg.ddqn) online_logp = forward_log_distribution(online, b);
  }
  std::vector<int> graph_of_sample(batch.size(), -1);
  for (std::size_t g = 0; g < nb.sample_of_graph.size(); ++g) graph_of_sample[static_cast<std::size_t>(nb.sample_of_graph[g])] = static_cast<int>(g);
  const std::vector<double> select_values = nb.observations.empty() ? std::vector<double>{}
                                                                    : expected_values(cfg.ddqn ? online_logp : target_logp, grid);
  std::vector<double> probs(static_cast<std::size_t>(cfg.atoms));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& tr = *batch[i];
    std::vector<double> m;
    if (tr.done) {
      m = categorical_project(tr.reward, true, tr.discount, {}, grid);
    } else {
      const int g = graph_of_sample[i];
      const int lo = b.action_offset[static_cast<std::size_t>(g)], hi = b.action_offset[static_cast<std::size_t>(g) + 1];
      const std::size_t a = argmax_lowest(std::span<const double>(select_values.data() + lo, static_cast<std::size_t>(hi - lo)));
      for (int k = 0; k < cfg.atoms; ++k) probs[static_cast<std::size_t>(k)] = std::exp(target_logp(lo + static_cast<Eigen::Index>(a), k));
      m = categorical_project(tr.reward, false, tr.discount, probs, grid);
    }
    for (int k = 0; k < cfg.atoms; ++k) out(static_cast<Eigen::Index>(i), k) = m[static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<double> action_values(const Model& model, const GraphBatch& batch, const AtomGrid* grid) {
  Tape t(false);
  const Embeddings e = encode(t, model, batch);
  if (grid) return expected_values(q_log_distribution(t, model, batch, e).value(), *grid);
  const Mat q = q_values(t, model, batch, e).value();
  return std::vector<double>(q.data(), q.data() + q.rows());
}

std::vector<double> action_values(const Model& model, const Observation& obs, const AtomGrid* grid) {
  return action_values(model, make_batch(obs), grid);
}

// ---------------------------------------------------------------------------
// Rainbow learner

namespace {

Model build_model(const ModelConfig& cfg, Rng& rng) { return Model(cfg, rng); }

std::vector<int> chosen_rows(const GraphBatch& b, std::span<const Transition* const> batch) {
  std::vector<int> rows(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int count = b.action_offset[i + 1] - b.action_offset[i];
    if (batch[i]->action < 0 || batch[i]->action >= count) throw ContractViolation("stored action index out of range");
    rows[i] = b.action_offset[i] + batch[i]->action;
  }
  return rows;
}

}  // namespace

RainbowAgent::RainbowAgent(const RainbowConfig& cfg, const ModelConfig& base, std::uint64_t seed)
    : cfg_(cfg),
      grid_{cfg.v_min, cfg.v_max, cfg.atoms},
      rng_(seed),
      online_(build_model(cfg.shape_model(base), rng_)),
      target_(online_),
      optimizer_(Adam::Options{cfg.lr}),
      buffer_(static_cast<std::size_t>(cfg.buffer_capacity), cfg.per, cfg.per_alpha, cfg.per_eps),
      nstep_(cfg.effective_steps(), cfg.gamma) {
  cfg_.validate();
  if (cfg_.noisy) {
    online_.resample_noise(rng_);
    target_.resample_noise(rng_);
  }
}

double RainbowAgent::beta() const { return cfg_.per_beta_start + (cfg_.per_beta_end - cfg_.per_beta_start) * progress_; }

std::size_t RainbowAgent::act(const Observation& obs, int episode) {
  if (obs.actions.empty()) throw ContractViolation("act: no feasible actions");
  const double eps = epsilon(episode, cfg_);
  if (eps > 0.0 && rng_.uniform() < eps) return rng_.uniform_index(obs.actions.size());
  const std::vector<double> v = action_values(online_, obs, grid());
  return argmax_lowest(v);
}

void RainbowAgent::remember(StepRecord step) {
  for (auto& t : nstep_.push(std::move(step))) buffer_.add(std::move(t));
}

void RainbowAgent::sync_target() { target_.copy_parameters_from(online_); }

std::optional<double> RainbowAgent::train_step() {
  const auto batch_size = static_cast<std::size_t>(cfg_.batch_size);
  if (buffer_.size() < batch_size) return std::nullopt;
  if (cfg_.noisy) {
    online_.resample_noise(rng_);
    target_.resample_noise(rng_);
  }
  const ReplayBuffer::Sample sample = buffer_.sample(batch_size, beta(), rng_);
  std::vector<const Transition*> batch;
  std::vector<const Observation*> states;
  for (std::size_t idx : sample.indices) {
    batch.push_back(&buffer_.at(idx));
    states.push_back(batch.back()->state.get());
  }
  const GraphBatch b = make_batch(states);
  const std::vector<int> rows = chosen_rows(b, batch);
  const std::vector<int> first_col(batch.size(), 0);

  online_.zero_grad();
  Tape tape;
  const Embeddings e = encode(tape, online_, b);
  Var loss;
  std::vector<double> td(batch.size());
  if (cfg_.distributional) {
    const Mat m = categorical_targets(batch, online_, target_, cfg_);
    Var logp = ad::gather_rows(q_log_distribution(tape, online_, b, e), rows);
    Var ce = ad::scale(ad::row_sum(ad::mul_const(logp, m)), -1.0);
    for (std::size_t i = 0; i < batch.size(); ++i) td[i] = ce.value()(static_cast<Eigen::Index>(i), 0);
    if (cfg_.per) {
      Mat w(static_cast<Eigen::Index>(batch.size()), 1);
      for (std::size_t i = 0; i < batch.size(); ++i) w(static_cast<Eigen::Index>(i), 0) = sample.weights[i];
      ce = ad::mul_const(ce, w);
    }
    loss = ad::mean(ce);
  } else {
    const std::vector<double> y = td_targets(batch, online_, target_, cfg_);
    Mat ym(static_cast<Eigen::Index>(batch.size()), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) ym(static_cast<Eigen::Index>(i), 0) = y[i];
    Var q_sa = ad::pick(q_values(tape, online_, b, e), rows, first_col);
    Var diff = ad::sub(q_sa, tape.constant(ym));
    for (std::size_t i = 0; i < batch.size(); ++i) td[i] = diff.value()(static_cast<Eigen::Index>(i), 0);
    Var sq = ad::square(diff);
    if (cfg_.per) {
      Mat w(static_cast<Eigen::Index>(batch.size()), 1);
      for (std::size_t i = 0; i < batch.size(); ++i) w(static_cast<Eigen::Index>(i), 0) = sample.weights[i];
      sq = ad::mul_const(sq, w);
    }
    loss = ad::mean(sq);
  }
  const double value = loss.scalar();
  tape.backward(loss);
  optimizer_.step(online_.parameters());
  buffer_.update_priorities(sample.indices, td);
  return value;
}

EpisodeStats RainbowAgent::run_episode(std::shared_ptr<const ProblemInstance> instance, int episode) {
  EpisodeStats stats;
  ScheduleState s = reset(std::move(instance));
  auto obs = std::make_shared<const Observation>(observe(s));
  nstep_.clear();
  while (!s.is_terminal()) {
    const std::size_t a = act(*obs, episode);
    const double r = s.apply(obs->actions[a]);
    stats.episode_return += r;
    const bool done = s.is_terminal();
    std::shared_ptr<const Observation> next = done ? nullptr : std::make_shared<const Observation>(observe(s));
    remember({obs, static_cast<int>(a), r, next, done});
    for (int u = 0; u < cfg_.updates_per_step; ++u)
      if (auto l = train_step()) stats.losses.push_back(*l);
    obs = std::move(next);
  }
  stats.makespan = s.makespan();
  stats.updates = static_cast<int>(stats.losses.size());
  double total = 0.0;
  for (double l : stats.losses) total += l;
  stats.mean_loss = stats.losses.empty() ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(stats.losses.size());
  if ((episode + 1) % cfg_.target_period == 0) sync_target();
  return stats;
}

// ---------------------------------------------------------------------------
// Plain DQN

DqnAgent::DqnAgent(const RainbowConfig& cfg, const ModelConfig& base, std::uint64_t seed)
    : cfg_(cfg), rng_(seed), online_(build_model(RainbowConfig{}.shape_model(base), rng_)), target_(online_),
      optimizer_(Adam::Options{cfg.lr}) {
  cfg_.validate();
}

std::size_t DqnAgent::act(const Observation& obs, int episode) {
  const double eps = std::max(std::exp(-static_cast<double>(episode) / cfg_.eps_decay), cfg_.eps_min);
  if (eps > 0.0 && rng_.uniform() < eps) return rng_.uniform_index(obs.actions.size());
  Tape t(false);
  const GraphBatch b = make_batch(obs);
  const Mat q = q_values(t, online_, b, encode(t, online_, b)).value();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < q.rows(); ++i)
    if (q(i, 0) > q(best, 0)) best = i;
  return static_cast<std::size_t>(best);
}

std::optional<double> DqnAgent::train_step() {
  const auto n = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t size = buffer_.size();
  if (size < n) return std::nullopt;
  std::vector<const Transition*> batch;
  for (std::size_t i = 0; i < n; ++i) batch.push_back(&buffer_[rng_.uniform_index(size)]);

  // Bootstrapped targets from the frozen network over all non-terminal successors at once.
  std::vector<double> y(n);
  std::vector<const Observation*> next_obs;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = batch[i]->reward;
    if (!batch[i]->done) {
      next_obs.push_back(batch[i]->next.get());
      owner.push_back(i);
    }
  }
  if (!next_obs.empty()) {
    const GraphBatch nb = make_batch(next_obs);
    Tape t(false);
    const Mat q = q_values(t, target_, nb, encode(t, target_, nb)).value();
    for (std::size_t g = 0; g < owner.size(); ++g) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = nb.action_offset[g]; a < nb.action_offset[g + 1]; ++a) best = std::max(best, q(a, 0));
      y[owner[g]] = batch[owner[g]]->reward + cfg_.gamma * best;
    }
  }

  std::vector<const Observation*> states;
  for (const auto* tr : batch) states.push_back(tr->state.get());
  const GraphBatch b = make_batch(states);
  std::vector<int> rows(n), cols(n, 0);
  for (std::size_t i = 0; i < n; ++i) rows[i] = b.action_offset[i] + batch[i]->action;
  Mat ym(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) ym(static_cast<Eigen::Index>(i), 0) = y[i];

  online_.zero_grad();
  Tape tape;
  Var q_sa = ad::pick(q_values(tape, online_, b, encode(tape, online_, b)), rows, cols);
  Var loss = ad::mean(ad::square(ad::sub(q_sa, tape.constant(ym))));
  const double value = loss.scalar();
  tape.backward(loss);
  optimizer_.step(online_.parameters());
  return value;
}

EpisodeStats DqnAgent::run_episode(std::shared_ptr<const ProblemInstance> instance, int episode) {
  EpisodeStats stats;
  ScheduleState s = reset(std::move(instance));
  auto obs = std::make_shared<const Observation>(observe(s));
  while (!s.is_terminal()) {
    const std::size_t a = act(*obs, episode);
    const double r = s.apply(obs->actions[a]);
    stats.episode_return += r;
    const bool done = s.is_terminal();
    std::shared_ptr<const Observation> next = done ? nullptr : std::make_shared<const Observation>(observe(s));
    Transition t{obs, static_cast<int>(a), r, next, done, cfg_.gamma};
    if (buffer_.size() < static_cast<std::size_t>(cfg_.buffer_capacity)) {
      buffer_.push_back(std::move(t));
    } else {
      buffer_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % static_cast<std::size_t>(cfg_.buffer_capacity);
    for (int u = 0; u < cfg_.updates_per_step; ++u)
      if (auto l = train_step()) stats.losses.push_back(*l);
    obs = std::move(next);
  }
  stats.makespan = s.makespan();
  stats.updates = static_cast<int>(stats.losses.size());
  double total = 0.0;
  for (double l : stats.losses) total += l;
  stats.mean_loss = stats.losses.empty() ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(stats.losses.size());
  if ((episode + 1) % cfg_.target_period == 0) target_.copy_parameters_from(online_);
  return stats;
}

}  // namespace jsrl
