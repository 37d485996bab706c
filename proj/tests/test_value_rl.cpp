#include <cmath>
#include <map>

#include "doctest.h"
#include "jsrl/errors.hpp"
#include "jsrl/value_rl.hpp"
#include "test_util.hpp"

using namespace jsrl;
using namespace jsrl::testing;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.embed_dim = 8;
  m.hidden_dim = 16;
  m.layers = 2;
  return m;
}

std::shared_ptr<const Observation> obs_ptr(const ScheduleState& s) { return std::make_shared<const Observation>(observe(s)); }

// Random-policy steps from a few small instances, as learner step records.
std::vector<StepRecord> random_steps(int episodes, std::uint64_t seed) {
  std::vector<StepRecord> out;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    ScheduleState s = reset(share(generate_fjsp(3, 3, seed + static_cast<std::uint64_t>(e), {2, 3})));
    auto obs = obs_ptr(s);
    while (!s.is_terminal()) {
      const auto a = rng.uniform_index(obs->actions.size());
      const double r = s.apply(obs->actions[a]);
      const bool done = s.is_terminal();
      auto next = done ? nullptr : obs_ptr(s);
      out.push_back({obs, static_cast<int>(a), r, next, done});
      obs = next;
    }
  }
  return out;
}

StepRecord fake_step(double r, bool done) {
  auto o = std::make_shared<const Observation>();
  return {o, 0, r, done ? nullptr : std::make_shared<const Observation>(), done};
}

}  // namespace

TEST_CASE("epsilon schedule") {
  CHECK(epsilon(0) == 1.0);
  CHECK(std::abs(epsilon(600) - std::exp(-1.0)) < 1e-9);
  CHECK(epsilon(10000) == 0.1);
  CHECK(epsilon(1000000) == 0.1);
  double prev = 2.0;
  for (int e = 0; e < 5000; e += 7) {
    const double v = epsilon(e);
    CHECK(v <= prev);
    CHECK(v >= 0.1);
    CHECK(v <= 1.0);
    prev = v;
  }
  RainbowConfig noisy;
  noisy.noisy = true;
  CHECK(epsilon(0, noisy) == 0.0);
}

TEST_CASE("rainbow config: defaults per problem, masks, validation") {
  const auto j = RainbowConfig::for_problem(ProblemKind::Jssp);
  CHECK(j.n_steps == 2);
  CHECK(j.v_min == -600.0);
  CHECK(j.v_max == -50.0);
  const auto f = RainbowConfig::for_problem(ProblemKind::Fjsp);
  CHECK(f.n_steps == 4);
  CHECK(f.v_min == -50.0);
  CHECK(f.v_max == 0.0);
  CHECK(f.atoms == 51);
  CHECK(f.gamma == 0.99);
  CHECK(f.buffer_capacity == 20000);
  CHECK(f.batch_size == 32);
  CHECK(f.target_period == 10);
  CHECK(f.lr == 2e-4);
  CHECK(f.per_alpha == 0.4);
  CHECK(f.per_beta_start == 0.4);
  for (unsigned m = 0; m < 64; ++m) {
    const auto c = RainbowConfig::from_mask(m, ProblemKind::Fjsp);
    CHECK(c.mask() == m);
    CHECK_NOTHROW(c.validate());
  }
  CHECK_THROWS_AS(RainbowConfig::from_mask(64, ProblemKind::Fjsp), ParameterError);
  RainbowConfig bad;
  bad.v_min = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = RainbowConfig{};
  bad.atoms = 1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = RainbowConfig{};
  bad.n_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("nstep_aggregate examples") {
  const std::vector<StepRecord> one{fake_step(-2.0, false)};
  const Transition t1 = nstep_aggregate(one, 1, 0.99);
  CHECK(t1.reward == -2.0);
  CHECK(t1.discount == 0.99);
  CHECK_FALSE(t1.done);
  CHECK(t1.next == one[0].next);

  const std::vector<StepRecord> three{fake_step(-3.0, false), fake_step(0.0, false), fake_step(-5.0, false)};
  const Transition t3 = nstep_aggregate(three, 3, 0.99);
  CHECK(t3.reward == doctest::Approx(-7.9005).epsilon(1e-12));
  CHECK(t3.discount == doctest::Approx(0.99 * 0.99 * 0.99));
  CHECK(t3.next == three[2].next);

  const std::vector<StepRecord> term{fake_step(-4.0, true)};
  const Transition tt = nstep_aggregate(term, 4, 0.99);
  CHECK(tt.done);
  CHECK(tt.next == nullptr);
  CHECK(tt.reward == -4.0);
  CHECK(tt.discount == 0.99);

  // A terminal step inside the window truncates it.
  const std::vector<StepRecord> mid{fake_step(-1.0, false), fake_step(-2.0, true), fake_step(-9.0, false)};
  const Transition tm = nstep_aggregate(mid, 3, 0.5);
  CHECK(tm.done);
  CHECK(tm.reward == -2.0);
}

TEST_CASE("n-step accumulator emits every step once and flushes at episode end") {
  NStepAccumulator acc(4, 0.9);
  std::vector<Transition> all;
  const double rewards[] = {-1, -2, -3, -4, -5, -6};
  for (int i = 0; i < 6; ++i) {
    auto out = acc.push(fake_step(rewards[i], i == 5));
    all.insert(all.end(), out.begin(), out.end());
  }
  REQUIRE(all.size() == 6);
  CHECK(acc.pending() == 0);
  CHECK(all[0].reward == doctest::Approx(-1 - 0.9 * 2 - 0.81 * 3 - 0.729 * 4));
  CHECK_FALSE(all[0].done);
  CHECK(all[2].done);  // steps 2..5 reach the terminal
  CHECK(all[5].reward == -6.0);
  CHECK(all[5].discount == 0.9);
  CHECK(all[4].discount == doctest::Approx(0.81));
}

TEST_CASE("n = 1 multi-step equals one-step exactly") {
  const auto steps = random_steps(3, 5);
  NStepAccumulator one(1, 0.99);
  std::vector<Transition> a, b;
  for (const auto& s : steps) {
    auto o = one.push(s);
    a.insert(a.end(), o.begin(), o.end());
    b.push_back(Transition{s.state, s.action, s.reward, s.next, s.done, 0.99});
  }
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].reward == b[i].reward);
    CHECK(a[i].discount == b[i].discount);
    CHECK(a[i].done == b[i].done);
    CHECK(a[i].next == b[i].next);
    CHECK(td_target_value(a[i].reward, a[i].done, a[i].discount, std::vector<double>{1.5, -2.0}) ==
          td_target_value(b[i].reward, b[i].done, b[i].discount, std::vector<double>{1.5, -2.0}));
  }
}

TEST_CASE("td_target_value examples") {
  CHECK(td_target_value(-7.0, true, 0.99, std::vector<double>{100.0}) == -7.0);
  CHECK(td_target_value(0.0, false, 0.99, std::vector<double>{1.0, 2.0}) == doctest::Approx(1.98));
  CHECK(td_target_value(0.0, false, 1.0, std::vector<double>{5.0, 100.0}, std::vector<double>{9.0, 1.0}) == 5.0);
  CHECK(td_target_value(0.0, false, 1.0, std::vector<double>{5.0, 100.0}) == 100.0);
}

TEST_CASE("categorical projection examples") {
  const AtomGrid jssp{-600.0, -50.0, 51};
  CHECK(jssp.delta() == 11.0);
  const auto hand = categorical_project(-60.0, true, 0.99, {}, jssp);
  CHECK(hand[49] == doctest::Approx(0.9091).epsilon(1e-4));
  CHECK(hand[50] == doctest::Approx(0.0909).epsilon(1e-3));
  CHECK(std::abs(hand[49] - 10.0 / 11.0) < 1e-12);
  const auto exact = categorical_project(jssp.atom(17), true, 0.99, {}, jssp);
  CHECK(exact[17] == 1.0);
  const AtomGrid fjsp{-50.0, 0.0, 51};
  CHECK(categorical_project(-80.0, true, 1.0, {}, fjsp)[0] == 1.0);
  CHECK(categorical_project(3.0, true, 1.0, {}, fjsp)[50] == 1.0);
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(51);
    double z = 0.0;
    for (double& v : p) z += (v = rng.uniform());
    for (double& v : p) v /= z;
    const auto m = categorical_project(rng.uniform(-10, 2), false, rng.uniform(0.5, 1.0), p, fjsp);
    double total = 0.0;
    for (double v : m) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("sum tree matches a linear scan") {
  Rng rng(4);
  SumTree tree(13);
  std::vector<double> values(13, 0.0);
  for (int round = 0; round < 500; ++round) {
    const auto i = rng.uniform_index(13);
    values[i] = rng.uniform(0.0, 5.0);
    tree.set(i, values[i]);
    double total = 0.0;
    for (double v : values) total += v;
    CHECK(tree.total() == doctest::Approx(total));
    const double mass = rng.uniform() * total;
    double acc = 0.0;
    std::size_t expect = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (mass < acc + values[k]) {
        expect = k;
        break;
      }
      acc += values[k];
    }
    CHECK(tree.find(mass) == expect);
  }
}

TEST_CASE("replay: uniform and prioritized sampling probabilities") {
  ReplayBuffer uniform(5, false);
  for (int i = 0; i < 3; ++i) uniform.add(Transition{});
  for (std::size_t i = 0; i < 3; ++i) CHECK(uniform.probability(i) == 1.0 / 3.0);
  for (int i = 0; i < 4; ++i) uniform.add(Transition{});
  CHECK(uniform.size() == 5);

  ReplayBuffer linear(2, true, 1.0, 1e-5);
  linear.add(Transition{});
  linear.add(Transition{});
  const std::size_t idx[] = {0, 1};
  const double td1[] = {1.0 - 1e-5, 3.0 - 1e-5};
  linear.update_priorities(idx, td1);
  CHECK(linear.probability(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(linear.probability(1) == doctest::Approx(0.75).epsilon(1e-12));

  ReplayBuffer sub(2, true, 0.4, 1e-5);
  sub.add(Transition{});
  sub.add(Transition{});
  sub.update_priorities(idx, td1);
  CHECK(sub.probability(0) == doctest::Approx(0.3919).epsilon(1e-3));
  CHECK(sub.probability(1) == doctest::Approx(0.6081).epsilon(1e-3));
  CHECK(std::abs(sub.probability(1) - std::pow(3.0, 0.4) / (1.0 + std::pow(3.0, 0.4))) < 1e-12);
  CHECK(sub.max_priority() == doctest::Approx(3.0));
  sub.add(Transition{});  // overwrites slot 0 with the running max
  CHECK(sub.priority(0) == doctest::Approx(3.0));

  Rng rng(8);
  std::map<std::size_t, int> counts;
  const int draws = 40000;
  const auto s = linear.sample(static_cast<std::size_t>(draws), 0.5, rng);
  for (auto i : s.indices) ++counts[i];
  CHECK(std::abs(counts[1] / double(draws) - 0.75) < 4.0 * std::sqrt(0.75 * 0.25 / draws));
  // IS weights: (N P)^-beta normalized by the batch max; slot 0 is the rarer one.
  for (std::size_t k = 0; k < s.indices.size(); ++k) {
    const double expect = s.indices[k] == 0 ? 1.0 : std::pow(2 * 0.75, -0.5) / std::pow(2 * 0.25, -0.5);
    CHECK(s.weights[k] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("replay: equal priorities reproduce uniform sampling") {
  ReplayBuffer per(64, true, 0.4, 1e-5);
  for (int i = 0; i < 40; ++i) per.add(Transition{});
  std::vector<std::size_t> idx;
  std::vector<double> td;
  for (std::size_t i = 0; i < 40; ++i) {
    idx.push_back(i);
    td.push_back(0.7);
  }
  per.update_priorities(idx, td);
  double worst = 0.0;
  for (std::size_t i = 0; i < 40; ++i) worst = std::max(worst, std::abs(per.probability(i) - 1.0 / 40.0));
  CHECK(worst < 1e-9);
  Rng rng(2);
  const auto s = per.sample(32, 0.4, rng);
  for (double w : s.weights) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("agent: warm-up is a no-op and the 64 combinations construct and train") {
  const auto steps = random_steps(2, 11);
  for (unsigned m = 0; m < 64; ++m) {
    CAPTURE(m);
    RainbowConfig cfg = RainbowConfig::from_mask(m, ProblemKind::Fjsp);
    cfg.batch_size = 8;
    cfg.atoms = 11;
    RainbowAgent agent(cfg, tiny_model(), 3);
    CHECK_FALSE(agent.train_step().has_value());
    for (const auto& s : steps) agent.remember(s);
    for (int k = 0; k < 2; ++k) {
      const auto loss = agent.train_step();
      REQUIRE(loss.has_value());
      CHECK(std::isfinite(*loss));
    }
    CHECK(agent.act(*steps[0].state, 0) < steps[0].state->actions.size());
  }
}

TEST_CASE("agent: online distributions are normalized") {
  RainbowConfig cfg = RainbowConfig::from_mask(16 | 4, ProblemKind::Fjsp);
  RainbowAgent agent(cfg, tiny_model(), 5);
  const auto steps = random_steps(1, 2);
  const GraphBatch b = make_batch(*steps[1].state);
  ad::Tape t(false);
  const auto logp = q_log_distribution(t, agent.online(), b, encode(t, agent.online(), b)).value();
  for (Eigen::Index a = 0; a < logp.rows(); ++a) CHECK(std::abs(logp.row(a).array().exp().sum() - 1.0) < 1e-6);
  std::vector<const Transition*> batch;
  std::vector<Transition> store;
  NStepAccumulator acc(4, 0.99);
  for (const auto& s : steps)
    for (auto& tr : acc.push(s)) store.push_back(tr);
  for (const auto& tr : store) batch.push_back(&tr);
  const auto targets = categorical_targets(batch, agent.online(), agent.target(), cfg);
  for (Eigen::Index i = 0; i < targets.rows(); ++i) CHECK(std::abs(targets.row(i).sum() - 1.0) < 1e-6);
}

TEST_CASE("terminal targets never bootstrap") {
  RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Fjsp);
  RainbowAgent a(cfg, tiny_model(), 1), b(cfg, tiny_model(), 2);
  Transition t{std::make_shared<const Observation>(), 0, -7.0, nullptr, true, 0.99};
  const Transition* batch[] = {&t};
  CHECK(td_targets(batch, a.online(), a.target(), cfg)[0] == -7.0);
  CHECK(td_targets(batch, b.online(), b.target(), cfg)[0] == -7.0);
}

TEST_CASE("sync_target: copy semantics, period, idempotence") {
  RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Fjsp);
  cfg.batch_size = 4;
  RainbowAgent agent(cfg, tiny_model(), 9);
  const auto steps = random_steps(2, 4);
  for (const auto& s : steps) agent.remember(s);
  for (int k = 0; k < 3; ++k) agent.train_step();
  const Observation& o = *steps[3].state;
  CHECK(action_values(agent.online(), o, nullptr) != action_values(agent.target(), o, nullptr));
  agent.sync_target();
  CHECK(action_values(agent.online(), o, nullptr) == action_values(agent.target(), o, nullptr));
  agent.sync_target();
  CHECK(action_values(agent.online(), o, nullptr) == action_values(agent.target(), o, nullptr));

  // Episodes 1-9 (zero-based 0-8) leave the target untouched; episode 10 syncs it.
  RainbowAgent runner(cfg, tiny_model(), 10);
  const auto inst = share(generate_fjsp(3, 3, 1, {2, 3}));
  const auto frozen = action_values(runner.target(), o, nullptr);
  for (int e = 0; e < 9; ++e) {
    runner.run_episode(inst, e);
    CHECK(action_values(runner.target(), o, nullptr) == frozen);
  }
  runner.run_episode(inst, 9);
  CHECK(action_values(runner.target(), o, nullptr) == action_values(runner.online(), o, nullptr));
  CHECK(action_values(runner.target(), o, nullptr) != frozen);
}

TEST_CASE("all-off rainbow reproduces the dedicated DQN loss trace bit for bit") {
  RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Fjsp);
  cfg.batch_size = 8;
  cfg.target_period = 2;
  RainbowAgent rainbow(cfg, tiny_model(), 123);
  DqnAgent dqn(cfg, tiny_model(), 123);
  std::vector<double> a, b;
  for (int e = 0; e < 6; ++e) {
    const auto inst = share(generate_fjsp(3, 3, 100 + e, {2, 3}));
    const auto sa = rainbow.run_episode(inst, e);
    const auto sb = dqn.run_episode(inst, e);
    a.insert(a.end(), sa.losses.begin(), sa.losses.end());
    b.insert(b.end(), sb.losses.begin(), sb.losses.end());
    CHECK(sa.makespan == sb.makespan);
  }
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() > 20);
  bool identical = true;
  for (std::size_t i = 0; i < a.size(); ++i) identical = identical && a[i] == b[i];
  CHECK(identical);
}

TEST_CASE("loss decreases when overfitting a frozen 100-transition buffer") {
  RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Fjsp);
  cfg.buffer_capacity = 100;
  RainbowAgent agent(cfg, tiny_model(), 31);
  const auto steps = random_steps(20, 7);
  REQUIRE(steps.size() >= 100);
  for (std::size_t i = 0; i < 100; ++i) agent.remember(steps[i]);
  CHECK(agent.buffer().size() == 100);
  std::vector<double> losses;
  for (int k = 0; k < 200; ++k) losses.push_back(*agent.train_step());
  double head = 0.0, tail = 0.0;
  for (int k = 0; k < 20; ++k) {
    head += losses[static_cast<std::size_t>(k)];
    tail += losses[losses.size() - 1 - static_cast<std::size_t>(k)];
  }
  CHECK(tail < head);
}

TEST_CASE("PER beta anneals linearly to one") {
  RainbowConfig cfg = RainbowConfig::from_mask(2, ProblemKind::Fjsp);
  RainbowAgent agent(cfg, tiny_model(), 1);
  CHECK(agent.beta() == 0.4);
  agent.set_progress(0.5);
  CHECK(agent.beta() == doctest::Approx(0.7));
  agent.set_progress(1.0);
  CHECK(agent.beta() == 1.0);
}
