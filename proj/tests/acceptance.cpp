// Acceptance checks. `acceptance --criterion <name>` (or `all`) prints one
// PASS/FAIL line per criterion and exits non-zero on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fd_check.hpp"
#include "jsrl/encoder.hpp"
#include "jsrl/harness.hpp"
#include "jsrl/policy_rl.hpp"
#include "jsrl/stats.hpp"
#include "jsrl/value_rl.hpp"
#include "gap_rows.hpp"
#include "test_util.hpp"

using namespace jsrl;
using namespace jsrl::testing;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Family4 {
  const char* label;
  ProblemKind kind;
  int jobs, machines;
};
constexpr Family4 kFeasibilitySets[] = {
    {"jssp 6x6", ProblemKind::Jssp, 6, 6},
    {"jssp 10x5", ProblemKind::Jssp, 10, 5},
    {"fjsp 6x6", ProblemKind::Fjsp, 6, 6},
    {"fjsp 10x5", ProblemKind::Fjsp, 10, 5},
};

// Random-policy episodes on freshly generated instances; `visit` sees each rollout.
void random_episodes(int per_set, const std::function<void(const Family4&, const ProblemInstance&, const Rollout&)>& visit) {
  std::uint64_t seed = 1000;
  for (const auto& f : kFeasibilitySets) {
    Rng rng(seed);
    for (int e = 0; e < per_set; ++e) {
      const auto inst = share(make_instance(f.kind, f.jobs, f.machines, seed + 1 + static_cast<std::uint64_t>(e)));
      visit(f, *inst, random_rollout(inst, rng));
    }
    seed += 100000;
  }
}

Outcome feasibility() {
  const auto t0 = Clock::now();
  int episodes = 0, violations = 0;
  std::string first;
  random_episodes(1000, [&](const Family4& f, const ProblemInstance& inst, const Rollout& r) {
    ++episodes;
    if (auto err = check_schedule(inst, r.final_state.final_schedule())) {
      if (first.empty()) first = std::string(f.label) + ": " + *err;
      ++violations;
    }
  });
  const double secs = since(t0);
  return {violations == 0 && episodes == 4000 && secs < 120.0,
          fmt("%d episodes, %d infeasible schedules, %.1f s (limit 120 s)%s", episodes, violations, secs,
              first.empty() ? "" : (" first: " + first).c_str())};
}

Outcome telescoping() {
  double worst = 0.0;
  int episodes = 0;
  random_episodes(1000, [&](const Family4&, const ProblemInstance&, const Rollout& r) {
    ++episodes;
    double sum = 0.0;
    for (double x : r.rewards) sum += x;
    worst = std::max(worst, std::abs(sum - (r.initial_estimate - r.final_state.makespan())));
  });
  return {worst < 1e-9, fmt("%d episodes, max |sum r - (C(S0) - Cmax)| = %.3g (limit 1e-9)", episodes, worst)};
}

Outcome gap_rows() {
  int matched = 0, total = 0;
  std::string miss;
  for (const auto& row : kGapRows) {
    ++total;
    const double g = gap(row.makespan, row.reference);
    if (std::abs(g - row.printed_gap) <= 0.01 + 1e-9) ++matched;
    else miss += fmt(" [%s: %.4f vs %.2f]", row.label, g, row.printed_gap);
  }
  const bool examples = std::abs(gap(567.22, 499.72) - 13.51) < 0.01 && std::abs(gap(83.39, 72.70) - 14.70) < 0.01;
  return {matched >= 10 && matched == total && examples,
          fmt("%d/%d published rows within 0.01 points; 567.22/499.72 -> %.4f, 83.39/72.70 -> %.4f%s", matched, total,
              gap(567.22, 499.72), gap(83.39, 72.70), miss.c_str())};
}

// Triangular-kernel form of the projection: target atom i receives
// p_j * max(0, 1 - |clamp(Tz_j) - z_i| / dz) from every source atom j.
std::vector<double> projection_oracle(double r, bool done, double discount, const std::vector<double>& p, const AtomGrid& g) {
  std::vector<double> m(static_cast<std::size_t>(g.atoms), 0.0);
  const auto spread = [&](double tz, double mass) {
    tz = std::clamp(tz, g.v_min, g.v_max);
    for (int i = 0; i < g.atoms; ++i) m[static_cast<std::size_t>(i)] += mass * std::max(0.0, 1.0 - std::abs(tz - g.atom(i)) / g.delta());
  };
  if (done) spread(r, 1.0);
  else
    for (int j = 0; j < g.atoms; ++j) spread(r + discount * g.atom(j), p[static_cast<std::size_t>(j)]);
  return m;
}

Outcome c51() {
  Rng rng(51);
  double worst_sum = 0.0, worst_elem = 0.0;
  int samples = 0;
  for (const AtomGrid grid : {AtomGrid{-600.0, -50.0, 51}, AtomGrid{-50.0, 0.0, 51}}) {
    const double span = grid.v_max - grid.v_min;
    for (int s = 0; s < 10000; ++s) {
      ++samples;
      const bool done = rng.uniform() < 0.3;
      // Rewards reach past both ends of the grid so clamping is exercised.
      const double r = rng.uniform(-0.6 * span, 0.2 * span);
      const double discount = std::pow(0.99, 1 + static_cast<int>(rng.uniform_index(4))) * rng.uniform(0.5, 1.0);
      std::vector<double> p(51);
      double z = 0.0;
      for (double& v : p) z += (v = std::pow(rng.uniform(), 3));
      for (double& v : p) v /= z;
      const auto got = categorical_project(r, done, discount, done ? std::vector<double>{} : p, grid);
      const auto want = projection_oracle(r, done, discount, p, grid);
      double total = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) {
        total += got[i];
        worst_elem = std::max(worst_elem, std::abs(got[i] - want[i]));
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
  }
  const auto hand = categorical_project(-60.0, true, 0.99, {}, AtomGrid{-600.0, -50.0, 51});
  const bool hand_ok = std::abs(hand[49] - 0.9091) < 1e-4 && std::abs(hand[50] - 0.0909) < 1e-4;
  return {worst_sum < 1e-6 && worst_elem < 1e-9 && hand_ok,
          fmt("%d samples over both grids: max |sum - 1| = %.2g, max |m - oracle| = %.2g; hand case atoms 49/50 = %.5f/%.5f",
              samples, worst_sum, worst_elem, hand[49], hand[50])};
}

Outcome gradients() {
  const auto inst = tiny_2x2();
  ModelConfig base;
  base.embed_dim = 8;
  base.hidden_dim = 8;
  base.layers = 2;
  std::string detail;
  bool ok = true;
  const auto record = [&](const char* name, const FdResult& r) {
    const bool pass = r.pass_fraction() >= 0.99;
    ok = ok && pass;
    detail += fmt("%s%s %zu/%zu (%.2f%%, worst %.1e)", detail.empty() ? "" : "; ", name, r.passed, r.checked,
                  100.0 * r.pass_fraction(), r.worst);
  };

  {
    // Squared TD error on replayed 2x2 transitions with frozen targets.
    Rng rng(4);
    Model online(base, rng), target(base, rng);
    const RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Jssp);
    std::vector<Transition> store;
    for (int e = 0; e < 2; ++e) {
      ScheduleState s = reset(inst);
      auto obs = std::make_shared<const Observation>(observe(s));
      while (!s.is_terminal()) {
        const auto a = rng.uniform_index(obs->actions.size());
        const double r = s.apply(obs->actions[a]);
        auto next = s.is_terminal() ? nullptr : std::make_shared<const Observation>(observe(s));
        store.push_back(Transition{obs, static_cast<int>(a), r, next, next == nullptr, cfg.gamma});
        obs = next;
      }
    }
    std::vector<const Transition*> batch;
    std::vector<const Observation*> states;
    for (const auto& t : store) {
      batch.push_back(&t);
      states.push_back(t.state.get());
    }
    const auto y = td_targets(batch, online, target, cfg);
    const GraphBatch b = make_batch(states);
    std::vector<int> rows, cols(batch.size(), 0);
    ad::Mat ym(static_cast<Eigen::Index>(batch.size()), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      rows.push_back(b.action_offset[i] + batch[i]->action);
      ym(static_cast<Eigen::Index>(i), 0) = y[i];
    }
    record("dqn", finite_difference_check(online.parameters(), [&](ad::Tape& t) {
             const ad::Var q = ad::pick(q_values(t, online, b, encode(t, online, b)), rows, cols);
             return ad::mean(ad::square(ad::sub(q, t.constant(ym))));
           }));
  }

  Rng rng(2);
  for (PgAlgorithm alg : {PgAlgorithm::PPO, PgAlgorithm::A2C, PgAlgorithm::Reinforce, PgAlgorithm::VMPO}) {
    const PGConfig cfg = PGConfig::for_algorithm(alg);
    ModelConfig mc = base;
    mc.critic = cfg.uses_critic();
    Rng init(31);
    Model model(mc, init);
    std::vector<std::shared_ptr<const ProblemInstance>> insts{inst, inst};
    const auto trajectories = collect(insts, model, rng);  // samples point into these
    const auto samples = flatten(trajectories, cfg);
    // Perturb away from the behaviour snapshot so ratios and the KL term are non-trivial.
    Rng jitter(9);
    for (auto* p : model.parameters()) p->value.array() += 0.05 * p->value.unaryExpr([&](double) { return jitter.normal(); }).array();
    std::vector<double> psi(samples.size(), 1.0 / static_cast<double>(samples.size()));
    VmpoMultipliers mult;
    mult.alpha.value(0, 0) = 0.7;
    const auto loss = [&](ad::Tape& t) -> ad::Var {
      switch (alg) {
        case PgAlgorithm::Reinforce: return loss_reinforce(t, model, samples, cfg).total;
        case PgAlgorithm::A2C: return loss_a2c(t, model, samples, cfg).total;
        case PgAlgorithm::PPO: return loss_ppo(t, model, samples, cfg).total;
        case PgAlgorithm::VMPO: return vmpo_losses(t, model, samples, psi, mult, 0.004, cfg).theta_loss;
      }
      return {};
    };
    record(to_string(alg), finite_difference_check(model.parameters(), loss));
  }
  return {ok, "d=8, L=2, 2x2 instance, h=1e-4, rel err < 1e-4: " + detail};
}

ModelConfig rainbow_model() {
  ModelConfig m;
  m.embed_dim = 8;
  m.hidden_dim = 16;
  m.layers = 2;
  return m;
}

Outcome rainbow() {
  const auto t0 = Clock::now();
  int completed = 0;
  std::string failure;
  for (unsigned mask = 0; mask < 64; ++mask) {
    try {
      RainbowConfig cfg = RainbowConfig::from_mask(mask, ProblemKind::Fjsp);
      RainbowAgent agent(cfg, rainbow_model(), 100 + mask);
      for (int e = 0; e < 5; ++e) {
        agent.set_progress(e / 5.0);
        const auto stats = agent.run_episode(share(make_instance(ProblemKind::Fjsp, 6, 6, 500 + static_cast<std::uint64_t>(e))), e);
        for (double l : stats.losses)
          if (!std::isfinite(l)) throw std::runtime_error("non-finite loss");
      }
      ++completed;
    } catch (const std::exception& ex) {
      if (failure.empty()) failure = fmt(" first failure: mask %u: %s", mask, ex.what());
    }
  }
  const double secs = since(t0);

  // All toggles off against the dedicated DQN path, same seed and instances.
  RainbowConfig cfg = RainbowConfig::for_problem(ProblemKind::Fjsp);
  RainbowAgent off(cfg, rainbow_model(), 77);
  DqnAgent dqn(cfg, rainbow_model(), 77);
  std::vector<double> a, b;
  for (int e = 0; e < 5; ++e) {
    const auto inst = share(make_instance(ProblemKind::Fjsp, 6, 6, 900 + static_cast<std::uint64_t>(e)));
    const auto sa = off.run_episode(inst, e), sb = dqn.run_episode(inst, e);
    a.insert(a.end(), sa.losses.begin(), sa.losses.end());
    b.insert(b.end(), sb.losses.begin(), sb.losses.end());
  }
  std::size_t differing = a.size() == b.size() ? 0 : std::max(a.size(), b.size());
  if (a.size() == b.size())
    for (std::size_t i = 0; i < a.size(); ++i) differing += a[i] != b[i];
  return {completed == 64 && secs < 600.0 && differing == 0 && !a.empty(),
          fmt("%d/64 combinations x 5 episodes on fjsp 6x6 in %.1f s (limit 600 s); all-off vs dqn: %zu/%zu loss steps differ%s",
              completed, secs, differing, a.size(), failure.c_str())};
}

Outcome identities() {
  std::vector<std::string> parts;
  bool ok = true;

  // n = 1 multi-step against one-step transitions.
  {
    std::size_t mismatches = 0, steps = 0;
    Rng rng(5);
    NStepAccumulator one(1, 0.99);
    for (int e = 0; e < 5; ++e) {
      ScheduleState s = reset(share(make_instance(ProblemKind::Fjsp, 4, 3, 40 + static_cast<std::uint64_t>(e))));
      auto obs = std::make_shared<const Observation>(observe(s));
      while (!s.is_terminal()) {
        const auto a = static_cast<int>(rng.uniform_index(obs->actions.size()));
        const double r = s.apply(obs->actions[static_cast<std::size_t>(a)]);
        auto next = s.is_terminal() ? nullptr : std::make_shared<const Observation>(observe(s));
        const auto out = one.push(StepRecord{obs, a, r, next, next == nullptr});
        ++steps;
        const std::vector<double> qn{rng.uniform(-5, 0), rng.uniform(-5, 0)};
        if (out.size() != 1 || out[0].state != obs || out[0].action != a || out[0].reward != r || out[0].next != next ||
            out[0].discount != 0.99 ||
            td_target_value(out[0].reward, out[0].done, out[0].discount, qn) != td_target_value(r, next == nullptr, 0.99, qn))
          ++mismatches;
        obs = next;
      }
    }
    ok = ok && mismatches == 0;
    parts.push_back(fmt("n=1 vs one-step: %zu/%zu differ", mismatches, steps));
  }

  // sigma = 0 noisy layer against the plain affine layer.
  {
    Rng rng(7);
    int differing = 0;
    for (int trial = 0; trial < 100; ++trial) {
      NoisyLinear l = make_noisy_linear(6, 4, rng);
      l.sigma_w.value.setZero();
      l.sigma_b.value.setZero();
      set_noise(l, NoiseMode::Sampled, &rng);
      Eigen::VectorXd x(6);
      for (Eigen::Index i = 0; i < 6; ++i) x(i) = rng.uniform(-2, 2);
      const Eigen::VectorXd plain = l.mu_w.value.transpose() * x + l.mu_b.value.transpose();
      differing += noisy_linear(x, l) != plain;

      DenseLayer noisy, affine;
      noisy.noisy = true;
      noisy.noisy_layer = l;
      affine.plain.weight = ad::Parameter("w", l.mu_w.value);
      affine.plain.bias = ad::Parameter("b", l.mu_b.value);
      ad::Mat xm(3, 6);
      for (Eigen::Index i = 0; i < xm.size(); ++i) xm(i) = rng.uniform(-2, 2);
      ad::Tape t(false);
      const ad::Mat via_noisy = apply_dense(t, noisy, t.constant(xm)).value();
      const ad::Mat via_affine = apply_dense(t, affine, t.constant(xm)).value();
      differing += via_noisy != via_affine;
    }
    ok = ok && differing == 0;
    parts.push_back(fmt("sigma=0 noisy vs affine: %d/200 differ", differing));
  }

  // Equal PER priorities against uniform sampling.
  {
    double worst = 0.0;
    for (std::size_t n : {1u, 7u, 40u, 1000u}) {
      ReplayBuffer per(n, true, 0.6, 1e-5);
      std::vector<std::size_t> idx;
      std::vector<double> td;
      for (std::size_t i = 0; i < n; ++i) {
        per.add(Transition{});
        idx.push_back(i);
        td.push_back(0.37);
      }
      per.update_priorities(idx, td);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(per.probability(i) - 1.0 / static_cast<double>(n)));
    }
    ok = ok && worst < 1e-9;
    parts.push_back(fmt("equal priorities: L-inf %.2g", worst));
  }

  // Dueling combination under constant advantage shifts.
  {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t k = 1 + rng.uniform_index(12);
      std::vector<double> adv(k), shifted(k);
      const double c = rng.uniform(-100, 100), v = rng.uniform(-50, 50);
      for (std::size_t i = 0; i < k; ++i) shifted[i] = (adv[i] = rng.uniform(-10, 10)) + c;
      const auto q1 = dueling_combine(v, adv), q2 = dueling_combine(v, shifted);
      for (std::size_t i = 0; i < k; ++i) worst = std::max(worst, std::abs(q1[i] - q2[i]));
    }
    ok = ok && worst < 1e-9;
    parts.push_back(fmt("dueling shift: max |dQ| %.2g", worst));
  }

  std::string detail;
  for (const auto& p : parts) detail += (detail.empty() ? "" : "; ") + p;
  return {ok, detail};
}

Outcome multistart() {
  std::string detail;
  bool ok = true;
  for (ProblemKind kind : {ProblemKind::Jssp, ProblemKind::Fjsp}) {
    const char* name = kind == ProblemKind::Jssp ? "jssp" : "fjsp";
    RunConfig run;
    run.apply({{"problem", name}, {"jobs", "10"}, {"machines", "5"}, {"algorithm", "ppo"}});
    run.model.embed_dim = 16;
    run.model.hidden_dim = 16;
    Rng rng(11);
    const Model model(run.learner_model(), rng);
    const Decoder decoder = make_decoder(model, run);
    EvalSet set;
    set.name = "multistart";
    for (std::uint64_t i = 0; i < 100; ++i) {
      set.instances.push_back(share(make_instance(kind, 10, 5, 7000 + i)));
      set.instance_names.push_back("i" + std::to_string(i));
    }
    const EvalReport greedy = evaluate_greedy(decoder, set), multi = evaluate_multistart(decoder, set);
    int violations = 0, strictly = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      violations += multi.makespans[i] > greedy.makespans[i];
      strictly += multi.makespans[i] < greedy.makespans[i];
    }
    ok = ok && violations == 0;
    detail += fmt("%s%s: %d/100 worse, %d better, mean %.2f vs %.2f", detail.empty() ? "" : "; ", name, violations, strictly,
                  multi.mean_makespan(), greedy.mean_makespan());
  }
  return {ok, "10x5, 100 instances, untrained d=16 policy: " + detail};
}

// Smoke configuration: 6x6 FJSP, 300 episodes, default hyperparameters except the
// network width (d = hidden = 16) to stay inside the per-episode budget.
Outcome learning(const std::string& algorithm) {
  RunConfig run;
  run.apply({{"problem", "fjsp"}, {"jobs", "6"}, {"machines", "6"}, {"algorithm", algorithm}, {"episodes", "300"}, {"seed", "1"},
             {"embed_dim", "16"}, {"hidden_dim", "16"}});
  const auto t0 = Clock::now();
  const TrainResult r = train(run);
  const double secs = since(t0);
  const double per_episode = secs / static_cast<double>(r.metrics.size());
  const double improvement = 100.0 * (r.first_validation - r.best_validation) / r.first_validation;
  return {improvement >= 10.0 && per_episode <= 5.0 && secs < 1800.0 && r.metrics.size() == 300,
          fmt("%s fjsp 6x6, 300 episodes: validation %.2f at episode 1, best %.2f at episode %d (%.2f%% improvement, need 10%%); "
              "%.2f s/episode (limit 5), %.0f s total (limit 1800)",
              algorithm.c_str(), r.first_validation, r.best_validation, r.best_episode, improvement, per_episode, secs)};
}

Outcome wilcoxon_check() {
  // Ten paired measurements, one tie: N = 9, W+ = 27, W- = 18; the two-sided 0.05
  // table value for N = 9 is 5, so H0 is retained.
  const std::vector<double> x2{125, 115, 130, 140, 140, 115, 140, 125, 140, 135};
  const std::vector<double> x1{110, 122, 125, 120, 140, 124, 123, 137, 135, 145};
  const WilcoxonResult w = wilcoxon(x2, x1);
  const bool published = w.n == 9 && w.w_plus == 27.0 && w.statistic == 18.0 && w.exact && !w.significant;
  const WilcoxonResult same = wilcoxon(x1, x1);
  const bool identical = same.indeterminate && !same.significant && same.p_value == 1.0;
  return {published && identical, fmt("published example: N=%d W+=%g stat=%g p=%.4f significant=%d; identical samples: "
                                      "indeterminate=%d significant=%d p=%g",
                                      w.n, w.w_plus, w.statistic, w.p_value, w.significant, same.indeterminate, same.significant,
                                      same.p_value)};
}

Outcome epsilon_check() {
  const double e0 = epsilon(0), e600 = epsilon(600), emax = epsilon(1000000);
  return {e0 == 1.0 && std::abs(e600 - std::exp(-1.0)) < 1e-9 && emax == 0.1,
          fmt("eps(0)=%.17g eps(600)=%.17g (e^-1 %+.2g) eps(1e6)=%.17g", e0, e600, e600 - std::exp(-1.0), emax)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"feasibility", feasibility},
      {"telescoping", telescoping},
      {"gap", gap_rows},
      {"c51", c51},
      {"gradients", gradients},
      {"rainbow", rainbow},
      {"identities", identities},
      {"multistart", multistart},
      {"learning_dqn", [] { return learning("dqn"); }},
      {"learning_ppo", [] { return learning("ppo"); }},
      {"wilcoxon", wilcoxon_check},
      {"epsilon", epsilon_check},
  };
  std::vector<std::string> names{"all"};
  for (const auto& c : criteria) names.push_back(c.first);

  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> selected{"all"};
  app.add_option("--criterion", selected, "Criterion to run (repeatable)")->check(CLI::IsMember(names));
  CLI11_PARSE(app, argc, argv);

  bool all_pass = true;
  for (const auto& [name, fn] : criteria) {
    bool wanted = false;
    for (const auto& s : selected) wanted = wanted || s == "all" || s == name;
    if (!wanted) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
