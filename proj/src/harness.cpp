#include "jsrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "jsrl/config.hpp"
#include "jsrl/errors.hpp"
#include "jsrl/stats.hpp"

namespace jsrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct ToggleName {
  const char* name;
  unsigned bit;
};
constexpr ToggleName kToggles[] = {{"ddqn", 1},           {"per", 2},        {"dueling", 4},
                                   {"noisy", 8},          {"distributional", 16}, {"multistep", 32}};

const std::set<std::string> kValueKeys = {"ddqn",          "per",         "dueling",        "noisy",
                                          "distributional", "multistep",  "n_steps",        "atoms",
                                          "v_min",         "v_max",       "buffer_capacity", "batch_size",
                                          "target_period", "per_alpha",   "per_beta_start", "per_beta_end",
                                          "per_eps",       "eps_decay",   "eps_min",        "updates_per_step"};
const std::set<std::string> kPolicyKeys = {"value_coef", "entropy_coef", "clip",         "epochs",
                                           "parallel",   "eta_init",     "alpha_init",   "eps_eta",
                                           "eps_alpha_lo", "eps_alpha_hi", "normalize_advantages", "chunk_size"};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& file) { return (std::filesystem::path(dir) / file).string(); }

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

int RunConfig::resolved_episodes() const {
  if (episodes > 0) return episodes;
  return jobs * machines <= 100 ? 3000 : 5000;
}

std::string RunConfig::algorithm_name() const {
  if (family == Family::Policy) return to_string(pg_algorithm);
  const unsigned mask = rainbow.mask();
  if (mask == 0) return "dqn";
  if (mask == 63) return "rainbow";
  std::string out;
  for (const auto& t : kToggles)
    if (mask & t.bit) out += (out.empty() ? "" : "+") + std::string(t.name);
  return out;
}

void RunConfig::set_algorithm(const std::string& name) {
  const std::string key = lower(name);
  for (const char* pg_name : {"reinforce", "a2c", "ppo", "vmpo", "v-mpo"}) {
    if (key == pg_name) {
      family = Family::Policy;
      pg_algorithm = parse_pg_algorithm(key);
      pg = PGConfig::for_algorithm(pg_algorithm);
      return;
    }
  }
  unsigned mask = 0;
  std::stringstream ss(key);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '+')) {
    any = true;
    if (part == "dqn") continue;
    if (part == "rainbow") {
      mask = 63;
      continue;
    }
    if (part == "c51") part = "distributional";
    if (part == "multi-step" || part == "nstep") part = "multistep";
    bool found = false;
    for (const auto& t : kToggles)
      if (part == t.name) {
        mask |= t.bit;
        found = true;
      }
    if (!found) throw ParameterError("unknown algorithm '" + name + "'");
  }
  if (!any) throw ParameterError("empty algorithm name");
  family = Family::Value;
  rainbow = RainbowConfig::from_mask(mask, problem);
}

void RunConfig::apply(const std::map<std::string, std::string>& settings) {
  auto get = [&](const char* k) -> const std::string* {
    auto it = settings.find(k);
    return it == settings.end() ? nullptr : &it->second;
  };
  if (auto v = get("problem")) {
    try {
      problem = parse_problem_kind(*v);
    } catch (const Error&) {
      throw ParameterError("'problem' expects jssp or fjsp, got '" + *v + "'");
    }
    if (family == Family::Value) rainbow = RainbowConfig::from_mask(rainbow.mask(), problem);
  }
  if (auto v = get("jobs")) jobs = parse_int("jobs", *v);
  if (auto v = get("machines")) machines = parse_int("machines", *v);
  if (auto v = get("algorithm")) set_algorithm(*v);

  for (const auto& [k, v] : settings) {
    if (k == "problem" || k == "jobs" || k == "machines" || k == "algorithm") continue;
    if (kValueKeys.count(k) && family != Family::Value)
      throw ParameterError("'" + k + "' applies to value-based algorithms only");
    if (kPolicyKeys.count(k) && family != Family::Policy)
      throw ParameterError("'" + k + "' applies to policy-gradient algorithms only");
    RainbowConfig& r = rainbow;
    if (k == "episodes") episodes = parse_int(k, v);
    else if (k == "validation_size") validation_size = parse_int(k, v);
    else if (k == "validation_period") validation_period = parse_int(k, v);
    else if (k == "seed") seed = parse_u64(k, v);
    else if (k == "out_dir") out_dir = v;
    else if (k == "workers") workers = parse_int(k, v);
    else if (k == "checkpoints") checkpoints = parse_bool(k, v);
    else if (k == "embed_dim") model.embed_dim = parse_int(k, v);
    else if (k == "hidden_dim") model.hidden_dim = parse_int(k, v);
    else if (k == "layers") model.layers = parse_int(k, v);
    else if (k == "heads") model.heads = parse_int(k, v);
    else if (k == "gamma") (family == Family::Value ? r.gamma : pg.gamma) = parse_double(k, v);
    else if (k == "lr") (family == Family::Value ? r.lr : pg.lr) = parse_double(k, v);
    else if (k == "ddqn") r.ddqn = parse_bool(k, v);
    else if (k == "per") r.per = parse_bool(k, v);
    else if (k == "dueling") r.dueling = parse_bool(k, v);
    else if (k == "noisy") r.noisy = parse_bool(k, v);
    else if (k == "distributional") r.distributional = parse_bool(k, v);
    else if (k == "multistep") r.multistep = parse_bool(k, v);
    else if (k == "n_steps") r.n_steps = parse_int(k, v);
    else if (k == "atoms") r.atoms = parse_int(k, v);
    else if (k == "v_min") r.v_min = parse_double(k, v);
    else if (k == "v_max") r.v_max = parse_double(k, v);
    else if (k == "buffer_capacity") r.buffer_capacity = parse_int(k, v);
    else if (k == "batch_size") r.batch_size = parse_int(k, v);
    else if (k == "target_period") r.target_period = parse_int(k, v);
    else if (k == "per_alpha") r.per_alpha = parse_double(k, v);
    else if (k == "per_beta_start") r.per_beta_start = parse_double(k, v);
    else if (k == "per_beta_end") r.per_beta_end = parse_double(k, v);
    else if (k == "per_eps") r.per_eps = parse_double(k, v);
    else if (k == "eps_decay") r.eps_decay = parse_double(k, v);
    else if (k == "eps_min") r.eps_min = parse_double(k, v);
    else if (k == "updates_per_step") r.updates_per_step = parse_int(k, v);
    else if (k == "value_coef") pg.value_coef = parse_double(k, v);
    else if (k == "entropy_coef") pg.entropy_coef = parse_double(k, v);
    else if (k == "clip") pg.clip = parse_double(k, v);
    else if (k == "epochs") pg.epochs = parse_int(k, v);
    else if (k == "parallel") pg.parallel = parse_int(k, v);
    else if (k == "eta_init") pg.eta_init = parse_double(k, v);
    else if (k == "alpha_init") pg.alpha_init = parse_double(k, v);
    else if (k == "eps_eta") pg.eps_eta = parse_double(k, v);
    else if (k == "eps_alpha_lo") pg.eps_alpha_lo = parse_double(k, v);
    else if (k == "eps_alpha_hi") pg.eps_alpha_hi = parse_double(k, v);
    else if (k == "normalize_advantages") pg.normalize_advantages = parse_bool(k, v);
    else if (k == "chunk_size") pg.chunk_size = parse_int(k, v);
    else throw ParameterError("unknown setting '" + k + "'");
  }
}

std::map<std::string, std::string> RunConfig::settings() const {
  std::map<std::string, std::string> s;
  auto num = [](double v) { return format_number(v); };
  s["problem"] = to_string(problem);
  s["jobs"] = std::to_string(jobs);
  s["machines"] = std::to_string(machines);
  s["algorithm"] = algorithm_name();
  s["episodes"] = std::to_string(resolved_episodes());
  s["validation_size"] = std::to_string(validation_size);
  s["validation_period"] = std::to_string(validation_period);
  s["seed"] = std::to_string(seed);
  s["workers"] = std::to_string(workers);
  s["checkpoints"] = checkpoints ? "true" : "false";
  if (!out_dir.empty()) s["out_dir"] = out_dir;
  s["embed_dim"] = std::to_string(model.embed_dim);
  s["hidden_dim"] = std::to_string(model.hidden_dim);
  s["layers"] = std::to_string(model.layers);
  s["heads"] = std::to_string(model.heads);
  if (family == Family::Value) {
    const RainbowConfig& r = rainbow;
    s["gamma"] = num(r.gamma);
    s["lr"] = num(r.lr);
    s["n_steps"] = std::to_string(r.n_steps);
    s["atoms"] = std::to_string(r.atoms);
    s["v_min"] = num(r.v_min);
    s["v_max"] = num(r.v_max);
    s["buffer_capacity"] = std::to_string(r.buffer_capacity);
    s["batch_size"] = std::to_string(r.batch_size);
    s["target_period"] = std::to_string(r.target_period);
    s["per_alpha"] = num(r.per_alpha);
    s["per_beta_start"] = num(r.per_beta_start);
    s["per_beta_end"] = num(r.per_beta_end);
    s["per_eps"] = num(r.per_eps);
    s["eps_decay"] = num(r.eps_decay);
    s["eps_min"] = num(r.eps_min);
    s["updates_per_step"] = std::to_string(r.updates_per_step);
  } else {
    s["gamma"] = num(pg.gamma);
    s["lr"] = num(pg.lr);
    s["value_coef"] = num(pg.value_coef);
    s["entropy_coef"] = num(pg.entropy_coef);
    s["clip"] = num(pg.clip);
    s["epochs"] = std::to_string(pg.epochs);
    s["parallel"] = std::to_string(pg.parallel);
    s["eta_init"] = num(pg.eta_init);
    s["alpha_init"] = num(pg.alpha_init);
    s["eps_eta"] = num(pg.eps_eta);
    s["eps_alpha_lo"] = num(pg.eps_alpha_lo);
    s["eps_alpha_hi"] = num(pg.eps_alpha_hi);
    s["normalize_advantages"] = pg.normalize_advantages ? "true" : "false";
    s["chunk_size"] = std::to_string(pg.chunk_size);
  }
  return s;
}

void RunConfig::validate() const {
  if (jobs < 1 || machines < 1) throw ParameterError("jobs and machines must be >= 1");
  if (episodes < 0) throw ParameterError("episodes must be >= 1 (0 selects the size default)");
  if (validation_size < 1) throw ParameterError("validation_size must be >= 1");
  if (validation_period < 1) throw ParameterError("validation_period must be >= 1");
  if (workers < 1) throw ParameterError("workers must be >= 1");
  learner_model().validate();
  if (family == Family::Value) rainbow.validate();
  else pg.validate();
}

ModelConfig RunConfig::learner_model() const {
  return family == Family::Value ? rainbow.shape_model(model) : pg.shape_model(model);
}

ProblemInstance make_instance(ProblemKind kind, int jobs, int machines, std::uint64_t seed) {
  if (kind == ProblemKind::Jssp) return generate_jssp(jobs, machines, seed);
  FjspGenConfig cfg;
  if (machines == 5 || machines == 6 || machines == 10) std::tie(cfg.ops_lo, cfg.ops_hi) = default_ops_range(machines);
  return generate_fjsp(jobs, machines, seed, cfg);
}

std::vector<std::shared_ptr<const ProblemInstance>> validation_set(const RunConfig& run) {
  std::vector<std::shared_ptr<const ProblemInstance>> out;
  const std::uint64_t base = derive_seed(run.seed, 2);
  for (int i = 0; i < run.validation_size; ++i)
    out.push_back(std::make_shared<const ProblemInstance>(
        make_instance(run.problem, run.jobs, run.machines, derive_seed(base, static_cast<std::uint64_t>(i)))));
  return out;
}

std::shared_ptr<const ProblemInstance> training_instance(const RunConfig& run, std::uint64_t index) {
  return std::make_shared<const ProblemInstance>(
      make_instance(run.problem, run.jobs, run.machines, derive_seed(derive_seed(run.seed, 1), index)));
}

// ---------------------------------------------------------------------------
// Decoding

std::vector<std::size_t> Decoder::choose(const GraphBatch& batch) const {
  std::vector<double> scores;
  if (mode == DecodeMode::Distributional) {
    scores = action_values(model, batch, &grid);
  } else {
    ad::Tape tape(false);
    const Embeddings emb = encode(tape, model, batch);
    const ad::Mat s = (mode == DecodeMode::Policy ? action_scores(tape, model, batch, emb) : q_values(tape, model, batch, emb)).value();
    scores.assign(s.data(), s.data() + s.rows());
  }
  std::vector<std::size_t> out(static_cast<std::size_t>(batch.num_graphs));
  for (int g = 0; g < batch.num_graphs; ++g) {
    const int lo = batch.action_offset[static_cast<std::size_t>(g)], hi = batch.action_offset[static_cast<std::size_t>(g) + 1];
    if (hi <= lo) throw ContractViolation("greedy decoding on a state without feasible actions");
    int best = lo;
    for (int a = lo + 1; a < hi; ++a)
      if (scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(best)]) best = a;
    out[static_cast<std::size_t>(g)] = static_cast<std::size_t>(best - lo);
  }
  return out;
}

Decoder make_decoder(const Model& model, const RunConfig& run) {
  Decoder d{model, DecodeMode::Policy, {}};
  d.model.zero_noise();
  if (run.family == Family::Value) {
    d.mode = run.rainbow.distributional ? DecodeMode::Distributional : DecodeMode::QValue;
    d.grid = AtomGrid{run.rainbow.v_min, run.rainbow.v_max, run.rainbow.atoms};
  }
  return d;
}

Decoder make_decoder(const Checkpoint& ckpt) {
  RunConfig run;
  run.apply(ckpt.settings);
  if (!(ckpt.model.config() == run.learner_model()))
    throw ParseError("checkpoint model shape does not match its run settings", 0);
  return make_decoder(ckpt.model, run);
}

void run_greedy(const Decoder& decoder, std::vector<ScheduleState>& states, std::size_t batch_limit) {
  batch_limit = std::max<std::size_t>(1, batch_limit);
  std::vector<std::size_t> live;
  std::vector<Observation> obs;
  std::vector<const Observation*> ptrs;
  for (;;) {
    live.clear();
    for (std::size_t i = 0; i < states.size(); ++i)
      if (!states[i].is_terminal()) live.push_back(i);
    if (live.empty()) return;
    for (std::size_t lo = 0; lo < live.size(); lo += batch_limit) {
      const std::size_t hi = std::min(live.size(), lo + batch_limit);
      obs.clear();
      ptrs.clear();
      for (std::size_t k = lo; k < hi; ++k) obs.push_back(observe(states[live[k]]));
      for (const auto& o : obs) ptrs.push_back(&o);
      const std::vector<std::size_t> pick = decoder.choose(make_batch(ptrs));
      for (std::size_t k = lo; k < hi; ++k) states[live[k]].apply(obs[k - lo].actions[pick[k - lo]]);
    }
  }
}

std::vector<double> greedy_makespans(const Decoder& decoder,
                                     std::span<const std::shared_ptr<const ProblemInstance>> instances) {
  std::vector<ScheduleState> states;
  states.reserve(instances.size());
  for (const auto& inst : instances) states.push_back(reset(inst));
  run_greedy(decoder, states);
  std::vector<double> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s.makespan());
  return out;
}

double EvalReport::mean_makespan() const {
  if (makespans.empty()) return kNaN;
  double s = 0.0;
  for (double m : makespans) s += m;
  return s / static_cast<double>(makespans.size());
}

double EvalReport::mean_gap() const {
  double s = 0.0;
  int n = 0;
  for (double g : gaps)
    if (!std::isnan(g)) {
      s += g;
      ++n;
    }
  return n ? s / n : kNaN;
}

namespace {

EvalReport evaluate(const Decoder& decoder, const EvalSet& set, int workers, bool multistart) {
  if (set.instance_names.size() != set.instances.size()) throw ParameterError("evaluation set names and instances differ in length");
  const std::size_t n = set.instances.size();
  EvalReport r;
  r.set = set.name;
  r.instances = set.instance_names;
  r.makespans.assign(n, 0.0);
  r.references.assign(n, kNaN);
  r.gaps.assign(n, kNaN);
  r.seconds.assign(n, 0.0);
  r.starts.assign(n, 1);
  r.schedules.assign(n, {});
  parallel_for(n, workers, [&](std::size_t i) {
    const auto t0 = Clock::now();
    ScheduleState s0 = reset(set.instances[i]);
    std::vector<ScheduleState> copies;
    if (multistart) {
      for (const auto& a : s0.feasible_actions()) {
        copies.push_back(s0);
        copies.back().apply(a);
      }
    } else {
      copies.push_back(s0);
    }
    run_greedy(decoder, copies);
    std::size_t best = 0;
    for (std::size_t c = 1; c < copies.size(); ++c)
      if (copies[c].makespan() < copies[best].makespan()) best = c;
    r.seconds[i] = seconds_since(t0);
    r.makespans[i] = copies[best].makespan();
    r.starts[i] = static_cast<int>(copies.size());
    r.schedules[i] = copies[best].final_schedule();
    if (auto err = check_schedule(*set.instances[i], r.schedules[i]))
      throw ContractViolation("infeasible schedule for '" + set.instance_names[i] + "': " + *err);
  });
  for (std::size_t i = 0; i < n; ++i) {
    auto it = set.references.find(set.instance_names[i]);
    if (it == set.references.end()) continue;
    r.references[i] = it->second;
    r.gaps[i] = gap(r.makespans[i], it->second);
  }
  return r;
}

}  // namespace

EvalReport evaluate_greedy(const Decoder& decoder, const EvalSet& set, int workers) {
  return evaluate(decoder, set, workers, false);
}

EvalReport evaluate_multistart(const Decoder& decoder, const EvalSet& set, int workers) {
  return evaluate(decoder, set, workers, true);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const RunConfig& run, const std::function<void(const MetricsRow&)>& progress) {
  run.validate();
  const int episodes = run.resolved_episodes();
  const std::string name = run.algorithm_name();
  const auto vset = validation_set(run);
  const bool writing = !run.out_dir.empty();
  if (writing) ensure_dir(run.out_dir);

  TrainResult res;
  res.best_validation = std::numeric_limits<double>::infinity();
  const auto start = Clock::now();

  std::unique_ptr<RainbowAgent> value_agent;
  std::unique_ptr<PolicyAgent> policy_agent;
  const std::uint64_t agent_seed = derive_seed(run.seed, 3);
  if (run.family == Family::Value) value_agent = std::make_unique<RainbowAgent>(run.rainbow, run.model, agent_seed);
  else policy_agent = std::make_unique<PolicyAgent>(run.pg, run.model, agent_seed);
  const Model& model = value_agent ? value_agent->online() : policy_agent->model();

  auto flush = [&] {
    if (!writing) return;
    write_metrics_csv(join(run.out_dir, "metrics.csv"), res.metrics);
    write_validation_csv(join(run.out_dir, "validation.csv"), res.validations);
  };

  try {
    for (int e = 0; e < episodes; ++e) {
      const auto t0 = Clock::now();
      MetricsRow row;
      row.algorithm = name;
      row.episode = e + 1;
      row.validation_makespan = kNaN;
      if (value_agent) {
        value_agent->set_progress(static_cast<double>(e) / episodes);
        const EpisodeStats st = value_agent->run_episode(training_instance(run, static_cast<std::uint64_t>(e)), e);
        row.loss = st.mean_loss;
        row.epsilon = epsilon(e, run.rainbow);
      } else {
        std::vector<std::shared_ptr<const ProblemInstance>> batch;
        for (int i = 0; i < run.pg.parallel; ++i)
          batch.push_back(training_instance(run, static_cast<std::uint64_t>(e) * static_cast<std::uint64_t>(run.pg.parallel) + static_cast<std::uint64_t>(i)));
        const PgEpisodeStats st = policy_agent->run_episode(batch);
        double total = 0.0;
        for (double l : st.update.losses) total += l;
        row.loss = st.update.losses.empty() ? kNaN : total / static_cast<double>(st.update.losses.size());
        row.epsilon = kNaN;
      }
      if (e == 0 || (e + 1) % run.validation_period == 0) {
        const auto ms = greedy_makespans(make_decoder(model, run), vset);
        double mean = 0.0;
        for (double m : ms) mean += m;
        mean /= static_cast<double>(ms.size());
        row.validation_makespan = mean;
        res.validations.push_back({e + 1, mean});
        if (res.validations.size() == 1) res.first_validation = mean;
        if (mean < res.best_validation) {
          res.best_validation = mean;
          res.best_episode = e + 1;
          res.best = Checkpoint{model, run.settings(), {}};
          res.best.model.zero_grad();
          res.best.metadata["algorithm"] = name;
          res.best.metadata["episode"] = std::to_string(e + 1);
          res.best.metadata["validation_makespan"] = format_number(mean);
          if (writing && run.checkpoints) save_checkpoint(join(run.out_dir, "best.ckpt"), res.best);
        }
      }
      row.seconds = seconds_since(t0);
      res.metrics.push_back(row);
      if (progress) progress(row);
    }
  } catch (const TrainingError&) {
    res.seconds = seconds_since(start);
    flush();
    throw;
  }
  res.seconds = seconds_since(start);
  flush();
  return res;
}

// ---------------------------------------------------------------------------
// Reports

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os << "algorithm,episode,loss,epsilon,validation_makespan,seconds\n";
  for (const auto& r : rows)
    os << r.algorithm << ',' << r.episode << ',' << format_number(r.loss) << ',' << format_number(r.epsilon) << ','
       << format_number(r.validation_makespan) << ',' << format_number(r.seconds) << '\n';
  write_text(path, os.str());
}

void write_validation_csv(const std::string& path, std::span<const ValidationPoint> points) {
  std::ostringstream os;
  os << "episode,mean_makespan\n";
  for (const auto& p : points) os << p.episode << ',' << format_number(p.mean_makespan) << '\n';
  write_text(path, os.str());
}

std::string eval_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "algorithm,instance,makespan,reference,gap_pct,seconds\n";
  for (std::size_t i = 0; i < r.instances.size(); ++i)
    os << r.algorithm << ',' << r.instances[i] << ',' << format_number(r.makespans[i]) << ','
       << format_number(r.references[i]) << ',' << format_number(r.gaps[i]) << ',' << format_number(r.seconds[i]) << '\n';
  return os.str();
}

std::vector<std::string> emit_report(std::span<const EvalReport> reports, std::span<const MetricsRow> metrics,
                                     const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& file, const std::string& text) {
    const std::string path = join(out_dir, file);
    write_text(path, text);
    written.push_back(path);
  };

  std::vector<std::string> sets;
  for (const auto& r : reports)
    if (std::find(sets.begin(), sets.end(), r.set) == sets.end()) sets.push_back(r.set);

  std::ostringstream summary, sig;
  summary << "algorithm,set,instances,mean_makespan,mean_gap_pct,mean_seconds\n";
  sig << "set,alg_a,alg_b,p_value,significant\n";
  for (const auto& set : sets) {
    std::vector<const EvalReport*> group;
    for (const auto& r : reports)
      if (r.set == set) group.push_back(&r);
    std::string text;
    for (const auto* r : group) {
      const std::string body = eval_csv(*r);
      text += text.empty() ? body : body.substr(body.find('\n') + 1);
      double secs = 0.0;
      for (double s : r->seconds) secs += s;
      summary << r->algorithm << ',' << set << ',' << r->instances.size() << ',' << format_number(r->mean_makespan())
              << ',' << format_number(r->mean_gap()) << ','
              << format_number(r->seconds.empty() ? kNaN : secs / static_cast<double>(r->seconds.size())) << '\n';
    }
    std::string safe = set;
    for (char& c : safe)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    emit("eval_" + safe + ".csv", text);

    for (const auto* a : group) {
      for (const auto* b : group) {
        sig << set << ',' << a->algorithm << ',' << b->algorithm << ',';
        if (a == b) {
          sig << ",\n";
          continue;
        }
        // Pair by instance name.
        std::vector<double> xa, xb;
        for (std::size_t i = 0; i < a->instances.size(); ++i) {
          const auto it = std::find(b->instances.begin(), b->instances.end(), a->instances[i]);
          if (it == b->instances.end()) continue;
          xa.push_back(a->makespans[i]);
          xb.push_back(b->makespans[static_cast<std::size_t>(it - b->instances.begin())]);
        }
        const WilcoxonResult w = wilcoxon(xa, xb);
        sig << (w.indeterminate ? "" : format_number(w.p_value)) << ',' << (w.significant ? "true" : "false") << '\n';
      }
    }
  }
  emit("summary.csv", summary.str());
  emit("significance.csv", sig.str());

  std::ostringstream curves;
  curves << "algorithm,episode,validation_makespan\n";
  for (const auto& m : metrics)
    if (!std::isnan(m.validation_makespan))
      curves << m.algorithm << ',' << m.episode << ',' << format_number(m.validation_makespan) << '\n';
  emit("validation_curves.csv", curves.str());
  return written;
}

}  // namespace jsrl
