// jsrl command-line front end. Links only the C interface.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jsrl/c_api.h"

namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kTraining = 3;

// Carries an exit code up to main.
struct Failure {
  int code;
  std::string message;
};

int exit_code(jsrl_status s) {
  switch (s) {
    case JSRL_OK: return 0;
    case JSRL_ERR_PARAMETER: return kUsage;
    case JSRL_ERR_TRAINING: return kTraining;
    default: return kData;
  }
}

void check(jsrl_status s) {
  if (s != JSRL_OK) throw Failure{exit_code(s), jsrl_last_error()};
}

void log_line(const std::string& event, const std::string& fields) {
  std::cerr << "jsrl event=" << event << (fields.empty() ? "" : " ") << fields << "\n";
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

jsrl_problem problem_of(const std::string& name) {
  if (name == "jssp") return JSRL_JSSP;
  if (name == "fjsp") return JSRL_FJSP;
  throw Failure{kUsage, "--problem expects jssp or fjsp, got '" + name + "'"};
}

std::string default_out_dir() {
  const char* env = std::getenv("JSRL_OUT_DIR");
  return env && *env ? env : "jsrl_runs";
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  jsrl_string_free(s);
  return out;
}

// RAII holders for the opaque handles.
template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  ~Handle() { Free(p); }
};
using Instance = Handle<jsrl_instance, jsrl_instance_free>;
using Run = Handle<jsrl_run, jsrl_run_free>;
using Ckpt = Handle<jsrl_checkpoint, jsrl_checkpoint_free>;
using EvalSet = Handle<jsrl_eval_set, jsrl_eval_set_free>;
using Report = Handle<jsrl_report, jsrl_report_free>;

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return !s.empty() && end == s.c_str() + s.size();
}

// instance -> makespan from a CSV with `instance` and `makespan` columns (header
// required), or two unnamed columns.
std::map<std::string, double> read_makespans(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{kData, "cannot open '" + path + "'"};
  std::map<std::string, double> out;
  std::string line;
  std::size_t name_col = 0, value_col = 1, lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (first) {
      first = false;
      double probe = 0;
      if (cells.size() < 2 || !parse_number(trim(cells[1]), probe)) {
        // Header: locate the columns by name.
        bool have_name = false, have_value = false;
        for (std::size_t c = 0; c < cells.size(); ++c) {
          const std::string h = trim(cells[c]);
          if (h == "instance") name_col = c, have_name = true;
          if (h == "makespan") value_col = c, have_value = true;
        }
        if (!have_name || !have_value) {
          name_col = 0;
          value_col = 1;
        }
        continue;
      }
    }
    double v = 0;
    if (cells.size() <= std::max(name_col, value_col) || !parse_number(trim(cells[value_col]), v))
      throw Failure{kData, path + ":" + std::to_string(lineno) + ": expected instance,makespan"};
    out[trim(cells[name_col])] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string problem = "fjsp";
  int jobs = 6, machines = 6, count = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const jsrl_problem p = problem_of(a.problem);
  if (a.count < 1) throw Failure{kUsage, "--count must be >= 1"};
  const std::string dir = a.out.empty() ? default_out_dir() : a.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kData, "cannot create '" + dir + "': " + ec.message()};
  const int width = std::max(3, static_cast<int>(std::to_string(a.count - 1).size()));
  for (int i = 0; i < a.count; ++i) {
    Instance inst;
    check(jsrl_instance_generate(p, a.jobs, a.machines, jsrl_derive_seed(a.seed, static_cast<std::uint64_t>(i)), &inst.p));
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(width) - idx.size(), '0');
    const std::string path = (fs::path(dir) / (a.problem + "_" + std::to_string(a.jobs) + "x" + std::to_string(a.machines) + "_" + idx +
                                              (p == JSRL_JSSP ? ".jss" : ".fjs")))
                                 .string();
    check(jsrl_instance_save(inst.p, path.c_str(), p));
    std::cout << path << "\n";
  }
  log_line("generate", "count=" + std::to_string(a.count) + " dir=" + dir);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::map<std::string, std::string> flags;  // config-file key -> value
  std::vector<std::string> sets;
  std::vector<std::string> toggles;
  bool rainbow = false;
  int log_every = 0;
};

void report_progress(const jsrl_episode_row* row, void* user) {
  const int every = *static_cast<const int*>(user);
  const bool validated = !std::isnan(row->validation_makespan);
  if (!validated && (every <= 0 || row->episode % every != 0)) return;
  std::string f = "episode=" + std::to_string(row->episode);
  if (!std::isnan(row->loss)) f += " loss=" + fmt(row->loss);
  if (!std::isnan(row->epsilon)) f += " epsilon=" + fmt(row->epsilon);
  if (validated) f += " validation_makespan=" + fmt(row->validation_makespan);
  f += " seconds=" + fmt(row->seconds);
  log_line("episode", f);
}

int cmd_train(TrainArgs a) {
  // Command-line values, applied over the config file.
  std::map<std::string, std::string> settings = a.flags;
  if (a.rainbow) settings["algorithm"] = "rainbow";
  for (const auto& t : a.toggles) settings[t] = "true";
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Failure{kUsage, "--set expects KEY=VALUE, got '" + kv + "'"};
    settings[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  Run run;
  check(jsrl_run_create(&run.p));
  if (!a.config.empty()) check(jsrl_run_load(run.p, a.config.c_str()));
  // Problem, size and algorithm first: later keys are checked against them.
  for (const char* k : {"problem", "jobs", "machines", "algorithm"})
    if (auto it = settings.find(k); it != settings.end()) check(jsrl_run_set(run.p, k, it->second.c_str()));
  for (const auto& [k, v] : settings) check(jsrl_run_set(run.p, k.c_str(), v.c_str()));

  std::map<std::string, std::string> resolved;
  for (const auto& line : split(take_string([&] {
         char* t = nullptr;
         check(jsrl_run_settings(run.p, &t));
         return t;
       }()),
                                '\n')) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) resolved[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (resolved["out_dir"].empty()) {
    std::string name = resolved["algorithm"];
    for (char& c : name)
      if (c == '+') c = '_';
    const std::string dir = (fs::path(default_out_dir()) / (name + "-" + resolved["problem"] + resolved["jobs"] + "x" +
                                                            resolved["machines"] + "-seed" + resolved["seed"]))
                                .string();
    check(jsrl_run_set(run.p, "out_dir", dir.c_str()));
    resolved["out_dir"] = dir;
  }
  const std::string out_dir = resolved["out_dir"];
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Failure{kData, "cannot create '" + out_dir + "': " + ec.message()};
  {
    char* t = nullptr;
    check(jsrl_run_settings(run.p, &t));
    std::ofstream(fs::path(out_dir) / "run.cfg") << take_string(t);
  }
  log_line("train_start", "algorithm=" + resolved["algorithm"] + " problem=" + resolved["problem"] + " size=" +
                              resolved["jobs"] + "x" + resolved["machines"] + " episodes=" + resolved["episodes"] +
                              " seed=" + resolved["seed"] + " out_dir=" + out_dir);

  jsrl_train_summary summary{};
  Ckpt best;
  const jsrl_status s = jsrl_train(run.p, report_progress, &a.log_every, &summary, &best.p);
  if (s != JSRL_OK) {
    const std::string msg = jsrl_last_error();
    log_line("train_failed", "out_dir=" + out_dir);
    throw Failure{exit_code(s), msg};
  }
  const std::string ckpt = (fs::path(out_dir) / "best.ckpt").string();
  std::cout << "episodes=" << summary.episodes << "\n"
            << "first_validation=" << fmt(summary.first_validation) << "\n"
            << "best_validation=" << fmt(summary.best_validation) << "\n"
            << "best_episode=" << summary.best_episode << "\n"
            << "seconds=" << fmt(summary.seconds) << "\n"
            << "checkpoint=" << (fs::exists(ckpt) ? ckpt : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> checkpoints;
  std::string makespans;
  std::string label = "external";
  std::string instances;
  std::string problem = "fjsp";
  std::string refs;
  std::string set_name;
  std::vector<std::string> metrics;
  bool multistart = false;
  int workers = 1;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.checkpoints.empty() && a.makespans.empty())
    throw Failure{kUsage, "evaluate needs --checkpoint or --makespans"};
  const jsrl_problem p = problem_of(a.problem);
  std::string name = a.set_name;
  if (name.empty()) name = fs::path(a.instances).filename().string();
  if (name.empty()) name = fs::path(a.instances).parent_path().filename().string();
  if (name.empty()) name = "instances";

  EvalSet set;
  check(jsrl_eval_set_create(name.c_str(), &set.p));
  check(jsrl_eval_set_add_dir(set.p, a.instances.c_str(), p));
  if (!a.refs.empty()) check(jsrl_eval_set_load_refs(set.p, a.refs.c_str()));
  size_t n = 0;
  check(jsrl_eval_set_size(set.p, &n));
  if (n == 0) throw Failure{kData, "no instance files in '" + a.instances + "'"};

  std::vector<Report> reports;
  for (const auto& path : a.checkpoints) {
    Ckpt ck;
    check(jsrl_checkpoint_load(path.c_str(), &ck.p));
    Report r;
    check(jsrl_evaluate(ck.p, set.p, a.multistart ? 1 : 0, a.workers, &r.p));
    if (a.checkpoints.size() > 1) {
      // Several checkpoints may share an algorithm; label them by run directory.
      const fs::path p(path);
      const std::string label = p.parent_path().filename().string() + "/" + p.stem().string();
      check(jsrl_report_set_label(r.p, label.c_str()));
    }
    reports.push_back(std::move(r));
  }
  if (!a.makespans.empty()) {
    const auto given = read_makespans(a.makespans);
    std::vector<double> values;
    for (size_t i = 0; i < n; ++i) {
      const char* inst = nullptr;
      check(jsrl_eval_set_name_at(set.p, i, &inst));
      const auto it = given.find(inst);
      if (it == given.end()) throw Failure{kData, a.makespans + ": no makespan for instance '" + inst + "'"};
      values.push_back(it->second);
    }
    Report r;
    check(jsrl_report_external(set.p, a.label.c_str(), values.data(), values.size(), &r.p));
    reports.push_back(std::move(r));
  }

  const std::string out = a.out.empty() ? (fs::path(default_out_dir()) / ("eval-" + name)).string() : a.out;
  std::vector<const jsrl_report*> ptrs;
  for (const auto& r : reports) ptrs.push_back(r.p);
  std::vector<const char*> metric_paths;
  for (const auto& m : a.metrics) metric_paths.push_back(m.c_str());
  check(jsrl_emit_report(ptrs.data(), ptrs.size(), metric_paths.data(), metric_paths.size(), out.c_str()));

  std::cout << "algorithm,set,instances,mean_makespan,mean_gap_pct\n";
  for (const auto& r : reports) {
    double ms = 0, g = 0;
    check(jsrl_report_means(r.p, &ms, &g));
    char* csv = nullptr;
    check(jsrl_report_csv(r.p, &csv));
    const std::string text = take_string(csv);
    const auto lines = split(text, '\n');
    const std::string algorithm = lines.size() > 1 ? split(lines[1], ',')[0] : "";
    std::cout << algorithm << "," << name << "," << n << "," << fmt(ms) << "," << fmt(g) << "\n";
  }
  log_line("evaluate", "set=" + name + " instances=" + std::to_string(n) + " reports=" + std::to_string(reports.size()) +
                           " out_dir=" + out);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_gap(double makespan, double reference) {
  double g = 0;
  check(jsrl_gap(makespan, reference, &g));
  std::printf("%.2f\n", g);
  return 0;
}

int cmd_wilcoxon(const std::string& a_path, const std::string& b_path, double level) {
  const auto a = read_makespans(a_path), b = read_makespans(b_path);
  std::vector<double> xa, xb;
  for (const auto& [name, v] : a) {
    const auto it = b.find(name);
    if (it == b.end()) continue;
    xa.push_back(v);
    xb.push_back(it->second);
  }
  if (xa.size() != a.size() || xa.size() != b.size())
    log_line("wilcoxon_unpaired", "paired=" + std::to_string(xa.size()) + " a=" + std::to_string(a.size()) +
                                      " b=" + std::to_string(b.size()));
  jsrl_wilcoxon_result w{};
  check(jsrl_wilcoxon(xa.data(), xb.data(), xa.size(), level, &w));
  std::cout << "pairs=" << xa.size() << "\n"
            << "nonzero=" << w.n << "\n"
            << "w_plus=" << fmt(w.w_plus) << "\n"
            << "statistic=" << fmt(w.statistic) << "\n"
            << "p_value=" << fmt(w.p_value) << "\n"
            << "exact=" << (w.exact ? "true" : "false") << "\n"
            << "indeterminate=" << (w.indeterminate ? "true" : "false") << "\n"
            << "significant=" << (w.significant ? "true" : "false") << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& checkpoint, const std::string& instance, const std::string& problem,
                const std::string& config) {
  if (!checkpoint.empty()) {
    Ckpt ck;
    check(jsrl_checkpoint_load(checkpoint.c_str(), &ck.p));
    char* t = nullptr;
    check(jsrl_checkpoint_describe(ck.p, &t));
    std::cout << take_string(t);
  }
  if (!instance.empty()) {
    Instance inst;
    check(jsrl_instance_load(instance.c_str(), problem_of(problem), &inst.p));
    jsrl_instance_info info{};
    check(jsrl_instance_describe(inst.p, &info));
    std::cout << "jobs = " << info.jobs << "\nmachines = " << info.machines << "\noperations = " << info.operations
              << "\njssp = " << (info.is_jssp ? "true" : "false") << "\ninitial_estimate = " << fmt(info.initial_estimate)
              << "\n";
  }
  if (!config.empty()) {
    Run run;
    check(jsrl_run_create(&run.p));
    check(jsrl_run_load(run.p, config.c_str()));
    char* t = nullptr;
    check(jsrl_run_settings(run.p, &t));
    std::cout << take_string(t);
  }
  if (checkpoint.empty() && instance.empty() && config.empty())
    throw Failure{kUsage, "inspect needs --checkpoint, --instance or --config"};
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement learning for job-shop and flexible job-shop scheduling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(jsrl_version()));

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write random instances");
  g->add_option("--problem", gen.problem, "jssp or fjsp")->check(CLI::IsMember({"jssp", "fjsp"}));
  g->add_option("-n,--jobs", gen.jobs, "Jobs per instance");
  g->add_option("-m,--machines", gen.machines, "Machines per instance");
  g->add_option("--count", gen.count, "Number of instances");
  g->add_option("--seed", gen.seed, "Base seed; instance i uses child stream i");
  g->add_option("--out", gen.out, "Output directory (default $JSRL_OUT_DIR or ./jsrl_runs)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one algorithm; flags override the config file");
  t->add_option("--config", tr.config, "Flat key = value run file")->check(CLI::ExistingFile);
  struct KeyFlag {
    const char* flag;
    const char* key;
    const char* help;
  };
  static const KeyFlag kKeyFlags[] = {
      {"--problem", "problem", "jssp or fjsp"},
      {"-n,--jobs", "jobs", "Jobs"},
      {"-m,--machines", "machines", "Machines"},
      {"--algorithm", "algorithm", "dqn, ddqn, per, dueling, noisy, distributional, multistep, rainbow, "
                                   "'+'-joined toggles, reinforce, a2c, ppo or vmpo"},
      {"--episodes", "episodes", "Training episodes (0: size default)"},
      {"--seed", "seed", "Run seed"},
      {"--out", "out_dir", "Run directory (default under $JSRL_OUT_DIR or ./jsrl_runs)"},
      {"--workers", "workers", "Evaluation threads"},
      {"--validation-size", "validation_size", "Validation instances"},
      {"--validation-period", "validation_period", "Episodes between validations"},
      {"--embed-dim", "embed_dim", "Embedding width d"},
      {"--hidden-dim", "hidden_dim", "MLP hidden width"},
      {"--layers", "layers", "GNN layers"},
      {"--heads", "heads", "Attention heads"},
      {"--lr", "lr", "Adam learning rate"},
      {"--gamma", "gamma", "Discount factor"},
      {"--batch-size", "batch_size", "Replay minibatch (value-based)"},
      {"--n-steps", "n_steps", "Multi-step length"},
      {"--atoms", "atoms", "Distributional atoms"},
      {"--v-min", "v_min", "Lowest atom"},
      {"--v-max", "v_max", "Highest atom"},
      {"--target-period", "target_period", "Episodes between target copies"},
      {"--parallel", "parallel", "Instances per episode (policy-gradient)"},
      {"--epochs", "epochs", "Gradient steps per batch (PPO, V-MPO)"},
      {"--clip", "clip", "PPO clip threshold"},
  };
  for (const auto& kf : kKeyFlags) {
    const std::string key = kf.key;
    t->add_option_function<std::string>(kf.flag, [&tr, key](const std::string& v) { tr.flags[key] = v; }, kf.help);
  }
  for (const char* toggle : {"ddqn", "per", "dueling", "noisy", "distributional", "multistep"}) {
    const std::string name = toggle;
    t->add_flag_callback("--" + name, [&tr, name] { tr.toggles.push_back(name); }, "Enable the " + name + " extension");
  }
  t->add_flag("--rainbow", tr.rainbow, "All six extensions");
  t->add_option("--set", tr.sets, "Any config key: --set KEY=VALUE (repeatable)");
  t->add_option("--log-every", tr.log_every, "Also log every N-th episode (validations are always logged)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Greedy or multistart evaluation with gaps and significance");
  e->add_option("--checkpoint", ev.checkpoints, "Checkpoint file (repeatable)")->check(CLI::ExistingFile);
  e->add_option("--makespans", ev.makespans, "CSV of instance,makespan results to score instead of (or beside) checkpoints")
      ->check(CLI::ExistingFile);
  e->add_option("--label", ev.label, "Algorithm label of the --makespans results");
  e->add_option("--instances", ev.instances, "Directory of instance files")->required()->check(CLI::ExistingDirectory);
  e->add_option("--problem", ev.problem, "Instance file format: jssp or fjsp")->check(CLI::IsMember({"jssp", "fjsp"}));
  e->add_option("--refs", ev.refs, "Reference makespans: instance,reference_makespan")->check(CLI::ExistingFile);
  e->add_option("--set-name", ev.set_name, "Name of the instance set in reports (default: directory name)");
  e->add_option("--metrics", ev.metrics, "metrics.csv files for validation curves (repeatable)")->check(CLI::ExistingFile);
  e->add_flag("--multistart", ev.multistart, "One greedy rollout per initial action");
  e->add_option("--workers", ev.workers, "Evaluation threads")->check(CLI::PositiveNumber);
  e->add_option("--out", ev.out, "Report directory (default under $JSRL_OUT_DIR or ./jsrl_runs)");

  auto* s = app.add_subcommand("stats", "Gap and signed-rank statistics");
  s->require_subcommand(1);
  double makespan = 0, reference = 0;
  auto* sg = s->add_subcommand("gap", "Percentage gap of a makespan over a reference");
  sg->add_option("makespan", makespan)->required();
  sg->add_option("reference", reference)->required();
  std::string wa, wb;
  double level = 0.05;
  auto* sw = s->add_subcommand("wilcoxon", "Two-sided signed-rank test on paired per-instance makespans");
  sw->add_option("a", wa, "eval CSV or instance,makespan CSV")->required()->check(CLI::ExistingFile);
  sw->add_option("b", wb, "eval CSV or instance,makespan CSV")->required()->check(CLI::ExistingFile);
  sw->add_option("--level", level, "Significance level");

  std::string in_ckpt, in_inst, in_problem = "fjsp", in_cfg;
  auto* in = app.add_subcommand("inspect", "Describe a checkpoint, instance file or run config");
  in->add_option("--checkpoint", in_ckpt)->check(CLI::ExistingFile);
  in->add_option("--instance", in_inst)->check(CLI::ExistingFile);
  in->add_option("--problem", in_problem, "Instance file format")->check(CLI::IsMember({"jssp", "fjsp"}));
  in->add_option("--config", in_cfg)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_evaluate(ev);
    if (sg->parsed()) return cmd_gap(makespan, reference);
    if (sw->parsed()) return cmd_wilcoxon(wa, wb, level);
    if (in->parsed()) return cmd_inspect(in_ckpt, in_inst, in_problem, in_cfg);
  } catch (const Failure& f) {
    std::cerr << "jsrl: error: " << f.message << "\n";
    return f.code;
  }
  return kUsage;
}
