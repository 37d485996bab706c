#include "jsrl/c_api.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jsrl/config.hpp"
#include "jsrl/errors.hpp"
#include "jsrl/harness.hpp"
#include "jsrl/stats.hpp"

struct jsrl_instance {
  std::shared_ptr<const jsrl::ProblemInstance> inst;
};

struct jsrl_run {
  std::map<std::string, std::string> settings;
  jsrl::RunConfig config;
};

struct jsrl_checkpoint {
  jsrl::Checkpoint ckpt;
};

struct jsrl_eval_set {
  jsrl::EvalSet set;
};

struct jsrl_report {
  jsrl::EvalReport report;
};

namespace {

thread_local std::string g_error;

jsrl_status fail(jsrl_status code, const std::string& message) {
  g_error = message;
  return code;
}

// Runs `fn`, mapping library exceptions to status codes.
template <class F>
jsrl_status guarded(F&& fn) noexcept {
  g_error.clear();
  try {
    fn();
    return JSRL_OK;
  } catch (const jsrl::ParameterError& e) {
    return fail(JSRL_ERR_PARAMETER, e.what());
  } catch (const jsrl::ParseError& e) {
    return fail(JSRL_ERR_PARSE, e.what());
  } catch (const jsrl::IoError& e) {
    return fail(JSRL_ERR_IO, e.what());
  } catch (const jsrl::TrainingError& e) {
    return fail(JSRL_ERR_TRAINING, e.what());
  } catch (const jsrl::ContractViolation& e) {
    return fail(JSRL_ERR_CONTRACT, e.what());
  } catch (const jsrl::TypeError& e) {
    return fail(JSRL_ERR_CONTRACT, e.what());
  } catch (const std::exception& e) {
    return fail(JSRL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(JSRL_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw jsrl::ParameterError(std::string(what) + " is null");
}

jsrl::ProblemKind kind_of(jsrl_problem p) {
  switch (p) {
    case JSRL_JSSP: return jsrl::ProblemKind::Jssp;
    case JSRL_FJSP: return jsrl::ProblemKind::Fjsp;
  }
  throw jsrl::ParameterError("unknown problem kind " + std::to_string(static_cast<int>(p)));
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw jsrl::IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return std::nan("");
  return jsrl::parse_double("metrics", s);
}

// Rows of a metrics.csv written by train().
std::vector<jsrl::MetricsRow> read_metrics(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line.rfind("algorithm,episode,", 0) != 0)
    throw jsrl::ParseError("'" + path + "' is not a metrics file", 1);
  std::vector<jsrl::MetricsRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 6) throw jsrl::ParseError("'" + path + "': expected 6 columns", lineno);
    jsrl::MetricsRow r;
    r.algorithm = c[0];
    r.episode = jsrl::parse_int("episode", c[1]);
    r.loss = parse_cell(c[2]);
    r.epsilon = parse_cell(c[3]);
    r.validation_makespan = parse_cell(c[4]);
    r.seconds = parse_cell(c[5]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

extern "C" {

const char* jsrl_version(void) { return "0.1.0"; }

const char* jsrl_last_error(void) { return g_error.c_str(); }

void jsrl_string_free(char* s) { std::free(s); }

uint64_t jsrl_derive_seed(uint64_t seed, uint64_t index) { return jsrl::derive_seed(seed, index); }

// ---- instances ----

jsrl_status jsrl_instance_generate(jsrl_problem problem, int jobs, int machines, uint64_t seed, jsrl_instance** out) {
  return guarded([&] {
    require(out, "out");
    *out = new jsrl_instance{std::make_shared<const jsrl::ProblemInstance>(
        jsrl::make_instance(kind_of(problem), jobs, machines, seed))};
  });
}

jsrl_status jsrl_instance_parse(const char* text, jsrl_problem problem, jsrl_instance** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new jsrl_instance{std::make_shared<const jsrl::ProblemInstance>(jsrl::parse_instance(text, kind_of(problem)))};
  });
}

jsrl_status jsrl_instance_load(const char* path, jsrl_problem problem, jsrl_instance** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new jsrl_instance{std::make_shared<const jsrl::ProblemInstance>(jsrl::load_instance(path, kind_of(problem)))};
  });
}

jsrl_status jsrl_instance_save(const jsrl_instance* inst, const char* path, jsrl_problem format) {
  return guarded([&] {
    require(inst, "instance");
    require(path, "path");
    jsrl::save_instance(path, *inst->inst, kind_of(format));
  });
}

jsrl_status jsrl_instance_describe(const jsrl_instance* inst, jsrl_instance_info* out) {
  return guarded([&] {
    require(inst, "instance");
    require(out, "out");
    const auto& p = *inst->inst;
    out->jobs = p.num_jobs();
    out->machines = p.num_machines();
    out->operations = p.num_operations();
    out->is_jssp = p.is_jssp() ? 1 : 0;
    out->initial_estimate = jsrl::reset(inst->inst).partial_makespan();
  });
}

void jsrl_instance_free(jsrl_instance* inst) { delete inst; }

// ---- runs ----

jsrl_status jsrl_run_create(jsrl_run** out) {
  return guarded([&] {
    require(out, "out");
    *out = new jsrl_run{};
  });
}

jsrl_status jsrl_run_set(jsrl_run* run, const char* key, const char* value) {
  return guarded([&] {
    require(run, "run");
    require(key, "key");
    require(value, "value");
    auto next = run->settings;
    next[key] = value;
    jsrl::RunConfig cfg;
    cfg.apply(next);
    run->settings = std::move(next);
    run->config = std::move(cfg);
  });
}

jsrl_status jsrl_run_load(jsrl_run* run, const char* path) {
  return guarded([&] {
    require(run, "run");
    require(path, "path");
    auto next = run->settings;
    for (auto& [k, v] : jsrl::load_config(path)) next[k] = v;
    jsrl::RunConfig cfg;
    cfg.apply(next);
    run->settings = std::move(next);
    run->config = std::move(cfg);
  });
}

jsrl_status jsrl_run_settings(const jsrl_run* run, char** text) {
  return guarded([&] {
    require(run, "run");
    require(text, "text");
    *text = dup_string(jsrl::serialize_config(run->config.settings()));
  });
}

void jsrl_run_free(jsrl_run* run) { delete run; }

jsrl_status jsrl_train(const jsrl_run* run, jsrl_progress_fn progress, void* user, jsrl_train_summary* summary,
                       jsrl_checkpoint** best) {
  return guarded([&] {
    require(run, "run");
    std::function<void(const jsrl::MetricsRow&)> cb;
    if (progress)
      cb = [&](const jsrl::MetricsRow& m) {
        const jsrl_episode_row row{m.episode, m.loss, m.epsilon, m.validation_makespan, m.seconds};
        progress(&row, user);
      };
    jsrl::TrainResult res = jsrl::train(run->config, cb);
    if (summary) {
      summary->episodes = static_cast<int>(res.metrics.size());
      summary->best_episode = res.best_episode;
      summary->first_validation = res.first_validation;
      summary->best_validation = res.best_validation;
      summary->seconds = res.seconds;
    }
    if (best) *best = new jsrl_checkpoint{std::move(res.best)};
  });
}

// ---- checkpoints ----

jsrl_status jsrl_checkpoint_load(const char* path, jsrl_checkpoint** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new jsrl_checkpoint{jsrl::load_checkpoint(path)};
  });
}

jsrl_status jsrl_checkpoint_save(const jsrl_checkpoint* ckpt, const char* path) {
  return guarded([&] {
    require(ckpt, "checkpoint");
    require(path, "path");
    jsrl::save_checkpoint(path, ckpt->ckpt);
  });
}

jsrl_status jsrl_checkpoint_describe(const jsrl_checkpoint* ckpt, char** text) {
  return guarded([&] {
    require(ckpt, "checkpoint");
    require(text, "text");
    std::ostringstream out;
    out << "# settings\n" << jsrl::serialize_config(ckpt->ckpt.settings);
    out << "# metadata\n" << jsrl::serialize_config(ckpt->ckpt.metadata);
    out << "# model\nparameters = " << ckpt->ckpt.model.parameter_count() << "\n";
    *text = dup_string(out.str());
  });
}

void jsrl_checkpoint_free(jsrl_checkpoint* ckpt) { delete ckpt; }

// ---- evaluation ----

jsrl_status jsrl_eval_set_create(const char* name, jsrl_eval_set** out) {
  return guarded([&] {
    require(name, "name");
    require(out, "out");
    auto* s = new jsrl_eval_set{};
    s->set.name = name;
    *out = s;
  });
}

jsrl_status jsrl_eval_set_add(jsrl_eval_set* set, const char* instance_name, const jsrl_instance* inst) {
  return guarded([&] {
    require(set, "set");
    require(instance_name, "instance name");
    require(inst, "instance");
    set->set.instance_names.emplace_back(instance_name);
    set->set.instances.push_back(inst->inst);
  });
}

jsrl_status jsrl_eval_set_add_dir(jsrl_eval_set* set, const char* dir, jsrl_problem problem) {
  return guarded([&] {
    require(set, "set");
    require(dir, "dir");
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw jsrl::IoError("'" + std::string(dir) + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    const auto kind = kind_of(problem);
    for (const auto& f : files) {
      try {
        set->set.instances.push_back(std::make_shared<const jsrl::ProblemInstance>(jsrl::load_instance(f.string(), kind)));
      } catch (const jsrl::ParseError& e) {
        throw jsrl::ParseError(f.string() + ": " + e.what(), 0);
      }
      set->set.instance_names.push_back(f.stem().string());
    }
  });
}

jsrl_status jsrl_eval_set_load_refs(jsrl_eval_set* set, const char* path) {
  return guarded([&] {
    require(set, "set");
    require(path, "path");
    for (auto& [k, v] : jsrl::parse_reference_csv(read_file(path))) set->set.references[k] = v;
  });
}

jsrl_status jsrl_eval_set_size(const jsrl_eval_set* set, size_t* out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    *out = set->set.instances.size();
  });
}

void jsrl_eval_set_free(jsrl_eval_set* set) { delete set; }

jsrl_status jsrl_evaluate(const jsrl_checkpoint* ckpt, const jsrl_eval_set* set, int multistart, int workers,
                          jsrl_report** out) {
  return guarded([&] {
    require(ckpt, "checkpoint");
    require(set, "set");
    require(out, "out");
    if (workers < 1) throw jsrl::ParameterError("workers must be >= 1");
    const jsrl::Decoder decoder = jsrl::make_decoder(ckpt->ckpt);
    jsrl::EvalReport r = multistart ? jsrl::evaluate_multistart(decoder, set->set, workers)
                                    : jsrl::evaluate_greedy(decoder, set->set, workers);
    const auto it = ckpt->ckpt.metadata.find("algorithm");
    if (it != ckpt->ckpt.metadata.end()) r.algorithm = it->second;
    if (multistart) r.algorithm += "+multistart";
    *out = new jsrl_report{std::move(r)};
  });
}

jsrl_status jsrl_report_external(const jsrl_eval_set* set, const char* algorithm, const double* makespans,
                                 size_t count, jsrl_report** out) {
  return guarded([&] {
    require(set, "set");
    require(algorithm, "algorithm");
    require(out, "out");
    const auto& s = set->set;
    if (count != s.instances.size())
      throw jsrl::ParameterError("expected " + std::to_string(s.instances.size()) + " makespans, got " + std::to_string(count));
    if (count) require(makespans, "makespans");
    jsrl::EvalReport r;
    r.algorithm = algorithm;
    r.set = s.name;
    for (size_t i = 0; i < count; ++i) {
      if (!(makespans[i] > 0) || !std::isfinite(makespans[i]))
        throw jsrl::ParameterError("makespan for '" + s.instance_names[i] + "' must be positive");
      r.instances.push_back(s.instance_names[i]);
      r.makespans.push_back(makespans[i]);
      const auto ref = s.references.find(s.instance_names[i]);
      const double rv = ref == s.references.end() ? std::nan("") : ref->second;
      r.references.push_back(rv);
      r.gaps.push_back(std::isnan(rv) ? std::nan("") : jsrl::gap(makespans[i], rv));
      r.seconds.push_back(std::nan(""));
      r.starts.push_back(0);
    }
    *out = new jsrl_report{std::move(r)};
  });
}

jsrl_status jsrl_eval_set_name_at(const jsrl_eval_set* set, size_t index, const char** out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    if (index >= set->set.instance_names.size()) throw jsrl::ParameterError("instance index out of range");
    *out = set->set.instance_names[index].c_str();
  });
}

jsrl_status jsrl_report_size(const jsrl_report* report, size_t* out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    *out = report->report.instances.size();
  });
}

jsrl_status jsrl_report_row_at(const jsrl_report* report, size_t index, jsrl_report_row* out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    const auto& r = report->report;
    if (index >= r.instances.size())
      throw jsrl::ParameterError("row " + std::to_string(index) + " out of range (" + std::to_string(r.instances.size()) + " rows)");
    out->instance = r.instances[index].c_str();
    out->makespan = r.makespans[index];
    out->reference = r.references[index];
    out->gap_pct = r.gaps[index];
    out->seconds = r.seconds[index];
    out->starts = r.starts.empty() ? 1 : r.starts[index];
  });
}

jsrl_status jsrl_report_means(const jsrl_report* report, double* mean_makespan, double* mean_gap_pct) {
  return guarded([&] {
    require(report, "report");
    if (mean_makespan) *mean_makespan = report->report.mean_makespan();
    if (mean_gap_pct) *mean_gap_pct = report->report.mean_gap();
  });
}

jsrl_status jsrl_report_set_label(jsrl_report* report, const char* algorithm) {
  return guarded([&] {
    require(report, "report");
    require(algorithm, "algorithm");
    report->report.algorithm = algorithm;
  });
}

jsrl_status jsrl_report_csv(const jsrl_report* report, char** text) {
  return guarded([&] {
    require(report, "report");
    require(text, "text");
    *text = dup_string(jsrl::eval_csv(report->report));
  });
}

void jsrl_report_free(jsrl_report* report) { delete report; }

jsrl_status jsrl_emit_report(const jsrl_report* const* reports, size_t count, const char* const* metrics_csv,
                             size_t metrics_count, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    if (count) require(reports, "reports");
    if (metrics_count) require(metrics_csv, "metrics_csv");
    std::vector<jsrl::EvalReport> rs;
    for (size_t i = 0; i < count; ++i) {
      require(reports[i], "report");
      rs.push_back(reports[i]->report);
    }
    std::vector<jsrl::MetricsRow> metrics;
    for (size_t i = 0; i < metrics_count; ++i) {
      require(metrics_csv[i], "metrics path");
      for (auto& row : read_metrics(metrics_csv[i])) metrics.push_back(std::move(row));
    }
    jsrl::emit_report(rs, metrics, out_dir);
  });
}

// ---- statistics ----

jsrl_status jsrl_gap(double makespan, double reference, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = jsrl::gap(makespan, reference);
  });
}

jsrl_status jsrl_wilcoxon(const double* a, const double* b, size_t n, double level, jsrl_wilcoxon_result* out) {
  return guarded([&] {
    require(out, "out");
    if (n) {
      require(a, "a");
      require(b, "b");
    }
    const jsrl::WilcoxonResult w = jsrl::wilcoxon(std::span<const double>(a, n), std::span<const double>(b, n), level);
    out->statistic = w.statistic;
    out->w_plus = w.w_plus;
    out->p_value = w.p_value;
    out->significant = w.significant ? 1 : 0;
    out->indeterminate = w.indeterminate ? 1 : 0;
    out->exact = w.exact ? 1 : 0;
    out->n = w.n;
  });
}

}  // extern "C"
