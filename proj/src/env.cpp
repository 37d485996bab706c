#include "jsrl/env.hpp"

#include <algorithm>
#include <sstream>

#include "jsrl/errors.hpp"

namespace jsrl {

ScheduleState::ScheduleState(std::shared_ptr<const ProblemInstance> instance) : instance_(std::move(instance)) {
  if (!instance_) throw ParameterError("ScheduleState: null instance");
  const auto& inst = *instance_;
  const int n = inst.num_jobs();
  const int total = inst.num_operations();
  job_offset_.resize(static_cast<std::size_t>(n));
  flat_job_.resize(static_cast<std::size_t>(total));
  int offset = 0;
  for (int i = 0; i < n; ++i) {
    job_offset_[static_cast<std::size_t>(i)] = offset;
    for (std::size_t j = 0; j < inst.job(i).size(); ++j) flat_job_[static_cast<std::size_t>(offset) + j] = i;
    offset += static_cast<int>(inst.job(i).size());
  }
  scheduled_.assign(static_cast<std::size_t>(total), 0);
  machine_of_.assign(static_cast<std::size_t>(total), -1);
  est_start_.assign(static_cast<std::size_t>(total), 0.0);
  est_end_.assign(static_cast<std::size_t>(total), 0.0);
  edges_.resize(static_cast<std::size_t>(total));
  machine_avail_.assign(static_cast<std::size_t>(inst.num_machines()), 0.0);
  machine_busy_.assign(static_cast<std::size_t>(inst.num_machines()), 0.0);
  machine_degree_.assign(static_cast<std::size_t>(inst.num_machines()), 0);
  next_op_.assign(static_cast<std::size_t>(n), 0);
  for (int f = 0; f < total; ++f) {
    for (const auto& [k, p] : inst.op(job_of(f), op_of(f)).eligible) {
      edges_[static_cast<std::size_t>(f)].push_back(k);
      ++machine_degree_[static_cast<std::size_t>(k)];
    }
  }
  for (int i = 0; i < n; ++i) propagate_job(i);
  refresh_partial_makespan();
}

std::optional<int> ScheduleState::assigned_machine(int flat) const {
  const int k = machine_of_[static_cast<std::size_t>(flat)];
  if (k < 0) return std::nullopt;
  return k;
}

double ScheduleState::job_completion(int job) const {
  const int last = job_offset_[static_cast<std::size_t>(job)] + static_cast<int>(instance_->job(job).size()) - 1;
  return est_end_[static_cast<std::size_t>(last)];
}

// Recursive start/completion estimate along one job: scheduled operations keep
// their actual times; an unscheduled operation starts when its predecessor
// (actual or estimated) ends and lasts its mean candidate processing time.
void ScheduleState::propagate_job(int job) {
  const auto& ops = instance_->job(job);
  const int base = job_offset_[static_cast<std::size_t>(job)];
  double prev_end = 0.0;
  for (std::size_t j = 0; j < ops.size(); ++j) {
    const auto f = static_cast<std::size_t>(base) + j;
    if (!scheduled_[f]) {
      est_start_[f] = prev_end;
      est_end_[f] = prev_end + ops[j].mean_time();
    }
    prev_end = est_end_[f];
  }
}

void ScheduleState::refresh_partial_makespan() {
  double c = 0.0;
  for (int i = 0; i < instance_->num_jobs(); ++i) c = std::max(c, job_completion(i));
  partial_makespan_ = c;
}

std::vector<Action> ScheduleState::feasible_actions() const {
  std::vector<Action> out;
  for (int i = 0; i < instance_->num_jobs(); ++i) {
    const int j = next_op_[static_cast<std::size_t>(i)];
    if (j >= static_cast<int>(instance_->job(i).size())) continue;
    for (int k : edges_[static_cast<std::size_t>(flat_index(i, j))]) out.push_back({i, j, k});
  }
  return out;
}

bool ScheduleState::is_feasible(const Action& a) const {
  if (a.job < 0 || a.job >= instance_->num_jobs()) return false;
  if (a.op != next_op_[static_cast<std::size_t>(a.job)]) return false;
  if (a.op >= static_cast<int>(instance_->job(a.job).size())) return false;
  return instance_->op(a.job, a.op).eligible.count(a.machine) == 1;
}

double ScheduleState::apply(const Action& a) {
  if (!is_feasible(a))
    throw ContractViolation("infeasible action (job " + std::to_string(a.job) + ", op " + std::to_string(a.op) +
                            ", machine " + std::to_string(a.machine) + ")");
  const auto f = static_cast<std::size_t>(flat_index(a.job, a.op));
  const auto k = static_cast<std::size_t>(a.machine);
  const double p = instance_->op(a.job, a.op).eligible.at(a.machine);
  const double pred_end = a.op > 0 ? est_end_[f - 1] : 0.0;
  const double start = std::max(machine_avail_[k], pred_end);

  scheduled_[f] = 1;
  machine_of_[f] = a.machine;
  est_start_[f] = start;
  est_end_[f] = start + p;
  machine_avail_[k] = start + p;
  machine_busy_[k] += p;
  for (int other : edges_[f]) --machine_degree_[static_cast<std::size_t>(other)];
  edges_[f].assign(1, a.machine);
  ++machine_degree_[k];
  ++next_op_[static_cast<std::size_t>(a.job)];
  ++step_count_;

  const double before = partial_makespan_;
  propagate_job(a.job);
  refresh_partial_makespan();
  return before - partial_makespan_;
}

FeatureTensors ScheduleState::extract_features() const {
  const int total = num_ops();
  const int m = instance_->num_machines();
  FeatureTensors ft;
  ft.op_features.resize(total, kOpFeatures);
  for (int f = 0; f < total; ++f) {
    const auto uf = static_cast<std::size_t>(f);
    const int job = job_of(f);
    const auto& spec = instance_->op(job, op_of(f));
    const int remaining = static_cast<int>(instance_->job(job).size()) - next_op_[static_cast<std::size_t>(job)];
    ft.op_features(f, 0) = scheduled_[uf] ? 1.0 : 0.0;
    ft.op_features(f, 1) = static_cast<double>(edges_[uf].size());
    ft.op_features(f, 2) = scheduled_[uf] ? static_cast<double>(spec.eligible.at(machine_of_[uf])) : spec.mean_time();
    ft.op_features(f, 3) = est_start_[uf];
    ft.op_features(f, 4) = static_cast<double>(remaining);
    ft.op_features(f, 5) = job_completion(job);
  }
  ft.machine_features.resize(m, kMachineFeatures);
  for (int k = 0; k < m; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    ft.machine_features(k, 0) = machine_avail_[uk];
    ft.machine_features(k, 1) = static_cast<double>(machine_degree_[uk]);
    ft.machine_features(k, 2) = partial_makespan_ > 0.0 ? machine_busy_[uk] / partial_makespan_ : 0.0;
  }
  std::size_t num_edges = 0;
  for (const auto& e : edges_) num_edges += e.size();
  ft.edge_op.reserve(num_edges);
  ft.edge_machine.reserve(num_edges);
  ft.edge_features.resize(static_cast<Eigen::Index>(num_edges));
  Eigen::Index e = 0;
  for (int f = 0; f < total; ++f) {
    const auto& spec = instance_->op(job_of(f), op_of(f));
    for (int k : edges_[static_cast<std::size_t>(f)]) {
      ft.edge_op.push_back(f);
      ft.edge_machine.push_back(k);
      ft.edge_features(e++) = spec.eligible.at(k);
    }
  }
  return ft;
}

std::vector<ScheduledOp> ScheduleState::final_schedule() const {
  if (!is_terminal()) throw ContractViolation("final_schedule: state is not terminal");
  std::vector<ScheduledOp> out;
  out.reserve(static_cast<std::size_t>(num_ops()));
  for (int f = 0; f < num_ops(); ++f) {
    const auto uf = static_cast<std::size_t>(f);
    out.push_back({job_of(f), op_of(f), machine_of_[uf], est_start_[uf], est_end_[uf]});
  }
  return out;
}

double ScheduleState::makespan() const {
  if (!is_terminal()) throw ContractViolation("makespan: state is not terminal");
  return partial_makespan_;
}

ScheduleState reset(std::shared_ptr<const ProblemInstance> instance) { return ScheduleState(std::move(instance)); }

StepResult step(const ScheduleState& state, const Action& action) {
  StepResult out{state, 0.0};
  out.reward = out.state.apply(action);
  return out;
}

std::optional<std::string> check_schedule(const ProblemInstance& inst, const std::vector<ScheduledOp>& schedule) {
  std::vector<std::vector<const ScheduledOp*>> placed(static_cast<std::size_t>(inst.num_jobs()));
  for (int i = 0; i < inst.num_jobs(); ++i) placed[static_cast<std::size_t>(i)].assign(inst.job(i).size(), nullptr);
  for (const auto& s : schedule) {
    if (s.job < 0 || s.job >= inst.num_jobs() || s.op < 0 || s.op >= static_cast<int>(inst.job(s.job).size()))
      return "schedule row references unknown operation";
    auto& slot = placed[static_cast<std::size_t>(s.job)][static_cast<std::size_t>(s.op)];
    if (slot) return "operation scheduled twice";
    slot = &s;
    const auto& el = inst.op(s.job, s.op).eligible;
    auto it = el.find(s.machine);
    if (it == el.end()) return "operation placed on an ineligible machine";
    if (s.start < 0.0 || s.end - s.start != static_cast<double>(it->second)) return "processing time mismatch";
  }
  for (int i = 0; i < inst.num_jobs(); ++i) {
    const auto& row = placed[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j]) return "operation missing from schedule";
      if (j > 0 && row[j]->start < row[j - 1]->end)
        return "precedence violation in job " + std::to_string(i) + " at op " + std::to_string(j);
    }
  }
  std::vector<std::vector<const ScheduledOp*>> by_machine(static_cast<std::size_t>(inst.num_machines()));
  for (const auto& s : schedule) by_machine[static_cast<std::size_t>(s.machine)].push_back(&s);
  for (std::size_t k = 0; k < by_machine.size(); ++k) {
    auto& list = by_machine[k];
    std::sort(list.begin(), list.end(), [](const ScheduledOp* a, const ScheduledOp* b) { return a->start < b->start; });
    for (std::size_t t = 1; t < list.size(); ++t)
      if (list[t]->start < list[t - 1]->end) return "machine overlap on machine " + std::to_string(k);
  }
  return std::nullopt;
}

std::string schedule_to_csv(const std::vector<ScheduledOp>& schedule) {
  std::ostringstream os;
  os << "job,op,machine,start,end\n";
  double makespan = 0.0;
  for (const auto& s : schedule) {
    os << s.job << ',' << s.op << ',' << s.machine << ',' << s.start << ',' << s.end << '\n';
    makespan = std::max(makespan, s.end);
  }
  os << "makespan," << makespan << '\n';
  return os.str();
}

}  // namespace jsrl
