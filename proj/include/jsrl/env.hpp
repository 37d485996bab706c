#pragma once

#include <Eigen/Dense>
#include <compare>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jsrl/instances.hpp"

namespace jsrl {

/// Dispatch decision: operation (job, op) on machine.
struct Action {
  int job = 0;
  int op = 0;
  int machine = 0;
  auto operator<=>(const Action&) const = default;
};

inline constexpr int kOpFeatures = 6;
inline constexpr int kMachineFeatures = 3;

/// Raw (unnormalized) node and edge features of one state.
///
/// Operation columns: status, neighboring machines, processing time, start
/// time, remaining operations in job, job completion time.
/// Machine columns: available time, neighboring operations, utilization.
struct FeatureTensors {
  Eigen::MatrixXd op_features;       // |O| x 6, rows in flat (job, op) order
  Eigen::MatrixXd machine_features;  // |M| x 3
  std::vector<int> edge_op;          // flat op index per remaining disjunctive edge
  std::vector<int> edge_machine;
  Eigen::VectorXd edge_features;     // processing time per edge
};

struct ScheduledOp {
  int job, op, machine;
  double start, end;
  bool operator==(const ScheduledOp&) const = default;
};

/// Partial schedule S(t).
class ScheduleState {
 public:
  explicit ScheduleState(std::shared_ptr<const ProblemInstance> instance);

  const ProblemInstance& instance() const { return *instance_; }
  const std::shared_ptr<const ProblemInstance>& instance_ptr() const { return instance_; }

  int num_ops() const { return static_cast<int>(scheduled_.size()); }
  int flat_index(int job, int op) const { return job_offset_[static_cast<std::size_t>(job)] + op; }
  int job_of(int flat) const { return flat_job_[static_cast<std::size_t>(flat)]; }
  int op_of(int flat) const { return flat - job_offset_[static_cast<std::size_t>(job_of(flat))]; }

  int step_count() const { return step_count_; }
  bool is_terminal() const { return step_count_ == num_ops(); }
  /// C(S(t)): max over jobs of the (actual or estimated) job completion time.
  double partial_makespan() const { return partial_makespan_; }

  bool is_scheduled(int flat) const { return scheduled_[static_cast<std::size_t>(flat)] != 0; }
  std::optional<int> assigned_machine(int flat) const;
  double start_time(int flat) const { return est_start_[static_cast<std::size_t>(flat)]; }
  double end_time(int flat) const { return est_end_[static_cast<std::size_t>(flat)]; }
  double job_completion(int job) const;
  double machine_available(int k) const { return machine_avail_[static_cast<std::size_t>(k)]; }
  double machine_busy(int k) const { return machine_busy_[static_cast<std::size_t>(k)]; }
  /// Machines still connected to an operation by a disjunctive edge.
  const std::vector<int>& neighbor_machines(int flat) const { return edges_[static_cast<std::size_t>(flat)]; }
  int next_op(int job) const { return next_op_[static_cast<std::size_t>(job)]; }

  /// Feasible (op, machine) pairs, sorted by (job, op, machine). Empty when terminal.
  std::vector<Action> feasible_actions() const;
  bool is_feasible(const Action& a) const;

  /// Dispatches `a` in place and returns the reward C(S(t)) - C(S(t+1)).
  /// Throws ContractViolation for infeasible actions.
  double apply(const Action& a);

  FeatureTensors extract_features() const;

  /// Requires a terminal state.
  std::vector<ScheduledOp> final_schedule() const;
  /// True makespan; requires a terminal state.
  double makespan() const;

 private:
  void propagate_job(int job);
  void refresh_partial_makespan();

  std::shared_ptr<const ProblemInstance> instance_;
  std::vector<int> job_offset_;
  std::vector<int> flat_job_;
  std::vector<char> scheduled_;
  std::vector<int> machine_of_;  // -1 when unscheduled
  std::vector<double> est_start_;
  std::vector<double> est_end_;
  std::vector<std::vector<int>> edges_;
  std::vector<double> machine_avail_;
  std::vector<double> machine_busy_;
  std::vector<int> machine_degree_;
  std::vector<int> next_op_;
  int step_count_ = 0;
  double partial_makespan_ = 0.0;
};

ScheduleState reset(std::shared_ptr<const ProblemInstance> instance);

struct StepResult {
  ScheduleState state;
  double reward;
};

/// Value-semantics transition: returns the successor state and reward.
StepResult step(const ScheduleState& state, const Action& action);

/// Independent feasibility check of a complete schedule. Returns an error
/// description, or nullopt when every operation is placed once on an eligible
/// machine with its processing time, respecting precedence and machine capacity.
std::optional<std::string> check_schedule(const ProblemInstance& inst, const std::vector<ScheduledOp>& schedule);

/// `job,op,machine,start,end` rows plus a trailing `makespan,<value>` row.
std::string schedule_to_csv(const std::vector<ScheduledOp>& schedule);

}  // namespace jsrl
