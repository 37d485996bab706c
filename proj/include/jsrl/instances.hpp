#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace jsrl {

enum class ProblemKind { Jssp, Fjsp };

std::string to_string(ProblemKind kind);
ProblemKind parse_problem_kind(std::string_view text);

/// One operation: eligible machine (0-based) -> processing time (>= 1).
struct OperationSpec {
  std::map<int, int> eligible;

  double mean_time() const;
  bool operator==(const OperationSpec&) const = default;
};

using Job = std::vector<OperationSpec>;

class ProblemInstance {
 public:
  ProblemInstance() = default;
  /// Validates every invariant; throws ParameterError on violation.
  ProblemInstance(int num_machines, std::vector<Job> jobs);

  int num_machines() const { return num_machines_; }
  int num_jobs() const { return static_cast<int>(jobs_.size()); }
  const std::vector<Job>& jobs() const { return jobs_; }
  const Job& job(int i) const { return jobs_[static_cast<std::size_t>(i)]; }
  const OperationSpec& op(int i, int j) const { return jobs_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; }
  int num_operations() const;
  /// True iff every operation has exactly one eligible machine.
  bool is_jssp() const;

  bool operator==(const ProblemInstance&) const = default;

 private:
  int num_machines_ = 0;
  std::vector<Job> jobs_;
};

struct FjspGenConfig {
  int ops_lo = 4;
  int ops_hi = 6;
  int pbar_lo = 1;
  int pbar_hi = 20;
  double spread = 0.2;
};

/// Operation-count range used for the standard machine counts (5 -> [4,6],
/// 6 -> [5,7], 10 -> [8,12]). Throws ParameterError for any other count.
std::pair<int, int> default_ops_range(int num_machines);

ProblemInstance generate_jssp(int n, int m, std::uint64_t seed, int ptime_lo = 1, int ptime_hi = 99);
ProblemInstance generate_fjsp(int n, int m, std::uint64_t seed, const FjspGenConfig& cfg);

ProblemInstance parse_jssp(std::string_view text);
ProblemInstance parse_fjsp(std::string_view text);
/// Dispatches on `kind`.
ProblemInstance parse_instance(std::string_view text, ProblemKind kind);

std::string serialize_jssp(const ProblemInstance& inst);
std::string serialize_fjsp(const ProblemInstance& inst);

ProblemInstance load_instance(const std::string& path, ProblemKind kind);
void save_instance(const std::string& path, const ProblemInstance& inst, ProblemKind kind);

/// Reference-makespan CSV: `instance_name,reference_makespan`, optional header.
std::map<std::string, double> parse_reference_csv(std::string_view text);

}  // namespace jsrl
