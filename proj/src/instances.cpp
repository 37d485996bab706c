#include "jsrl/instances.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "jsrl/errors.hpp"
#include "jsrl/rng.hpp"

namespace jsrl {

std::string to_string(ProblemKind kind) { return kind == ProblemKind::Jssp ? "jssp" : "fjsp"; }

ProblemKind parse_problem_kind(std::string_view text) {
  if (text == "jssp" || text == "JSSP") return ProblemKind::Jssp;
  if (text == "fjsp" || text == "FJSP") return ProblemKind::Fjsp;
  throw ParameterError("unknown problem kind '" + std::string(text) + "' (expected jssp|fjsp)");
}

double OperationSpec::mean_time() const {
  double s = 0.0;
  for (const auto& [k, p] : eligible) s += p;
  return s / static_cast<double>(eligible.size());
}

ProblemInstance::ProblemInstance(int num_machines, std::vector<Job> jobs)
    : num_machines_(num_machines), jobs_(std::move(jobs)) {
  if (num_machines_ < 1) throw ParameterError("instance needs at least one machine");
  if (jobs_.empty()) throw ParameterError("instance needs at least one job");
  for (std::size_t i = 0; i < jobs_.size(); ++i) {
    if (jobs_[i].empty()) throw ParameterError("job " + std::to_string(i) + " has no operations");
    for (const auto& op : jobs_[i]) {
      if (op.eligible.empty()) throw ParameterError("operation with no eligible machine in job " + std::to_string(i));
      for (const auto& [k, p] : op.eligible) {
        if (k < 0 || k >= num_machines_) throw ParameterError("machine index " + std::to_string(k) + " out of range");
        if (p < 1) throw ParameterError("processing time must be >= 1");
      }
    }
  }
}

int ProblemInstance::num_operations() const {
  int total = 0;
  for (const auto& j : jobs_) total += static_cast<int>(j.size());
  return total;
}

bool ProblemInstance::is_jssp() const {
  for (const auto& j : jobs_)
    for (const auto& op : j)
      if (op.eligible.size() != 1) return false;
  return true;
}

std::pair<int, int> default_ops_range(int num_machines) {
  switch (num_machines) {
    case 5: return {4, 6};
    case 6: return {5, 7};
    case 10: return {8, 12};
    default:
      throw ParameterError("no default operation-count range for " + std::to_string(num_machines) +
                           " machines; pass ops_range explicitly");
  }
}

ProblemInstance generate_jssp(int n, int m, std::uint64_t seed, int ptime_lo, int ptime_hi) {
  if (n < 1 || m < 1) throw ParameterError("generate_jssp: n and m must be >= 1");
  if (ptime_lo < 1 || ptime_hi < ptime_lo) throw ParameterError("generate_jssp: need 1 <= ptime_lo <= ptime_hi");
  Rng rng(seed);
  std::vector<Job> jobs(static_cast<std::size_t>(n));
  std::vector<int> machines(static_cast<std::size_t>(m));
  for (auto& job : jobs) {
    std::iota(machines.begin(), machines.end(), 0);
    rng.shuffle(machines);
    for (int k : machines) {
      OperationSpec op;
      op.eligible[k] = static_cast<int>(rng.uniform_int(ptime_lo, ptime_hi));
      job.push_back(std::move(op));
    }
  }
  return ProblemInstance(m, std::move(jobs));
}

ProblemInstance generate_fjsp(int n, int m, std::uint64_t seed, const FjspGenConfig& cfg) {
  if (n < 1 || m < 1) throw ParameterError("generate_fjsp: n and m must be >= 1");
  if (cfg.ops_lo < 1 || cfg.ops_hi < cfg.ops_lo) throw ParameterError("generate_fjsp: invalid ops_range");
  if (cfg.pbar_lo < 1 || cfg.pbar_hi < cfg.pbar_lo) throw ParameterError("generate_fjsp: invalid mean processing-time range");
  if (!(cfg.spread >= 0.0 && cfg.spread < 1.0)) throw ParameterError("generate_fjsp: spread must lie in [0,1)");
  Rng rng(seed);
  std::vector<Job> jobs(static_cast<std::size_t>(n));
  std::vector<int> machines(static_cast<std::size_t>(m));
  for (auto& job : jobs) {
    const auto num_ops = rng.uniform_int(cfg.ops_lo, cfg.ops_hi);
    for (std::int64_t j = 0; j < num_ops; ++j) {
      const auto count = static_cast<std::size_t>(rng.uniform_int(1, m));
      std::iota(machines.begin(), machines.end(), 0);
      rng.shuffle(machines);
      const double pbar = static_cast<double>(rng.uniform_int(cfg.pbar_lo, cfg.pbar_hi));
      OperationSpec op;
      for (std::size_t c = 0; c < count; ++c) {
        const double raw = rng.uniform((1.0 - cfg.spread) * pbar, (1.0 + cfg.spread) * pbar);
        op.eligible[machines[c]] = std::max(1, static_cast<int>(std::lround(raw)));
      }
      job.push_back(std::move(op));
    }
  }
  return ProblemInstance(m, std::move(jobs));
}

namespace {

struct Line {
  std::size_t number;
  std::vector<std::string_view> tokens;
};

// Non-empty, non-comment lines split on whitespace.
std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++number;
    pos = end + 1;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos || line[first] == '#') {
      if (end == text.size()) break;
      continue;
    }
    Line out{number, {}};
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      if (j > i) out.tokens.push_back(line.substr(i, j - i));
      i = j;
    }
    lines.push_back(std::move(out));
    if (end == text.size()) break;
  }
  return lines;
}

int to_int(std::string_view tok, std::size_t line) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("expected integer, got '" + std::string(tok) + "'", line);
  return value;
}

void check_number(std::string_view tok, std::size_t line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("expected number, got '" + std::string(tok) + "'", line);
}

std::pair<int, int> read_header(const std::vector<Line>& lines, bool allow_third) {
  if (lines.empty()) throw ParseError("empty instance file", 0);
  const Line& h = lines.front();
  const std::size_t max_tokens = allow_third ? 3 : 2;
  if (h.tokens.size() < 2 || h.tokens.size() > max_tokens)
    throw ParseError("malformed header (expected 'n m" + std::string(allow_third ? " [avg_flex]" : "") + "')", h.number);
  const int n = to_int(h.tokens[0], h.number);
  const int m = to_int(h.tokens[1], h.number);
  if (h.tokens.size() == 3) check_number(h.tokens[2], h.number);
  if (n < 1 || m < 1) throw ParseError("header requires n >= 1 and m >= 1", h.number);
  if (lines.size() < static_cast<std::size_t>(n) + 1)
    throw ParseError("expected " + std::to_string(n) + " job lines, found " + std::to_string(lines.size() - 1),
                     lines.back().number);
  if (lines.size() > static_cast<std::size_t>(n) + 1)
    throw ParseError("unexpected data after the last job line", lines[static_cast<std::size_t>(n) + 1].number);
  return {n, m};
}

int checked_time(std::string_view tok, std::size_t line) {
  const int p = to_int(tok, line);
  if (p < 1) throw ParseError("processing time must be >= 1", line);
  return p;
}

}  // namespace

ProblemInstance parse_jssp(std::string_view text) {
  const auto lines = tokenize(text);
  const auto [n, m] = read_header(lines, false);
  std::vector<Job> jobs;
  for (int i = 0; i < n; ++i) {
    const Line& l = lines[static_cast<std::size_t>(i) + 1];
    if (l.tokens.empty() || l.tokens.size() % 2 != 0)
      throw ParseError("job line must hold machine/time pairs", l.number);
    Job job;
    for (std::size_t t = 0; t < l.tokens.size(); t += 2) {
      const int k = to_int(l.tokens[t], l.number);
      if (k < 0 || k >= m) throw ParseError("machine index " + std::to_string(k) + " out of range [0," + std::to_string(m) + ")", l.number);
      OperationSpec op;
      op.eligible[k] = checked_time(l.tokens[t + 1], l.number);
      job.push_back(std::move(op));
    }
    jobs.push_back(std::move(job));
  }
  return ProblemInstance(m, std::move(jobs));
}

ProblemInstance parse_fjsp(std::string_view text) {
  const auto lines = tokenize(text);
  const auto [n, m] = read_header(lines, true);
  std::vector<Job> jobs;
  for (int i = 0; i < n; ++i) {
    const Line& l = lines[static_cast<std::size_t>(i) + 1];
    std::size_t t = 0;
    auto next = [&]() -> std::string_view {
      if (t >= l.tokens.size()) throw ParseError("job line ends early (candidate count mismatch)", l.number);
      return l.tokens[t++];
    };
    const int num_ops = to_int(next(), l.number);
    if (num_ops < 1) throw ParseError("job needs at least one operation", l.number);
    Job job;
    for (int j = 0; j < num_ops; ++j) {
      const int k = to_int(next(), l.number);
      if (k < 1 || k > m) throw ParseError("candidate count " + std::to_string(k) + " out of range [1," + std::to_string(m) + "]", l.number);
      OperationSpec op;
      for (int c = 0; c < k; ++c) {
        const int id = to_int(next(), l.number);
        if (id < 1 || id > m) throw ParseError("machine id " + std::to_string(id) + " out of range [1," + std::to_string(m) + "]", l.number);
        const int p = checked_time(next(), l.number);
        if (!op.eligible.emplace(id - 1, p).second)
          throw ParseError("machine id " + std::to_string(id) + " listed twice for one operation", l.number);
      }
      job.push_back(std::move(op));
    }
    if (t != l.tokens.size()) throw ParseError("extra tokens after the last operation (candidate count mismatch)", l.number);
    jobs.push_back(std::move(job));
  }
  return ProblemInstance(m, std::move(jobs));
}

ProblemInstance parse_instance(std::string_view text, ProblemKind kind) {
  return kind == ProblemKind::Jssp ? parse_jssp(text) : parse_fjsp(text);
}

std::string serialize_jssp(const ProblemInstance& inst) {
  if (!inst.is_jssp()) throw TypeError("serialize_jssp: instance has flexible operations");
  std::ostringstream os;
  os << inst.num_jobs() << ' ' << inst.num_machines() << '\n';
  for (const auto& job : inst.jobs()) {
    bool first = true;
    for (const auto& op : job) {
      const auto& [k, p] = *op.eligible.begin();
      os << (first ? "" : " ") << k << ' ' << p;
      first = false;
    }
    os << '\n';
  }
  return os.str();
}

std::string serialize_fjsp(const ProblemInstance& inst) {
  std::size_t candidates = 0;
  for (const auto& job : inst.jobs())
    for (const auto& op : job) candidates += op.eligible.size();
  const double avg = static_cast<double>(candidates) / inst.num_operations();
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, std::round(avg * 100.0) / 100.0);
  std::ostringstream os;
  os << inst.num_jobs() << ' ' << inst.num_machines() << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  for (const auto& job : inst.jobs()) {
    os << job.size();
    for (const auto& op : job) {
      os << ' ' << op.eligible.size();
      for (const auto& [k, p] : op.eligible) os << ' ' << (k + 1) << ' ' << p;
    }
    os << '\n';
  }
  return os.str();
}

ProblemInstance load_instance(const std::string& path, ProblemKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open instance file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_instance(ss.str(), kind);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

void save_instance(const std::string& path, const ProblemInstance& inst, ProblemKind kind) {
  const std::string text = kind == ProblemKind::Jssp ? serialize_jssp(inst) : serialize_fjsp(inst);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write instance file '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::map<std::string, double> parse_reference_csv(std::string_view text) {
  std::map<std::string, double> refs;
  const auto lines = tokenize(text);
  for (std::size_t idx = 0; idx < lines.size(); ++idx) {
    // tokenize splits on whitespace; rejoin and split on the comma.
    std::string row;
    for (std::size_t t = 0; t < lines[idx].tokens.size(); ++t) row += std::string(lines[idx].tokens[t]);
    const auto comma = row.find(',');
    if (comma == std::string::npos) throw ParseError("reference row must be 'name,makespan'", lines[idx].number);
    const std::string name = row.substr(0, comma);
    const std::string value = row.substr(comma + 1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      if (idx == 0) continue;  // header
      throw ParseError("reference makespan '" + value + "' is not a number", lines[idx].number);
    }
    refs[name] = v;
  }
  return refs;
}

}  // namespace jsrl
