#ifndef PLANSCHED_TRACE_HPP
#define PLANSCHED_TRACE_HPP

// Job traces: CSV load/save, synthetic generation and a Philly-style subset
// loader.
//
// CSV header: submit_s,model,gpus,duration_s,tenant,class,plan
// `plan` may be empty (scheduler-chosen); `class` is guaranteed|best_effort.

#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/plan_space.hpp"
#include "plansched/scheduler.hpp"
#include "plansched/sensitivity.hpp"

namespace plansched {

struct TraceJob {
  std::string id;
  double submit_s = 0;
  std::string model;
  int gpus = 1;
  double duration_s = 0;
  std::string tenant = "default";
  JobClass cls = JobClass::BestEffort;
  std::optional<ExecutionPlan> plan;
};

inline const char* kTraceHeader = "submit_s,model,gpus,duration_s,tenant,class,plan";

inline JobClass parse_job_class(std::string_view s) {
  if (s == "guaranteed") return JobClass::Guaranteed;
  if (s == "best_effort" || s == "best-effort" || s.empty()) return JobClass::BestEffort;
  throw Error(ErrorCode::parse_error, "unknown job class '" + std::string(s) + "'");
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& field) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error(ErrorCode::parse_error, field + ": not a number '" + s + "'");
  }
  if (pos != s.size() || !std::isfinite(v)) throw Error(ErrorCode::parse_error, field + ": not a number '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s, const std::string& field) {
  const double v = parse_double(s, field);
  if (v != std::floor(v)) throw Error(ErrorCode::parse_error, field + ": not an integer '" + s + "'");
  return static_cast<int>(v);
}

inline std::string job_id(std::size_t i) {
  std::ostringstream ss;
  ss << "j" << std::setw(4) << std::setfill('0') << i;
  return ss.str();
}

// Stable order by submit time; ids follow that order.
inline void finalize(std::vector<TraceJob>& jobs) {
  std::stable_sort(jobs.begin(), jobs.end(), [](const TraceJob& a, const TraceJob& b) { return a.submit_s < b.submit_s; });
  for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].id = job_id(i);
}

// Shortest representation that round-trips.
inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::vector<TraceJob> parse_trace(std::istream& in, const std::string& what = "trace") {
  std::vector<TraceJob> jobs;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto f = detail::split_csv(line);
    const auto where = what + " line " + std::to_string(lineno);
    if (!header) {
      if (f.size() < 6 || f[0] != "submit_s" || f[1] != "model" || f[2] != "gpus" || f[3] != "duration_s" ||
          f[4] != "tenant" || f[5] != "class" || (f.size() > 6 && f[6] != "plan"))
        throw Error(ErrorCode::parse_error, where + ": expected header '" + kTraceHeader + "'");
      header = true;
      continue;
    }
    if (f.size() < 6 || f.size() > 7) throw Error(ErrorCode::parse_error, where + ": expected 6 or 7 fields");
    try {
      TraceJob j;
      j.submit_s = detail::parse_double(f[0], "submit_s");
      j.model = f[1];
      j.gpus = detail::parse_int(f[2], "gpus");
      j.duration_s = detail::parse_double(f[3], "duration_s");
      j.tenant = f[4].empty() ? "default" : f[4];
      j.cls = parse_job_class(f[5]);
      if (f.size() == 7 && !f[6].empty()) j.plan = parse_descriptor(f[6]);
      require(j.submit_s >= 0, ErrorCode::parse_error, "submit_s must be >= 0");
      require(j.gpus >= 1, ErrorCode::parse_error, "gpus must be >= 1");
      require(j.duration_s > 0, ErrorCode::parse_error, "duration_s must be > 0");
      require(!j.model.empty(), ErrorCode::parse_error, "model is empty");
      if (j.plan)
        require(j.plan->gpus() == j.gpus, ErrorCode::parse_error,
                "plan " + to_descriptor(*j.plan) + " does not use " + std::to_string(j.gpus) + " GPUs");
      jobs.push_back(std::move(j));
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, where + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorCode::parse_error, what + ": missing header '" + kTraceHeader + "'");
  detail::finalize(jobs);
  return jobs;
}

inline std::string format_trace(const std::vector<TraceJob>& jobs) {
  std::ostringstream ss;
  ss << kTraceHeader << "\n";
  for (const auto& j : jobs)
    ss << detail::fmt(j.submit_s) << "," << j.model << "," << j.gpus << "," << detail::fmt(j.duration_s) << ","
       << j.tenant << "," << to_string(j.cls) << "," << (j.plan ? to_descriptor(*j.plan) : "") << "\n";
  return ss.str();
}

// Philly-style subset: header `submit_time,num_gpus,duration` (seconds,
// submit times may be absolute). Models are drawn from `mix` under the seed;
// submit times are shifted so the first job arrives at 0.
inline std::vector<TraceJob> parse_philly_subset(std::istream& in, const std::vector<std::string>& mix,
                                                 std::uint64_t seed, const std::string& what = "philly") {
  require(!mix.empty(), ErrorCode::invalid_argument, "model mix is empty");
  std::mt19937_64 rng(seed);
  std::vector<TraceJob> jobs;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto f = detail::split_csv(line);
    const auto where = what + " line " + std::to_string(lineno);
    if (!header) {
      if (f.size() != 3 || f[0] != "submit_time" || f[1] != "num_gpus" || f[2] != "duration")
        throw Error(ErrorCode::parse_error, where + ": expected header 'submit_time,num_gpus,duration'");
      header = true;
      continue;
    }
    if (f.size() != 3) throw Error(ErrorCode::parse_error, where + ": expected 3 fields");
    try {
      TraceJob j;
      j.submit_s = detail::parse_double(f[0], "submit_time");
      j.gpus = detail::parse_int(f[1], "num_gpus");
      j.duration_s = detail::parse_double(f[2], "duration");
      require(j.gpus >= 1, ErrorCode::parse_error, "num_gpus must be >= 1");
      require(j.duration_s > 0, ErrorCode::parse_error, "duration must be > 0");
      j.model = mix[std::uniform_int_distribution<std::size_t>(0, mix.size() - 1)(rng)];
      jobs.push_back(std::move(j));
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, where + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorCode::parse_error, what + ": missing header");
  if (!jobs.empty()) {
    double t0 = jobs.front().submit_s;
    for (const auto& j : jobs) t0 = std::min(t0, j.submit_s);
    for (auto& j : jobs) j.submit_s -= t0;
  }
  detail::finalize(jobs);
  return jobs;
}

enum class PlanAssignment { Random, BestPlan };
enum class Tenancy { Single, MultiTenant };

struct TraceSpec {
  int n_jobs = 20;
  double load_scale = 1.0;
  double mean_gap_s = 600.0;  // mean inter-arrival at load_scale 1
  std::vector<std::string> models;
  PlanAssignment plans = PlanAssignment::Random;
  Tenancy tenancy = Tenancy::Single;
  std::vector<int> gpu_choices{1, 2, 4, 8};
  std::vector<double> gpu_weights{0.4, 0.25, 0.2, 0.15};
  double min_duration_s = 1800;
  double max_duration_s = 4 * 3600;
  int max_gpus = 0;  // 0 = no cap beyond gpu_choices
};

// Deterministic under `seed`. Every random draw happens regardless of the
// plan mode and tenancy, so Random and BestPlan traces share arrival times,
// models, sizes and durations, and load_scale only rescales the gaps.
inline std::vector<TraceJob> synthesize_trace(const TraceSpec& spec, const ModelCatalog& catalog, const EnvSpec& env,
                                              std::uint64_t seed) {
  require(!spec.models.empty(), ErrorCode::invalid_argument, "model mix is empty");
  require(spec.n_jobs >= 0, ErrorCode::invalid_argument, "n_jobs must be >= 0");
  require(spec.load_scale > 0, ErrorCode::invalid_argument, "load_scale must be > 0");
  require(!spec.gpu_choices.empty() && spec.gpu_choices.size() == spec.gpu_weights.size(),
          ErrorCode::invalid_argument, "gpu_choices and gpu_weights must be non-empty and equal length");
  for (const auto& m : spec.models)
    require(catalog.count(m) > 0, ErrorCode::unknown_model, "unknown model '" + m + "'");

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<std::size_t> size(spec.gpu_weights.begin(), spec.gpu_weights.end());
  std::uniform_int_distribution<std::size_t> pick_model(0, spec.models.size() - 1);

  std::vector<TraceJob> jobs;
  double t = 0;
  for (int i = 0; i < spec.n_jobs; ++i) {
    if (i > 0) t += gap(rng) * spec.mean_gap_s / spec.load_scale;
    else gap(rng);
    TraceJob j;
    j.submit_s = std::round(t * 1000.0) / 1000.0;
    j.model = spec.models[pick_model(rng)];
    j.gpus = spec.gpu_choices[size(rng)];
    if (spec.max_gpus > 0) j.gpus = std::min(j.gpus, spec.max_gpus);
    const double u_dur = unit(rng);
    j.duration_s = std::round(std::exp(std::log(spec.min_duration_s) +
                                       u_dur * (std::log(spec.max_duration_s) - std::log(spec.min_duration_s))));
    const double u_plan = unit(rng);
    const double u_tenant = unit(rng);

    const auto& entry = catalog.at(j.model);
    const auto pl = pack_placement(j.gpus, proportional_cpus(j.gpus, env), 0, entry.global_batch, env);
    if (spec.plans == PlanAssignment::BestPlan) {
      if (auto c = best_plan(entry.spec, pl, env, entry.params)) j.plan = c->plan;
    } else {
      if (!entry.params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + j.model + "'");
      std::vector<ExecutionPlan> feasible;
      for (const auto& p : enumerate_plans(entry.spec, j.gpus, env.gpus_per_node))
        if (evaluate_plan(entry.spec, p, pl, env, *entry.params)) feasible.push_back(p);
      if (!feasible.empty())
        j.plan = feasible[std::min(feasible.size() - 1, static_cast<std::size_t>(u_plan * feasible.size()))];
    }
    if (spec.tenancy == Tenancy::MultiTenant) {
      const bool a = u_tenant < 0.5;
      j.tenant = a ? "tenant-a" : "tenant-b";
      j.cls = a ? JobClass::Guaranteed : JobClass::BestEffort;
    }
    jobs.push_back(std::move(j));
  }
  detail::finalize(jobs);
  return jobs;
}

}  // namespace plansched

#endif
