#ifndef PLANSCHED_SIMULATOR_HPP
#define PLANSCHED_SIMULATOR_HPP

// Event-driven cluster simulator. Time is kept in integer milliseconds; all
// events sharing a timestamp are applied before one scheduling pass.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/fitting.hpp"
#include "plansched/json_io.hpp"
#include "plansched/perf_model.hpp"
#include "plansched/scheduler.hpp"
#include "plansched/trace.hpp"

namespace plansched {

using TimeMs = std::int64_t;
inline constexpr TimeMs kNever = std::numeric_limits<TimeMs>::max();

inline TimeMs to_ms(double s) { return static_cast<TimeMs>(std::llround(s * 1000.0)); }
inline double to_s(TimeMs ms) { return static_cast<double>(ms) / 1000.0; }

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

// Observed iteration times: predict() under the hidden true coefficients
// (fitted ones when no truth is given) times log-normal noise. The noise
// draw depends only on (seed, job, segment).
class GroundTruthOracle {
 public:
  GroundTruthOracle(const ModelCatalog& catalog, EnvSpec env, double sigma, std::uint64_t seed)
      : catalog_(&catalog), env_(std::move(env)), sigma_(sigma), seed_(seed) {}

  double noise_free(const std::string& model, const ExecutionPlan& plan, const Placement& pl) const {
    const auto& e = entry(model);
    const auto& p = e.true_params ? e.true_params : e.params;
    if (!p) throw Error(ErrorCode::no_fitted_model, "no coefficients for '" + model + "'");
    return predict(e.spec, plan, pl, env_, *p).t_iter;
  }

  double observe(const std::string& model, const ExecutionPlan& plan, const Placement& pl, const std::string& job,
                 int segment) const {
    const double base = noise_free(model, plan, pl);
    if (sigma_ <= 0) return base;
    const std::uint64_t s = detail::splitmix64(seed_ ^ detail::splitmix64(detail::fnv1a(job)) ^
                                               detail::splitmix64(static_cast<std::uint64_t>(segment) + 1));
    std::mt19937_64 rng(s);
    std::normal_distribution<double> z(0.0, 1.0);
    return base * std::exp(sigma_ * z(rng));
  }

 private:
  const ModelEntry& entry(const std::string& model) const {
    auto it = catalog_->find(model);
    if (it == catalog_->end()) throw Error(ErrorCode::unknown_model, "unknown model '" + model + "'");
    return it->second;
  }
  const ModelCatalog* catalog_;
  EnvSpec env_;
  double sigma_;
  std::uint64_t seed_;
};

struct SimConfig {
  PolicyKind policy = PolicyKind::Full;
  std::uint64_t seed = 1;
  int n_nodes = 4;
  double ckpt_cost_s = 78.0;
  double starvation_s = 3600.0;
  double reconfig_threshold = kReconfigThreshold;
  double noise_sigma = 0.03;
  bool online_refit = false;
  std::vector<Tenant> tenants;  // quotas; unknown tenants are unlimited
  bool keep_audit = true;
};

// One run interval of a job: resources held from start_ms, progress from
// active_from_ms (after any checkpoint-resume freeze) until end_ms.
struct Segment {
  TimeMs start_ms = 0;
  TimeMs active_from_ms = 0;
  TimeMs end_ms = -1;
  double t_iter = 0;
};

struct JobMetrics {
  std::string id;
  std::string model;
  std::string tenant;
  JobClass cls = JobClass::BestEffort;
  std::string status;  // done | unfinished | rejected
  std::string reason;  // rejection reason
  double submit_s = 0;
  double start_s = -1;
  double finish_s = -1;
  double jct_s = -1;
  double target_minibatches = 0;
  int reconfigs = 0;
  double delta_charged_s = 0;
  double train_time_s = 0;  // T
  double gpu_seconds = 0;
  double avg_throughput = 0;       // samples/s between first start and finish
  double baseline_throughput = 0;  // requested resources and plan, fitted model
  double speedup = 0;
  std::string requested_plan;
  std::string final_plan;
  std::vector<Segment> segments;
};

struct SeriesPoint {
  double t_s = 0;
  int allocated_gpus = 0;
  int queued = 0;
  int running = 0;
};

struct Violations {
  int capacity = 0;
  int sla = 0;
  int quota = 0;
  int penalty = 0;
  int total() const { return capacity + sla + quota + penalty; }
};

struct Metrics {
  std::string policy;
  std::uint64_t seed = 0;
  std::vector<JobMetrics> jobs;
  int completed = 0;
  int rejected = 0;
  int unfinished = 0;
  double avg_jct_s = 0;
  double p99_jct_s = 0;
  double makespan_s = 0;
  double gpu_hours = 0;
  int total_reconfigs = 0;
  double total_delta_s = 0;
  double total_speedup = 0;
  int events = 0;
  int refits = 0;
  Violations violations;
  std::vector<SeriesPoint> series;
  std::vector<std::string> audit;  // JSON lines
};

struct Speedup {
  std::vector<double> factors;
  double total = 0;
};

// factor = achieved / baseline per job; total = sum of factors.
inline Speedup normalized_speedup(const std::vector<double>& achieved, const std::vector<double>& baseline) {
  require(achieved.size() == baseline.size(), ErrorCode::invalid_argument, "achieved and baseline differ in length");
  Speedup s;
  for (std::size_t i = 0; i < achieved.size(); ++i) {
    require(baseline[i] > 0, ErrorCode::invalid_argument, "baseline throughput must be > 0");
    s.factors.push_back(achieved[i] / baseline[i]);
    s.total += s.factors.back();
  }
  return s;
}

// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

inline json allocation_json(const std::optional<Allocation>& a) {
  if (!a) return nullptr;
  const auto r = a->res();
  return json{{"plan", to_descriptor(a->plan)}, {"gpus", r.gpus}, {"cpus", r.cpus}, {"mem", r.mem},
              {"nodes", a->placement.nodes}};
}

inline json decision_json(const Decision& d) {
  json changes = json::array();
  for (const auto& c : d.changes)
    changes.push_back({{"job", c.job},
                       {"kind", std::string(to_string(c.kind))},
                       {"before", allocation_json(c.before)},
                       {"after", allocation_json(c.after)}});
  json moves = json::array();
  for (const auto& m : d.moves)
    moves.push_back({{"victim", m.victim},
                     {"beneficiary", m.beneficiary},
                     {"node", m.node},
                     {"type", m.type == ResourceType::Gpu ? "gpu" : "cpu"},
                     {"below_min", m.below_min},
                     {"beneficiary_slope", m.beneficiary_slope},
                     {"victim_slope", m.victim_slope}});
  return json{{"t", d.time}, {"changes", changes}, {"moves", moves}};
}

class Simulator {
 public:
  Simulator(std::vector<TraceJob> trace, ModelCatalog catalog, EnvSpec env, SimConfig cfg)
      : trace_(std::move(trace)),
        catalog_(std::move(catalog)),
        env_(std::move(env)),
        cfg_(std::move(cfg)),
        cluster_(ClusterState::uniform(env_, cfg_.n_nodes)),
        sched_(env_, catalog_,
               SchedulerConfig{cfg_.policy, cfg_.starvation_s, cfg_.reconfig_threshold},
               cfg_.n_nodes * env_.gpus_per_node),
        oracle_(catalog_, env_, cfg_.noise_sigma, cfg_.seed) {
    env_.validate();
    require(cfg_.n_nodes >= 1, ErrorCode::invalid_argument, "cluster needs at least one node");
    tenants_ = cfg_.tenants;
    for (const auto& t : trace_)
      if (!catalog_.count(t.model)) throw Error(ErrorCode::unknown_model, "trace job " + t.id + " uses unknown model '" + t.model + "'");
  }

  Metrics run() {
    std::stable_sort(trace_.begin(), trace_.end(), [](const TraceJob& a, const TraceJob& b) {
      if (a.submit_s != b.submit_s) return a.submit_s < b.submit_s;
      return a.id < b.id;
    });
    Metrics m;
    m.policy = std::string(to_string(cfg_.policy));
    m.seed = cfg_.seed;
    std::size_t next = 0;
    TimeMs now = 0;
    const TimeMs starve_ms = to_ms(cfg_.starvation_s);

    for (;;) {
      TimeMs t = kNever;
      if (next < trace_.size()) t = std::min(t, to_ms(trace_[next].submit_s));
      for (const auto& j : active_) {
        const auto& s = state_.at(j.id);
        if (j.state == JobState::Running) t = std::min(t, s.completion_ms);
        else if (j.cls == JobClass::BestEffort && !s.starve_fired)
          t = std::min(t, to_ms(j.queued_since) + starve_ms + 1);
      }
      if (t == kNever) break;
      advance(now, t);
      now = t;

      // completions
      for (auto it = active_.begin(); it != active_.end();) {
        auto& s = state_.at(it->id);
        if (it->state == JobState::Running && s.completion_ms == now) {
          finish(*it, s, now);
          it = active_.erase(it);
        } else {
          ++it;
        }
      }
      // submissions
      while (next < trace_.size() && to_ms(trace_[next].submit_s) == now) submit(trace_[next++], now);
      // starvation ticks
      for (auto& j : active_) {
        auto& s = state_.at(j.id);
        if (j.state == JobState::Queued && j.cls == JobClass::BestEffort && !s.starve_fired &&
            to_ms(j.queued_since) + starve_ms + 1 <= now)
          s.starve_fired = true;
      }

      const double now_s = to_s(now);
      Decision d = sched_.schedule(now_s, active_, cluster_, tenants_);
      apply_decision(d, active_, cluster_, tenants_);
      for (const auto& ch : d.changes) on_change(ch, now);
      if (cfg_.keep_audit && (!d.changes.empty() || !d.moves.empty())) m.audit.push_back(decision_json(d).dump());
      ++m.events;
      check_invariants(m);

      SeriesPoint p{now_s, 0, 0, 0};
      for (const auto& j : active_) {
        if (j.state == JobState::Running) {
          ++p.running;
          p.allocated_gpus += j.held().gpus;
        } else {
          ++p.queued;
        }
      }
      m.series.push_back(p);
    }

    for (const auto& j : active_) {
      auto& jm = metrics_.at(j.id);
      jm.status = "unfinished";
      jm.reconfigs = j.reconfig_count;
      jm.train_time_s = j.agg_train_time;
    }
    m.refits = refits_;
    summarize(m);
    return m;
  }

  const ModelCatalog& catalog() const { return catalog_; }

 private:
  struct SimState {
    int segment = 0;
    double t_iter = 0;  // observed, s
    TimeMs freeze_until = 0;
    TimeMs completion_ms = kNever;
    TimeMs first_start = -1;
    TimeMs busy_since = 0;
    bool started = false;
    bool starve_fired = false;
  };

  void advance(TimeMs from, TimeMs to) {
    if (to <= from) return;
    for (auto& j : active_) {
      if (j.state != JobState::Running) continue;
      auto& s = state_.at(j.id);
      const double dt = to_s(to - from);
      j.agg_train_time += dt;
      metrics_.at(j.id).gpu_seconds += dt * j.held().gpus;
      const TimeMs active = std::max<TimeMs>(0, to - std::max(from, s.freeze_until));
      j.remaining_minibatches -= to_s(active) / s.t_iter;
    }
  }

  void submit(const TraceJob& tj, TimeMs now) {
    JobMetrics jm;
    jm.id = tj.id;
    jm.model = tj.model;
    jm.tenant = tj.tenant;
    jm.cls = tj.cls;
    jm.submit_s = to_s(now);

    const auto& entry = catalog_.at(tj.model);
    Job j;
    j.id = tj.id;
    j.tenant = tj.tenant;
    j.cls = tj.cls;
    j.model = tj.model;
    j.global_batch = entry.global_batch;
    j.requested = {tj.gpus, proportional_cpus(tj.gpus, env_),
                   static_cast<std::int64_t>(tj.gpus) * env_.mem_per_node / env_.gpus_per_node};
    j.ckpt_cost = cfg_.ckpt_cost_s;
    j.submit_time = to_s(now);
    j.queued_since = to_s(now);

    auto reject = [&](const std::string& why) {
      jm.status = "rejected";
      jm.reason = why;
      metrics_[tj.id] = jm;
      order_.push_back(tj.id);
    };
    if (tj.gpus > cluster_.capacity().gpus) return reject("requests more GPUs than the cluster has");
    const auto pl = pack_placement(j.requested.gpus, j.requested.cpus, j.requested.mem, j.global_batch, env_);
    if (tj.plan) {
      if (!entry.params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + tj.model + "'");
      if (!evaluate_plan(entry.spec, *tj.plan, pl, env_, *entry.params))
        return reject("plan " + to_descriptor(*tj.plan) + " does not fit the requested resources");
      j.requested_plan = *tj.plan;
    } else {
      auto c = best_plan(entry.spec, pl, env_, entry.params);
      if (!c) return reject("no plan fits the requested resources");
      j.requested_plan = c->plan;
    }
    try {
      j.min_res = sched_.compute_min_res(j);
      jm.baseline_throughput =
          requested_throughput(entry.spec, j.global_batch, j.requested, j.requested_plan, env_, *entry.params);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::infeasible_request) throw;
      return reject(e.what());
    }
    j.target_minibatches = tj.duration_s / oracle_.noise_free(tj.model, j.requested_plan, pl);
    j.remaining_minibatches = j.target_minibatches;
    jm.target_minibatches = j.target_minibatches;
    jm.requested_plan = to_descriptor(j.requested_plan);
    metrics_[tj.id] = jm;
    order_.push_back(tj.id);
    state_[tj.id] = SimState{};
    active_.push_back(std::move(j));
  }

  void on_change(const JobChange& ch, TimeMs now) {
    Job* jp = nullptr;
    for (auto& j : active_)
      if (j.id == ch.job) jp = &j;
    Job& j = *jp;
    auto& s = state_.at(j.id);
    auto& jm = metrics_.at(j.id);
    if (!jm.segments.empty() && jm.segments.back().end_ms < 0) jm.segments.back().end_ms = now;
    if (ch.kind == ChangeKind::Preempt) {
      s.completion_ms = kNever;
      s.starve_fired = false;
      return;
    }
    // a checkpoint-resume precedes every run segment except the first
    if (s.started) {
      s.freeze_until = now + to_ms(j.ckpt_cost);
      jm.delta_charged_s += j.ckpt_cost;
    } else {
      s.freeze_until = now;
      s.first_start = now;
      jm.start_s = to_s(now);
    }
    s.started = true;
    ++s.segment;
    s.t_iter = oracle_.observe(j.model, j.current->plan, j.current->placement, j.id, s.segment);
    jm.segments.push_back({now, s.freeze_until, -1, s.t_iter});
    const double work_ms = std::max(0.0, j.remaining_minibatches) * s.t_iter * 1000.0;
    s.completion_ms = s.freeze_until + static_cast<TimeMs>(std::ceil(work_ms - 1e-6));
    if (s.completion_ms <= now) s.completion_ms = now + 1;
    if (cfg_.online_refit) refit(j, s.t_iter);
  }

  void refit(const Job& j, double observed) {
    auto& e = catalog_.at(j.model);
    if (!e.params) return;
    Observation o{j.current->plan, j.current->placement, observed};
    try {
      check_fit_inputs(e.history);
    } catch (const Error&) {
      e.history.push_back(o);
      return;
    }
    FitResult cur;
    cur.params = *e.params;
    FitOptions opts;
    opts.seed = cfg_.seed;
    opts.starts = 4;
    auto res = maybe_refit(cur, e.spec, env_, o, e.history, opts);
    e.history.push_back(o);
    if (!(res.params == *e.params)) {
      e.params = res.params;
      ++e.params_version;
      ++refits_;
    }
  }

  void finish(Job& j, SimState& s, TimeMs now) {
    auto& jm = metrics_.at(j.id);
    for (const auto& n : j.current->placement.nodes) cluster_.node(n.node).free += ResourceVector{n.gpus, n.cpus, n.mem};
    if (j.cls == JobClass::Guaranteed)
      for (auto& t : tenants_)
        if (t.id == j.tenant) t.usage -= j.min_res;
    j.remaining_minibatches = 0;
    j.state = JobState::Done;
    jm.status = "done";
    if (!jm.segments.empty()) jm.segments.back().end_ms = now;
    jm.finish_s = to_s(now);
    jm.jct_s = jm.finish_s - jm.submit_s;
    jm.reconfigs = j.reconfig_count;
    jm.train_time_s = j.agg_train_time;
    jm.final_plan = to_descriptor(j.current->plan);
    const double span = to_s(now - s.first_start);
    if (span > 0) jm.avg_throughput = j.target_minibatches * j.global_batch / span;
    if (jm.baseline_throughput > 0) jm.speedup = jm.avg_throughput / jm.baseline_throughput;
    if (!penalty_ok(j, cfg_.reconfig_threshold)) ++penalty_violations_;
    j.current.reset();
  }

  void check_invariants(Metrics& m) {
    std::map<int, ResourceVector> used;
    for (const auto& j : active_)
      if (j.current)
        for (const auto& n : j.current->placement.nodes) used[n.node] += ResourceVector{n.gpus, n.cpus, n.mem};
    for (const auto& n : cluster_.nodes) {
      const auto& f = n.free;
      const bool in_range = f.gpus >= 0 && f.cpus >= 0 && f.mem >= 0 && f.dominated_by(n.capacity);
      ResourceVector expect = n.capacity;
      expect -= used[n.id];
      if (!in_range || !(expect == f)) ++m.violations.capacity;
    }
    for (const auto& j : active_) {
      if (j.cls != JobClass::Guaranteed || !j.current) continue;
      const auto& e = catalog_.at(j.model);
      auto c = evaluate_plan(e.spec, j.current->plan, j.current->placement, env_, *e.params);
      const double target = sched_.sla_target(j);
      if (!c || c->predicted_throughput < target * (1 - 1e-12)) ++m.violations.sla;
    }
    for (const auto& t : tenants_) {
      if (!t.quota) continue;
      ResourceVector sum;
      for (const auto& j : active_)
        if (j.cls == JobClass::Guaranteed && j.current && j.tenant == t.id) sum += j.min_res;
      if (!sum.dominated_by(*t.quota) || !(sum == t.usage)) ++m.violations.quota;
    }
  }

  void summarize(Metrics& m) {
    std::vector<double> jcts;
    double first_submit = std::numeric_limits<double>::infinity();
    double last_finish = 0;
    for (const auto& id : order_) {
      auto jm = metrics_.at(id);
      if (jm.status == "done") {
        ++m.completed;
        jcts.push_back(jm.jct_s);
        last_finish = std::max(last_finish, jm.finish_s);
        m.total_speedup += jm.speedup;
      } else if (jm.status == "rejected") {
        ++m.rejected;
      } else {
        ++m.unfinished;
      }
      if (jm.status != "rejected") first_submit = std::min(first_submit, jm.submit_s);
      m.gpu_hours += jm.gpu_seconds / 3600.0;
      m.total_reconfigs += jm.reconfigs;
      m.total_delta_s += jm.delta_charged_s;
      m.jobs.push_back(std::move(jm));
    }
    if (!jcts.empty()) {
      double sum = 0;
      for (double x : jcts) sum += x;
      m.avg_jct_s = sum / static_cast<double>(jcts.size());
      m.p99_jct_s = percentile(jcts, 99.0);
      m.makespan_s = last_finish - first_submit;
    }
    m.violations.penalty = penalty_violations_;
  }

  std::vector<TraceJob> trace_;
  ModelCatalog catalog_;
  EnvSpec env_;
  SimConfig cfg_;
  ClusterState cluster_;
  Scheduler sched_;
  GroundTruthOracle oracle_;
  std::vector<Tenant> tenants_;
  std::vector<Job> active_;
  std::map<std::string, SimState> state_;
  std::map<std::string, JobMetrics> metrics_;
  std::vector<std::string> order_;
  int penalty_violations_ = 0;
  int refits_ = 0;
};

inline Metrics simulate(const std::vector<TraceJob>& trace, const ModelCatalog& catalog, const EnvSpec& env,
                        const SimConfig& cfg) {
  return Simulator(trace, catalog, env, cfg).run();
}

inline json metrics_json(const Metrics& m) {
  json jobs = json::array();
  for (const auto& j : m.jobs)
    jobs.push_back({{"id", j.id},
                    {"model", j.model},
                    {"tenant", j.tenant},
                    {"class", std::string(to_string(j.cls))},
                    {"status", j.status},
                    {"reason", j.reason},
                    {"submit_s", j.submit_s},
                    {"start_s", j.start_s},
                    {"finish_s", j.finish_s},
                    {"jct_s", j.jct_s},
                    {"target_minibatches", j.target_minibatches},
                    {"reconfigs", j.reconfigs},
                    {"delta_charged_s", j.delta_charged_s},
                    {"train_time_s", j.train_time_s},
                    {"gpu_seconds", j.gpu_seconds},
                    {"avg_throughput", j.avg_throughput},
                    {"baseline_throughput", j.baseline_throughput},
                    {"speedup", j.speedup},
                    {"requested_plan", j.requested_plan},
                    {"final_plan", j.final_plan}});
  return json{{"policy", m.policy},
              {"seed", m.seed},
              {"completed", m.completed},
              {"rejected", m.rejected},
              {"unfinished", m.unfinished},
              {"avg_jct_s", m.avg_jct_s},
              {"p99_jct_s", m.p99_jct_s},
              {"makespan_s", m.makespan_s},
              {"gpu_hours", m.gpu_hours},
              {"total_reconfigs", m.total_reconfigs},
              {"total_delta_s", m.total_delta_s},
              {"total_speedup", m.total_speedup},
              {"events", m.events},
              {"refits", m.refits},
              {"violations",
               {{"capacity", m.violations.capacity},
                {"sla", m.violations.sla},
                {"quota", m.violations.quota},
                {"penalty", m.violations.penalty}}},
              {"jobs", jobs}};
}

inline std::string series_csv(const Metrics& m) {
  std::ostringstream ss;
  ss << "t_s,allocated_gpus,queued_jobs,running_jobs\n";
  for (const auto& p : m.series)
    ss << detail::fmt(p.t_s) << "," << p.allocated_gpus << "," << p.queued << "," << p.running << "\n";
  return ss.str();
}

}  // namespace plansched

#endif
