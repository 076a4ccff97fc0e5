#ifndef PLANSCHED_SCHEDULER_HPP
#define PLANSCHED_SCHEDULER_HPP

// Event-triggered co-scheduling of resources and execution plans.
//
// Full policy: privileged guaranteed jobs (min demand within the tenant's
// remaining quota) are placed first; then queued best-effort and running
// jobs are visited in descending slope order. Each visit walks the nodes,
// absorbs free GPUs/CPUs while they raise the job's curve, and reclaims single
// units from the least sensitive job that holds more than its own minimum.
// The remaining policies are simplified baselines sharing the same state.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/fitting.hpp"
#include "plansched/plan_space.hpp"
#include "plansched/sensitivity.hpp"

namespace plansched {

enum class JobState { Queued, Running, Done };

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
  }
  return "?";
}

enum class PolicyKind { Full, PlanOnly, ResourceOnly, PolicyOnly, EvenSplit, StaticGang };

inline std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Full: return "full";
    case PolicyKind::PlanOnly: return "plan-only";
    case PolicyKind::ResourceOnly: return "resource-only";
    case PolicyKind::PolicyOnly: return "policy-only";
    case PolicyKind::EvenSplit: return "even-split";
    case PolicyKind::StaticGang: return "static-gang";
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
  for (auto p : {PolicyKind::Full, PolicyKind::PlanOnly, PolicyKind::ResourceOnly, PolicyKind::PolicyOnly,
                 PolicyKind::EvenSplit, PolicyKind::StaticGang})
    if (to_string(p) == s) return p;
  throw Error(ErrorCode::invalid_argument, "unknown policy '" + std::string(s) + "'");
}

struct Allocation {
  Placement placement;  // per-node GPUs/CPUs/host memory plus the global batch
  ExecutionPlan plan;

  ResourceVector res() const { return placement.total(); }
  friend bool operator==(const Allocation&, const Allocation&) = default;
};

struct Job {
  std::string id;
  std::string tenant;
  JobClass cls = JobClass::BestEffort;
  std::string model;
  double global_batch = 0;
  ResourceVector requested;
  ExecutionPlan requested_plan;
  ResourceVector min_res;
  JobState state = JobState::Queued;
  std::optional<Allocation> current;
  double target_minibatches = 0;
  double remaining_minibatches = 0;
  double agg_train_time = 0;  // s holding resources (T)
  int reconfig_count = 0;     // N
  double ckpt_cost = 78.0;    // delta, s
  double submit_time = 0;
  double queued_since = 0;

  ResourceVector held() const { return current ? current->res() : ResourceVector{}; }
};

struct Tenant {
  std::string id;
  std::optional<ResourceVector> quota;  // nullopt = unlimited
  ResourceVector usage;                 // sum of running guaranteed jobs' min_res
};

struct NodeState {
  int id = 0;
  ResourceVector capacity;
  ResourceVector free;
};

struct ClusterState {
  std::vector<NodeState> nodes;

  static ClusterState uniform(const EnvSpec& env, int n_nodes) {
    ClusterState c;
    for (int i = 0; i < n_nodes; ++i) {
      ResourceVector cap{env.gpus_per_node, env.cpus_per_node, env.mem_per_node};
      c.nodes.push_back({i, cap, cap});
    }
    return c;
  }
  ResourceVector capacity() const {
    ResourceVector r;
    for (const auto& n : nodes) r += n.capacity;
    return r;
  }
  ResourceVector free() const {
    ResourceVector r;
    for (const auto& n : nodes) r += n.free;
    return r;
  }
  NodeState& node(int id) {
    for (auto& n : nodes)
      if (n.id == id) return n;
    throw Error(ErrorCode::invalid_placement, "unknown node " + std::to_string(id));
  }
};

struct ModelEntry {
  ModelSpec spec;
  std::optional<PerfParams> params;       // fitted, used for decisions
  std::optional<PerfParams> true_params;  // hidden ground truth for simulation
  int params_version = 0;
  double global_batch = 16;
  std::vector<Observation> history;       // fit inputs, extended by online refits
};

using ModelCatalog = std::map<std::string, ModelEntry>;

struct ShrinkMove {
  std::string victim;
  std::string beneficiary;
  int node = 0;
  ResourceType type = ResourceType::Gpu;
  bool below_min = false;  // permitted because the beneficiary was under its minimum
  double beneficiary_slope = 0;
  double victim_slope = 0;
};

enum class ChangeKind { Start, Reconfigure, Preempt };

inline std::string_view to_string(ChangeKind c) {
  switch (c) {
    case ChangeKind::Start: return "start";
    case ChangeKind::Reconfigure: return "reconfigure";
    case ChangeKind::Preempt: return "preempt";
  }
  return "?";
}

struct JobChange {
  std::string job;
  ChangeKind kind = ChangeKind::Start;
  std::optional<Allocation> before;
  std::optional<Allocation> after;
};

struct Decision {
  double time = 0;
  std::vector<JobChange> changes;
  std::vector<ShrinkMove> moves;
};

inline constexpr double kReconfigThreshold = 0.97;

// True iff `candidate` differs from the running allocation and one more
// checkpoint-resume still keeps (T - (N+1) delta) / T at or above threshold.
inline bool should_reconfigure(const Job& job, const std::optional<Allocation>& candidate,
                               double threshold = kReconfigThreshold) {
  if (candidate == job.current) return false;
  const double T = job.agg_train_time;
  if (T <= 0) return false;
  return (T - (job.reconfig_count + 1) * job.ckpt_cost) / T >= threshold;
}

inline bool penalty_ok(const Job& job, double threshold = kReconfigThreshold) {
  if (job.reconfig_count == 0) return true;
  const double T = job.agg_train_time;
  return T > 0 && (T - job.reconfig_count * job.ckpt_cost) / T >= threshold;
}

// Reserves `host_bytes` across the placement's GPU nodes in proportion to
// their GPU share. All-or-nothing: on failure neither cluster nor placement
// is modified.
inline bool alloc_mem(Placement& placement, double host_bytes, ClusterState& cluster) {
  const int g = placement.gpus();
  const auto need = static_cast<std::int64_t>(std::ceil(host_bytes));
  std::vector<std::int64_t> share(placement.nodes.size(), 0);
  std::int64_t left = need;
  int last = -1;
  for (std::size_t i = 0; i < placement.nodes.size(); ++i)
    if (placement.nodes[i].gpus > 0 || g == 0) last = static_cast<int>(i);
  if (need > 0 && last < 0) return false;
  for (std::size_t i = 0; i < placement.nodes.size(); ++i) {
    const auto& n = placement.nodes[i];
    if (static_cast<int>(i) == last) share[i] = left;
    else if (g > 0) share[i] = need * n.gpus / g;
    left -= share[i];
  }
  for (std::size_t i = 0; i < placement.nodes.size(); ++i)
    if (share[i] > cluster.node(placement.nodes[i].node).free.mem) return false;
  for (std::size_t i = 0; i < placement.nodes.size(); ++i) {
    cluster.node(placement.nodes[i].node).free.mem -= share[i];
    placement.nodes[i].mem = share[i];
  }
  return true;
}

struct SchedulerConfig {
  PolicyKind policy = PolicyKind::Full;
  double starvation_threshold = 3600.0;  // s of queueing before a best-effort job is promoted
  double reconfig_threshold = kReconfigThreshold;
};

class Scheduler {
 public:
  Scheduler(EnvSpec env, const ModelCatalog& catalog, SchedulerConfig cfg = {}, int total_gpus = 0)
      : env_(std::move(env)), catalog_(&catalog), cfg_(cfg), total_gpus_(total_gpus) {}

  const SchedulerConfig& config() const { return cfg_; }
  const EnvSpec& env() const { return env_; }
  void set_total_gpus(int g) { total_gpus_ = g; }

  const ModelEntry& model(const Job& j) const {
    auto it = catalog_->find(j.model);
    if (it == catalog_->end()) throw Error(ErrorCode::unknown_model, "unknown model '" + j.model + "'");
    return it->second;
  }

  // Plans a job may use under the configured policy.
  PlanFilter filter_for(const Job& j) const {
    const auto req = j.requested_plan;
    switch (cfg_.policy) {
      case PolicyKind::ResourceOnly:
        return [req](const ExecutionPlan& p) {
          return p.kind == req.kind && p.tp == req.tp && p.pp == req.pp && p.ga_steps == req.ga_steps &&
                 p.grad_ckpt == req.grad_ckpt && p.micro_batches == req.micro_batches;
        };
      case PolicyKind::PolicyOnly:
      case PolicyKind::StaticGang:
        return [req](const ExecutionPlan& p) { return p == req; };
      default:
        return {};
    }
  }

  std::string filter_key(const Job& j) const {
    switch (cfg_.policy) {
      case PolicyKind::ResourceOnly: {
        auto fam = j.requested_plan;
        fam.dp = 0;
        return "family:" + to_descriptor(fam);
      }
      case PolicyKind::PolicyOnly:
      case PolicyKind::StaticGang:
        return "fixed:" + to_descriptor(j.requested_plan);
      default:
        return "";
    }
  }

  ResourceVector compute_min_res(const Job& j) const {
    const auto& m = model(j);
    return min_res(m.spec, j.global_batch, j.cls, j.requested, j.requested_plan, env_, m.params, filter_for(j));
  }

  // Throughput the SLA promises a guaranteed job.
  double sla_target(const Job& j) const {
    const auto& m = model(j);
    if (!m.params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + j.model + "'");
    auto key = std::make_tuple(j.model, m.params_version, j.global_batch, to_descriptor(j.requested_plan),
                               j.requested.gpus, j.requested.cpus, j.requested.mem);
    if (auto it = sla_cache_.find(key); it != sla_cache_.end()) return it->second;
    const double t = requested_throughput(m.spec, j.global_batch, j.requested, j.requested_plan, env_, *m.params);
    sla_cache_.emplace(key, t);
    return t;
  }

  const SensitivityCurve& gpu_curve(const Job& j) const { return curve(j, ResourceAxis::Gpu, 0); }
  const SensitivityCurve& cpu_curve(const Job& j, int gpus) const { return curve(j, ResourceAxis::Cpu, gpus); }

  double job_slope(const Job& j, ResourceType type, const ResourceVector& at) const {
    if (type == ResourceType::Gpu) return slope(gpu_curve(j), at.gpus);
    if (at.gpus <= 0) return 0.0;
    return slope(cpu_curve(j, at.gpus), at.cpus);
  }

  // Curve drop from releasing one unit of `type`; what a shrink victim gives up.
  double job_loss(const Job& j, ResourceType type, const ResourceVector& at) const {
    if (type == ResourceType::Gpu) return marginal_loss(gpu_curve(j), at.gpus);
    if (at.gpus <= 0) return 0.0;
    return marginal_loss(cpu_curve(j, at.gpus), at.cpus);
  }

  // Best plan on an exact placement under this job's plan filter.
  std::optional<PlanCandidate> plan_on(const Job& j, const Placement& pl) const {
    const auto& m = model(j);
    return best_plan(m.spec, pl, env_, m.params, filter_for(j));
  }

  Decision schedule(double now, const std::vector<Job>& jobs, const ClusterState& cluster,
                    const std::vector<Tenant>& tenants) const {
    Work w{jobs, cluster, tenants, {}, {}, {}, now};
    for (std::size_t i = 0; i < w.jobs.size(); ++i) w.index[w.jobs[i].id] = i;
    switch (cfg_.policy) {
      case PolicyKind::EvenSplit: run_even_split(w); break;
      case PolicyKind::StaticGang: run_static_gang(w); break;
      default: run_policy(w); break;
    }
    Decision d;
    d.time = now;
    d.moves = std::move(w.moves);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto& before = jobs[i].current;
      const auto& after = w.jobs[i].current;
      if (before == after) continue;
      JobChange ch{jobs[i].id, ChangeKind::Reconfigure, before, after};
      if (!before) ch.kind = ChangeKind::Start;
      else if (!after) ch.kind = ChangeKind::Preempt;
      d.changes.push_back(std::move(ch));
    }
    return d;
  }

  // Among jobs holding `type` on `node_id` above their minimum, the one whose
  // last unit is worth least (ties: smallest id). Used by schedule_job's reclaim loop.
  std::optional<std::string> lowest_slope_over_min(int node_id, ResourceType type, const std::vector<Job>& jobs,
                                                   const std::string& exclude = {}) const {
    std::optional<std::string> best;
    double best_slope = 0;
    for (const auto& v : jobs) {
      if (v.id == exclude || !v.current || v.state != JobState::Running) continue;
      int here = 0;
      for (const auto& n : v.current->placement.nodes)
        if (n.node == node_id) here += type == ResourceType::Gpu ? n.gpus : n.cpus;
      if (here <= 0) continue;
      const auto held = v.held();
      if (held.get(type) <= v.min_res.get(type)) continue;
      const double s = job_loss(v, type, held);
      if (!best || s < best_slope || (s == best_slope && v.id < *best)) {
        best = v.id;
        best_slope = s;
      }
    }
    return best;
  }

 private:
  struct Work {
    std::vector<Job> jobs;
    ClusterState cluster;
    std::vector<Tenant> tenants;
    std::map<std::string, std::size_t> index;
    std::vector<ShrinkMove> moves;
    std::set<std::string> touched;  // allocation already changed in this event
    double now = 0;

    Job& job(const std::string& id) { return jobs[index.at(id)]; }
  };

  using CurveKey = std::tuple<std::string, int, double, int, int, std::string>;

  const SensitivityCurve& curve(const Job& j, ResourceAxis axis, int gpus) const {
    const auto& m = model(j);
    CurveKey key{j.model, m.params_version, j.global_batch, static_cast<int>(axis), gpus, filter_key(j)};
    auto it = curves_.find(key);
    if (it == curves_.end()) {
      const int cap = axis == ResourceAxis::Gpu ? std::max(total_gpus_, env_.gpus_per_node) : env_.cpus_per_node;
      ResourceVector ctx{gpus, 0, 0};
      it = curves_.emplace(key, build_curve(j.model, m.spec, j.global_batch, axis, ctx, cap, env_, m.params,
                                            filter_for(j)))
               .first;
    }
    return it->second;
  }

  // Whether a change to job `j` (as it stood when the event began) is allowed.
  bool may_change(const Work& w, const Job& j) const {
    if (w.touched.count(j.id)) return true;
    if (j.state != JobState::Running || !j.current) return true;
    const double T = j.agg_train_time;
    return T > 0 && (T - (j.reconfig_count + 1) * j.ckpt_cost) / T >= cfg_.reconfig_threshold;
  }

  bool starving(const Work& w, const Job& j) const {
    return j.state == JobState::Queued && j.cls == JobClass::BestEffort &&
           w.now - j.queued_since > cfg_.starvation_threshold;
  }

  // Minimum that the reclaim loop defends. A starving best-effort job claims
  // the smallest GPU count on which it can run at all.
  ResourceVector effective_min(const Work& w, const Job& j) const {
    if (!starving(w, j)) return j.min_res;
    const auto& c = gpu_curve(j);
    for (const auto& p : c.points)
      if (p.valid) return {p.amount, 0, 0};
    return j.min_res;
  }

  // Per-node holding of one job during the search.
  using Holding = std::map<int, NodeShare>;

  static Holding holding_of(const Job& j) {
    Holding h;
    if (j.current)
      for (const auto& n : j.current->placement.nodes) h[n.node] = n;
    return h;
  }

  static ResourceVector total(const Holding& h) {
    ResourceVector r;
    for (const auto& [id, n] : h) r += ResourceVector{n.gpus, n.cpus, n.mem};
    return r;
  }

  // Rank layout order: larger GPU shares first so TP groups stay on one node.
  static Placement to_placement(const Holding& h, double batch) {
    Placement pl;
    pl.global_batch = batch;
    for (const auto& [id, n] : h)
      if (n.gpus > 0 || n.cpus > 0 || n.mem > 0) pl.nodes.push_back(n);
    std::stable_sort(pl.nodes.begin(), pl.nodes.end(), [](const NodeShare& a, const NodeShare& b) {
      if (a.gpus != b.gpus) return a.gpus > b.gpus;
      return a.node < b.node;
    });
    return pl;
  }

  struct Trimmed {
    Placement placement;  // GPUs/CPUs actually kept, memory not yet reserved
    PlanCandidate cand;
  };

  // Best plan over the holding and its sub-placements (GPUs dropped from the
  // smallest shares first), never below min_gpus. Ties keep fewer GPUs.
  std::optional<Trimmed> trim_and_plan(const Job& j, const Holding& h, int min_gpus, int min_cpus = 0) const {
    Placement full = to_placement(h, j.global_batch);
    for (auto& n : full.nodes) n.mem = 0;
    std::optional<Trimmed> best;
    Placement cur = full;
    for (int g = cur.gpus(); g >= std::max(min_gpus, 1); --g) {
      if (g < cur.gpus()) {
        // drop one GPU from the smallest non-empty share (last in layout order)
        for (auto it = cur.nodes.rbegin(); it != cur.nodes.rend(); ++it)
          if (it->gpus > 0) {
            --it->gpus;
            if (it->gpus == 0) it->cpus = 0;
            break;
          }
        std::stable_sort(cur.nodes.begin(), cur.nodes.end(), [](const NodeShare& a, const NodeShare& b) {
          if (a.gpus != b.gpus) return a.gpus > b.gpus;
          return a.node < b.node;
        });
      }
      Placement trial = cur;
      trial.nodes.erase(std::remove_if(trial.nodes.begin(), trial.nodes.end(),
                                       [](const NodeShare& n) { return n.gpus == 0; }),
                        trial.nodes.end());
      if (trial.total().cpus < min_cpus) continue;
      auto cand = plan_on(j, trial);
      if (cand && (!best || cand->predicted_throughput >= best->cand.predicted_throughput))
        best = Trimmed{trial, *cand};
    }
    return best;
  }

  double plan_on_throughput(const Job& j, const Allocation& a) const {
    const auto& m = model(j);
    if (!m.params) return 0.0;
    auto cand = evaluate_plan(m.spec, a.plan, a.placement, env_, *m.params);
    return cand ? cand->predicted_throughput : 0.0;
  }

  // Releases everything `j` holds back to the cluster.
  static void release(Work& w, Job& j) {
    if (!j.current) return;
    for (const auto& n : j.current->placement.nodes) w.cluster.node(n.node).free += ResourceVector{n.gpus, n.cpus, n.mem};
    j.current.reset();
  }

  // Re-selects the plan of a job whose holding changed and reserves memory.
  // Returns false when the job cannot run on what it holds.
  bool replan(Work& w, Job& j, const Holding& h, int min_gpus) const {
    // memory of the old allocation is given back before re-reserving
    for (const auto& [id, n] : h) w.cluster.node(id).free.mem += n.mem;
    for (const auto& [id, n] : h) {
      w.cluster.node(id).free.gpus += n.gpus;
      w.cluster.node(id).free.cpus += n.cpus;
    }
    j.current.reset();
    auto tr = trim_and_plan(j, h, min_gpus, j.min_res.cpus);
    if (!tr) return false;
    if (j.cls == JobClass::Guaranteed && tr->cand.predicted_throughput < sla_target(j)) return false;
    Placement pl = tr->placement;
    for (const auto& n : pl.nodes) {
      auto& node = w.cluster.node(n.node);
      if (node.free.gpus < n.gpus || node.free.cpus < n.cpus) return false;
    }
    const double host = std::max(tr->cand.host_mem_est, static_cast<double>(j.min_res.mem));
    if (!alloc_mem(pl, host, w.cluster)) return false;
    for (const auto& n : pl.nodes) {
      auto& node = w.cluster.node(n.node);
      node.free.gpus -= n.gpus;
      node.free.cpus -= n.cpus;
    }
    j.current = Allocation{pl, tr->cand.plan};
    j.state = JobState::Running;
    return true;
  }

  // Whether taking one unit of `type` on `node` from guaranteed job `v` keeps
  // its SLA satisfiable.
  bool guaranteed_can_lose(const Job& v, int node, ResourceType type) const {
    auto h = holding_of(v);
    auto& share = h[node];
    if (type == ResourceType::Gpu) {
      --share.gpus;
      if (share.gpus == 0) share.cpus = 0;
    } else {
      --share.cpus;
    }
    auto tr = trim_and_plan(v, h, v.min_res.gpus, v.min_res.cpus);
    return tr && tr->cand.predicted_throughput >= sla_target(v);
  }

  std::optional<std::string> pick_victim(const Work& w, int node_id, ResourceType type, const std::string& exclude) const {
    std::optional<std::string> best;
    double best_slope = 0;
    for (const auto& v : w.jobs) {
      if (v.id == exclude || !v.current || v.state != JobState::Running) continue;
      int here = 0;
      for (const auto& n : v.current->placement.nodes)
        if (n.node == node_id) here += type == ResourceType::Gpu ? n.gpus : n.cpus;
      if (here <= 0) continue;
      const auto held = v.held();
      if (held.get(type) <= v.min_res.get(type)) continue;
      if (!may_change(w, v)) continue;
      if (v.cls == JobClass::Guaranteed && !guaranteed_can_lose(v, node_id, type)) continue;
      const double s = job_loss(v, type, held);
      if (!best || s < best_slope || (s == best_slope && v.id < *best)) {
        best = v.id;
        best_slope = s;
      }
    }
    return best;
  }

  // Smallest extra amount in [0, avail] reaching the curve maximum from `cur`.
  // When the curve keeps rising past cur + avail everything is taken; the
  // final trim gives back what the chosen plan does not use.
  static int useful_take(const SensitivityCurve& c, int cur, int avail) {
    int take = 0;
    double best = c.throughput(cur);
    for (int t = 1; t <= avail; ++t) {
      const double v = c.throughput(cur + t);
      if (v > best) {
        best = v;
        take = t;
      }
    }
    if (avail > 0 && slope(c, cur + avail) > 0) return avail;
    return take;
  }

  // ScheduleJob. Commits into `w` on success; leaves `w` untouched otherwise.
  bool schedule_job(Work& w, const std::string& id) const {
    const Work saved = w;
    if (!schedule_job_impl(w, id)) {
      w = saved;
      return false;
    }
    return true;
  }

  bool schedule_job_impl(Work& w, const std::string& id) const {
    {
      Job& j0 = w.job(id);
      if (!may_change(w, j0)) return false;
    }
    const bool fixed = cfg_.policy == PolicyKind::PlanOnly || cfg_.policy == PolicyKind::PolicyOnly;
    if (fixed) return schedule_fixed(w, id);

    const ResourceVector jmin = effective_min(w, w.job(id));
    // a running job only moves for a strictly better allocation
    std::optional<double> before_tput;
    if (w.job(id).current) before_tput = plan_on_throughput(w.job(id), *w.job(id).current);
    Holding h = holding_of(w.job(id));
    // the job's own memory is re-reserved after planning
    for (auto& [nid, n] : h) {
      w.cluster.node(nid).free.mem += n.mem;
      n.mem = 0;
    }
    if (w.job(id).current)
      for (auto& n : w.job(id).current->placement.nodes) n.mem = 0;

    std::vector<int> order;
    for (const auto& n : w.cluster.nodes) order.push_back(n.id);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const auto& na = w.cluster.node(a);
      const auto& nb = w.cluster.node(b);
      if (na.free.gpus != nb.free.gpus) return na.free.gpus > nb.free.gpus;
      return a < b;
    });

    std::set<std::string> victims;
    auto sync = [&](Job& j) {
      // mirror the holding into the job so slope queries see it
      Allocation a;
      a.placement = to_placement(h, j.global_batch);
      a.plan = j.current ? j.current->plan : j.requested_plan;
      j.current = a;
    };

    for (int nid : order) {
      auto& node = w.cluster.node(nid);
      Job& j = w.job(id);
      auto& mine = h[nid];
      mine.node = nid;

      // absorb free GPUs while they raise the curve
      {
        const int cur = total(h).gpus;
        int take = useful_take(gpu_curve(j), cur, node.free.gpus);
        if (cur + take < jmin.gpus) take = std::min(node.free.gpus, jmin.gpus - cur);
        node.free.gpus -= take;
        mine.gpus += take;
      }
      // reclaim GPUs
      for (;;) {
        auto vid = pick_victim(w, nid, ResourceType::Gpu, id);
        if (!vid) break;
        sync(w.job(id));
        Job& v = w.job(*vid);
        const double js = job_slope(w.job(id), ResourceType::Gpu, total(h));
        const double vs = job_loss(v, ResourceType::Gpu, v.held());
        const bool below = total(h).gpus < jmin.gpus;
        if (!(js > vs || below)) break;
        take_unit(v, nid, ResourceType::Gpu);
        mine.gpus += 1;
        victims.insert(v.id);
        w.touched.insert(v.id);
        w.moves.push_back({v.id, id, nid, ResourceType::Gpu, !(js > vs), js, vs});
      }
      if (mine.gpus > 0) {
        // CPUs: node-proportional share, more while the CPU curve rises
        const auto tot = total(h);
        const int want_prop = std::max(0, proportional_cpus(mine.gpus, env_) - mine.cpus);
        const int want_curve = useful_take(cpu_curve(j, tot.gpus), tot.cpus, node.free.cpus);
        const int want_min = std::max(0, jmin.cpus - tot.cpus);
        const int take = std::min(node.free.cpus, std::max({want_prop, want_curve, want_min}));
        node.free.cpus -= take;
        mine.cpus += take;
        for (;;) {
          auto vid = pick_victim(w, nid, ResourceType::Cpu, id);
          if (!vid) break;
          sync(w.job(id));
          Job& v = w.job(*vid);
          const double js = job_slope(w.job(id), ResourceType::Cpu, total(h));
          const double vs = job_loss(v, ResourceType::Cpu, v.held());
          const bool below = total(h).cpus < jmin.cpus;
          if (!(js > vs || below)) break;
          take_unit(v, nid, ResourceType::Cpu);
          mine.cpus += 1;
          victims.insert(v.id);
          w.touched.insert(v.id);
          w.moves.push_back({v.id, id, nid, ResourceType::Cpu, !(js > vs), js, vs});
        }
      }
      sync(w.job(id));
    }

    Job& j = w.job(id);
    const auto got = total(h);
    if (got.gpus < jmin.gpus || got.cpus < jmin.cpus || got.gpus == 0) return false;

    if (!replan(w, j, h, std::max(jmin.gpus, 1))) return false;
    if (before_tput) {
      const auto now_tput = plan_on_throughput(j, *j.current);
      if (!(now_tput > *before_tput) && total(holding_of(j)).gpus >= jmin.gpus) return false;
    }
    w.touched.insert(id);

    for (const auto& vid : victims) {
      Job& v = w.job(vid);
      if (!v.current) continue;
      Holding vh = holding_of(v);
      if (total(vh).gpus == 0) {
        if (v.cls == JobClass::Guaranteed) return false;
        preempt(w, v);
        continue;
      }
      if (!replan(w, v, vh, std::max(v.min_res.gpus, 1))) {
        if (v.cls == JobClass::Guaranteed) return false;
        preempt(w, v);
      }
    }
    return true;
  }

  // Moves one unit of `type` on `node` out of v's allocation. The unit goes
  // to the beneficiary's holding, not to the free pool.
  static void take_unit(Job& v, int node, ResourceType type) {
    auto& nodes = v.current->placement.nodes;
    for (auto& n : nodes)
      if (n.node == node) {
        if (type == ResourceType::Gpu) {
          --n.gpus;
        } else {
          --n.cpus;
        }
        break;
      }
  }

  static void preempt(Work& w, Job& v) {
    release(w, v);
    v.state = JobState::Queued;
    v.queued_since = w.now;
  }

  // Fixed-resource variants: exactly the requested GPUs from free capacity.
  bool schedule_fixed(Work& w, const std::string& id) const {
    Job& j = w.job(id);
    if (j.current) return false;
    auto pl = find_free_placement(w.cluster, j.requested.gpus, j.requested.cpus, j.global_batch);
    if (!pl) return false;
    auto cand = plan_on(j, *pl);
    if (!cand) return false;
    if (j.cls == JobClass::Guaranteed && cand->predicted_throughput < sla_target(j)) return false;
    return commit(w, j, *pl, *cand);
  }

  bool commit(Work& w, Job& j, Placement pl, const PlanCandidate& cand) const {
    const double host = std::max(cand.host_mem_est, static_cast<double>(j.min_res.mem));
    for (auto& n : pl.nodes) n.mem = 0;
    if (!alloc_mem(pl, host, w.cluster)) return false;
    for (const auto& n : pl.nodes) {
      auto& node = w.cluster.node(n.node);
      node.free.gpus -= n.gpus;
      node.free.cpus -= n.cpus;
    }
    j.current = Allocation{pl, cand.plan};
    j.state = JobState::Running;
    w.touched.insert(j.id);
    return true;
  }

  // Best fit on one node when possible, else greedy over nodes by free GPUs.
  // CPUs follow the GPUs proportionally, capped by what is free.
  std::optional<Placement> find_free_placement(const ClusterState& c, int gpus, int cpus, double batch) const {
    if (gpus <= 0) return std::nullopt;
    const NodeState* fit = nullptr;
    for (const auto& n : c.nodes)
      if (n.free.gpus >= gpus && (!fit || n.free.gpus < fit->free.gpus)) fit = &n;
    std::vector<std::pair<int, int>> picks;  // node, gpus
    if (fit) {
      picks.push_back({fit->id, gpus});
    } else {
      std::vector<const NodeState*> order;
      for (const auto& n : c.nodes) order.push_back(&n);
      std::stable_sort(order.begin(), order.end(),
                       [](const NodeState* a, const NodeState* b) { return a->free.gpus > b->free.gpus; });
      int left = gpus;
      for (const auto* n : order) {
        if (left == 0) break;
        const int take = std::min(left, n->free.gpus);
        if (take > 0) picks.push_back({n->id, take});
        left -= take;
      }
      if (left > 0) return std::nullopt;
    }
    Placement pl;
    pl.global_batch = batch;
    int cpu_left = cpus;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto& node = *std::find_if(c.nodes.begin(), c.nodes.end(), [&](const NodeState& n) { return n.id == picks[i].first; });
      int want = i + 1 == picks.size() ? cpu_left : static_cast<int>(static_cast<std::int64_t>(cpus) * picks[i].second / gpus);
      const int got = std::min(want, node.free.cpus);
      cpu_left -= want;
      pl.nodes.push_back({picks[i].first, picks[i].second, got, 0});
    }
    return pl;
  }

  void run_policy(Work& w) const {
    // privileged: queued guaranteed jobs whose minimum fits the tenant's remaining quota
    std::vector<std::string> privileged;
    for (const auto& j : w.jobs)
      if (j.state == JobState::Queued && j.cls == JobClass::Guaranteed) privileged.push_back(j.id);
    std::stable_sort(privileged.begin(), privileged.end(), [&](const std::string& a, const std::string& b) {
      const auto& ja = w.job(a);
      const auto& jb = w.job(b);
      if (ja.submit_time != jb.submit_time) return ja.submit_time < jb.submit_time;
      return a < b;
    });
    for (const auto& id : privileged) {
      Tenant* t = find_tenant(w, w.job(id).tenant);
      const auto& need = w.job(id).min_res;
      if (t && t->quota && !(t->usage + need).dominated_by(*t->quota)) continue;
      if (schedule_job(w, id) && t) t->usage += need;
    }

    struct Key {
      bool starving;
      double queued_since;
      double gpu_slope;
      double cpu_slope;
      std::string id;
    };
    std::vector<Key> keys;
    for (const auto& j : w.jobs) {
      const bool eligible = (j.state == JobState::Queued && j.cls == JobClass::BestEffort) ||
                            (j.state == JobState::Running && j.current);
      if (!eligible) continue;
      const auto held = j.held();
      keys.push_back({starving(w, j), j.queued_since, job_slope(j, ResourceType::Gpu, held),
                      job_slope(j, ResourceType::Cpu, held), j.id});
    }
    std::stable_sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
      if (a.starving != b.starving) return a.starving;
      if (a.starving && a.queued_since != b.queued_since) return a.queued_since < b.queued_since;
      if (a.gpu_slope != b.gpu_slope) return a.gpu_slope > b.gpu_slope;
      if (a.cpu_slope != b.cpu_slope) return a.cpu_slope > b.cpu_slope;
      return a.id < b.id;
    });
    for (const auto& k : keys) {
      const Job& j = w.job(k.id);
      if (j.state == JobState::Queued && j.cls == JobClass::Guaranteed) continue;
      schedule_job(w, k.id);
    }
  }

  static Tenant* find_tenant(Work& w, const std::string& id) {
    for (auto& t : w.tenants)
      if (t.id == id) return &t;
    return nullptr;
  }

  // Equal GPU shares for every active job, best plans on each share.
  void run_even_split(Work& w) const {
    std::vector<std::string> active;
    for (const auto& j : w.jobs)
      if (j.state == JobState::Queued || j.state == JobState::Running) active.push_back(j.id);
    if (active.empty()) return;
    std::stable_sort(active.begin(), active.end(), [&](const std::string& a, const std::string& b) {
      const auto& ja = w.job(a);
      const auto& jb = w.job(b);
      if (ja.submit_time != jb.submit_time) return ja.submit_time < jb.submit_time;
      return a < b;
    });
    const int total_gpus = w.cluster.capacity().gpus;
    const int share = std::max(1, total_gpus / static_cast<int>(active.size()));
    // shrink first so growing jobs can find room
    for (const auto& id : active) {
      Job& j = w.job(id);
      if (!j.current || j.held().gpus <= share || !may_change(w, j)) continue;
      const auto old = j.current;
      release(w, j);
      if (!place_even(w, j, share)) restore(w, j, *old);
    }
    for (const auto& id : active) {
      Job& j = w.job(id);
      if (j.current) {
        if (j.held().gpus >= share || !may_change(w, j)) continue;
        const auto old = j.current;
        release(w, j);
        if (!place_even(w, j, share)) restore(w, j, *old);
        continue;
      }
      place_even(w, j, share);
    }
  }

  bool place_even(Work& w, Job& j, int share) const {
    const int avail = std::min(share, w.cluster.free().gpus);
    for (int g = avail; g >= 1; --g) {
      auto pl = find_free_placement(w.cluster, g, proportional_cpus(g, env_), j.global_batch);
      if (!pl) continue;
      Holding h;
      for (const auto& n : pl->nodes) h[n.node] = n;
      auto tr = trim_and_plan(j, h, 1);
      if (!tr) continue;
      return commit(w, j, tr->placement, tr->cand);
    }
    return false;
  }

  static void restore(Work& w, Job& j, const Allocation& a) {
    for (const auto& n : a.placement.nodes) w.cluster.node(n.node).free -= ResourceVector{n.gpus, n.cpus, n.mem};
    j.current = a;
    j.state = JobState::Running;
  }

  // Strict FIFO gang scheduling with the requested resources and plan.
  void run_static_gang(Work& w) const {
    std::vector<std::string> queue;
    for (const auto& j : w.jobs)
      if (j.state == JobState::Queued) queue.push_back(j.id);
    std::stable_sort(queue.begin(), queue.end(), [&](const std::string& a, const std::string& b) {
      const auto& ja = w.job(a);
      const auto& jb = w.job(b);
      if (ja.submit_time != jb.submit_time) return ja.submit_time < jb.submit_time;
      return a < b;
    });
    for (const auto& id : queue) {
      Job& j = w.job(id);
      auto pl = find_free_placement(w.cluster, j.requested.gpus, j.requested.cpus, j.global_batch);
      if (!pl) break;
      auto cand = plan_on(j, *pl);
      if (!cand || !commit(w, j, *pl, *cand)) break;
    }
  }

  EnvSpec env_;
  const ModelCatalog* catalog_;
  SchedulerConfig cfg_;
  int total_gpus_ = 0;
  mutable std::map<CurveKey, SensitivityCurve> curves_;
  mutable std::map<std::tuple<std::string, int, double, std::string, int, int, std::int64_t>, double> sla_cache_;
};

// Applies a decision to live state. Reconfigurations and preemptions count
// toward N; tenant usage follows guaranteed jobs' minimum demand.
inline void apply_decision(const Decision& d, std::vector<Job>& jobs, ClusterState& cluster,
                           std::vector<Tenant>& tenants) {
  auto tenant = [&](const std::string& id) -> Tenant* {
    for (auto& t : tenants)
      if (t.id == id) return &t;
    return nullptr;
  };
  auto find = [&](const std::string& id) -> Job& {
    for (auto& j : jobs)
      if (j.id == id) return j;
    throw Error(ErrorCode::invalid_argument, "decision names unknown job '" + id + "'");
  };
  for (const auto& ch : d.changes) {
    if (ch.before)
      for (const auto& n : ch.before->placement.nodes) cluster.node(n.node).free += ResourceVector{n.gpus, n.cpus, n.mem};
  }
  for (const auto& ch : d.changes) {
    Job& j = find(ch.job);
    if (ch.after)
      for (const auto& n : ch.after->placement.nodes) cluster.node(n.node).free -= ResourceVector{n.gpus, n.cpus, n.mem};
    Tenant* t = tenant(j.tenant);
    switch (ch.kind) {
      case ChangeKind::Start:
        j.state = JobState::Running;
        if (j.cls == JobClass::Guaranteed && t) t->usage += j.min_res;
        break;
      case ChangeKind::Reconfigure:
        ++j.reconfig_count;
        break;
      case ChangeKind::Preempt:
        ++j.reconfig_count;
        j.state = JobState::Queued;
        j.queued_since = d.time;
        if (j.cls == JobClass::Guaranteed && t) t->usage -= j.min_res;
        break;
    }
    j.current = ch.after;
  }
}

}  // namespace plansched

#endif
