#ifndef PLANSCHED_PLAN_SPACE_HPP
#define PLANSCHED_PLAN_SPACE_HPP

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/perf_model.hpp"

namespace plansched {

inline constexpr std::array<int, 4> kGaSteps{1, 2, 4, 8};

// Every (kind, d, t, p, a, gc) with d*t*p = gpus that respects the
// partitioning rules: t divides the node size, p divides the layer count,
// ZeRO variants only as pure data parallelism. Pipelines use m = p.
inline std::vector<ExecutionPlan> enumerate_plans(const ModelSpec& model, int gpus, int gpus_per_node) {
  std::vector<ExecutionPlan> out;
  if (gpus <= 0) return out;
  for (int t = 1; t <= gpus; ++t) {
    if (gpus % t != 0 || t > gpus_per_node || gpus_per_node % t != 0) continue;
    for (int p = 1; p <= gpus / t; ++p) {
      if ((gpus / t) % p != 0 || model.layers % p != 0) continue;
      const int d = gpus / (t * p);
      std::vector<PlanKind> kinds{PlanKind::ThreeD};
      if (t == 1 && p == 1) {
        kinds.push_back(PlanKind::ZeroDP);
        kinds.push_back(PlanKind::ZeroOffload);
      }
      for (auto kind : kinds)
        for (int a : kGaSteps)
          for (bool gc : {false, true}) {
            ExecutionPlan plan;
            plan.kind = kind;
            plan.dp = d;
            plan.tp = t;
            plan.pp = p;
            plan.ga_steps = a;
            plan.micro_batches = p;
            plan.grad_ckpt = gc;
            out.push_back(plan);
          }
    }
  }
  return out;
}

struct MemoryEstimate {
  double model_states = 0;  // bytes per GPU
  double activations = 0;   // bytes per GPU
  double host_states = 0;   // bytes on the host, whole job

  double gpu_bytes() const { return model_states + activations; }
};

// ZeRO-DP is stage 2: fp16 params replicated, grads and optimizer states
// partitioned over d. ZeRO-Offload keeps only the fp16 params on the GPU.
inline MemoryEstimate estimate_memory(const ModelSpec& model, const ExecutionPlan& plan, double global_batch,
                                      const EnvSpec& env) {
  const auto& mm = env.memory;
  const double P = model.param_count;
  const double w = mm.state_bytes_per_param;
  MemoryEstimate m;
  switch (plan.kind) {
    case PlanKind::ThreeD:
      m.model_states = w * P / (static_cast<double>(plan.tp) * plan.pp);
      break;
    case PlanKind::ZeroDP:
      m.model_states = 2.0 * P + (w - 2.0) * P / plan.dp;
      break;
    case PlanKind::ZeroOffload:
      m.model_states = 2.0 * P;
      m.host_states = (w - 2.0) * P;
      break;
  }
  const double micro = global_batch / (static_cast<double>(plan.dp) * plan.ga_steps * plan.micro_batches);
  m.activations = mm.act_bytes_per_unit * micro * static_cast<double>(model.seq_len) *
                  static_cast<double>(model.hidden) * model.layers / (static_cast<double>(plan.tp) * plan.pp);
  if (plan.grad_ckpt) m.activations *= mm.gc_factor;
  return m;
}

struct PlanCandidate {
  ExecutionPlan plan;
  double gpu_mem_est = 0;
  double host_mem_est = 0;
  double predicted_throughput = 0;
  double t_iter = 0;
};

using PlanFilter = std::function<bool(const ExecutionPlan&)>;

// Strict preference between two candidates: higher throughput, then fewer GA
// steps, GC off, larger d, larger t, then kind order.
inline bool preferred(const PlanCandidate& a, const PlanCandidate& b) {
  if (a.predicted_throughput != b.predicted_throughput) return a.predicted_throughput > b.predicted_throughput;
  const auto& x = a.plan;
  const auto& y = b.plan;
  if (x.ga_steps != y.ga_steps) return x.ga_steps < y.ga_steps;
  if (x.grad_ckpt != y.grad_ckpt) return !x.grad_ckpt;
  if (x.dp != y.dp) return x.dp > y.dp;
  if (x.tp != y.tp) return x.tp > y.tp;
  return x.kind < y.kind;
}

// Scores one plan on a placement; nullopt when it cannot run there (GPU
// memory, sub-sample micro-batches, TP group split across nodes, offload
// without CPUs).
inline std::optional<PlanCandidate> evaluate_plan(const ModelSpec& model, const ExecutionPlan& plan,
                                                  const Placement& placement, const EnvSpec& env,
                                                  const PerfParams& params) {
  const double b = placement.global_batch;
  if (plan.gpus() != placement.gpus() || model.layers % plan.pp != 0) return std::nullopt;
  if (b / (static_cast<double>(plan.dp) * plan.ga_steps * plan.micro_batches) < 1.0) return std::nullopt;
  if (plan.is_offload() && placement.total().cpus <= 0) return std::nullopt;
  const auto mem = estimate_memory(model, plan, b, env);
  if (mem.gpu_bytes() > env.gpu_mem) return std::nullopt;
  try {
    const auto pred = predict(model, plan, placement, env, params);
    return PlanCandidate{plan, mem.gpu_bytes(), mem.host_states, pred.throughput, pred.t_iter};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::invalid_placement) return std::nullopt;
    throw;
  }
}

// GetBestPlan. Throws no_fitted_model without params; nullopt when nothing fits.
inline std::optional<PlanCandidate> best_plan(const ModelSpec& model, const Placement& placement, const EnvSpec& env,
                                              const std::optional<PerfParams>& params,
                                              const PlanFilter& filter = {}) {
  if (!params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + model.name + "'");
  std::optional<PlanCandidate> best;
  for (const auto& plan : enumerate_plans(model, placement.gpus(), env.gpus_per_node)) {
    if (filter && !filter(plan)) continue;
    auto cand = evaluate_plan(model, plan, placement, env, *params);
    if (cand && (!best || preferred(*cand, *best))) best = cand;
  }
  return best;
}

}  // namespace plansched

#endif
