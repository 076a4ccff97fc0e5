#ifndef PLANSCHED_SENSITIVITY_HPP
#define PLANSCHED_SENSITIVITY_HPP

#include <optional>
#include <string>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/plan_space.hpp"

namespace plansched {

enum class ResourceAxis { Gpu, Cpu };

inline std::string_view to_string(ResourceAxis a) { return a == ResourceAxis::Gpu ? "gpu" : "cpu"; }

struct CurvePoint {
  int amount = 0;
  double throughput = 0;               // best achievable with at most `amount`
  std::optional<ExecutionPlan> plan;   // plan reaching it
  int used = 0;                        // amount that plan actually occupies
  bool valid = false;                  // a plan at exactly `amount` sets a new maximum
};

// Best-plan throughput envelope over one resource axis. Amounts run 0..cap
// contiguously, so points[i].amount == i.
struct SensitivityCurve {
  std::string job_id;
  ResourceAxis axis = ResourceAxis::Gpu;
  ResourceVector fixed_context;
  std::vector<CurvePoint> points;

  int cap() const { return points.empty() ? 0 : points.back().amount; }
  const CurvePoint& at(int amount) const {
    return points[static_cast<std::size_t>(std::clamp(amount, 0, cap()))];
  }
  double throughput(int amount) const { return points.empty() ? 0.0 : at(amount).throughput; }
};

// Placement used to score `amount` on the axis: GPUs packed onto as few
// nodes as possible. On the GPU axis CPUs follow the node-proportional share;
// on the CPU axis the GPU count comes from fixed_context.
inline Placement curve_placement(ResourceAxis axis, int amount, const ResourceVector& fixed_context,
                                 double global_batch, const EnvSpec& env) {
  if (axis == ResourceAxis::Gpu) return pack_placement(amount, proportional_cpus(amount, env), 0, global_batch, env);
  return pack_placement(fixed_context.gpus, amount, 0, global_batch, env);
}

inline SensitivityCurve build_curve(const std::string& job_id, const ModelSpec& model, double global_batch,
                                    ResourceAxis axis, const ResourceVector& fixed_context, int cap,
                                    const EnvSpec& env, const std::optional<PerfParams>& params,
                                    const PlanFilter& filter = {}) {
  if (!params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + model.name + "'");
  SensitivityCurve curve{job_id, axis, fixed_context, {}};
  curve.points.reserve(static_cast<std::size_t>(std::max(cap, 0)) + 1);
  CurvePoint best{0, 0.0, std::nullopt, 0, false};
  for (int amount = 0; amount <= cap; ++amount) {
    auto cand = best_plan(model, curve_placement(axis, amount, fixed_context, global_batch, env), env, params, filter);
    CurvePoint pt = best;
    pt.amount = amount;
    pt.valid = false;
    if (cand && cand->predicted_throughput > best.throughput) {
      pt = CurvePoint{amount, cand->predicted_throughput, cand->plan, amount, true};
      best = pt;
    }
    curve.points.push_back(pt);
  }
  return curve;
}

// Forward difference from `at` to the next valid point, divided by the gap.
// Zero past the last valid point.
inline double slope(const SensitivityCurve& curve, int at) {
  if (curve.points.empty() || at >= curve.cap()) return 0.0;
  const double here = curve.throughput(at);
  for (int a = std::max(at, 0) + 1; a <= curve.cap(); ++a) {
    const auto& pt = curve.at(a);
    if (pt.valid) return (pt.throughput - here) / (a - at);
  }
  return 0.0;
}

// Throughput lost by giving up the last unit held at `at`.
inline double marginal_loss(const SensitivityCurve& curve, int at) {
  if (curve.points.empty() || at <= 0) return 0.0;
  return curve.throughput(at) - curve.throughput(at - 1);
}

enum class JobClass { Guaranteed, BestEffort };

inline std::string_view to_string(JobClass c) { return c == JobClass::Guaranteed ? "guaranteed" : "best_effort"; }

// Throughput the requested resources deliver with the requested plan, on a
// packed placement. Throws infeasible_request when the plan cannot run there.
inline double requested_throughput(const ModelSpec& model, double global_batch, const ResourceVector& requested,
                                   const ExecutionPlan& requested_plan, const EnvSpec& env,
                                   const PerfParams& params) {
  const auto pl = pack_placement(requested.gpus, requested.cpus, requested.mem, global_batch, env);
  std::optional<PlanCandidate> cand;
  try {
    cand = evaluate_plan(model, requested_plan, pl, env, params);
  } catch (const Error& e) {
    throw Error(ErrorCode::infeasible_request, std::string("requested plan cannot run: ") + e.what());
  }
  if (!cand) throw Error(ErrorCode::infeasible_request, "requested plan " + to_descriptor(requested_plan) +
                                                            " does not fit the requested resources");
  if (requested_plan.is_offload() && cand->host_mem_est > static_cast<double>(requested.mem))
    throw Error(ErrorCode::infeasible_request, "requested memory below the offload plan's host states");
  return cand->predicted_throughput;
}

// Smallest vector dominated by the request (GPU-major, then CPUs, then memory)
// whose best plan matches the requested configuration's throughput.
inline ResourceVector min_res(const ModelSpec& model, double global_batch, JobClass cls,
                              const ResourceVector& requested, const ExecutionPlan& requested_plan,
                              const EnvSpec& env, const std::optional<PerfParams>& params,
                              const PlanFilter& filter = {}) {
  if (cls == JobClass::BestEffort) return {};
  if (!params) throw Error(ErrorCode::no_fitted_model, "no fitted performance model for '" + model.name + "'");
  const double target = requested_throughput(model, global_batch, requested, requested_plan, env, *params);
  for (int g = 0; g <= requested.gpus; ++g)
    for (int c = 0; c <= requested.cpus; ++c) {
      auto cand = best_plan(model, pack_placement(g, c, 0, global_batch, env), env, params, filter);
      if (!cand || cand->predicted_throughput < target) continue;
      const auto mem = static_cast<std::int64_t>(std::ceil(cand->host_mem_est));
      if (mem > requested.mem) continue;
      return {g, c, mem};
    }
  return requested;
}

}  // namespace plansched

#endif
