#ifndef PLANSCHED_PERF_MODEL_HPP
#define PLANSCHED_PERF_MODEL_HPP

// Analytic iteration-time model for 3D-parallel, ZeRO-DP and ZeRO-Offload
// training plans. Every function here is pure.

#include <cmath>
#include <vector>

#include "plansched/core.hpp"

namespace plansched {

// (tx^k + ty^k)^(1/k): tx + ty at k = 1, tends to max(tx, ty) as k grows.
inline double overlap(double tx, double ty, double k) {
  const double hi = std::max(tx, ty);
  if (hi <= 0) return 0.0;
  const double lo = std::min(tx, ty);
  if (k == 1.0) return tx + ty;
  // scaled by the larger term so large k cannot overflow
  const double r = lo / hi;
  return hi * std::pow(1.0 + std::pow(r, k), 1.0 / k);
}

// One forward pass of one accumulation step. The per-GPU batch of a pass is
// b / (d * a); with pipelining each of the m micro-batches carries b / (d * a * m).
inline double forward_time(const ModelSpec& model, const ExecutionPlan& plan, double global_batch) {
  plan.validate();
  require(model.layers % plan.pp == 0, ErrorCode::invalid_plan,
          "pp size " + std::to_string(plan.pp) + " does not divide " + std::to_string(model.layers) + " layers");
  require(global_batch > 0, ErrorCode::invalid_argument, "global batch must be positive");
  const auto& pb = model.profile;
  const double tp_scale = static_cast<double>(pb.ref_tp_size) / plan.tp;
  if (plan.pp == 1) {
    const double per_gpu = global_batch / (static_cast<double>(plan.dp) * plan.ga_steps);
    return pb.t_fwd_ref * (per_gpu / pb.ref_batch_per_gpu) * tp_scale;
  }
  const double micro = global_batch / (static_cast<double>(plan.dp) * plan.ga_steps * plan.micro_batches);
  const double stage = pb.t_pp_ref * (micro / pb.pp_micro_batch()) * tp_scale;
  return stage * pb.ref_pp_gpus / plan.pp * (plan.micro_batches + plan.pp - 1);
}

inline double backward_time(const ExecutionPlan& plan, double t_fwd, const PerfParams& params) {
  double t = params.k_bwd * t_fwd;
  if (plan.grad_ckpt) t += t_fwd;  // recompute
  return t;
}

struct CommVolumes {
  double dp = 0;  // bytes
  double tp = 0;
  double pp = 0;
};

inline CommVolumes comm_volumes(const ModelSpec& model, const ExecutionPlan& plan, double global_batch) {
  const double d = plan.dp, t = plan.tp, p = plan.pp;
  const double bsh = global_batch * static_cast<double>(model.seq_len) * static_cast<double>(model.hidden) *
                     model.act_bytes;
  CommVolumes v;
  if (plan.dp > 1) v.dp = model.param_count * model.bytes_per_param * 2.0 * (d - 1) / (d * t * p);
  if (plan.tp > 1) v.tp = 4.0 * 2.0 * (t - 1) * bsh * model.layers / (d * t);
  if (plan.pp > 1) v.pp = 2.0 * p * bsh / (d * t);
  return v;
}

struct CommTimes {
  double dp = 0;  // s
  double tp = 0;
  double pp = 0;
  double total() const { return dp + tp + pp; }
};

// Node index of every global rank. Ranks are ordered TP fastest, then DP,
// then PP, and are laid onto the placement's GPUs share by share.
inline std::vector<int> rank_nodes(const ExecutionPlan& plan, const Placement& placement) {
  require(placement.gpus() == plan.gpus(), ErrorCode::invalid_placement,
          "placement holds " + std::to_string(placement.gpus()) + " GPUs but plan needs " +
              std::to_string(plan.gpus()));
  std::vector<int> out;
  out.reserve(plan.gpus());
  for (const auto& share : placement.nodes)
    for (int i = 0; i < share.gpus; ++i) out.push_back(share.node);
  return out;
}

inline CommTimes comm_times(const CommVolumes& vol, const ExecutionPlan& plan, const Placement& placement,
                            const EnvSpec& env) {
  const auto nodes = rank_nodes(plan, placement);
  const int d = plan.dp, t = plan.tp, p = plan.pp;
  auto rank = [&](int pi, int di, int ti) { return pi * t * d + di * t + ti; };

  for (int g = 0; g < d * p; ++g)
    for (int ti = 1; ti < t; ++ti)
      require(nodes[g * t + ti] == nodes[g * t], ErrorCode::invalid_placement, "TP group split across nodes");

  CommTimes ct;
  if (vol.dp > 0) {
    bool cross = false;
    for (int pi = 0; pi < p && !cross; ++pi)
      for (int ti = 0; ti < t && !cross; ++ti)
        for (int di = 1; di < d; ++di)
          if (nodes[rank(pi, di, ti)] != nodes[rank(pi, 0, ti)]) {
            cross = true;
            break;
          }
    ct.dp = vol.dp / (cross ? env.b_inter : env.b_intra);
  }
  if (vol.tp > 0) ct.tp = vol.tp / env.b_intra;
  if (vol.pp > 0) {
    // p transfers per micro-batch round: one per consecutive stage pair,
    // each at that link's bottleneck, plus one intra-node hop.
    const double per_link = vol.pp / p;
    double inv_bw = 1.0 / env.b_intra;
    for (int pi = 0; pi + 1 < p; ++pi) {
      bool cross = false;
      for (int di = 0; di < d && !cross; ++di)
        for (int ti = 0; ti < t; ++ti)
          if (nodes[rank(pi, di, ti)] != nodes[rank(pi + 1, di, ti)]) {
            cross = true;
            break;
          }
      inv_bw += 1.0 / (cross ? env.b_inter : env.b_intra);
    }
    ct.pp = per_link * inv_bw;
  }
  return ct;
}

// cpus_per_rank only matters for ZeRO-Offload, where each data-parallel rank
// updates its partition on its own CPUs.
inline double optimizer_time(const ModelSpec& model, const ExecutionPlan& plan, double cpus_per_rank,
                             const PerfParams& params) {
  switch (plan.kind) {
    case PlanKind::ThreeD:
      return params.k_opt * model.param_count / (static_cast<double>(plan.tp) * plan.pp);
    case PlanKind::ZeroDP:
      return params.k_opt * model.param_count / plan.dp;
    case PlanKind::ZeroOffload:
      require(cpus_per_rank > 0, ErrorCode::invalid_argument, "ZeRO-Offload needs at least one CPU");
      return params.k_opt_off * model.param_count / (plan.dp * cpus_per_rank);
  }
  return 0.0;
}

inline double offload_time(const ModelSpec& model, const ExecutionPlan& plan, const EnvSpec& env) {
  if (!plan.is_offload()) return 0.0;
  return model.param_count * model.bytes_per_param / (plan.dp * env.b_pcie);
}

inline double combine_cc(double t_fwd, double t_bwd, const CommTimes& comm, const ExecutionPlan& plan,
                         const PerfParams& params) {
  const double a = plan.ga_steps;
  if (plan.ga_steps == 1) return t_fwd + overlap(t_bwd, comm.dp, params.k_sync) + comm.tp + comm.pp;
  if (plan.tp * plan.pp == 1) return a * t_fwd + (a - 1) * t_bwd + overlap(t_bwd, comm.dp, params.k_sync);
  return a * t_fwd + a * t_bwd + comm.total();
}

inline double combine_oo(double t_opt, double t_off, double t_comm_dp, const ExecutionPlan& plan,
                         const PerfParams& params) {
  if (!plan.is_offload()) return t_opt;
  return overlap(t_comm_dp, t_off, params.k_off) + overlap(t_opt, t_off, params.k_swap);
}

struct Prediction {
  double t_iter = 0;      // s
  double throughput = 0;  // samples/s
  double t_fwd = 0;
  double t_bwd = 0;
  CommVolumes volumes;
  CommTimes comm;
  double t_opt = 0;
  double t_off = 0;
  double t_cc = 0;
  double t_oo = 0;
};

inline Prediction predict(const ModelSpec& model, const ExecutionPlan& plan, const Placement& placement,
                          const EnvSpec& env, const PerfParams& params) {
  Prediction r;
  const double b = placement.global_batch;
  r.t_fwd = forward_time(model, plan, b);
  r.t_bwd = backward_time(plan, r.t_fwd, params);
  r.volumes = comm_volumes(model, plan, b);
  r.comm = comm_times(r.volumes, plan, placement, env);
  const double cpus_per_rank = static_cast<double>(placement.total().cpus) / plan.gpus();
  r.t_opt = optimizer_time(model, plan, cpus_per_rank, params);
  r.t_off = offload_time(model, plan, env);
  r.t_cc = combine_cc(r.t_fwd, r.t_bwd, r.comm, plan, params);
  r.t_oo = combine_oo(r.t_opt, r.t_off, r.comm.dp, plan, params);
  r.t_iter = r.t_cc + r.t_oo + params.k_const;
  r.throughput = b / r.t_iter;
  return r;
}

}  // namespace plansched

#endif
