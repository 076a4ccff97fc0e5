#ifndef PLANSCHED_CORE_HPP
#define PLANSCHED_CORE_HPP

#include <algorithm>
#include <cstdint>
#include <compare>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace plansched {

// ----------------------------------------------------------------------------
// Errors

enum class ErrorCode {
  invalid_argument,
  invalid_plan,
  invalid_placement,
  too_few_points,
  missing_offload_points,
  no_fitted_model,
  no_feasible_plan,
  infeasible_request,
  unknown_model,
  parse_error,
  io_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_plan: return "invalid_plan";
    case ErrorCode::invalid_placement: return "invalid_placement";
    case ErrorCode::too_few_points: return "too_few_points";
    case ErrorCode::missing_offload_points: return "missing_offload_points";
    case ErrorCode::no_fitted_model: return "no_fitted_model";
    case ErrorCode::no_feasible_plan: return "no_feasible_plan";
    case ErrorCode::infeasible_request: return "infeasible_request";
    case ErrorCode::unknown_model: return "unknown_model";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

// ----------------------------------------------------------------------------
// Model description

// Timings measured by the training framework's profiler at one reference
// configuration. Forward time is rescaled from here for other plans.
struct ProfileBase {
  double t_fwd_ref = 0.0;        // s, one forward pass at the reference DP/TP config
  int ref_dp_size = 1;
  double ref_batch_per_gpu = 1;  // samples per GPU per forward pass
  int ref_tp_size = 1;
  double t_pp_ref = 0.0;         // s, one micro-batch through one stage
  int ref_pp_gpus = 1;           // stages used when t_pp_ref was profiled
  double ref_micro_batch = 0.0;  // samples per micro-batch for t_pp_ref; 0 = ref_batch_per_gpu

  double pp_micro_batch() const { return ref_micro_batch > 0 ? ref_micro_batch : ref_batch_per_gpu; }

  friend bool operator==(const ProfileBase&, const ProfileBase&) = default;
};

struct ModelSpec {
  std::string name;
  std::int64_t seq_len = 0;
  std::int64_t hidden = 0;
  int layers = 0;
  double param_count = 0;       // parameters, not bytes
  double bytes_per_param = 2;   // gradient / parameter payload width
  double act_bytes = 2;         // activation element width for TP/PP traffic
  ProfileBase profile;

  void validate() const {
    require(seq_len > 0 && hidden > 0 && layers >= 1 && param_count > 0 && bytes_per_param > 0 &&
                act_bytes > 0,
            ErrorCode::invalid_argument, "model '" + name + "': s, h, l, P and widths must be positive");
    const auto& pb = profile;
    require(pb.ref_dp_size >= 1 && pb.ref_tp_size >= 1 && pb.ref_pp_gpus >= 1 && pb.ref_batch_per_gpu > 0,
            ErrorCode::invalid_argument, "model '" + name + "': reference sizes must be >= 1");
    require(pb.t_fwd_ref > 0 && pb.t_pp_ref > 0, ErrorCode::invalid_argument,
            "model '" + name + "': profiled times must be positive");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// ----------------------------------------------------------------------------
// Execution plans

enum class PlanKind { ThreeD, ZeroDP, ZeroOffload };

inline std::string_view to_string(PlanKind k) {
  switch (k) {
    case PlanKind::ThreeD: return "3d";
    case PlanKind::ZeroDP: return "zero";
    case PlanKind::ZeroOffload: return "offload";
  }
  return "?";
}

struct ExecutionPlan {
  PlanKind kind = PlanKind::ThreeD;
  int dp = 1;
  int tp = 1;
  int pp = 1;
  int ga_steps = 1;
  int micro_batches = 1;
  bool grad_ckpt = false;

  int gpus() const { return dp * tp * pp; }
  bool is_offload() const { return kind == PlanKind::ZeroOffload; }

  void validate() const {
    require(dp >= 1 && tp >= 1 && pp >= 1, ErrorCode::invalid_plan, "parallel sizes must be >= 1");
    require(ga_steps >= 1 && micro_batches >= 1, ErrorCode::invalid_plan, "GA steps and micro-batches must be >= 1");
    require(pp == 1 || micro_batches >= pp, ErrorCode::invalid_plan, "pipeline needs at least one micro-batch per stage");
    require(kind == PlanKind::ThreeD || (tp == 1 && pp == 1), ErrorCode::invalid_plan,
            "ZeRO plans must have tp = pp = 1");
  }

  friend auto operator<=>(const ExecutionPlan&, const ExecutionPlan&) = default;
};

// Compact descriptor, e.g. "3d-d2-t2-p1-m1-a1-gc0". Safe inside CSV fields.
inline std::string to_descriptor(const ExecutionPlan& p) {
  std::string s(to_string(p.kind));
  s += "-d" + std::to_string(p.dp) + "-t" + std::to_string(p.tp) + "-p" + std::to_string(p.pp) + "-m" +
       std::to_string(p.micro_batches) + "-a" + std::to_string(p.ga_steps) + "-gc" + (p.grad_ckpt ? "1" : "0");
  return s;
}

inline ExecutionPlan parse_descriptor(std::string_view text) {
  auto fail = [&] { throw Error(ErrorCode::parse_error, "bad plan descriptor '" + std::string(text) + "'"); };
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  if (parts.empty()) fail();
  ExecutionPlan plan;
  if (parts[0] == "3d") plan.kind = PlanKind::ThreeD;
  else if (parts[0] == "zero") plan.kind = PlanKind::ZeroDP;
  else if (parts[0] == "offload") plan.kind = PlanKind::ZeroOffload;
  else fail();
  bool seen_m = false;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& f = parts[i];
    std::string key, val;
    if (f.rfind("gc", 0) == 0) {
      key = "gc";
      val = f.substr(2);
    } else if (!f.empty()) {
      key = f.substr(0, 1);
      val = f.substr(1);
    }
    if (val.empty() || val.find_first_not_of("0123456789") != std::string::npos) fail();
    int v = std::stoi(val);
    if (key == "d") plan.dp = v;
    else if (key == "t") plan.tp = v;
    else if (key == "p") plan.pp = v;
    else if (key == "a") plan.ga_steps = v;
    else if (key == "m") { plan.micro_batches = v; seen_m = true; }
    else if (key == "gc") plan.grad_ckpt = v != 0;
    else fail();
  }
  if (!seen_m) plan.micro_batches = plan.pp;
  try {
    plan.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::parse_error, "bad plan descriptor '" + std::string(text) + "': " + e.what());
  }
  return plan;
}

// ----------------------------------------------------------------------------
// Environment and fitted coefficients

// Analytic memory model used in place of the frameworks' own estimators.
struct MemoryModel {
  double state_bytes_per_param = 16;  // fp16 params 2 + fp16 grads 2 + fp32 optimizer 12
  double act_bytes_per_unit = 34;     // per token-hidden unit per layer
  double gc_factor = 0.25;            // activation fraction kept under checkpointing

  friend bool operator==(const MemoryModel&, const MemoryModel&) = default;
};

struct EnvSpec {
  double b_intra = 0;  // bytes/s
  double b_inter = 0;
  double b_pcie = 0;
  int gpus_per_node = 0;
  int cpus_per_node = 0;
  std::int64_t mem_per_node = 0;  // host bytes
  double gpu_mem = 0;             // bytes per GPU
  MemoryModel memory;

  void validate() const {
    require(b_inter > 0 && b_intra >= b_inter && b_pcie > 0, ErrorCode::invalid_argument,
            "bandwidths must satisfy B_intra >= B_inter > 0 and B_pcie > 0");
    require(gpus_per_node > 0 && cpus_per_node > 0 && mem_per_node > 0 && gpu_mem > 0,
            ErrorCode::invalid_argument, "node capacities must be positive");
  }

  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

struct PerfParams {
  double k_bwd = 2.0;
  double k_sync = 1.0;
  double k_opt = 1e-10;      // s per parameter
  double k_opt_off = 1e-9;   // s per parameter per CPU
  double k_off = 1.0;
  double k_swap = 1.0;
  double k_const = 0.0;      // s

  void validate() const {
    require(k_sync >= 1 && k_off >= 1 && k_swap >= 1, ErrorCode::invalid_argument, "overlap exponents must be >= 1");
    require(k_bwd > 0 && k_opt > 0 && k_opt_off > 0 && k_const >= 0, ErrorCode::invalid_argument,
            "k_bwd, k_opt, k_opt_off must be positive and k_const non-negative");
  }

  friend bool operator==(const PerfParams&, const PerfParams&) = default;
};

// ----------------------------------------------------------------------------
// Resources

enum class ResourceType { Gpu, Cpu };

struct ResourceVector {
  int gpus = 0;
  int cpus = 0;
  std::int64_t mem = 0;  // host bytes

  int get(ResourceType t) const { return t == ResourceType::Gpu ? gpus : cpus; }
  int& get(ResourceType t) { return t == ResourceType::Gpu ? gpus : cpus; }

  bool dominated_by(const ResourceVector& o) const { return gpus <= o.gpus && cpus <= o.cpus && mem <= o.mem; }
  bool non_negative() const { return gpus >= 0 && cpus >= 0 && mem >= 0; }
  bool is_zero() const { return gpus == 0 && cpus == 0 && mem == 0; }

  ResourceVector& operator+=(const ResourceVector& o) {
    gpus += o.gpus;
    cpus += o.cpus;
    mem += o.mem;
    return *this;
  }
  ResourceVector& operator-=(const ResourceVector& o) {
    gpus -= o.gpus;
    cpus -= o.cpus;
    mem -= o.mem;
    return *this;
  }
  friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) { return a += b; }
  friend ResourceVector operator-(ResourceVector a, const ResourceVector& b) { return a -= b; }
  friend bool operator==(const ResourceVector&, const ResourceVector&) = default;
};

struct NodeShare {
  int node = 0;
  int gpus = 0;
  int cpus = 0;
  std::int64_t mem = 0;
  friend bool operator==(const NodeShare&, const NodeShare&) = default;
};

// Per-node share of one job plus the job's global batch. GPU ranks are laid
// out over the shares in order.
struct Placement {
  std::vector<NodeShare> nodes;
  double global_batch = 0;

  ResourceVector total() const {
    ResourceVector r;
    for (const auto& n : nodes) r += ResourceVector{n.gpus, n.cpus, n.mem};
    return r;
  }
  int gpus() const { return total().gpus; }
  int nodes_used() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const NodeShare& n) { return n.gpus > 0; }));
  }

  friend bool operator==(const Placement&, const Placement&) = default;
};

// GPUs filled node by node (as few nodes as possible), CPUs and memory spread
// in proportion to each node's GPU share. Nodes are numbered from first_node.
inline Placement pack_placement(int gpus, int cpus, std::int64_t mem, double global_batch, const EnvSpec& env,
                                int first_node = 0) {
  Placement pl;
  pl.global_batch = global_batch;
  if (gpus <= 0) {
    if (cpus > 0 || mem > 0) pl.nodes.push_back({first_node, 0, cpus, mem});
    return pl;
  }
  int left = gpus;
  int node = first_node;
  while (left > 0) {
    int g = std::min(left, env.gpus_per_node);
    pl.nodes.push_back({node++, g, 0, 0});
    left -= g;
  }
  int cpu_left = cpus;
  std::int64_t mem_left = mem;
  for (std::size_t i = 0; i < pl.nodes.size(); ++i) {
    auto& n = pl.nodes[i];
    if (i + 1 == pl.nodes.size()) {
      n.cpus = cpu_left;
      n.mem = mem_left;
    } else {
      n.cpus = static_cast<int>(static_cast<std::int64_t>(cpus) * n.gpus / gpus);
      n.mem = mem * n.gpus / gpus;
      cpu_left -= n.cpus;
      mem_left -= n.mem;
    }
  }
  return pl;
}

// CPUs a GPU count is entitled to under node-proportional sharing.
inline int proportional_cpus(int gpus, const EnvSpec& env) {
  return static_cast<int>(static_cast<std::int64_t>(gpus) * env.cpus_per_node / env.gpus_per_node);
}

}  // namespace plansched

#endif
