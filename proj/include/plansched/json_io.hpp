#ifndef PLANSCHED_JSON_IO_HPP
#define PLANSCHED_JSON_IO_HPP

// JSON schema for the model, environment, coefficient, plan and observation
// types. Keys are snake_case; times in seconds, bandwidths in bytes/s,
// capacities in bytes.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "plansched/core.hpp"
#include "plansched/fitting.hpp"

namespace plansched {

using json = nlohmann::ordered_json;

namespace detail {
template <class T>
void get_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}
}  // namespace detail

inline void to_json(json& j, const ProfileBase& p) {
  j = json{{"t_fwd_ref", p.t_fwd_ref},   {"ref_dp_size", p.ref_dp_size}, {"ref_batch_per_gpu", p.ref_batch_per_gpu},
           {"ref_tp_size", p.ref_tp_size}, {"t_pp_ref", p.t_pp_ref},       {"ref_pp_gpus", p.ref_pp_gpus},
           {"ref_micro_batch", p.ref_micro_batch}};
}
inline void from_json(const json& j, ProfileBase& p) {
  j.at("t_fwd_ref").get_to(p.t_fwd_ref);
  detail::get_opt(j, "ref_dp_size", p.ref_dp_size);
  detail::get_opt(j, "ref_batch_per_gpu", p.ref_batch_per_gpu);
  detail::get_opt(j, "ref_tp_size", p.ref_tp_size);
  j.at("t_pp_ref").get_to(p.t_pp_ref);
  detail::get_opt(j, "ref_pp_gpus", p.ref_pp_gpus);
  detail::get_opt(j, "ref_micro_batch", p.ref_micro_batch);
}

inline void to_json(json& j, const ModelSpec& m) {
  j = json{{"name", m.name},
           {"seq_len", m.seq_len},
           {"hidden", m.hidden},
           {"layers", m.layers},
           {"param_count", m.param_count},
           {"bytes_per_param", m.bytes_per_param},
           {"act_bytes", m.act_bytes},
           {"profile", m.profile}};
}
inline void from_json(const json& j, ModelSpec& m) {
  j.at("name").get_to(m.name);
  j.at("seq_len").get_to(m.seq_len);
  j.at("hidden").get_to(m.hidden);
  j.at("layers").get_to(m.layers);
  j.at("param_count").get_to(m.param_count);
  detail::get_opt(j, "bytes_per_param", m.bytes_per_param);
  detail::get_opt(j, "act_bytes", m.act_bytes);
  j.at("profile").get_to(m.profile);
}

inline void to_json(json& j, const MemoryModel& m) {
  j = json{{"state_bytes_per_param", m.state_bytes_per_param},
           {"act_bytes_per_unit", m.act_bytes_per_unit},
           {"gc_factor", m.gc_factor}};
}
inline void from_json(const json& j, MemoryModel& m) {
  detail::get_opt(j, "state_bytes_per_param", m.state_bytes_per_param);
  detail::get_opt(j, "act_bytes_per_unit", m.act_bytes_per_unit);
  detail::get_opt(j, "gc_factor", m.gc_factor);
}

inline void to_json(json& j, const EnvSpec& e) {
  j = json{{"b_intra", e.b_intra},
           {"b_inter", e.b_inter},
           {"b_pcie", e.b_pcie},
           {"gpus_per_node", e.gpus_per_node},
           {"cpus_per_node", e.cpus_per_node},
           {"mem_per_node", e.mem_per_node},
           {"gpu_mem", e.gpu_mem},
           {"memory_model", e.memory}};
}
inline void from_json(const json& j, EnvSpec& e) {
  j.at("b_intra").get_to(e.b_intra);
  j.at("b_inter").get_to(e.b_inter);
  j.at("b_pcie").get_to(e.b_pcie);
  j.at("gpus_per_node").get_to(e.gpus_per_node);
  j.at("cpus_per_node").get_to(e.cpus_per_node);
  j.at("mem_per_node").get_to(e.mem_per_node);
  j.at("gpu_mem").get_to(e.gpu_mem);
  detail::get_opt(j, "memory_model", e.memory);
}

inline void to_json(json& j, const PerfParams& p) {
  j = json{{"k_bwd", p.k_bwd},         {"k_sync", p.k_sync}, {"k_opt", p.k_opt},    {"k_opt_off", p.k_opt_off},
           {"k_off", p.k_off},         {"k_swap", p.k_swap}, {"k_const", p.k_const}};
}
inline void from_json(const json& j, PerfParams& p) {
  // a FitResult document is accepted wherever coefficients are expected
  const json& src = j.contains("params") ? j.at("params") : j;
  src.at("k_bwd").get_to(p.k_bwd);
  src.at("k_sync").get_to(p.k_sync);
  src.at("k_opt").get_to(p.k_opt);
  src.at("k_opt_off").get_to(p.k_opt_off);
  src.at("k_off").get_to(p.k_off);
  src.at("k_swap").get_to(p.k_swap);
  src.at("k_const").get_to(p.k_const);
}

inline void to_json(json& j, const ExecutionPlan& p) {
  j = json{{"descriptor", to_descriptor(p)},
           {"kind", std::string(to_string(p.kind))},
           {"dp", p.dp},
           {"tp", p.tp},
           {"pp", p.pp},
           {"micro_batches", p.micro_batches},
           {"ga_steps", p.ga_steps},
           {"grad_ckpt", p.grad_ckpt}};
}
inline void from_json(const json& j, ExecutionPlan& p) {
  if (j.is_string()) {
    p = parse_descriptor(j.get<std::string>());
    return;
  }
  if (j.contains("descriptor")) {
    p = parse_descriptor(j.at("descriptor").get<std::string>());
    return;
  }
  const auto kind = j.at("kind").get<std::string>();
  p = parse_descriptor(kind + "-d1");
  j.at("dp").get_to(p.dp);
  detail::get_opt(j, "tp", p.tp);
  detail::get_opt(j, "pp", p.pp);
  p.micro_batches = p.pp;
  detail::get_opt(j, "micro_batches", p.micro_batches);
  detail::get_opt(j, "ga_steps", p.ga_steps);
  detail::get_opt(j, "grad_ckpt", p.grad_ckpt);
  p.validate();
}

inline void to_json(json& j, const ResourceVector& r) { j = json{{"gpus", r.gpus}, {"cpus", r.cpus}, {"mem", r.mem}}; }
inline void from_json(const json& j, ResourceVector& r) {
  detail::get_opt(j, "gpus", r.gpus);
  detail::get_opt(j, "cpus", r.cpus);
  detail::get_opt(j, "mem", r.mem);
}

inline void to_json(json& j, const NodeShare& n) {
  j = json{{"node", n.node}, {"gpus", n.gpus}, {"cpus", n.cpus}, {"mem", n.mem}};
}
inline void from_json(const json& j, NodeShare& n) {
  j.at("node").get_to(n.node);
  j.at("gpus").get_to(n.gpus);
  detail::get_opt(j, "cpus", n.cpus);
  detail::get_opt(j, "mem", n.mem);
}

inline void to_json(json& j, const Placement& p) { j = json{{"global_batch", p.global_batch}, {"nodes", p.nodes}}; }
inline void from_json(const json& j, Placement& p) {
  j.at("global_batch").get_to(p.global_batch);
  j.at("nodes").get_to(p.nodes);
}

inline void to_json(json& j, const Observation& o) {
  j = json{{"plan", o.plan}, {"placement", o.placement}, {"observed_t_iter", o.observed_t_iter}};
}
inline void from_json(const json& j, Observation& o) {
  j.at("plan").get_to(o.plan);
  j.at("placement").get_to(o.placement);
  j.at("observed_t_iter").get_to(o.observed_t_iter);
}

inline void to_json(json& j, const FitResult& r) {
  json res = json::array();
  for (const auto& x : r.residuals)
    res.push_back({{"predicted", x.predicted}, {"observed", x.observed}, {"log_error", x.log_error}});
  j = json{{"params", r.params},
           {"rmsle", r.rmsle},
           {"n_points", r.n_points},
           {"converged", r.converged},
           {"residuals", res}};
}
inline void from_json(const json& j, FitResult& r) {
  j.at("params").get_to(r.params);
  j.at("rmsle").get_to(r.rmsle);
  j.at("n_points").get_to(r.n_points);
  detail::get_opt(j, "converged", r.converged);
  r.residuals.clear();
  if (j.contains("residuals"))
    for (const auto& x : j.at("residuals"))
      r.residuals.push_back({x.at("predicted").get<double>(), x.at("observed").get<double>(),
                             x.at("log_error").get<double>()});
}

// ----------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, what + ": " + e.what());
  }
}

inline json load_json(const std::filesystem::path& path) { return parse_json_text(read_file(path), path.string()); }

// Converts a JSON document into T, mapping schema errors onto parse_error.
template <class T>
T decode_json(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, what + ": " + e.what());
  }
}

// One observation per non-blank line; errors name the 1-based line.
inline std::vector<Observation> parse_observations(std::istream& in, const std::string& what = "observations") {
  std::vector<Observation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<Observation>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, what + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, what + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Observation> load_observations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  return parse_observations(in, path.string());
}

// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error(ErrorCode::io_error, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot rename onto '" + path.string() + "': " + ec.message());
}

}  // namespace plansched

#endif
