#ifndef PLANSCHED_CONFIG_HPP
#define PLANSCHED_CONFIG_HPP

// Run configuration for simulate/compare. Relative paths inside a config
// file resolve against the file's directory. Any object-valued entry may be
// given inline instead of as a path.
//
//   {
//     "env": "env.json",
//     "models": [{"spec": "gpt.json", "params": "gpt.fit.json",
//                 "true_params": {...}, "global_batch": 16}],
//     "trace": "trace.csv"            | "synthesize": {...} | "philly": {...},
//     "policies": ["full", "even-split"],
//     "seed": 1, "nodes": 4,
//     "tenants": [{"id": "tenant-a", "quota": {"gpus": 64}}],
//     "ckpt_cost_s": 78, "starvation_s": 3600, "noise_sigma": 0.03,
//     "online_refit": false, "output_dir": "out"
//   }

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "plansched/json_io.hpp"
#include "plansched/scheduler.hpp"
#include "plansched/simulator.hpp"
#include "plansched/trace.hpp"

namespace plansched {

inline constexpr const char* kConfigEnvVar = "PLANSCHED_CONFIG";

struct RunConfig {
  std::filesystem::path base_dir = ".";
  EnvSpec env;
  ModelCatalog catalog;
  std::vector<TraceJob> trace;
  std::vector<PolicyKind> policies{PolicyKind::Full};
  std::uint64_t seed = 1;
  bool seed_given = false;
  int nodes = 4;
  std::vector<Tenant> tenants;
  double ckpt_cost_s = 78.0;
  double starvation_s = 3600.0;
  double noise_sigma = 0.03;
  bool online_refit = false;
  std::filesystem::path output_dir = "out";

  SimConfig sim_config(PolicyKind p) const {
    SimConfig c;
    c.policy = p;
    c.seed = seed;
    c.n_nodes = nodes;
    c.ckpt_cost_s = ckpt_cost_s;
    c.starvation_s = starvation_s;
    c.noise_sigma = noise_sigma;
    c.online_refit = online_refit;
    c.tenants = tenants;
    return c;
  }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

// A JSON value or a path to a JSON file.
inline json inline_or_file(const json& v, const std::filesystem::path& base) {
  if (v.is_string()) return load_json(resolve(base, v.get<std::string>()));
  return v;
}

inline TraceSpec trace_spec_from_json(const json& j) {
  TraceSpec s;
  detail::get_opt(j, "n_jobs", s.n_jobs);
  detail::get_opt(j, "load_scale", s.load_scale);
  detail::get_opt(j, "mean_gap_s", s.mean_gap_s);
  detail::get_opt(j, "models", s.models);
  detail::get_opt(j, "gpu_choices", s.gpu_choices);
  detail::get_opt(j, "gpu_weights", s.gpu_weights);
  detail::get_opt(j, "min_duration_s", s.min_duration_s);
  detail::get_opt(j, "max_duration_s", s.max_duration_s);
  detail::get_opt(j, "max_gpus", s.max_gpus);
  std::string plans = "random", tenancy = "single";
  detail::get_opt(j, "plans", plans);
  detail::get_opt(j, "tenancy", tenancy);
  if (plans == "random") s.plans = PlanAssignment::Random;
  else if (plans == "best_plan") s.plans = PlanAssignment::BestPlan;
  else throw Error(ErrorCode::parse_error, "synthesize.plans must be random|best_plan");
  if (tenancy == "single") s.tenancy = Tenancy::Single;
  else if (tenancy == "multi_tenant") s.tenancy = Tenancy::MultiTenant;
  else throw Error(ErrorCode::parse_error, "synthesize.tenancy must be single|multi_tenant");
  return s;
}

}  // namespace detail

inline TraceSpec parse_trace_spec(const json& j) {
  try {
    return detail::trace_spec_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("trace spec: ") + e.what());
  }
}

inline ModelEntry load_model_entry(const json& j, const std::filesystem::path& base) {
  ModelEntry e;
  e.spec = decode_json<ModelSpec>(detail::inline_or_file(j.at("spec"), base), "model spec");
  e.spec.validate();
  if (j.contains("params")) {
    e.params = decode_json<PerfParams>(detail::inline_or_file(j.at("params"), base), "params");
    e.params->validate();
  }
  if (j.contains("true_params")) {
    e.true_params = decode_json<PerfParams>(detail::inline_or_file(j.at("true_params"), base), "true_params");
    e.true_params->validate();
  }
  detail::get_opt(j, "global_batch", e.global_batch);
  require(e.global_batch >= 1, ErrorCode::invalid_argument, "global_batch must be >= 1");
  if (j.contains("observations"))
    e.history = load_observations(detail::resolve(base, j.at("observations").get<std::string>()));
  return e;
}

inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base) {
  RunConfig c;
  c.base_dir = base;
  try {
    c.env = decode_json<EnvSpec>(detail::inline_or_file(j.at("env"), base), "env");
    c.env.validate();
    for (const auto& m : j.at("models")) {
      auto e = load_model_entry(m, base);
      const auto name = e.spec.name;
      require(!c.catalog.count(name), ErrorCode::invalid_argument, "duplicate model '" + name + "'");
      c.catalog.emplace(name, std::move(e));
    }
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.seed_given = true;
    }
    detail::get_opt(j, "nodes", c.nodes);
    detail::get_opt(j, "ckpt_cost_s", c.ckpt_cost_s);
    detail::get_opt(j, "starvation_s", c.starvation_s);
    detail::get_opt(j, "noise_sigma", c.noise_sigma);
    detail::get_opt(j, "online_refit", c.online_refit);
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base, j.at("output_dir").get<std::string>());
    if (j.contains("policies")) {
      c.policies.clear();
      for (const auto& p : j.at("policies")) c.policies.push_back(parse_policy(p.get<std::string>()));
    }
    if (j.contains("tenants"))
      for (const auto& t : j.at("tenants")) {
        Tenant tn;
        tn.id = t.at("id").get<std::string>();
        if (t.contains("quota")) {
          ResourceVector q{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
                           std::numeric_limits<std::int64_t>::max()};
          t.at("quota").get_to(q);
          tn.quota = q;
        }
        c.tenants.push_back(tn);
      }
    require(c.nodes >= 1, ErrorCode::invalid_argument, "nodes must be >= 1");
    require(c.ckpt_cost_s >= 0, ErrorCode::invalid_argument, "ckpt_cost_s must be >= 0");
    require(c.noise_sigma >= 0, ErrorCode::invalid_argument, "noise_sigma must be >= 0");

    const int sources = j.contains("trace") + j.contains("synthesize") + j.contains("philly");
    require(sources <= 1, ErrorCode::invalid_argument, "give only one of trace, synthesize, philly");
    if (j.contains("trace")) {
      const auto path = detail::resolve(base, j.at("trace").get<std::string>());
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
      c.trace = parse_trace(in, path.string());
    } else if (j.contains("synthesize")) {
      require(c.seed_given, ErrorCode::invalid_argument, "a seed is required to synthesize a trace");
      c.trace = synthesize_trace(parse_trace_spec(j.at("synthesize")), c.catalog, c.env, c.seed);
    } else if (j.contains("philly")) {
      require(c.seed_given, ErrorCode::invalid_argument, "a seed is required to map a Philly trace onto models");
      const auto& p = j.at("philly");
      const auto path = detail::resolve(base, p.at("path").get<std::string>());
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
      c.trace = parse_philly_subset(in, p.at("models").get<std::vector<std::string>>(), c.seed, path.string());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(load_json(path), path.has_parent_path() ? path.parent_path() : ".");
}

// Config path from the explicit flag, else from the environment variable.
inline std::optional<std::filesystem::path> default_config_path(const std::string& flag_value) {
  if (!flag_value.empty()) return std::filesystem::path(flag_value);
  if (const char* v = std::getenv(kConfigEnvVar); v && *v) return std::filesystem::path(v);
  return std::nullopt;
}

}  // namespace plansched

#endif
