// plansched command-line front end.
//
// Exit codes: 0 ok, 2 usage, 3 input error, 4 runtime error. Errors go to
// stderr as one JSON object with a stable `code` field.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "plansched/plansched.hpp"

namespace fs = std::filesystem;
using namespace plansched;

namespace {

enum Exit { kOk = 0, kUsage = 2, kInput = 3, kRuntime = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::no_feasible_plan:
      return kRuntime;
    default:
      return kInput;
  }
}

void report(std::string_view code, const std::string& message, int exit_code) {
  json e{{"code", code}, {"message", message}, {"exit", exit_code}};
  std::cerr << e.dump() << "\n";
}

struct Common {
  std::string format = "json";
  bool no_timestamp = false;
  std::string out;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Prepends generated_at unless suppressed.
json stamped(const json& body, const Common& c) {
  if (c.no_timestamp) return body;
  json out{{"generated_at", timestamp()}};
  for (auto it = body.begin(); it != body.end(); ++it) out[it.key()] = it.value();
  return out;
}

void emit(const std::string& text, const Common& c) {
  if (c.out.empty() || c.out == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file_atomic(c.out, text);
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// Rows of scalar JSON objects to CSV, columns in first-row key order.
std::string to_csv(const json& rows) {
  std::ostringstream ss;
  if (rows.empty()) return "";
  std::vector<std::string> cols;
  for (auto it = rows.front().begin(); it != rows.front().end(); ++it) cols.push_back(it.key());
  for (std::size_t i = 0; i < cols.size(); ++i) ss << (i ? "," : "") << cols[i];
  ss << "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) ss << ",";
      const auto& v = r.at(cols[i]);
      if (v.is_string()) ss << csv_escape(v.get<std::string>());
      else if (v.is_number_float()) ss << detail::fmt(v.get<double>());
      else if (v.is_null()) ss << "";
      else ss << v.dump();
    }
    ss << "\n";
  }
  return ss.str();
}

std::string render(const json& doc, const json& rows, const Common& c) {
  if (c.format == "csv") return to_csv(rows);
  return doc.dump(2) + "\n";
}

ModelSpec read_model(const std::string& path) {
  auto m = decode_json<ModelSpec>(load_json(path), path);
  m.validate();
  return m;
}

EnvSpec read_env(const std::string& path) {
  auto e = decode_json<EnvSpec>(load_json(path), path);
  e.validate();
  return e;
}

PerfParams read_params(const std::string& path) {
  auto p = decode_json<PerfParams>(load_json(path), path);
  p.validate();
  return p;
}

Placement read_placement(const std::string& spec_or_path, double batch) {
  json j;
  if (!spec_or_path.empty() && (spec_or_path.front() == '{' || spec_or_path.front() == '['))
    j = parse_json_text(spec_or_path, "placement");
  else
    j = load_json(spec_or_path);
  Placement pl;
  if (j.is_array()) {
    pl.nodes = decode_json<std::vector<NodeShare>>(j, "placement");
    pl.global_batch = batch;
  } else {
    if (!j.contains("global_batch")) j["global_batch"] = batch;
    pl = decode_json<Placement>(j, "placement");
  }
  return pl;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string observations, model, env;
  std::uint64_t seed = 1;
  int starts = 16;
};

int cmd_fit(const FitArgs& a, const Common& c) {
  const auto model = read_model(a.model);
  const auto env = read_env(a.env);
  const auto obs = load_observations(a.observations);
  FitOptions opts;
  opts.seed = a.seed;
  opts.starts = a.starts;
  const auto res = fit(model, env, obs, opts);
  json doc = res;
  json rows = json::array();
  for (std::size_t i = 0; i < res.residuals.size(); ++i)
    rows.push_back({{"index", i},
                    {"predicted", res.residuals[i].predicted},
                    {"observed", res.residuals[i].observed},
                    {"log_error", res.residuals[i].log_error}});
  emit(render(stamped(doc, c), rows, c), c);
  return kOk;
}

struct PredictArgs {
  std::string model, env, params, plan, placement;
  int gpus = -1, cpus = -1;
  double batch = 16;
};

int cmd_predict(const PredictArgs& a, const Common& c) {
  const auto model = read_model(a.model);
  const auto env = read_env(a.env);
  const auto params = read_params(a.params);
  const auto plan = parse_descriptor(a.plan);
  Placement pl;
  if (!a.placement.empty()) {
    pl = read_placement(a.placement, a.batch);
  } else {
    const int g = a.gpus >= 0 ? a.gpus : plan.gpus();
    const int cpus = a.cpus >= 0 ? a.cpus : proportional_cpus(g, env);
    pl = pack_placement(g, cpus, 0, a.batch, env);
  }
  require(pl.gpus() == plan.gpus(), ErrorCode::invalid_placement,
          "plan " + to_descriptor(plan) + " needs " + std::to_string(plan.gpus()) + " GPUs, placement has " +
              std::to_string(pl.gpus()));
  const auto p = predict(model, plan, pl, env, params);
  const auto mem = estimate_memory(model, plan, pl.global_batch, env);
  const auto tot = pl.total();
  json row{{"plan", to_descriptor(plan)},
           {"gpus", tot.gpus},
           {"cpus", tot.cpus},
           {"global_batch", pl.global_batch},
           {"t_iter", p.t_iter},
           {"throughput", p.throughput},
           {"t_fwd", p.t_fwd},
           {"t_bwd", p.t_bwd},
           {"t_dp", p.comm.dp},
           {"t_tp", p.comm.tp},
           {"t_pp", p.comm.pp},
           {"t_opt", p.t_opt},
           {"t_off", p.t_off},
           {"t_cc", p.t_cc},
           {"t_oo", p.t_oo},
           {"v_dp", p.volumes.dp},
           {"v_tp", p.volumes.tp},
           {"v_pp", p.volumes.pp},
           {"gpu_mem_est", mem.gpu_bytes()},
           {"host_mem_est", mem.host_states},
           {"fits_gpu_memory", mem.gpu_bytes() <= env.gpu_mem}};
  emit(render(row, json::array({row}), c), c);
  return kOk;
}

struct PlansArgs {
  std::string model, env, params;
  int gpus = 1, cpus = -1;
  double batch = 16;
};

int cmd_plans(const PlansArgs& a, const Common& c) {
  const auto model = read_model(a.model);
  const auto env = read_env(a.env);
  std::optional<PerfParams> params;
  if (!a.params.empty()) params = read_params(a.params);
  require(a.gpus >= 0, ErrorCode::invalid_argument, "--gpus must be >= 0");
  const int cpus = a.cpus >= 0 ? a.cpus : proportional_cpus(a.gpus, env);
  const auto pl = pack_placement(a.gpus, cpus, 0, a.batch, env);
  json rows = json::array();
  std::optional<PlanCandidate> best;
  for (const auto& plan : enumerate_plans(model, a.gpus, env.gpus_per_node)) {
    const auto mem = estimate_memory(model, plan, a.batch, env);
    json r{{"plan", to_descriptor(plan)},
           {"kind", std::string(to_string(plan.kind))},
           {"dp", plan.dp},
           {"tp", plan.tp},
           {"pp", plan.pp},
           {"ga_steps", plan.ga_steps},
           {"grad_ckpt", plan.grad_ckpt},
           {"gpu_mem_est", mem.gpu_bytes()},
           {"host_mem_est", mem.host_states},
           {"feasible", false},
           {"throughput", nullptr},
           {"t_iter", nullptr}};
    if (params) {
      if (auto cand = evaluate_plan(model, plan, pl, env, *params)) {
        r["feasible"] = true;
        r["throughput"] = cand->predicted_throughput;
        r["t_iter"] = cand->t_iter;
        if (!best || preferred(*cand, *best)) best = cand;
      }
    } else {
      r["feasible"] = mem.gpu_bytes() <= env.gpu_mem;
    }
    rows.push_back(r);
  }
  json doc{{"gpus", a.gpus},
           {"cpus", cpus},
           {"global_batch", a.batch},
           {"best", best ? json(to_descriptor(best->plan)) : json(nullptr)},
           {"plans", rows}};
  emit(render(doc, rows, c), c);
  return kOk;
}

struct CurveArgs {
  std::string model, env, params, axis = "gpu";
  int max = 8, gpus = 1;
  double batch = 16;
};

int cmd_curve(const CurveArgs& a, const Common& c) {
  const auto model = read_model(a.model);
  const auto env = read_env(a.env);
  const auto params = read_params(a.params);
  ResourceAxis axis;
  if (a.axis == "gpu") axis = ResourceAxis::Gpu;
  else if (a.axis == "cpu") axis = ResourceAxis::Cpu;
  else throw UsageError("--axis must be gpu or cpu");
  require(a.max >= 0, ErrorCode::invalid_argument, "--max must be >= 0");
  const auto curve = build_curve(model.name, model, a.batch, axis, ResourceVector{a.gpus, 0, 0}, a.max, env, params);
  json rows = json::array();
  for (const auto& p : curve.points)
    rows.push_back({{"amount", p.amount},
                    {"throughput", p.throughput},
                    {"plan", p.plan ? json(to_descriptor(*p.plan)) : json("")},
                    {"used", p.used},
                    {"valid", p.valid},
                    {"slope", slope(curve, p.amount)}});
  json doc{{"model", model.name}, {"axis", a.axis}, {"global_batch", a.batch}, {"points", rows}};
  if (axis == ResourceAxis::Cpu) doc["gpus"] = a.gpus;
  emit(render(doc, rows, c), c);
  return kOk;
}

struct ConfigArgs {
  std::string config;
  std::string policy;
  std::vector<std::string> policies;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  // trace-gen
  std::string spec;
  int n_jobs = -1;
  double load_scale = -1;
  std::string plans, tenancy;
};

RunConfig load_config(const ConfigArgs& a) {
  auto path = default_config_path(a.config);
  if (!path) throw UsageError(std::string("no config given: pass --config or set ") + kConfigEnvVar);
  auto cfg = load_run_config(*path);
  if (a.seed_given) {
    cfg.seed = a.seed;
    cfg.seed_given = true;
  }
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  return cfg;
}

int cmd_trace_gen(const ConfigArgs& a, const Common& c) {
  auto path = default_config_path(a.config);
  if (!path) throw UsageError(std::string("no config given: pass --config or set ") + kConfigEnvVar);
  auto doc = load_json(*path);
  const fs::path base = path->has_parent_path() ? path->parent_path() : fs::path(".");
  json spec_json = json::object();
  if (doc.contains("synthesize")) spec_json = doc.at("synthesize");
  if (!a.spec.empty()) spec_json = load_json(a.spec);
  doc.erase("synthesize");
  doc.erase("trace");
  doc.erase("philly");
  auto cfg = parse_run_config(doc, base);
  auto spec = parse_trace_spec(spec_json);
  if (spec.models.empty())
    for (const auto& [name, e] : cfg.catalog) spec.models.push_back(name);
  if (a.n_jobs >= 0) spec.n_jobs = a.n_jobs;
  if (a.load_scale > 0) spec.load_scale = a.load_scale;
  if (!a.plans.empty()) spec.plans = a.plans == "best_plan" ? PlanAssignment::BestPlan : PlanAssignment::Random;
  if (!a.tenancy.empty()) spec.tenancy = a.tenancy == "multi_tenant" ? Tenancy::MultiTenant : Tenancy::Single;
  std::uint64_t seed = cfg.seed;
  if (a.seed_given) seed = a.seed;
  else if (!cfg.seed_given) throw UsageError("trace-gen needs a seed (--seed or config \"seed\")");
  const auto trace = synthesize_trace(spec, cfg.catalog, cfg.env, seed);
  emit(format_trace(trace), c);
  return kOk;
}

json summary_row(const Metrics& m) {
  return json{{"policy", m.policy},         {"completed", m.completed},         {"rejected", m.rejected},
              {"unfinished", m.unfinished}, {"avg_jct_s", m.avg_jct_s},         {"p99_jct_s", m.p99_jct_s},
              {"makespan_s", m.makespan_s}, {"gpu_hours", m.gpu_hours},         {"total_reconfigs", m.total_reconfigs},
              {"total_speedup", m.total_speedup}};
}

// Writes metrics.json, series.csv, jobs.csv and audit.jsonl into `dir`.
void write_bundle(const Metrics& m, const fs::path& dir, const Common& c) {
  write_file_atomic(dir / "metrics.json", stamped(metrics_json(m), c).dump(2) + "\n");
  write_file_atomic(dir / "series.csv", series_csv(m));
  json rows = metrics_json(m).at("jobs");
  write_file_atomic(dir / "jobs.csv", rows.empty() ? std::string() : to_csv(rows));
  std::string audit;
  for (const auto& line : m.audit) audit += line + "\n";
  write_file_atomic(dir / "audit.jsonl", audit);
}

int cmd_simulate(const ConfigArgs& a, const Common& c) {
  auto cfg = load_config(a);
  PolicyKind p = cfg.policies.front();
  if (!a.policy.empty()) p = parse_policy(a.policy);
  const auto m = simulate(cfg.trace, cfg.catalog, cfg.env, cfg.sim_config(p));
  write_bundle(m, cfg.output_dir, c);
  const auto row = summary_row(m);
  emit(render(stamped(row, c), json::array({row}), c), c);
  return kOk;
}

int cmd_compare(const ConfigArgs& a, const Common& c) {
  auto cfg = load_config(a);
  std::vector<PolicyKind> policies = cfg.policies;
  if (!a.policies.empty()) {
    policies.clear();
    for (const auto& s : a.policies) policies.push_back(parse_policy(s));
  }
  if (policies.size() < 2) throw UsageError("compare needs at least two policies");
  json rows = json::array();
  std::optional<Metrics> first;
  int failures = 0;
  for (auto p : policies) {
    json row{{"policy", std::string(to_string(p))}, {"status", "ok"}, {"error", ""}};
    try {
      const auto m = simulate(cfg.trace, cfg.catalog, cfg.env, cfg.sim_config(p));
      write_bundle(m, cfg.output_dir / std::string(to_string(p)), c);
      if (!first) first = m;
      auto ratio = [](double x, double ref) { return ref > 0 ? x / ref : 0.0; };
      row["completed"] = m.completed;
      row["avg_jct_s"] = m.avg_jct_s;
      row["p99_jct_s"] = m.p99_jct_s;
      row["makespan_s"] = m.makespan_s;
      row["avg_jct_ratio"] = ratio(m.avg_jct_s, first->avg_jct_s);
      row["p99_jct_ratio"] = ratio(m.p99_jct_s, first->p99_jct_s);
      row["makespan_ratio"] = ratio(m.makespan_s, first->makespan_s);
    } catch (const Error& e) {
      ++failures;
      row["status"] = "failed";
      row["error"] = std::string(to_string(e.code())) + ": " + e.what();
      for (const char* k : {"completed", "avg_jct_s", "p99_jct_s", "makespan_s", "avg_jct_ratio", "p99_jct_ratio",
                            "makespan_ratio"})
        row[k] = nullptr;
    }
    rows.push_back(row);
  }
  // column order fixed regardless of which policies failed
  json ordered = json::array();
  for (const auto& r : rows) {
    json o;
    for (const char* k : {"policy", "status", "completed", "avg_jct_s", "p99_jct_s", "makespan_s", "avg_jct_ratio",
                          "p99_jct_ratio", "makespan_ratio", "error"})
      o[k] = r.at(k);
    ordered.push_back(o);
  }
  json doc{{"policies", ordered}};
  write_file_atomic(cfg.output_dir / "compare.json", stamped(doc, c).dump(2) + "\n");
  write_file_atomic(cfg.output_dir / "compare.csv", to_csv(ordered));
  emit(render(stamped(doc, c), ordered, c), c);
  if (failures == static_cast<int>(policies.size())) {
    report("all_policies_failed", "every policy run failed", kRuntime);
    return kRuntime;
  }
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--no-timestamp", c.no_timestamp, "Omit generated_at fields");
  sub->add_option("-o,--out", c.out, "Write to file instead of stdout");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-schedules execution plans and cluster resources for DL training jobs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "plansched 0.1.0");
  Common common;

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit performance-model coefficients from observations");
  fit_cmd->add_option("--observations", fa.observations, "JSON-lines observations")->required();
  fit_cmd->add_option("--model", fa.model, "Model spec JSON")->required();
  fit_cmd->add_option("--env", fa.env, "Environment spec JSON")->required();
  fit_cmd->add_option("--seed", fa.seed, "Multi-start seed");
  fit_cmd->add_option("--starts", fa.starts, "Random starts")->check(CLI::PositiveNumber);
  add_common(fit_cmd, common);

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Predict iteration time of one configuration");
  predict_cmd->add_option("--model", pa.model)->required();
  predict_cmd->add_option("--env", pa.env)->required();
  predict_cmd->add_option("--params", pa.params, "Coefficients or fit result JSON")->required();
  predict_cmd->add_option("--plan", pa.plan, "Plan descriptor, e.g. 3d-d2-t2-p1-m1-a1-gc0")->required();
  predict_cmd->add_option("--gpus", pa.gpus);
  predict_cmd->add_option("--cpus", pa.cpus);
  predict_cmd->add_option("--placement", pa.placement, "Placement JSON (inline or path)");
  predict_cmd->add_option("--batch", pa.batch, "Global batch size");
  add_common(predict_cmd, common);

  PlansArgs la;
  auto* plans_cmd = app.add_subcommand("plans", "Enumerate execution plans for a GPU count");
  plans_cmd->add_option("--model", la.model)->required();
  plans_cmd->add_option("--env", la.env)->required();
  plans_cmd->add_option("--params", la.params);
  plans_cmd->add_option("--gpus", la.gpus)->required();
  plans_cmd->add_option("--cpus", la.cpus);
  plans_cmd->add_option("--batch", la.batch);
  add_common(plans_cmd, common);

  CurveArgs ca;
  auto* curve_cmd = app.add_subcommand("curve", "Dump a resource sensitivity curve");
  curve_cmd->add_option("--model", ca.model)->required();
  curve_cmd->add_option("--env", ca.env)->required();
  curve_cmd->add_option("--params", ca.params)->required();
  curve_cmd->add_option("--axis", ca.axis);
  curve_cmd->add_option("--max", ca.max, "Largest amount on the axis");
  curve_cmd->add_option("--gpus", ca.gpus, "Fixed GPU count for the cpu axis");
  curve_cmd->add_option("--batch", ca.batch);
  add_common(curve_cmd, common);

  ConfigArgs ga;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", ga.config, std::string("Run config JSON (default: $") + kConfigEnvVar + ")");
    sub->add_option("--seed", ga.seed)->each([&](const std::string&) { ga.seed_given = true; });
    add_common(sub, common);
  };
  auto* tg_cmd = app.add_subcommand("trace-gen", "Synthesize a job trace");
  add_config(tg_cmd);
  tg_cmd->add_option("--spec", ga.spec, "Trace spec JSON (overrides the config's synthesize block)");
  tg_cmd->add_option("--n-jobs", ga.n_jobs);
  tg_cmd->add_option("--load-scale", ga.load_scale);
  tg_cmd->add_option("--plans", ga.plans)->check(CLI::IsMember({"random", "best_plan"}));
  tg_cmd->add_option("--tenancy", ga.tenancy)->check(CLI::IsMember({"single", "multi_tenant"}));

  auto* sim_cmd = app.add_subcommand("simulate", "Replay a trace under one policy");
  add_config(sim_cmd);
  sim_cmd->add_option("--policy", ga.policy);
  sim_cmd->add_option("--out-dir", ga.out_dir);

  auto* cmp_cmd = app.add_subcommand("compare", "Replay a trace under several policies");
  add_config(cmp_cmd);
  cmp_cmd->add_option("--policies", ga.policies)->delimiter(',');
  cmp_cmd->add_option("--out-dir", ga.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what(), kUsage);
    return kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fa, common);
    if (*predict_cmd) return cmd_predict(pa, common);
    if (*plans_cmd) return cmd_plans(la, common);
    if (*curve_cmd) return cmd_curve(ca, common);
    if (*tg_cmd) return cmd_trace_gen(ga, common);
    if (*sim_cmd) return cmd_simulate(ga, common);
    if (*cmp_cmd) return cmd_compare(ga, common);
  } catch (const UsageError& e) {
    report("usage", e.what(), kUsage);
    return kUsage;
  } catch (const Error& e) {
    const int code = exit_for(e.code());
    report(to_string(e.code()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report("internal", e.what(), kRuntime);
    return kRuntime;
  }
  return kUsage;
}
