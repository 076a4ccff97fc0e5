#ifndef PLANSCHED_TESTS_FIXTURES_HPP
#define PLANSCHED_TESTS_FIXTURES_HPP

// Synthetic environments, models and coefficients shared by the tests.

#include <random>
#include <string>
#include <vector>

#include "plansched/plansched.hpp"

namespace fx {

using namespace plansched;

inline EnvSpec env(int gpus_per_node = 8, int cpus_per_node = 96) {
  EnvSpec e;
  e.b_intra = 2e11;
  e.b_inter = 2.5e10;
  e.b_pcie = 2.5e10;
  e.gpus_per_node = gpus_per_node;
  e.cpus_per_node = cpus_per_node;
  e.mem_per_node = 1'000'000'000'000;
  e.gpu_mem = 80e9;
  return e;
}

inline ModelSpec model(std::string name, double params, std::int64_t s, std::int64_t h, int l, double t_fwd_ref,
                       double t_pp_ref) {
  ModelSpec m;
  m.name = std::move(name);
  m.seq_len = s;
  m.hidden = h;
  m.layers = l;
  m.param_count = params;
  m.profile.t_fwd_ref = t_fwd_ref;
  m.profile.ref_batch_per_gpu = 1;
  m.profile.t_pp_ref = t_pp_ref;
  m.profile.ref_pp_gpus = 1;
  return m;
}

// ~0.35B encoder, fits anywhere
inline ModelSpec small() { return model("small", 3.4e8, 512, 1024, 24, 0.02, 0.02); }
// ~1.5B decoder
inline ModelSpec medium() { return model("medium", 1.5e9, 1024, 1600, 48, 0.06, 0.06); }
// ~6.7B decoder, does not fit one GPU without offload
inline ModelSpec large() { return model("large", 6.7e9, 2048, 4096, 32, 0.25, 0.25); }

inline PerfParams params() {
  PerfParams p;
  p.k_bwd = 2.0;
  p.k_sync = 4.0;
  p.k_opt = 2e-11;
  p.k_opt_off = 4e-10;
  p.k_off = 3.0;
  p.k_swap = 2.0;
  p.k_const = 0.05;
  return p;
}

inline ExecutionPlan plan(std::string_view d) { return parse_descriptor(d); }

inline Placement packed(int gpus, const EnvSpec& e, double batch = 16, int cpus = -1) {
  return pack_placement(gpus, cpus >= 0 ? cpus : proportional_cpus(gpus, e), 0, batch, e);
}

// Random coefficients in realistic sub-ranges of the fit box.
inline PerfParams random_params(std::mt19937_64& rng) {
  auto logu = [&](double lo, double hi) {
    return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
  };
  PerfParams p;
  p.k_bwd = logu(1.5, 3.0);
  p.k_sync = logu(1.5, 16.0);
  p.k_opt = logu(1e-11, 1e-10);
  p.k_opt_off = logu(2e-10, 2e-9);
  p.k_off = logu(1.5, 16.0);
  p.k_swap = logu(1.5, 16.0);
  p.k_const = std::uniform_real_distribution<double>(0.01, 0.2)(rng);
  return p;
}

inline ModelCatalog catalog(const std::vector<ModelSpec>& models, const PerfParams& p, double batch = 16) {
  ModelCatalog c;
  for (const auto& m : models) {
    ModelEntry e;
    e.spec = m;
    e.params = p;
    e.global_batch = batch;
    c.emplace(m.name, e);
  }
  return c;
}

// Seven profiling configurations: four GPU-resident, three ZeRO-Offload with
// varying CPU counts. Batches vary so the forward/backward terms separate from
// the constant.
inline std::vector<std::pair<ExecutionPlan, Placement>> training_configs(const EnvSpec& e) {
  auto split = [](std::vector<NodeShare> shares, double b) { return Placement{std::move(shares), b}; };
  return {
      {plan("3d-d1"), packed(1, e, 8, 12)},
      {plan("3d-d1"), packed(1, e, 32, 12)},
      {plan("3d-d2"), split({{0, 1, 12, 0}, {1, 1, 12, 0}}, 16)},
      {plan("zero-d4"), split({{0, 2, 24, 0}, {1, 2, 24, 0}}, 32)},
      {plan("offload-d1"), packed(1, e, 16, 2)},
      {plan("offload-d1"), packed(1, e, 16, 24)},
      {plan("offload-d2"), split({{0, 1, 8, 0}, {1, 1, 8, 0}}, 16)},
  };
}

// Twenty configurations disjoint from the training set.
inline std::vector<std::pair<ExecutionPlan, Placement>> heldout_configs(const EnvSpec& e) {
  auto split = [](std::vector<NodeShare> shares, double b) { return Placement{std::move(shares), b}; };
  return {
      {plan("3d-d2"), packed(2, e, 16)},
      {plan("3d-d4"), packed(4, e, 32)},
      {plan("3d-d8"), packed(8, e, 64)},
      {plan("3d-d1-t2"), packed(2, e, 16)},
      {plan("3d-d2-t2"), packed(4, e, 16)},
      {plan("3d-d1-t4-a2"), packed(4, e, 32)},
      {plan("3d-d1-t1-p2-m2"), packed(2, e, 16)},
      {plan("3d-d2-t1-p2-m2-gc1"), packed(4, e, 32)},
      {plan("3d-d4-a2"), packed(4, e, 32)},
      {plan("3d-d1-a4-gc1"), packed(1, e, 32)},
      {plan("3d-d4"), split({{0, 2, 24, 0}, {1, 2, 24, 0}}, 32)},
      {plan("zero-d2"), packed(2, e, 16)},
      {plan("zero-d8"), packed(8, e, 64)},
      {plan("zero-d8-a2"), split({{0, 4, 48, 0}, {1, 4, 48, 0}}, 64)},
      {plan("zero-d2-gc1"), packed(2, e, 32)},
      {plan("offload-d1"), packed(1, e, 32, 8)},
      {plan("offload-d2"), packed(2, e, 16, 16)},
      {plan("offload-d4"), packed(4, e, 32, 32)},
      {plan("offload-d4-a2"), split({{0, 2, 16, 0}, {1, 2, 16, 0}}, 32)},
      {plan("offload-d1-gc1"), packed(1, e, 16, 6)},
  };
}

// Observations from the model itself, each scaled by exp(sigma * z).
inline std::vector<Observation> observe(const ModelSpec& m, const EnvSpec& e, const PerfParams& truth,
                                        const std::vector<std::pair<ExecutionPlan, Placement>>& configs,
                                        double sigma = 0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Observation> out;
  for (const auto& [pl, place] : configs) {
    const double t = predict(m, pl, place, e, truth).t_iter;
    out.push_back({pl, place, t * std::exp(sigma * z(rng))});
  }
  return out;
}

// Job built the way the simulator builds one: packed request, best plan on it
// unless `plan` is given, minimum demand from the scheduler.
inline Job make_job(const Scheduler& s, std::string id, std::string model, int gpus,
                    JobClass cls = JobClass::BestEffort, std::string tenant = "t",
                    std::optional<ExecutionPlan> plan = std::nullopt) {
  const auto& e = s.env();
  Job j;
  j.id = std::move(id);
  j.model = std::move(model);
  j.tenant = std::move(tenant);
  j.cls = cls;
  j.global_batch = s.model(j).global_batch;
  j.requested = {gpus, proportional_cpus(gpus, e), static_cast<std::int64_t>(gpus) * e.mem_per_node / e.gpus_per_node};
  if (plan) {
    j.requested_plan = *plan;
  } else {
    const auto pl = pack_placement(gpus, j.requested.cpus, j.requested.mem, j.global_batch, e);
    j.requested_plan = s.plan_on(j, pl).value().plan;
  }
  j.min_res = s.compute_min_res(j);
  return j;
}

// One 4-GPU node shared by a job that scales almost linearly ("sens") and a
// small, overhead-bound job that saturates after one GPU ("flat").
inline EnvSpec two_job_env() { return env(4, 48); }

inline ModelCatalog two_job_catalog() {
  auto c = catalog({model("sens", 3.4e8, 512, 1024, 24, 0.02, 0.02)}, params(), 32);
  auto flat_params = params();
  flat_params.k_const = 0.5;
  auto f = catalog({model("flat", 1e8, 512, 768, 12, 0.005, 0.005)}, flat_params, 32);
  c.insert(f.begin(), f.end());
  return c;
}

}  // namespace fx

#endif
