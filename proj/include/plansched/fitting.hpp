#ifndef PLANSCHED_FITTING_HPP
#define PLANSCHED_FITTING_HPP

// Recovers the seven PerfParams coefficients from measured iteration times by
// minimizing RMSLE with a bounded multi-start Nelder-Mead search.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "plansched/core.hpp"
#include "plansched/perf_model.hpp"

namespace plansched {

struct Observation {
  ExecutionPlan plan;
  Placement placement;
  double observed_t_iter = 0;  // s
};

struct Residual {
  double predicted = 0;
  double observed = 0;
  double log_error = 0;  // log1p(pred) - log1p(obs)
};

struct FitResult {
  PerfParams params;
  double rmsle = 0;
  int n_points = 0;
  bool converged = true;
  std::vector<Residual> residuals;
};

struct FitOptions {
  std::uint64_t seed = 1;
  int starts = 16;
  int max_evals_per_start = 6000;
  double refit_threshold = 0.10;  // relative prediction error that triggers a refit
};

inline constexpr int kMinFitPoints = 7;
inline constexpr int kMinOffloadPoints = 3;

namespace detail {

inline constexpr int kDim = 7;
using Vec = std::array<double, kDim>;

// Search box. Entries flagged log are searched in log space.
struct Bound {
  double lo, hi;
  bool log;
};
inline constexpr std::array<Bound, kDim> kBounds{{
    {0.5, 5.0, true},      // k_bwd
    {1.0, 64.0, true},     // k_sync
    {1e-12, 1e-6, true},   // k_opt
    {1e-12, 1e-6, true},   // k_opt_off
    {1.0, 64.0, true},     // k_off
    {1.0, 64.0, true},     // k_swap
    {0.0, 10.0, false},    // k_const
}};

inline double decode_one(double u, const Bound& b) {
  u = std::clamp(u, 0.0, 1.0);
  if (b.log) return std::exp(std::log(b.lo) + u * (std::log(b.hi) - std::log(b.lo)));
  return b.lo + u * (b.hi - b.lo);
}

inline double encode_one(double v, const Bound& b) {
  v = std::clamp(v, b.lo, b.hi);
  if (b.log) return (std::log(v) - std::log(b.lo)) / (std::log(b.hi) - std::log(b.lo));
  return (v - b.lo) / (b.hi - b.lo);
}

inline PerfParams decode(const Vec& u) {
  PerfParams p;
  p.k_bwd = decode_one(u[0], kBounds[0]);
  p.k_sync = decode_one(u[1], kBounds[1]);
  p.k_opt = decode_one(u[2], kBounds[2]);
  p.k_opt_off = decode_one(u[3], kBounds[3]);
  p.k_off = decode_one(u[4], kBounds[4]);
  p.k_swap = decode_one(u[5], kBounds[5]);
  p.k_const = decode_one(u[6], kBounds[6]);
  return p;
}

inline Vec encode(const PerfParams& p) {
  return {encode_one(p.k_bwd, kBounds[0]),    encode_one(p.k_sync, kBounds[1]),
          encode_one(p.k_opt, kBounds[2]),    encode_one(p.k_opt_off, kBounds[3]),
          encode_one(p.k_off, kBounds[4]),    encode_one(p.k_swap, kBounds[5]),
          encode_one(p.k_const, kBounds[6])};
}

inline Vec clamp_unit(Vec v) {
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return v;
}

struct SimplexResult {
  Vec x;
  double f;
  bool converged;
};

// Nelder-Mead on the unit cube; trial points are projected onto the box.
template <class F>
SimplexResult nelder_mead(F&& f, Vec start, double step, int max_evals) {
  constexpr int n = kDim;
  std::array<Vec, n + 1> pts;
  std::array<double, n + 1> vals;
  pts[0] = clamp_unit(start);
  for (int i = 0; i < n; ++i) {
    pts[i + 1] = pts[0];
    pts[i + 1][i] += (pts[0][i] + step <= 1.0) ? step : -step;
  }
  int evals = 0;
  auto eval = [&](const Vec& x) {
    ++evals;
    return f(x);
  };
  for (int i = 0; i <= n; ++i) vals[i] = eval(pts[i]);

  bool converged = false;
  while (evals < max_evals) {
    std::array<int, n + 1> idx;
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    {
      auto p2 = pts;
      auto v2 = vals;
      for (int i = 0; i <= n; ++i) {
        pts[i] = p2[idx[i]];
        vals[i] = v2[idx[i]];
      }
    }
    double size = 0;
    for (int i = 1; i <= n; ++i)
      for (int j = 0; j < n; ++j) size = std::max(size, std::abs(pts[i][j] - pts[0][j]));
    if (vals[n] - vals[0] <= 1e-15 * (1.0 + std::abs(vals[0])) && size < 1e-9) {
      converged = true;
      break;
    }

    Vec centroid{};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) centroid[j] += pts[i][j] / n;
    auto along = [&](double t) {
      Vec v;
      for (int j = 0; j < n; ++j) v[j] = centroid[j] + t * (pts[n][j] - centroid[j]);
      return clamp_unit(v);
    };
    Vec xr = along(-1.0);
    double fr = eval(xr);
    if (fr < vals[0]) {
      Vec xe = along(-2.0);
      double fe = eval(xe);
      if (fe < fr) {
        pts[n] = xe;
        vals[n] = fe;
      } else {
        pts[n] = xr;
        vals[n] = fr;
      }
    } else if (fr < vals[n - 1]) {
      pts[n] = xr;
      vals[n] = fr;
    } else {
      Vec xc = fr < vals[n] ? along(-0.5) : along(0.5);
      double fc = eval(xc);
      if (fc < std::min(fr, vals[n])) {
        pts[n] = xc;
        vals[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          for (int j = 0; j < n; ++j) pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
          vals[i] = eval(pts[i]);
        }
      }
    }
  }
  int best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  return {pts[best], vals[best], converged};
}

}  // namespace detail

inline std::vector<Residual> residuals(const ModelSpec& model, const EnvSpec& env, const std::vector<Observation>& obs,
                                       const PerfParams& params) {
  std::vector<Residual> out;
  out.reserve(obs.size());
  for (const auto& o : obs) {
    const double pred = predict(model, o.plan, o.placement, env, params).t_iter;
    out.push_back({pred, o.observed_t_iter, std::log1p(pred) - std::log1p(o.observed_t_iter)});
  }
  return out;
}

inline double rmsle(const ModelSpec& model, const EnvSpec& env, const std::vector<Observation>& obs,
                    const PerfParams& params) {
  if (obs.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : residuals(model, env, obs, params)) sum += r.log_error * r.log_error;
  return std::sqrt(sum / static_cast<double>(obs.size()));
}

inline void check_fit_inputs(const std::vector<Observation>& obs) {
  require(static_cast<int>(obs.size()) >= kMinFitPoints, ErrorCode::too_few_points,
          "fitting needs at least " + std::to_string(kMinFitPoints) + " observations, got " +
              std::to_string(obs.size()));
  const auto offload = std::count_if(obs.begin(), obs.end(), [](const Observation& o) { return o.plan.is_offload(); });
  require(offload >= kMinOffloadPoints, ErrorCode::missing_offload_points,
          "fitting needs at least " + std::to_string(kMinOffloadPoints) + " ZeRO-Offload observations, got " +
              std::to_string(offload));
  for (const auto& o : obs)
    require(o.observed_t_iter > 0, ErrorCode::invalid_argument, "observed iteration time must be positive");
}

// `initial`, when given, joins the multi-start set so the result is never
// worse than it.
inline FitResult fit(const ModelSpec& model, const EnvSpec& env, const std::vector<Observation>& obs,
                     const FitOptions& opts = {}, const std::optional<PerfParams>& initial = std::nullopt) {
  check_fit_inputs(obs);
  // Configurations are fixed across the search: precompute what does not
  // depend on the coefficients.
  struct Pre {
    ExecutionPlan plan;
    double t_fwd, t_dp, t_tp, t_pp, cpus_per_rank, t_off, obs_log;
  };
  std::vector<Pre> pre;
  pre.reserve(obs.size());
  for (const auto& o : obs) {
    const auto vol = comm_volumes(model, o.plan, o.placement.global_batch);
    const auto ct = comm_times(vol, o.plan, o.placement, env);
    pre.push_back({o.plan, forward_time(model, o.plan, o.placement.global_batch), ct.dp, ct.tp, ct.pp,
                   static_cast<double>(o.placement.total().cpus) / o.plan.gpus(), offload_time(model, o.plan, env),
                   std::log1p(o.observed_t_iter)});
  }
  auto objective = [&](const detail::Vec& u) {
    const PerfParams p = detail::decode(u);
    double sum = 0;
    for (const auto& x : pre) {
      const double bwd = backward_time(x.plan, x.t_fwd, p);
      const CommTimes ct{x.t_dp, x.t_tp, x.t_pp};
      double t_opt;
      if (x.plan.is_offload() && x.cpus_per_rank <= 0) return std::numeric_limits<double>::infinity();
      t_opt = optimizer_time(model, x.plan, x.cpus_per_rank, p);
      const double t = combine_cc(x.t_fwd, bwd, ct, x.plan, p) + combine_oo(t_opt, x.t_off, x.t_dp, x.plan, p) +
                       p.k_const;
      const double e = std::log1p(t) - x.obs_log;
      sum += e * e;
    }
    return std::sqrt(sum / static_cast<double>(pre.size()));
  };

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<detail::Vec> starts;
  if (initial) starts.push_back(detail::encode(*initial));
  for (int s = 0; s < opts.starts; ++s) {
    detail::Vec v;
    for (auto& x : v) x = unit(rng);
    starts.push_back(v);
  }

  detail::SimplexResult best{{}, std::numeric_limits<double>::infinity(), false};
  for (const auto& s : starts) {
    auto r = detail::nelder_mead(objective, s, 0.15, opts.max_evals_per_start);
    // restart from the optimum until it stops moving
    for (int round = 0; round < 8; ++round) {
      auto again = detail::nelder_mead(objective, r.x, 0.02, opts.max_evals_per_start);
      const bool moved = again.f < r.f - 1e-15;
      if (again.f <= r.f) r = again;
      if (!moved) break;
    }
    if (r.f < best.f) best = r;
  }
  if (initial) {
    const double f0 = objective(detail::encode(*initial));
    if (f0 <= best.f) best = {detail::encode(*initial), f0, true};
  }

  FitResult out;
  out.params = detail::decode(best.x);
  out.n_points = static_cast<int>(obs.size());
  out.residuals = residuals(model, env, obs, out.params);
  out.rmsle = rmsle(model, env, obs, out.params);
  out.converged = best.converged && std::isfinite(best.f);
  return out;
}

// Refits over history + new_obs when new_obs is mispredicted by more than
// the threshold; otherwise returns `current` unchanged.
inline FitResult maybe_refit(const FitResult& current, const ModelSpec& model, const EnvSpec& env,
                             const Observation& new_obs, const std::vector<Observation>& history,
                             const FitOptions& opts = {}) {
  const double pred = predict(model, new_obs.plan, new_obs.placement, env, current.params).t_iter;
  if (std::abs(pred - new_obs.observed_t_iter) / new_obs.observed_t_iter <= opts.refit_threshold) return current;
  auto all = history;
  all.push_back(new_obs);
  return fit(model, env, all, opts, current.params);
}

}  // namespace plansched

#endif
