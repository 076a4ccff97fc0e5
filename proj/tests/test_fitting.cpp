#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace plansched;

namespace {

double max_rel_error(const ModelSpec& m, const EnvSpec& e, const std::vector<Observation>& obs, const PerfParams& p) {
  double worst = 0;
  for (const auto& o : obs)
    worst = std::max(worst, std::abs(predict(m, o.plan, o.placement, e, p).t_iter / o.observed_t_iter - 1));
  return worst;
}

}  // namespace

TEST(Fit, NoiselessSelfConsistency) {
  const auto e = fx::env();
  for (const auto& m : {fx::small(), fx::medium(), fx::large()})
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      std::mt19937_64 rng(seed);
      const auto truth = fx::random_params(rng);
      const auto train = fx::observe(m, e, truth, fx::training_configs(e));
      FitOptions o;
      o.seed = seed;
      const auto r = fit(m, e, train, o);
      EXPECT_EQ(r.n_points, 7);
      EXPECT_EQ(r.residuals.size(), 7u);
      EXPECT_LT(max_rel_error(m, e, train, r.params), 1e-3) << m.name << " seed " << seed;
      EXPECT_LT(max_rel_error(m, e, fx::observe(m, e, truth, fx::heldout_configs(e)), r.params), 1e-2)
          << m.name << " seed " << seed;
    }
}

TEST(Fit, RmsleMatchesResiduals) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto train = fx::observe(m, e, fx::params(), fx::training_configs(e), 0.05, 3);
  const auto r = fit(m, e, train);
  double sum = 0;
  for (const auto& x : r.residuals) {
    EXPECT_DOUBLE_EQ(x.log_error, std::log1p(x.predicted) - std::log1p(x.observed));
    sum += x.log_error * x.log_error;
  }
  EXPECT_NEAR(r.rmsle, std::sqrt(sum / 7), 1e-15);
  EXPECT_GT(r.rmsle, 0);
}

TEST(Fit, Deterministic) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto train = fx::observe(m, e, fx::params(), fx::training_configs(e), 0.03, 9);
  const auto a = fit(m, e, train), b = fit(m, e, train);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.rmsle, b.rmsle);
}

TEST(Fit, TooFewPoints) {
  const auto e = fx::env();
  auto train = fx::observe(fx::medium(), e, fx::params(), fx::training_configs(e));
  train.pop_back();
  try {
    fit(fx::medium(), e, train);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::too_few_points);
  }
}

TEST(Fit, MissingOffloadPoints) {
  const auto e = fx::env();
  auto train = fx::observe(fx::medium(), e, fx::params(), fx::training_configs(e));
  train.back().plan = fx::plan("3d-d2");
  try {
    fit(fx::medium(), e, train);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::missing_offload_points);
  }
}

TEST(Fit, InitialIsNeverBeaten) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto train = fx::observe(m, e, fx::params(), fx::training_configs(e));
  FitOptions o;
  o.starts = 0;
  const auto r = fit(m, e, train, o, fx::params());
  EXPECT_LE(r.rmsle, rmsle(m, e, train, fx::params()) + 1e-15);
}

TEST(Refit, SkippedWhenPredictionIsClose) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto train = fx::observe(m, e, fx::params(), fx::training_configs(e));
  const auto cur = fit(m, e, train);
  auto extra = fx::observe(m, e, fx::params(), {fx::heldout_configs(e)[0]}, 0.0)[0];
  extra.observed_t_iter *= 1.05;
  const auto r = maybe_refit(cur, m, e, extra, train);
  EXPECT_EQ(r.params, cur.params);
  EXPECT_EQ(r.n_points, 7);
}

TEST(Refit, TriggeredByLargeError) {
  const auto e = fx::env();
  const auto m = fx::medium();
  auto shifted = fx::params();
  shifted.k_const = 0.5;
  const auto train = fx::observe(m, e, fx::params(), fx::training_configs(e));
  const auto cur = fit(m, e, train);
  // the cluster now carries a much larger fixed overhead
  const auto fresh = fx::observe(m, e, shifted, fx::heldout_configs(e));
  const auto r = maybe_refit(cur, m, e, fresh[0], train);
  EXPECT_EQ(r.n_points, 8);
  auto all = train;
  all.push_back(fresh[0]);
  EXPECT_LE(r.rmsle, rmsle(m, e, all, cur.params));
}
