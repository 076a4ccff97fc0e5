#include <gtest/gtest.h>

#include <random>
#include <set>
#include <tuple>

#include "fixtures.hpp"

using namespace plansched;

namespace {

using Shape = std::tuple<int, int, int>;

std::set<Shape> shapes(const std::vector<ExecutionPlan>& plans) {
  std::set<Shape> out;
  for (const auto& p : plans) out.insert({p.dp, p.tp, p.pp});
  return out;
}

// Every (kind, d, t, p, a, gc) over a full cube, filtered by the rules.
std::set<std::string> brute_plans(int g, int layers, int gpn) {
  std::set<std::string> out;
  for (int d = 1; d <= g; ++d)
    for (int t = 1; t <= g; ++t)
      for (int p = 1; p <= g; ++p) {
        if (d * t * p != g || t > gpn || gpn % t || layers % p) continue;
        for (auto kind : {PlanKind::ThreeD, PlanKind::ZeroDP, PlanKind::ZeroOffload}) {
          if (kind != PlanKind::ThreeD && (t != 1 || p != 1)) continue;
          for (int a : {1, 2, 4, 8})
            for (bool gc : {false, true}) {
              ExecutionPlan x{kind, d, t, p, a, p, gc};
              out.insert(to_descriptor(x));
            }
        }
      }
  return out;
}

std::set<std::string> descriptors(const std::vector<ExecutionPlan>& plans) {
  std::set<std::string> out;
  for (const auto& p : plans) out.insert(to_descriptor(p));
  return out;
}

}  // namespace

TEST(Enumerate, ZeroGpusIsEmpty) { EXPECT_TRUE(enumerate_plans(fx::medium(), 0, 8).empty()); }

TEST(Enumerate, OneGpu) {
  const auto plans = enumerate_plans(fx::medium(), 1, 8);
  EXPECT_EQ(shapes(plans), (std::set<Shape>{{1, 1, 1}}));
  EXPECT_EQ(plans.size(), 3u * 4 * 2);
  EXPECT_TRUE(descriptors(plans).count("offload-d1-t1-p1-m1-a1-gc0"));
}

TEST(Enumerate, FourGpuShapes) {
  const auto plans = enumerate_plans(fx::medium(), 4, 8);
  EXPECT_EQ(shapes(plans), (std::set<Shape>{{4, 1, 1}, {2, 2, 1}, {2, 1, 2}, {1, 4, 1}, {1, 2, 2}, {1, 1, 4}}));
  // 6 shapes x 8 (a, gc) for 3D, plus 2 ZeRO kinds on the pure-DP shape
  EXPECT_EQ(plans.size(), 6u * 8 + 2 * 8);
}

TEST(Enumerate, ThreeGpusIndivisibleLayers) {
  auto m = fx::medium();
  m.layers = 32;
  for (int gpn : {3, 6}) EXPECT_EQ(shapes(enumerate_plans(m, 3, gpn)), (std::set<Shape>{{3, 1, 1}, {1, 3, 1}}));
  EXPECT_EQ(shapes(enumerate_plans(m, 3, 8)), (std::set<Shape>{{3, 1, 1}}));
}

TEST(Enumerate, MatchesBruteForceAndPlansAreValid) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const int g = std::uniform_int_distribution<int>(0, 24)(rng);
    const int gpn = std::vector<int>{1, 2, 4, 6, 8, 16}[std::uniform_int_distribution<int>(0, 5)(rng)];
    auto m = fx::medium();
    m.layers = std::uniform_int_distribution<int>(1, 48)(rng);
    const auto plans = enumerate_plans(m, g, gpn);
    EXPECT_EQ(descriptors(plans), brute_plans(g, m.layers, gpn)) << g << " " << gpn << " " << m.layers;
    for (const auto& p : plans) {
      EXPECT_NO_THROW(p.validate());
      EXPECT_EQ(p.gpus(), g);
      EXPECT_EQ(p.micro_batches, p.pp);
    }
  }
}

TEST(Memory, CheckpointingScalesActivationsOnly) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto off = estimate_memory(m, fx::plan("3d-d2-t2-p1-a2-gc0"), 16, e);
  const auto on = estimate_memory(m, fx::plan("3d-d2-t2-p1-a2-gc1"), 16, e);
  EXPECT_EQ(on.model_states, off.model_states);
  EXPECT_DOUBLE_EQ(on.activations, off.activations * e.memory.gc_factor);
}

TEST(Memory, OffloadMovesStatesToHost) {
  const auto e = fx::env();
  const auto m = fx::large();
  const auto zero = estimate_memory(m, fx::plan("zero-d2"), 16, e);
  const auto off = estimate_memory(m, fx::plan("offload-d2"), 16, e);
  EXPECT_GT(off.host_states, 0);
  EXPECT_EQ(zero.host_states, 0);
  EXPECT_LT(off.model_states, zero.model_states);
}

TEST(Memory, ThreeDStatesInverseInTensorTimesPipeline) {
  const auto e = fx::env();
  const auto m = fx::medium();
  const auto a = estimate_memory(m, fx::plan("3d-d1-t2-p1"), 16, e);
  const auto b = estimate_memory(m, fx::plan("3d-d1-t2-p2"), 16, e);
  EXPECT_DOUBLE_EQ(b.model_states, a.model_states / 2);
  EXPECT_DOUBLE_EQ(a.model_states, 16 * m.param_count / 2);
}

namespace {

// Independent argmax with the documented tie-break.
std::optional<std::pair<ExecutionPlan, double>> brute_best(const ModelSpec& m, const Placement& pl, const EnvSpec& e,
                                                           const PerfParams& p) {
  std::optional<std::pair<ExecutionPlan, double>> best;
  auto key = [](const ExecutionPlan& x, double thr) {
    return std::make_tuple(thr, -x.ga_steps, !x.grad_ckpt, x.dp, x.tp, -static_cast<int>(x.kind));
  };
  const int g = pl.gpus();
  for (int d = 1; d <= g; ++d)
    for (int t = 1; t <= g; ++t)
      for (int pp = 1; pp <= g; ++pp) {
        if (d * t * pp != g) continue;
        for (auto kind : {PlanKind::ThreeD, PlanKind::ZeroDP, PlanKind::ZeroOffload})
          for (int a : {1, 2, 4, 8})
            for (bool gc : {false, true}) {
              ExecutionPlan x{kind, d, t, pp, a, pp, gc};
              if (kind != PlanKind::ThreeD && (t != 1 || pp != 1)) continue;
              if (t > e.gpus_per_node || e.gpus_per_node % t || m.layers % pp) continue;
              const double micro = pl.global_batch / (double(d) * a * pp);
              if (micro < 1) continue;
              if (kind == PlanKind::ZeroOffload && pl.total().cpus == 0) continue;
              if (estimate_memory(m, x, pl.global_batch, e).gpu_bytes() > e.gpu_mem) continue;
              double thr;
              try {
                thr = predict(m, x, pl, e, p).throughput;
              } catch (const Error&) {
                continue;
              }
              if (!best || key(x, thr) > key(best->first, best->second)) best = std::make_pair(x, thr);
            }
      }
  return best;
}

}  // namespace

TEST(BestPlan, MatchesBruteForce) {
  const auto e = fx::env();
  const auto p = fx::params();
  for (const auto& m : {fx::small(), fx::medium(), fx::large()})
    for (int g = 0; g <= 16; ++g)
      for (double b : {8.0, 32.0}) {
        const auto pl = fx::packed(g, e, b);
        const auto got = best_plan(m, pl, e, p);
        const auto want = brute_best(m, pl, e, p);
        ASSERT_EQ(got.has_value(), want.has_value()) << m.name << " g=" << g;
        if (got) {
          EXPECT_EQ(got->plan, want->first) << m.name << " g=" << g;
          EXPECT_EQ(got->predicted_throughput, want->second);
          EXPECT_LE(got->gpu_mem_est, e.gpu_mem);
        }
      }
}

TEST(BestPlan, SingleFeasiblePlanIsReturned) {
  const auto e = fx::env();
  const auto only = fx::plan("3d-d1-t2-p2-m2-a8-gc1");
  auto got = best_plan(fx::medium(), fx::packed(4, e, 64), e, fx::params(),
                       [&](const ExecutionPlan& x) { return x == only; });
  ASSERT_TRUE(got);
  EXPECT_EQ(got->plan, only);
}

TEST(BestPlan, TightMemoryLeavesOffloadOrNothing) {
  auto e = fx::env();
  const auto m = fx::large();
  e.gpu_mem = 30e9;  // 16 B/param states of 6.7B params never fit one GPU
  auto got = best_plan(m, fx::packed(1, e, 16), e, fx::params());
  ASSERT_TRUE(got);
  EXPECT_EQ(got->plan.kind, PlanKind::ZeroOffload);
  e.gpu_mem = 1e9;
  EXPECT_FALSE(best_plan(m, fx::packed(1, e, 16), e, fx::params()));
}

TEST(BestPlan, FeasibilityMonotoneInMemory) {
  const auto p = fx::params();
  for (const auto& m : {fx::small(), fx::medium(), fx::large()})
    for (int g : {1, 2, 4, 8}) {
      bool seen = false;
      for (double mem = 5e9; mem <= 160e9; mem *= 1.5) {
        auto e = fx::env();
        e.gpu_mem = mem;
        const bool ok = best_plan(m, fx::packed(g, e), e, p).has_value();
        if (seen) {
          EXPECT_TRUE(ok) << m.name << " g=" << g << " mem=" << mem;
        }
        seen = seen || ok;
      }
    }
}

TEST(BestPlan, NoFittedModelIsDistinct) {
  const auto e = fx::env();
  try {
    best_plan(fx::medium(), fx::packed(2, e), e, std::nullopt);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::no_fitted_model);
  }
}

TEST(BestPlan, Deterministic) {
  const auto e = fx::env();
  const auto a = best_plan(fx::medium(), fx::packed(8, e), e, fx::params());
  const auto b = best_plan(fx::medium(), fx::packed(8, e), e, fx::params());
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->plan, b->plan);
}
