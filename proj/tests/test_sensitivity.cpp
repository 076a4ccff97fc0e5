#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace plansched;

namespace {

SensitivityCurve manual(std::vector<std::pair<int, double>> valid, int cap) {
  SensitivityCurve c;
  double best = 0;
  for (int a = 0; a <= cap; ++a) {
    CurvePoint pt{a, best, std::nullopt, 0, false};
    for (auto [amt, thr] : valid)
      if (amt == a && thr > best) {
        best = thr;
        pt = {a, thr, fx::plan("3d-d1"), a, true};
      }
    c.points.push_back(pt);
  }
  return c;
}

}  // namespace

TEST(Slope, ForwardDifferenceOverGap) {
  const auto c = manual({{2, 10}, {4, 18}}, 6);
  EXPECT_DOUBLE_EQ(slope(c, 2), 4.0);
  EXPECT_DOUBLE_EQ(slope(c, 3), 8.0);  // flat at 10 until 4
  EXPECT_DOUBLE_EQ(slope(c, 0), 5.0);
  EXPECT_DOUBLE_EQ(slope(c, 4), 0.0);  // past the last valid point
  EXPECT_DOUBLE_EQ(slope(c, 6), 0.0);
}

TEST(Curve, EnvelopeMatchesBruteForce) {
  const auto e = fx::env();
  const auto p = fx::params();
  for (const auto& m : {fx::small(), fx::medium(), fx::large()}) {
    const auto c = build_curve("j", m, 16, ResourceAxis::Gpu, {}, 16, e, p);
    ASSERT_EQ(c.points.size(), 17u);
    EXPECT_EQ(c.points[0].throughput, 0.0);
    double running = 0;
    for (int g = 0; g <= 16; ++g) {
      const auto bp = best_plan(m, fx::packed(g, e), e, p);
      const double here = bp ? bp->predicted_throughput : 0.0;
      const bool valid = here > running;
      running = std::max(running, here);
      EXPECT_EQ(c.points[g].amount, g);
      EXPECT_EQ(c.points[g].throughput, running) << m.name << " g=" << g;
      EXPECT_EQ(c.points[g].valid, valid);
      if (valid) {
        EXPECT_EQ(*c.points[g].plan, bp->plan);
      }
    }
  }
}

TEST(Curve, CpuAxisHoldsGpusFixed) {
  const auto e = fx::env();
  const auto p = fx::params();
  const auto m = fx::large();
  const auto c = build_curve("j", m, 16, ResourceAxis::Cpu, {1, 0, 0}, 32, e, p);
  EXPECT_EQ(c.points[0].throughput, 0.0);  // offload needs CPUs, nothing else fits one GPU
  for (int cpus = 1; cpus <= 32; ++cpus) {
    const auto bp = best_plan(m, fx::packed(1, e, 16, cpus), e, p);
    ASSERT_TRUE(bp);
    EXPECT_GE(c.points[cpus].throughput, bp->predicted_throughput);
    EXPECT_GE(c.points[cpus].throughput, c.points[cpus - 1].throughput);
  }
  EXPECT_GT(slope(c, 1), 0.0);
}

TEST(Curve, Pure) {
  const auto e = fx::env();
  const auto a = build_curve("j", fx::medium(), 16, ResourceAxis::Gpu, {}, 12, e, fx::params());
  const auto b = build_curve("j", fx::medium(), 16, ResourceAxis::Gpu, {}, 12, e, fx::params());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].throughput, b.points[i].throughput);
    EXPECT_EQ(a.points[i].plan, b.points[i].plan);
  }
}

TEST(Curve, NeedsParams) {
  const auto e = fx::env();
  EXPECT_THROW(build_curve("j", fx::medium(), 16, ResourceAxis::Gpu, {}, 4, e, std::nullopt), Error);
}

TEST(MinRes, BestEffortIsZero) {
  const auto e = fx::env();
  EXPECT_TRUE(min_res(fx::medium(), 16, JobClass::BestEffort, {4, 48, 0}, fx::plan("3d-d4"), e, fx::params())
                  .is_zero());
}

TEST(MinRes, MatchesLatticeScanAndKeepsSla) {
  const auto e = fx::env();
  const auto p = fx::params();
  struct Case {
    ModelSpec m;
    ResourceVector req;
    ExecutionPlan plan;
  };
  const std::vector<Case> cases{
      {fx::small(), {8, 96, 0}, fx::plan("3d-d2-t2-p2-m2")},
      {fx::medium(), {4, 48, 0}, fx::plan("3d-d1-t1-p4-m4-a2")},
      {fx::large(), {2, 24, 400'000'000'000}, fx::plan("offload-d2-a4-gc1")},
  };
  for (const auto& c : cases) {
    const double target = requested_throughput(c.m, 16, c.req, c.plan, e, p);
    const auto got = min_res(c.m, 16, JobClass::Guaranteed, c.req, c.plan, e, p);
    std::optional<ResourceVector> want;
    for (int g = 0; g <= c.req.gpus && !want; ++g)
      for (int cpu = 0; cpu <= c.req.cpus && !want; ++cpu) {
        const auto bp = best_plan(c.m, fx::packed(g, e, 16, cpu), e, p);
        if (bp && bp->predicted_throughput >= target &&
            static_cast<std::int64_t>(std::ceil(bp->host_mem_est)) <= c.req.mem)
          want = ResourceVector{g, cpu, static_cast<std::int64_t>(std::ceil(bp->host_mem_est))};
      }
    ASSERT_TRUE(want) << c.m.name;
    EXPECT_EQ(got, *want) << c.m.name;
    EXPECT_TRUE(got.dominated_by(c.req));
    const auto at_min = best_plan(c.m, fx::packed(got.gpus, e, 16, got.cpus), e, p);
    ASSERT_TRUE(at_min);
    EXPECT_GE(at_min->predicted_throughput, target);
  }
}

TEST(MinRes, OptimalTightRequestIsKept) {
  const auto e = fx::env();
  const auto p = fx::params();
  const auto m = fx::large();
  // the best one-GPU plan on exactly its proportional CPUs
  const auto bp = best_plan(m, fx::packed(1, e, 16, 12), e, p);
  ASSERT_TRUE(bp);
  const ResourceVector req{1, 12, static_cast<std::int64_t>(std::ceil(bp->host_mem_est))};
  const auto got = min_res(m, 16, JobClass::Guaranteed, req, bp->plan, e, p);
  EXPECT_EQ(got, req);
}

TEST(MinRes, InfeasibleRequest) {
  const auto e = fx::env();
  try {
    min_res(fx::large(), 16, JobClass::Guaranteed, {1, 12, 0}, fx::plan("3d-d1"), e, fx::params());
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::infeasible_request);
  }
}
