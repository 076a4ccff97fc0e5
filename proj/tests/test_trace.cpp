#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fixtures.hpp"

using namespace plansched;

namespace {

TraceSpec spec(int n = 30) {
  TraceSpec s;
  s.n_jobs = n;
  s.models = {"small", "medium", "large"};
  return s;
}

ModelCatalog cat() { return fx::catalog({fx::small(), fx::medium(), fx::large()}, fx::params()); }

std::string parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_trace(in, "t.csv");
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    return e.what();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return "";
}

}  // namespace

TEST(Synthesize, DeterministicUnderSeed) {
  const auto c = cat();
  const auto a = format_trace(synthesize_trace(spec(), c, fx::env(), 7));
  EXPECT_EQ(a, format_trace(synthesize_trace(spec(), c, fx::env(), 7)));
  EXPECT_NE(a, format_trace(synthesize_trace(spec(), c, fx::env(), 8)));
}

TEST(Synthesize, IdsFollowSubmitOrder) {
  const auto jobs = synthesize_trace(spec(), cat(), fx::env(), 3);
  ASSERT_EQ(jobs.size(), 30u);
  EXPECT_EQ(jobs[0].submit_s, 0.0);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    EXPECT_EQ(jobs[i].id, detail::job_id(i));
    if (i) {
      EXPECT_GE(jobs[i].submit_s, jobs[i - 1].submit_s);
    }
    EXPECT_GE(jobs[i].gpus, 1);
    EXPECT_GT(jobs[i].duration_s, 0);
  }
}

TEST(Synthesize, LoadScaleHalvesGaps) {
  auto s1 = spec(200), s2 = spec(200);
  s2.load_scale = 2;
  const auto a = synthesize_trace(s1, cat(), fx::env(), 11);
  const auto b = synthesize_trace(s2, cat(), fx::env(), 11);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b[i].submit_s, a[i].submit_s / 2, 1e-3);
    EXPECT_EQ(a[i].model, b[i].model);
    EXPECT_EQ(a[i].gpus, b[i].gpus);
    EXPECT_EQ(a[i].duration_s, b[i].duration_s);
  }
  EXPECT_NEAR(b.back().submit_s / a.back().submit_s, 0.5, 1e-5);
}

TEST(Synthesize, BestPlanModeMatchesExhaustiveArgmax) {
  const auto e = fx::env();
  const auto c = cat();
  auto s = spec(40);
  s.plans = PlanAssignment::BestPlan;
  for (const auto& j : synthesize_trace(s, c, e, 5)) {
    const auto& m = c.at(j.model);
    const auto pl = pack_placement(j.gpus, proportional_cpus(j.gpus, e), 0, m.global_batch, e);
    double best = 0;
    for (const auto& p : enumerate_plans(m.spec, j.gpus, e.gpus_per_node))
      if (auto cand = evaluate_plan(m.spec, p, pl, e, *m.params)) best = std::max(best, cand->predicted_throughput);
    ASSERT_TRUE(j.plan) << j.id;
    EXPECT_EQ(evaluate_plan(m.spec, *j.plan, pl, e, *m.params)->predicted_throughput, best) << j.id;
  }
}

TEST(Synthesize, RandomModeSharesDrawsAndIsFeasible) {
  const auto e = fx::env();
  const auto c = cat();
  auto s = spec(40);
  const auto rnd = synthesize_trace(s, c, e, 5);
  s.plans = PlanAssignment::BestPlan;
  const auto best = synthesize_trace(s, c, e, 5);
  int differ = 0;
  for (std::size_t i = 0; i < rnd.size(); ++i) {
    EXPECT_EQ(rnd[i].submit_s, best[i].submit_s);
    EXPECT_EQ(rnd[i].model, best[i].model);
    EXPECT_EQ(rnd[i].gpus, best[i].gpus);
    ASSERT_TRUE(rnd[i].plan);
    const auto& m = c.at(rnd[i].model);
    const auto pl = pack_placement(rnd[i].gpus, proportional_cpus(rnd[i].gpus, e), 0, m.global_batch, e);
    EXPECT_TRUE(evaluate_plan(m.spec, *rnd[i].plan, pl, e, *m.params));
    differ += *rnd[i].plan != *best[i].plan;
  }
  EXPECT_GT(differ, 0);
}

TEST(Synthesize, MultiTenantClasses) {
  auto s = spec(60);
  s.tenancy = Tenancy::MultiTenant;
  std::set<std::string> tenants;
  for (const auto& j : synthesize_trace(s, cat(), fx::env(), 2)) {
    tenants.insert(j.tenant);
    EXPECT_EQ(j.cls, j.tenant == "tenant-a" ? JobClass::Guaranteed : JobClass::BestEffort);
  }
  EXPECT_EQ(tenants, (std::set<std::string>{"tenant-a", "tenant-b"}));
  for (const auto& j : synthesize_trace(spec(), cat(), fx::env(), 2)) EXPECT_EQ(j.cls, JobClass::BestEffort);
}

TEST(Synthesize, RejectsBadSpec) {
  auto s = spec();
  s.models = {"nope"};
  EXPECT_THROW(synthesize_trace(s, cat(), fx::env(), 1), Error);
  s = spec();
  s.load_scale = 0;
  EXPECT_THROW(synthesize_trace(s, cat(), fx::env(), 1), Error);
}

TEST(TraceCsv, RoundTrip) {
  auto s = spec();
  s.tenancy = Tenancy::MultiTenant;
  const auto jobs = synthesize_trace(s, cat(), fx::env(), 9);
  const auto text = format_trace(jobs);
  std::istringstream in(text);
  const auto back = parse_trace(in);
  ASSERT_EQ(back.size(), jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    EXPECT_EQ(back[i].id, jobs[i].id);
    EXPECT_EQ(back[i].submit_s, jobs[i].submit_s);
    EXPECT_EQ(back[i].plan, jobs[i].plan);
    EXPECT_EQ(back[i].cls, jobs[i].cls);
  }
  EXPECT_EQ(format_trace(back), text);
}

TEST(TraceCsv, EmptyPlanAndSorting) {
  std::istringstream in(
      "submit_s,model,gpus,duration_s,tenant,class,plan\n"
      "50,medium,2,100,a,guaranteed,3d-d2\n"
      "\n"
      "10,small,1,60,b,best_effort,\n");
  const auto jobs = parse_trace(in);
  ASSERT_EQ(jobs.size(), 2u);
  EXPECT_EQ(jobs[0].model, "small");
  EXPECT_EQ(jobs[0].id, "j0000");
  EXPECT_FALSE(jobs[0].plan);
  EXPECT_EQ(jobs[1].cls, JobClass::Guaranteed);
}

TEST(TraceCsv, ErrorsNameTheLine) {
  const std::string h = "submit_s,model,gpus,duration_s,tenant,class,plan\n";
  EXPECT_NE(parse_error("submit,model\n").find("t.csv line 1"), std::string::npos);
  EXPECT_NE(parse_error(h + "0,small,1,10,a,best_effort,\n0,small,x,10,a,best_effort,\n").find("t.csv line 3"),
            std::string::npos);
  EXPECT_NE(parse_error(h + "0,small,2,10,a,best_effort,3d-d4\n").find("line 2"), std::string::npos);
  EXPECT_NE(parse_error(h + "0,small,1,10,a,vip,\n").find("line 2"), std::string::npos);
  EXPECT_NE(parse_error(h + "-1,small,1,10,a,best_effort,\n").find("line 2"), std::string::npos);
  EXPECT_NE(parse_error(h + "0,small,1,10\n").find("line 2"), std::string::npos);
  EXPECT_NE(parse_error("").find("missing header"), std::string::npos);
}

TEST(Philly, ShiftsAndDrawsModels) {
  std::istringstream in(
      "submit_time,num_gpus,duration\n"
      "1000,4,3600\n"
      "900,1,120\n"
      "1500,8,7200\n");
  const auto jobs = parse_philly_subset(in, {"small", "medium"}, 4);
  ASSERT_EQ(jobs.size(), 3u);
  EXPECT_EQ(jobs[0].submit_s, 0.0);
  EXPECT_EQ(jobs[0].gpus, 1);
  EXPECT_EQ(jobs[1].submit_s, 100.0);
  EXPECT_EQ(jobs[2].submit_s, 600.0);
  for (const auto& j : jobs) EXPECT_TRUE(j.model == "small" || j.model == "medium");
  std::istringstream bad("submit_time,num_gpus,duration\n1,0,5\n");
  EXPECT_THROW(parse_philly_subset(bad, {"small"}, 1), Error);
}
