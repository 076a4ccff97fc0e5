#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace plansched;

TEST(Descriptor, RoundTrip) {
  for (const char* d : {"3d-d2-t2-p1-m1-a1-gc0", "3d-d1-t1-p4-m8-a2-gc1", "zero-d8-t1-p1-m1-a4-gc0",
                        "offload-d1-t1-p1-m1-a8-gc1"}) {
    EXPECT_EQ(to_descriptor(parse_descriptor(d)), d);
  }
}

TEST(Descriptor, MicroBatchesDefaultToPipelineSize) {
  auto p = parse_descriptor("3d-d1-t2-p4");
  EXPECT_EQ(p.micro_batches, 4);
  EXPECT_EQ(p.ga_steps, 1);
  EXPECT_FALSE(p.grad_ckpt);
}

TEST(Descriptor, RejectsMalformed) {
  for (const char* d : {"", "4d-d1", "3d-dx", "3d-d1-q2", "zero-d2-t2", "3d-d1-p4-m2", "3d-d0"}) {
    try {
      parse_descriptor(d);
      FAIL() << d;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::parse_error) << d;
    }
  }
}

TEST(Plan, ValidateRules) {
  ExecutionPlan p;
  p.kind = PlanKind::ZeroDP;
  p.tp = 2;
  EXPECT_THROW(p.validate(), Error);
  p.tp = 1;
  EXPECT_NO_THROW(p.validate());
  p.kind = PlanKind::ThreeD;
  p.pp = 2;
  p.micro_batches = 1;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Env, ValidateBandwidthOrder) {
  auto e = fx::env();
  EXPECT_NO_THROW(e.validate());
  e.b_inter = e.b_intra * 2;
  EXPECT_THROW(e.validate(), Error);
}

TEST(Placement, PackFillsNodesInOrder) {
  const auto e = fx::env();
  auto pl = pack_placement(12, 144, 1200, 32, e);
  ASSERT_EQ(pl.nodes.size(), 2u);
  EXPECT_EQ(pl.nodes[0].gpus, 8);
  EXPECT_EQ(pl.nodes[1].gpus, 4);
  EXPECT_EQ(pl.nodes[0].cpus, 96);
  EXPECT_EQ(pl.nodes[1].cpus, 48);
  EXPECT_EQ(pl.nodes[0].mem + pl.nodes[1].mem, 1200);
  EXPECT_EQ(pl.total(), (ResourceVector{12, 144, 1200}));
  EXPECT_EQ(pl.nodes_used(), 2);
}

TEST(Resources, Arithmetic) {
  ResourceVector a{2, 8, 100}, b{1, 4, 50};
  EXPECT_EQ(a - b, b);
  EXPECT_TRUE(b.dominated_by(a));
  EXPECT_FALSE(a.dominated_by(b));
  EXPECT_EQ(a.get(ResourceType::Cpu), 8);
}

TEST(Errors, CodeNamesAreStable) {
  EXPECT_EQ(to_string(ErrorCode::too_few_points), "too_few_points");
  EXPECT_EQ(to_string(ErrorCode::missing_offload_points), "missing_offload_points");
  EXPECT_EQ(to_string(ErrorCode::parse_error), "parse_error");
  EXPECT_EQ(to_string(ErrorCode::no_fitted_model), "no_fitted_model");
}
