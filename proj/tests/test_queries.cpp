#include <gtest/gtest.h>

#include <set>

#include "cspace/queries.hpp"

using namespace cspace;

namespace {

Configuration q3(double a, double b, double c) {
  Configuration q(3);
  q << a, b, c;
  return q;
}

}  // namespace

TEST(UniformRanks, TenItemsFourPicks) {
  EXPECT_EQ(uniform_ranks(10, 4), (std::vector<int>{0, 3, 6, 9}));
  EXPECT_EQ(uniform_ranks(4, 4), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(uniform_ranks(3, 4), ContractViolation);
}

TEST(GenerateQuery, CandidatesSatisfyContract) {
  PlanarArm arm;
  const Configuration qs = q3(0.4, 0.9, 0.5);
  const Eigen::Vector2d t(1.1, 0.7);
  const Query q = generate_query(arm, qs, t, 4, 7);
  ASSERT_EQ(q.m(), 4);
  EXPECT_EQ(q.task_type, classify_task(arm, qs, t));
  std::set<int> perm(q.permutation.begin(), q.permutation.end());
  EXPECT_EQ(perm.size(), 4u);
  for (int k = 0; k < 4; ++k) {
    const auto& c = q.candidates[k];
    EXPECT_LE((fk_planar(arm, c).ee - t).norm(), 1e-6);
    EXPECT_TRUE(within_limits(arm, c));
    EXPECT_FALSE(self_collides(arm, c));
    EXPECT_GE(c[1], 0.0);
    if (k > 0) {
      EXPECT_LT(q.candidates[k - 1][2], c[2]);
    }
  }
}

TEST(GenerateQuery, ElbowDownStartKeepsElbowDown) {
  const Query q = generate_query(PlanarArm{}, q3(0.2, -1.0, 0.3), Eigen::Vector2d(0.9, -0.4), 4, 1);
  for (const auto& c : q.candidates) EXPECT_LT(c[1], 0.0);
}

TEST(GenerateQuery, WristSpanCoversSurvivors) {
  PlanarArm arm;
  const Configuration qs = q3(-0.5, 0.6, 1.0);
  const Eigen::Vector2d t(-0.8, 1.2);
  const auto surv = query_survivors(arm, qs, t, 3600, nullptr);
  const Query q = generate_query(arm, qs, t, 4, 3);
  const double range = surv.back()[2] - surv.front()[2];
  EXPECT_GE(q.candidates.back()[2] - q.candidates.front()[2], 0.5 * range);
  EXPECT_EQ(q.candidates.front(), surv.front());
  EXPECT_EQ(q.candidates.back(), surv.back());
}

TEST(GenerateQuery, Deterministic) {
  const auto a = generate_query(PlanarArm{}, q3(0, 0.5, 0.5), Eigen::Vector2d(1.5, 0.5), 4, 11);
  const auto b = generate_query(PlanarArm{}, q3(0, 0.5, 0.5), Eigen::Vector2d(1.5, 0.5), 4, 11);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(GenerateQuery, TooFewSurvivorsNamesFilters) {
  PlanarArm arm;
  arm.limits[2] = {-0.01, 0.01};
  try {
    generate_query(arm, q3(0, 0.5, 0.0), Eigen::Vector2d(1.5, 0.5), 4, 0, 360);
    FAIL() << "expected InsufficientDiversity";
  } catch (const InsufficientDiversity& e) {
    EXPECT_NE(std::string(e.what()).find("within limits"), std::string::npos);
  }
  EXPECT_THROW(generate_query(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(4, 0), 4, 0), Unreachable);
  EXPECT_THROW(generate_query(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(1, 0), 1, 0), ContractViolation);
}

TEST(GenerateBattery, DefaultSpec) {
  PlanarArm arm;
  const auto b = generate_battery(arm, BatterySpec{}, 5);
  ASSERT_EQ(b.size(), 36u);
  int c = 0;
  std::set<std::string> ids;
  for (const auto& q : b) {
    ids.insert(q.id);
    c += q.task_type == TaskType::Contraction;
    EXPECT_EQ(classify_task(arm, q.start, q.target.xy()), q.task_type);
    EXPECT_TRUE(within_limits(arm, q.start));
    EXPECT_FALSE(self_collides(arm, q.start));
  }
  EXPECT_EQ(c, 18);
  EXPECT_EQ(ids.size(), 36u);
  EXPECT_EQ(battery_to_json(b).dump(), battery_to_json(generate_battery(arm, BatterySpec{}, 5)).dump());
}

TEST(GenerateBattery, UnreachableRange) {
  BatterySpec spec;
  spec.radius_lo = 3.5;
  spec.radius_hi = 4.0;
  spec.max_attempts = 200;
  try {
    generate_battery(PlanarArm{}, spec, 1);
    FAIL() << "expected Unreachable";
  } catch (const Unreachable& e) {
    EXPECT_NE(std::string(e.what()).find("rejected targets"), std::string::npos);
  }
}

TEST(QueryJson, RoundTripUnpermutes) {
  const Query q = generate_query(PlanarArm{}, q3(0.3, 1.2, -0.4), Eigen::Vector2d(0.2, 1.1), 4, 9);
  const auto j = to_json(q);
  for (const char* k : {"id", "arm", "start", "target", "candidates", "permutation", "task_type"}) EXPECT_TRUE(j.contains(k));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(config_from_json(j["candidates"][k]), q.candidates[q.permutation[k]]);
  const Query back = query_from_json(j);
  EXPECT_EQ(back.candidates, q.candidates);
  EXPECT_EQ(back.permutation, q.permutation);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  auto bad = j;
  bad["permutation"] = {0, 0, 1, 2};
  EXPECT_THROW(query_from_json(bad), ParseError);
}
