#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cspace/projection.hpp"
#include "oracles.hpp"

using namespace cspace;

namespace {

Configuration q3(double a, double b, double c) {
  Configuration q(3);
  q << a, b, c;
  return q;
}

Metric random_metric(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> e(0.2, 1.0);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d * d; ++i) a(i / d, i % d) = n(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  Eigen::VectorXd ev(d);
  for (int i = 0; i < d; ++i) ev[i] = e(rng);
  Eigen::MatrixXd m = q * ev.asDiagonal() * q.transpose();
  return Metric(0.5 * (m + m.transpose()));
}

Constraint point2(const Eigen::Vector2d& t) { return Constraint::from_target(TaskTarget::point2(t.x(), t.y())); }

}  // namespace

TEST(ProjectSweep, FeasibleStartProjectsToItself) {
  PlanarArm arm;
  const Configuration qs = q3(0.4, 1.1, -0.7);
  const Eigen::Vector2d t = fk_planar(arm, qs).ee;
  for (const Metric& m : {Metric::identity(3), expensive_joint(3, 0), make_correlated(Metric::identity(3), {{0, 2, 0.8}})}) {
    const auto r = project_sweep(arm, qs, t, m);
    EXPECT_LE(r.cost, 1e-16);
    EXPECT_LE((r.q_star - qs).norm(), 1e-7);
  }
}

TEST(ProjectSweep, ScaleInvariantArgmin) {
  PlanarArm arm;
  std::mt19937_64 rng(2);
  const Metric m = random_metric(rng, 3);
  const auto a = project_sweep(arm, q3(0.3, 0.2, 0.1), Eigen::Vector2d(1.2, 0.9), m);
  const auto b = project_sweep(arm, q3(0.3, 0.2, 0.1), Eigen::Vector2d(1.2, 0.9), Metric(7.5 * m.matrix()));
  EXPECT_LE((a.q_star - b.q_star).norm(), 1e-8);
  EXPECT_NEAR(b.cost, 7.5 * a.cost, 1e-9);
}

TEST(ProjectSweep, MatchesDenseOracle) {
  PlanarArm arm;
  const auto r = project_sweep(arm, q3(0, 0, 0), Eigen::Vector2d(1, 0), Metric::identity(3));
  const auto o = oracle::dense_sweep(arm, Eigen::Vector3d::Zero(), Eigen::Vector2d(1, 0), Eigen::Matrix3d::Identity(),
                                     1000000);
  EXPECT_LE(r.cost, o.cost + 1e-8);
  EXPECT_LE(r.residual, 1e-9);
  EXPECT_EQ(r.cost, mahalanobis_sq(Metric::identity(3), q3(0, 0, 0), r.q_star));
}

TEST(ProjectSweep, BeatsDenseOracleOnRandomTriples) {
  PlanarArm arm;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi), rad(0.3, 2.9);
  for (int t = 0; t < 5; ++t) {
    const Configuration qs = q3(u(rng), u(rng), u(rng));
    const double a = u(rng), r = rad(rng);
    const Eigen::Vector2d target(r * std::cos(a), r * std::sin(a));
    const Metric m = random_metric(rng, 3);
    const auto res = project_sweep(arm, qs, target, m);
    const auto o = oracle::dense_sweep(arm, qs, target, m.matrix(), 200000);
    EXPECT_LE(res.cost, o.cost + 1e-8);
  }
}

TEST(ProjectSweep, MinimumAtShoulderSeam) {
  // The infimum sits at the shoulder's wrap seam, and the seam cuts the
  // refinement bracket past its golden-section probes.
  PlanarArm arm;
  const Configuration qs = q3(2.572558630967098, -1.1689026200070116, -1.8550724785776134);
  const Eigen::Vector2d t(0.99053539394384871, -2.4216596961533261);
  Eigen::Matrix3d m;
  m << 0.36954798401898703, 0.20601728245927661, 0.17681201250306838, 0.20601728245927661, 0.46099151322016985,
      0.18878659865886233, 0.17681201250306838, 0.18878659865886233, 0.67047525670179053;
  const auto r = project_sweep(arm, qs, t, Metric(m));
  const auto o = oracle::dense_sweep(arm, qs, t, m, 1000000);
  EXPECT_LE(r.cost, o.cost + 1e-8);
  EXPECT_NEAR(r.q_star[0] - qs[0], -kPi, 1e-6);
}

TEST(ProjectSweep, Errors) {
  EXPECT_THROW(project_sweep(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(4, 0), Metric::identity(3)), Unreachable);
  EXPECT_THROW(project_sweep(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(1, 0), Metric::identity(2)), ContractViolation);
}

TEST(ProjectMultistart, AgreesWithSweep) {
  PlanarArm arm;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-kPi, kPi), rad(0.3, 2.9);
  for (int t = 0; t < 30; ++t) {
    const Configuration qs = q3(u(rng), u(rng), u(rng));
    const double a = u(rng), r = rad(rng);
    const Eigen::Vector2d target(r * std::cos(a), r * std::sin(a));
    const Metric m = random_metric(rng, 3);
    MultistartOptions opts;
    opts.seed = t;
    const auto ms = project_multistart(arm, qs, point2(target), m, opts);
    const auto sw = project_sweep(arm, qs, target, m);
    EXPECT_NEAR(ms.cost, sw.cost, 1e-4) << "triple " << t;
    EXPECT_LE(ms.residual, 1e-6);
    EXPECT_GE(ms.restarts_agreeing, 1);
    EXPECT_EQ(ms.cost, mahalanobis_sq(m, qs, ms.q_star));
  }
}

TEST(ProjectMultistart, Deterministic) {
  const ChainArm arm = default_chain();
  Configuration qs(7);
  qs << 0.1, 0.5, -0.3, 1.0, 0.2, -0.4, 0.0;
  const auto c = Constraint::from_target(TaskTarget::point3(0.3, 0.2, 0.6));
  MultistartOptions opts;
  opts.seed = 99;
  const auto a = project_multistart(arm, qs, c, Metric::identity(7), opts);
  const auto b = project_multistart(arm, qs, c, Metric::identity(7), opts);
  EXPECT_EQ(a.q_star, b.q_star);
  EXPECT_EQ(a.cost, b.cost);
  EXPECT_EQ(a.restarts_agreeing, b.restarts_agreeing);
  EXPECT_LE(a.residual, 1e-6);
}

TEST(ProjectMultistart, ChainHeightAlreadySatisfied) {
  const ChainArm arm = default_chain();
  Configuration qs(7);
  qs << 0.3, 0.6, 0.1, 1.2, -0.5, 0.7, 0.2;
  const double z = fk_chain(arm, qs).ee.z();
  const auto r = project_multistart(arm, qs, Constraint::from_target(TaskTarget::height(z)), Metric::identity(7));
  EXPECT_LE(r.cost, 1e-12);
  EXPECT_LE((r.q_star - qs).norm(), 1e-6);
}

TEST(ProjectMultistart, ExpensiveElbowBarelyMovesElbow) {
  const ChainArm arm = default_chain();
  Configuration qs(7);
  qs << 0.0, 0.4, 0.0, 0.9, 0.0, 0.5, 0.0;
  const double z = fk_chain(arm, qs).ee.z() - 0.25;
  const auto c = Constraint::from_target(TaskTarget::height(z));
  const auto eu = project_multistart(arm, qs, c, Metric::identity(7));
  const auto ex = project_multistart(arm, qs, c, expensive_joint(7, find_joint(arm, "elbow")));
  const int e = find_joint(arm, "elbow");
  EXPECT_LT(std::abs(ex.q_star[e] - qs[e]), std::abs(eu.q_star[e] - qs[e]));
  EXPECT_LE(ex.residual, 1e-6);
}

TEST(ProjectMultistart, Unreachable) {
  const auto c = Constraint::from_target(TaskTarget::point3(5, 0, 0));
  EXPECT_THROW(project_multistart(default_chain(), Configuration::Zero(7), c, Metric::identity(7)), Unreachable);
  EXPECT_THROW(project_multistart(PlanarArm{}, q3(0, 0, 0), point2({3.5, 0}), Metric::identity(3)), Unreachable);
}

TEST(Sublevel, EuclideanContractionIsConnected) {
  PlanarArm arm;
  const Configuration qs = q3(0.2, 0.5, 0.3);
  const auto r = sublevel_components(arm, qs, Eigen::Vector2d(1.2, 0.6), Metric::identity(3));
  EXPECT_EQ(r.component_count, 1);
}

TEST(Sublevel, ExpensiveShoulderSymmetricContractionSplits) {
  PlanarArm arm;
  const Configuration qs = q3(0, 0.802, 0.304);
  const Eigen::Vector2d t(1.329, 0);
  ASSERT_EQ(classify_task(arm, qs, t), TaskType::Contraction);
  EXPECT_EQ(sublevel_components(arm, qs, t, expensive_joint(3, 0)).component_count, 2);
  EXPECT_EQ(sublevel_components(arm, qs, t, Metric::identity(3)).component_count, 1);
}

TEST(Sublevel, IntervalsMeetThreshold) {
  PlanarArm arm;
  const auto r = sublevel_components(arm, q3(0, 0.76, 1.572), Eigen::Vector2d(1.579, 0), expensive_joint(3, 0), 0.05);
  for (const auto& iv : r.intervals) {
    EXPECT_LE(iv.min_cost, 1.05 * r.min_cost);
    EXPECT_GE(iv.samples, 1);
  }
}

TEST(Sublevel, ZeroDeltaCollapsesToArgmin) {
  const auto r = sublevel_components(PlanarArm{}, q3(0.2, 0.5, 0.3), Eigen::Vector2d(1.2, 0.6), Metric::identity(3), 0.0);
  ASSERT_GE(r.component_count, 1);
  for (const auto& iv : r.intervals) {
    EXPECT_EQ(iv.samples, 1);
    EXPECT_EQ(iv.min_cost, r.min_cost);
  }
  EXPECT_THROW(sublevel_components(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(1, 0), Metric::identity(3), 1.0),
               ContractViolation);
}

TEST(CostProfile, Csv) {
  std::ostringstream out;
  write_cost_profile_csv(out, PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(1, 1), Metric::identity(3), 36);
  EXPECT_EQ(out.str().substr(0, 15), "phi,branch,cost");
}

TEST(BasinMap, ClustersStarts) {
  PlanarArm arm;
  std::vector<Configuration> starts;
  for (double a : {-0.2, -0.1, 0.0, 0.1, 0.2})
    for (double b : {0.4, 0.6}) starts.push_back(q3(a, b, 0.2));
  const auto bm = basin_map(arm, Eigen::Vector2d(1.5, 0.3), Metric::identity(3), starts, 1e-4, 720);
  ASSERT_EQ(bm.cluster_of.size(), starts.size());
  int total = 0;
  for (const auto& c : bm.clusters) total += c.count;
  EXPECT_EQ(total, static_cast<int>(starts.size()));
  EXPECT_GT(bm.largest_fraction, 0.0);
  EXPECT_LE(bm.largest_fraction, 1.0);
  EXPECT_EQ(basin_map_gap(bm, bm), 0.0);
  // Same-branch projection keeps the start's elbow sign.
  for (const auto& q : bm.solutions) EXPECT_GE(q[1], 0.0);
}

TEST(Mirror, EuclideanAndDiagonalAreConsistent) {
  const ChainArm arm = default_chain();
  Configuration qs(7);
  qs << 0.3, 0.5, -0.2, 0.6, 0.4, -0.3, 0.1;
  EXPECT_LE(mirror_experiment(arm, Metric::identity(7), qs).gap, 1e-6);
  Eigen::VectorXd w(7);
  w << 1, 3, 0.5, 2, 1, 0.2, 4;
  EXPECT_LE(mirror_experiment(arm, make_weighted(w), qs).gap, 1e-6);
}

TEST(Mirror, CorrelatedMetricIsNotRobust) {
  const ChainArm arm = default_chain();
  Configuration qs(7);
  qs << 0.3, 0.5, -0.2, 0.6, 0.4, -0.3, 0.1;
  const Metric m = make_correlated(Metric::identity(7), {{find_joint(arm, "shoulder_pitch"), find_joint(arm, "elbow"), 0.9}});
  const auto rep = mirror_experiment(arm, m, qs);
  EXPECT_GT(rep.gap, 0.1);
  EXPECT_FALSE(rep.robust);
  EXPECT_NEAR(rep.original.q_star[3], kPi / 2, 1e-6);
}

TEST(Json, ProjectionFields) {
  const auto r = project_sweep(PlanarArm{}, q3(0, 0, 0), Eigen::Vector2d(1, 0), Metric::identity(3));
  const auto j = to_json(r);
  for (const char* k : {"q_star", "cost", "residual", "solver", "phi", "branch"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["solver"], "sweep");
  const auto back = config_from_json(j["q_star"]);
  EXPECT_EQ(back, r.q_star);
}
