#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cspace/metric.hpp"

using namespace cspace;

namespace {

Eigen::VectorXd v3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

bool has(const std::vector<MetricViolation>& v, MetricViolation::Kind k) {
  for (const auto& e : v)
    if (e.kind == k) return true;
  return false;
}

}  // namespace

TEST(Mahalanobis, Examples) {
  EXPECT_DOUBLE_EQ(mahalanobis_sq(Metric::identity(3), v3(1, 1, 1), v3(0, 0, 0)), 3.0);
  EXPECT_DOUBLE_EQ(mahalanobis_sq(make_weighted(v3(2, 1, 1)), v3(1, 0, 0), v3(0, 0, 0)), 2.0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
  m(0, 1) = m(1, 0) = 0.5;
  EXPECT_DOUBLE_EQ(mahalanobis_sq(Metric(m), v3(1, 1, 0), v3(0, 0, 0)), 3.0);
}

TEST(Mahalanobis, DimensionMismatch) {
  EXPECT_THROW(mahalanobis_sq(Metric::identity(3), v3(1, 1, 1), Eigen::VectorXd::Zero(2)), ContractViolation);
  EXPECT_THROW(mahalanobis_sq(Metric::identity(2), v3(1, 1, 1), v3(0, 0, 0)), ContractViolation);
}

TEST(Mahalanobis, SymmetricZeroAndEigenBounds) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 200; ++t) {
    const Metric m(random_spd(rng, 3));
    const Eigen::VectorXd a = v3(n(rng), n(rng), n(rng)), b = v3(n(rng), n(rng), n(rng));
    const double d = mahalanobis_sq(m, a, b);
    EXPECT_NEAR(d, mahalanobis_sq(m, b, a), 1e-12 * (1 + d));
    EXPECT_EQ(mahalanobis_sq(m, a, a), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.matrix());
    const double sq = (a - b).squaredNorm();
    EXPECT_GE(d, eig.eigenvalues().minCoeff() * sq * (1 - 1e-12));
    EXPECT_LE(d, eig.eigenvalues().maxCoeff() * sq * (1 + 1e-12));
    const double c = 0.25 + t;
    EXPECT_NEAR(mahalanobis_sq(Metric(c * m.matrix()), a, b), c * d, 1e-12 * c * (1 + d));
  }
}

TEST(Validate, Examples) {
  EXPECT_TRUE(validate(Eigen::MatrixXd::Identity(3, 3)).empty());
  Eigen::MatrixXd neg = Eigen::MatrixXd::Identity(3, 3);
  neg(2, 2) = -0.1;
  const auto v = validate(neg);
  ASSERT_TRUE(has(v, MetricViolation::Kind::NotPositiveDefinite));
  EXPECT_NE(v.front().message.find("-0.1"), std::string::npos);
  Eigen::MatrixXd ind = Eigen::MatrixXd::Identity(3, 3);
  ind(0, 1) = ind(1, 0) = 1.5;
  EXPECT_TRUE(has(validate(ind), MetricViolation::Kind::NotPositiveDefinite));
}

TEST(Validate, AsymmetryNonFiniteAndShape) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3);
  a(0, 1) = 1e-6;
  EXPECT_TRUE(has(validate(a), MetricViolation::Kind::Asymmetric));
  a(0, 1) = std::nan("");
  EXPECT_TRUE(has(validate(a), MetricViolation::Kind::NonFinite));
  EXPECT_TRUE(has(validate(Eigen::MatrixXd::Identity(2, 3)), MetricViolation::Kind::NotSquare));
  EXPECT_THROW(Metric(Eigen::MatrixXd::Zero(3, 3)), InvalidMetric);
}

TEST(Weighted, Presets) {
  EXPECT_EQ(make_weighted(v3(1, 1, 1)).matrix(), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_EQ(cheap_joint(3, 0).matrix(), Eigen::VectorXd(v3(0.01, 1, 1)).asDiagonal().toDenseMatrix());
  EXPECT_EQ(expensive_joint(3, 1).matrix(), Eigen::VectorXd(v3(1, 100, 1)).asDiagonal().toDenseMatrix());
  EXPECT_THROW(make_weighted(v3(1, 0, 1)), InvalidMetric);
  EXPECT_THROW(make_weighted(v3(1, -2, 1)), InvalidMetric);
}

TEST(Correlated, Examples) {
  EXPECT_EQ(make_correlated(Metric::identity(3), {}).matrix(), Eigen::MatrixXd::Identity(3, 3));
  const Metric m = make_correlated(Metric::identity(3), {{0, 1, 0.5}});
  EXPECT_DOUBLE_EQ(m(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(m(1, 0), 0.5);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.matrix());
  EXPECT_NEAR(eig.eigenvalues()[0], 0.5, 1e-12);
  EXPECT_NEAR(eig.eigenvalues()[2], 1.5, 1e-12);
  EXPECT_THROW(make_correlated(Metric::identity(3), {{0, 1, 0.9}, {1, 2, 0.9}, {0, 2, -0.9}}), InvalidMetric);
  EXPECT_THROW(make_correlated(Metric::identity(3), {{0, 1, 1.0}}), InvalidMetric);
}

TEST(Correlated, ScalesWithDiagonal) {
  const Metric m = make_correlated(make_weighted(v3(4, 9, 1)), {{0, 1, -0.5}});
  EXPECT_DOUBLE_EQ(m(0, 1), -0.5 * 6.0);
}

TEST(Frobenius, Normalize) {
  const Metric a = frobenius_normalize(Metric::identity(3));
  EXPECT_NEAR(a(0, 0), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(a.frobenius(), 1.0, 1e-12);
  EXPECT_TRUE((frobenius_normalize(a).matrix() - a.matrix()).cwiseAbs().maxCoeff() < 1e-15);
  const Metric b = frobenius_normalize(Metric(2.0 * Eigen::MatrixXd::Identity(3, 3)));
  EXPECT_TRUE((b.matrix() - a.matrix()).cwiseAbs().maxCoeff() < 1e-15);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) EXPECT_TRUE(is_unit_frobenius(frobenius_normalize(Metric(random_spd(rng, 7))), 1e-12));
}

TEST(Serialization, TextAndJsonRoundTrip) {
  std::mt19937_64 rng(8);
  const Metric m(random_spd(rng, 7));
  std::istringstream in(format_metric(m));
  EXPECT_EQ(parse_metric(in), m);
  EXPECT_EQ(metric_from_json(nlohmann::json::parse(metric_to_json(m).dump())), m);
  std::istringstream bad("3\n1 0 0\n0 1\n");
  EXPECT_THROW(parse_metric(bad), ParseError);
  EXPECT_THROW(metric_from_json(nlohmann::json{{"dim", 2}}), ParseError);
}
