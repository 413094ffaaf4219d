#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "cspace/error.hpp"
#include "cspace/kinematics.hpp"
#include "json.hpp"

namespace cspace {

/// Relative eigenvalue floor used for positive-definiteness: lambda_min > kPdTolerance * lambda_max.
inline constexpr double kPdTolerance = 1e-9;
inline constexpr double kSymmetryTolerance = 1e-12;

struct MetricViolation {
  enum class Kind { NotSquare, NonFinite, Asymmetric, NotPositiveDefinite };
  Kind kind;
  std::string message;
};

/// Every way `m` fails to be a symmetric positive-definite metric. Empty means valid.
inline std::vector<MetricViolation> validate(const Eigen::MatrixXd& m) {
  using K = MetricViolation::Kind;
  std::vector<MetricViolation> out;
  if (m.rows() != m.cols() || m.rows() == 0) {
    out.push_back({K::NotSquare, "matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols())});
    return out;
  }
  if (!m.allFinite()) {
    out.push_back({K::NonFinite, "matrix has non-finite entries"});
    return out;
  }
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTolerance) {
    out.push_back({K::Asymmetric, "max |M_ij - M_ji| = " + std::to_string(asym)});
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || !(lo > kPdTolerance * hi)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "smallest eigenvalue %.6g <= 0 (relative floor %.0e)", lo, kPdTolerance);
    out.push_back({K::NotPositiveDefinite, buf});
  }
  return out;
}

/// A validated symmetric positive-definite configuration-space metric.
class Metric {
 public:
  /// Throws InvalidMetric listing the violations.
  explicit Metric(Eigen::MatrixXd m) : m_(std::move(m)) {
    const auto v = validate(m_);
    if (!v.empty()) {
      std::string msg = "invalid metric:";
      for (const auto& e : v) msg += " " + e.message + ";";
      throw InvalidMetric(msg);
    }
    m_ = 0.5 * (m_ + m_.transpose());
  }

  static Metric identity(int dim) { return Metric(Eigen::MatrixXd::Identity(dim, dim)); }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }
  double frobenius() const { return m_.norm(); }

  bool operator==(const Metric& o) const { return m_ == o.m_; }

 private:
  Eigen::MatrixXd m_;
};

/// (a-b)^T M (a-b) for any square matrix (the learning code evaluates raw
/// symmetric matrices, not only validated metrics).
inline double mahalanobis_sq(const Eigen::MatrixXd& m, const Configuration& a, const Configuration& b) {
  if (a.size() != b.size() || a.size() != m.rows()) {
    throw ContractViolation("mahalanobis_sq: dimension mismatch (" + std::to_string(m.rows()) + ", " +
                            std::to_string(a.size()) + ", " + std::to_string(b.size()) + ")");
  }
  const Eigen::VectorXd d = a - b;
  return d.dot(m * d);
}

inline double mahalanobis_sq(const Metric& m, const Configuration& a, const Configuration& b) {
  return mahalanobis_sq(m.matrix(), a, b);
}

// ---------------------------------------------------------------------------
// Constructors

inline Metric make_weighted(const Eigen::VectorXd& weights) {
  for (int i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw InvalidMetric("make_weighted: weight " + std::to_string(i) + " must be positive");
    }
  }
  return Metric(weights.asDiagonal().toDenseMatrix());
}

inline constexpr double kCheapWeight = 0.01;
inline constexpr double kExpensiveWeight = 100.0;

inline Metric cheap_joint(int dim, int joint) {
  require(joint >= 0 && joint < dim, "cheap_joint: joint index out of range");
  Eigen::VectorXd w = Eigen::VectorXd::Ones(dim);
  w[joint] = kCheapWeight;
  return make_weighted(w);
}

inline Metric expensive_joint(int dim, int joint) {
  require(joint >= 0 && joint < dim, "expensive_joint: joint index out of range");
  Eigen::VectorXd w = Eigen::VectorXd::Ones(dim);
  w[joint] = kExpensiveWeight;
  return make_weighted(w);
}

/// Normalized coupling between joints i and j: M_ij = rho * sqrt(M_ii M_jj).
struct Coupling {
  int i = 0;
  int j = 0;
  double rho = 0.0;
};

/// Sets the requested off-diagonal couplings on top of `base`. An indefinite
/// result is reported, never repaired.
inline Metric make_correlated(const Metric& base, const std::vector<Coupling>& pairs) {
  Eigen::MatrixXd m = base.matrix();
  for (const auto& p : pairs) {
    if (p.i < 0 || p.j < 0 || p.i >= m.rows() || p.j >= m.rows() || p.i == p.j) {
      throw ContractViolation("make_correlated: bad joint pair");
    }
    if (!(std::abs(p.rho) < 1.0)) {
      throw InvalidMetric("make_correlated: |rho| must be < 1, got " + std::to_string(p.rho));
    }
    const double v = p.rho * std::sqrt(m(p.i, p.i) * m(p.j, p.j));
    m(p.i, p.j) = v;
    m(p.j, p.i) = v;
  }
  return Metric(m);  // throws InvalidMetric when the composition is indefinite
}

inline Metric frobenius_normalize(const Metric& m) {
  const double f = m.frobenius();
  if (!(f > 0.0)) throw InvalidMetric("frobenius_normalize: zero matrix");
  return Metric(m.matrix() / f);
}

inline bool is_unit_frobenius(const Metric& m, double tol = 1e-9) { return std::abs(m.frobenius() - 1.0) <= tol; }

// ---------------------------------------------------------------------------
// Serialization

/// Plain text: the dimension, then d*d row-major values.
inline std::string format_metric(const Metric& m) {
  std::ostringstream out;
  out << m.dim() << '\n';
  char buf[40];
  for (int i = 0; i < m.dim(); ++i) {
    for (int j = 0; j < m.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? " " : "") << buf;
    }
    out << '\n';
  }
  return out.str();
}

inline Metric parse_metric(std::istream& in) {
  int d = 0;
  if (!(in >> d) || d <= 0 || d > 64) throw ParseError("metric: bad dimension header");
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (!(in >> m(i, j))) throw ParseError("metric: expected " + std::to_string(d * d) + " values");
    }
  }
  return Metric(m);
}

inline nlohmann::json metric_to_json(const Metric& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.dim(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return {{"dim", m.dim()}, {"entries", rows}};
}

inline Metric metric_from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("dim").get<int>();
    const auto& rows = j.at("entries");
    if (d <= 0 || rows.size() != static_cast<std::size_t>(d)) throw ParseError("metric json: row count mismatch");
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i) {
      if (rows[i].size() != static_cast<std::size_t>(d)) throw ParseError("metric json: column count mismatch");
      for (int k = 0; k < d; ++k) m(i, k) = rows[i][k].get<double>();
    }
    return Metric(m);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric json: ") + e.what());
  }
}

}  // namespace cspace
