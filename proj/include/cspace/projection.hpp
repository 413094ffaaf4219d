#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cspace/angles.hpp"
#include "cspace/error.hpp"
#include "cspace/kinematics.hpp"
#include "cspace/manifold.hpp"
#include "cspace/metric.hpp"
#include "json.hpp"

namespace cspace {

// ---------------------------------------------------------------------------
// Constraints c(q) = 0

struct Constraint {
  enum class Kind { Point2, Point3, Height, JointEquality };
  Kind kind = Kind::Point2;
  Eigen::VectorXd value;
  int joint = -1;

  static Constraint from_target(const TaskTarget& t) {
    switch (t.kind) {
      case TaskTarget::Kind::Point2: return {Kind::Point2, t.value, -1};
      case TaskTarget::Kind::Point3: return {Kind::Point3, t.value, -1};
      case TaskTarget::Kind::Height: return {Kind::Height, t.value, -1};
    }
    throw ContractViolation("unknown target kind");
  }
  static Constraint joint_equals(int joint, double v) { return {Kind::JointEquality, Eigen::VectorXd::Constant(1, v), joint}; }
};

inline Eigen::VectorXd constraint_residual(const PlanarArm& arm, const Constraint& c, const Configuration& q) {
  switch (c.kind) {
    case Constraint::Kind::Point2: return fk_planar(arm, q).ee - c.value;
    case Constraint::Kind::Height: return Eigen::VectorXd::Constant(1, fk_planar(arm, q).ee.y() - c.value[0]);
    case Constraint::Kind::JointEquality: {
      const double d = q[c.joint] - c.value[0];
      return Eigen::VectorXd::Constant(1, PlanarArm::topology()[c.joint] == JointTopology::Wrapped ? wrap_pi(d) : d);
    }
    case Constraint::Kind::Point3: break;
  }
  throw ContractViolation("planar arm: unsupported constraint kind");
}

inline Eigen::MatrixXd constraint_jacobian(const PlanarArm& arm, const Constraint& c, const Configuration& q) {
  switch (c.kind) {
    case Constraint::Kind::Point2: return jacobian_planar(arm, q);
    case Constraint::Kind::Height: return jacobian_planar(arm, q).row(1);
    case Constraint::Kind::JointEquality: {
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, 3);
      j(0, c.joint) = 1.0;
      return j;
    }
    case Constraint::Kind::Point3: break;
  }
  throw ContractViolation("planar arm: unsupported constraint kind");
}

inline Eigen::VectorXd constraint_residual(const ChainArm& arm, const Constraint& c, const Configuration& q) {
  switch (c.kind) {
    case Constraint::Kind::Point3: return fk_chain(arm, q).ee - c.value;
    case Constraint::Kind::Height: return Eigen::VectorXd::Constant(1, fk_chain(arm, q).ee.z() - c.value[0]);
    case Constraint::Kind::JointEquality: {
      const double d = q[c.joint] - c.value[0];
      return Eigen::VectorXd::Constant(1, arm.topology(c.joint) == JointTopology::Wrapped ? wrap_pi(d) : d);
    }
    case Constraint::Kind::Point2: break;
  }
  throw ContractViolation("chain arm: unsupported constraint kind");
}

inline Eigen::MatrixXd constraint_jacobian(const ChainArm& arm, const Constraint& c, const Configuration& q) {
  switch (c.kind) {
    case Constraint::Kind::Point3: return jacobian_chain(arm, q);
    case Constraint::Kind::Height: return jacobian_chain(arm, q).row(2);
    case Constraint::Kind::JointEquality: {
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(1, arm.dof());
      j(0, c.joint) = 1.0;
      return j;
    }
    case Constraint::Kind::Point2: break;
  }
  throw ContractViolation("chain arm: unsupported constraint kind");
}

inline void check_constraint(const PlanarArm& arm, const Constraint& c) {
  if (c.kind == Constraint::Kind::Point2) {
    require(c.value.size() == 2, "planar target must have 2 coordinates");
    require_reachable(arm, c.value);
  } else if (c.kind == Constraint::Kind::Height) {
    if (std::abs(c.value[0]) > arm.reach() + 1e-12) throw Unreachable("height outside reach");
  } else if (c.kind == Constraint::Kind::JointEquality) {
    require(c.joint >= 0 && c.joint < 3, "joint index out of range");
  } else {
    throw ContractViolation("planar arm: spatial target given");
  }
}

inline void check_constraint(const ChainArm& arm, const Constraint& c) {
  if (c.kind == Constraint::Kind::Point3) {
    require(c.value.size() == 3, "spatial target must have 3 coordinates");
    const double dist = (Eigen::Vector3d(c.value[0], c.value[1], c.value[2]) - arm.base_position).norm();
    if (dist > arm.reach() + 1e-12) {
      throw Unreachable("target at distance " + std::to_string(dist) + " exceeds reach " + std::to_string(arm.reach()));
    }
  } else if (c.kind == Constraint::Kind::Height) {
    if (std::abs(c.value[0] - arm.base_position.z()) > arm.reach() + 1e-12) throw Unreachable("height outside reach");
  } else if (c.kind == Constraint::Kind::JointEquality) {
    require(c.joint >= 0 && c.joint < arm.dof(), "joint index out of range");
    if (!arm.joints[c.joint].limit.contains(c.value[0]) && arm.topology(c.joint) == JointTopology::Literal) {
      throw Infeasible("joint '" + arm.joints[c.joint].name + "' value outside its limits");
    }
  } else {
    throw ContractViolation("chain arm: planar target given");
  }
}

// ---------------------------------------------------------------------------
// Results

enum class Solver { Sweep, Multistart };

inline const char* to_string(Solver s) { return s == Solver::Sweep ? "sweep" : "multistart"; }

struct ProjectionResult {
  Configuration q_star;
  double cost = 0.0;
  double residual = 0.0;
  Solver solver = Solver::Sweep;
  int restarts_agreeing = 0;
  int restarts = 0;
  std::optional<double> phi;  ///< sweep only
  std::optional<Branch> branch;
};

/// Which manifold samples a sweep may return.
enum class BranchPolicy { Any, SameAsStart };

namespace detail {

inline double planar_cost(const Eigen::MatrixXd& m, const PlanarArm& arm, const Configuration& start,
                          const Configuration& q) {
  return mahalanobis_sq(m, start, representative(arm, start, q));
}

inline bool branch_allowed(BranchPolicy policy, const Configuration& start, const Configuration& q) {
  if (policy == BranchPolicy::Any) return true;
  if (q[1] == 0.0 || std::abs(q[1]) == kPi) return true;  // junction shared by both branches
  return branch_of(q) == branch_of(start);
}

struct SweepCosts {
  Manifold manifold;
  std::vector<std::vector<double>> costs;  // per arc, per sample; +inf when excluded
};

inline SweepCosts sweep_costs(const PlanarArm& arm, const Configuration& start, const Eigen::Vector2d& target,
                              const Eigen::MatrixXd& m, int n, BranchPolicy policy) {
  SweepCosts out{sample_manifold(arm, target, n), {}};
  for (const auto& arc : out.manifold.arcs) {
    std::vector<double> c;
    c.reserve(arc.samples.size());
    for (const auto& s : arc.samples) {
      c.push_back(branch_allowed(policy, start, s.q) ? planar_cost(m, arm, start, s.q)
                                                     : std::numeric_limits<double>::infinity());
    }
    out.costs.push_back(std::move(c));
  }
  return out;
}

/// Golden-section search of cost(phi) on one branch over [lo, hi]. Wrapped
/// joints are unwrapped continuously from `ref` and the displacement is kept
/// in the closed box [-pi, pi], so the searched function is continuous and
/// a minimum at a wrap seam is reached as a limit from ref's side.
struct Refined {
  double cost = std::numeric_limits<double>::infinity();
  double phi = 0.0;
  Configuration q;
};

inline Refined golden_refine(const PlanarArm& arm, const Configuration& start, const Eigen::Vector2d& target,
                             const Eigen::MatrixXd& m, Branch b, const Configuration& ref, double lo, double hi,
                             double tol) {
  auto f = [&](double phi) {
    Refined r;
    r.phi = phi;
    auto q = manifold_point(arm, target, phi, b, 1e-9);
    if (!q) return r;
    Configuration u = *q;
    u[0] = wrap_near(u[0], ref[0]);
    u[2] = wrap_near(u[2], ref[2]);
    if (std::abs(u[0] - start[0]) > kPi || std::abs(u[2] - start[2]) > kPi) return r;
    r.q = u;
    r.cost = mahalanobis_sq(m, start, u);
    return r;
  };
  // The admissible part of the bracket is one interval holding the seed
  // sample. When a seam or an arc end cuts the bracket, bisect for the cut so
  // that the search below never compares two infinite costs.
  const bool lo_ok = std::isfinite(f(lo).cost), hi_ok = std::isfinite(f(hi).cost);
  if (!lo_ok && !hi_ok) return f(0.5 * (lo + hi));
  if (lo_ok != hi_ok) {
    double good = lo_ok ? lo : hi, bad = lo_ok ? hi : lo;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (good + bad);
      if (mid == good || mid == bad) break;
      (std::isfinite(f(mid).cost) ? good : bad) = mid;
    }
    (lo_ok ? hi : lo) = good;
  }
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - invphi * (hi - lo), x2 = lo + invphi * (hi - lo);
  double f1 = f(x1).cost, f2 = f(x2).cost;
  while (hi - lo > tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1, f2 = f1;
      x1 = hi - invphi * (hi - lo);
      f1 = f(x1).cost;
    } else {
      lo = x1;
      x1 = x2, f1 = f2;
      x2 = lo + invphi * (hi - lo);
      f2 = f(x2).cost;
    }
  }
  Refined best = f(0.5 * (lo + hi));
  for (double x : {lo, hi}) {
    Refined r = f(x);
    if (r.cost < best.cost) best = r;
  }
  return best;
}

}  // namespace detail

/// Exact projection for the planar arm: evaluate every manifold sample, then
/// refine each discrete local minimum by golden-section search on phi.
inline ProjectionResult project_sweep(const PlanarArm& arm, const Configuration& start, const Eigen::Vector2d& target,
                                      const Metric& metric, int n = 3600, BranchPolicy policy = BranchPolicy::Any) {
  require_dim(start, 3, "project_sweep");
  require(metric.dim() == 3, "project_sweep: metric dimension must be 3");
  if (!start.allFinite()) throw ContractViolation("project_sweep: non-finite start");
  const Eigen::MatrixXd& m = metric.matrix();
  const auto sc = detail::sweep_costs(arm, start, target, m, n, policy);

  detail::Refined best;
  auto consider = [&](const detail::Refined& r) {
    if (r.cost < best.cost) best = r;
  };

  struct Seed {
    double cost;
    std::size_t arc, k;
  };
  std::vector<Seed> minima;
  for (std::size_t a = 0; a < sc.manifold.arcs.size(); ++a) {
    const auto& arc = sc.manifold.arcs[a];
    const auto& c = sc.costs[a];
    const std::size_t len = c.size();
    for (std::size_t k = 0; k < len; ++k) {
      if (!std::isfinite(c[k])) continue;
      if (c[k] < best.cost) best = {c[k], arc.samples[k].phi, representative(arm, start, arc.samples[k].q)};
      const bool has_prev = k > 0 || (arc.closed && len > 1);
      const bool has_next = k + 1 < len || (arc.closed && len > 1);
      const double prev = has_prev ? c[k > 0 ? k - 1 : len - 1] : std::numeric_limits<double>::infinity();
      const double next = has_next ? c[k + 1 < len ? k + 1 : 0] : std::numeric_limits<double>::infinity();
      if (c[k] <= prev && c[k] <= next) minima.push_back({c[k], a, k});
    }
  }
  if (!std::isfinite(best.cost)) throw Infeasible("project_sweep: no admissible manifold sample");

  std::sort(minima.begin(), minima.end(), [](const Seed& x, const Seed& y) { return x.cost < y.cost; });
  if (minima.size() > 64) minima.resize(64);
  for (const auto& s : minima) {
    const auto& arc = sc.manifold.arcs[s.arc];
    const std::size_t len = arc.samples.size();
    const double phi0 = arc.samples[s.k].phi;
    const Configuration ref = representative(arm, start, arc.samples[s.k].q);
    std::vector<double> ends;
    if (s.k > 0) ends.push_back(arc.samples[s.k - 1].phi);
    else if (arc.closed && len > 1) ends.push_back(arc.samples[len - 1].phi);
    if (s.k + 1 < len) ends.push_back(arc.samples[s.k + 1].phi);
    else if (arc.closed && len > 1) ends.push_back(arc.samples[0].phi);
    for (double e : ends) {
      const double other = phi0 + wrap_pi(e - phi0);
      for (Branch b : {Branch::ElbowUp, Branch::ElbowDown}) {
        if (policy == BranchPolicy::SameAsStart && b != branch_of(start)) continue;
        consider(detail::golden_refine(arm, start, target, m, b, ref, std::min(phi0, other), std::max(phi0, other),
                                       1e-10));
      }
    }
  }

  ProjectionResult r;
  r.q_star = best.q;
  r.cost = mahalanobis_sq(m, start, r.q_star);
  r.residual = (fk_planar(arm, r.q_star).ee - target).norm();
  r.solver = Solver::Sweep;
  r.phi = wrap_two_pi(best.phi);
  r.branch = branch_of(r.q_star);
  return r;
}

// ---------------------------------------------------------------------------
// Multistart penalty solver

struct MultistartOptions {
  int restarts = 32;
  std::uint64_t seed = 0;
  double feasibility_tol = 1e-6;
  double agreement_tol = 1e-4;
  std::vector<double> mu_schedule = {1, 10, 100, 1e3, 1e4, 1e5, 1e6};
  /// Perturbed restarts are first pulled onto the constraint and then skip
  /// schedule stages below this value; weak penalties would drag every
  /// restart back to the same point near the start.
  double perturbed_mu_floor = 1e4;
  int max_iters_per_mu = 500;
};

/// Search box: literal joints use their limits, wrapped joints (q_s - pi, q_s + pi].
/// The planar elbow is literal over [-pi, pi].
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> search_box(const PlanarArm&, const Configuration& start) {
  Eigen::VectorXd lo(3), hi(3);
  lo << start[0] - kPi, -kPi, start[2] - kPi;
  hi << start[0] + kPi, kPi, start[2] + kPi;
  return {lo, hi};
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> search_box(const ChainArm& arm, const Configuration& start) {
  const int d = arm.dof();
  Eigen::VectorXd lo(d), hi(d);
  for (int i = 0; i < d; ++i) {
    if (arm.topology(i) == JointTopology::Literal) {
      lo[i] = arm.joints[i].limit.lo;
      hi[i] = arm.joints[i].limit.hi;
    } else {
      lo[i] = start[i] - kPi;
      hi[i] = start[i] + kPi;
    }
  }
  return {lo, hi};
}

namespace detail {

template <class ArmT>
struct PenaltyProblem {
  const ArmT& arm;
  const Constraint& c;
  const Eigen::MatrixXd& m;
  const Configuration& start;
  Eigen::VectorXd lo, hi;

  Eigen::VectorXd clamp(const Eigen::VectorXd& q) const { return q.cwiseMax(lo).cwiseMin(hi); }

  double value(const Eigen::VectorXd& q, double mu) const {
    const Eigen::VectorXd d = q - start;
    return d.dot(m * d) + mu * constraint_residual(arm, c, q).squaredNorm();
  }

  /// Gauss-Newton-preconditioned descent with Armijo backtracking.
  Eigen::VectorXd minimize(Eigen::VectorXd q, double mu, int max_iters) const {
    double f = value(q, mu);
    for (int it = 0; it < max_iters; ++it) {
      const Eigen::VectorXd r = constraint_residual(arm, c, q);
      const Eigen::MatrixXd j = constraint_jacobian(arm, c, q);
      const Eigen::VectorXd g = 2.0 * m * (q - start) + 2.0 * mu * j.transpose() * r;
      const Eigen::MatrixXd h = 2.0 * m + 2.0 * mu * j.transpose() * j;
      // Joints pinned at a bound by the gradient stay fixed; Newton on the rest.
      std::vector<int> free;
      for (int i = 0; i < q.size(); ++i) {
        const bool pinned = (q[i] <= lo[i] && g[i] > 0.0) || (q[i] >= hi[i] && g[i] < 0.0);
        if (!pinned) free.push_back(i);
      }
      Eigen::VectorXd p = Eigen::VectorXd::Zero(q.size());
      if (free.empty()) return q;
      const int nf = static_cast<int>(free.size());
      Eigen::MatrixXd hf(nf, nf);
      Eigen::VectorXd gf(nf);
      for (int a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (int b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
      }
      const Eigen::VectorXd pf = -hf.ldlt().solve(gf);
      for (int a = 0; a < nf; ++a) p[free[a]] = pf[a];
      if (!p.allFinite() || g.dot(p) >= 0.0) {
        p.setZero();
        for (int i : free) p[i] = -g[i];
      }
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd cand = clamp(q + step * p);
        const double fc = value(cand, mu);
        if (fc <= f + 1e-4 * g.dot(cand - q)) {
          moved = (cand - q).norm() > 1e-14;
          const double improvement = f - fc;
          q = cand;
          f = fc;
          if (!moved || improvement <= 1e-16 * (1.0 + std::abs(f))) return q;
          break;
        }
        step *= 0.5;
      }
      if (!moved) return q;
    }
    return q;
  }

  /// Gauss-Newton on ||c||^2 inside the box, ignoring the cost.
  Eigen::VectorXd feasibility(Eigen::VectorXd q) const {
    double r = constraint_residual(arm, c, q).norm();
    for (int it = 0; it < 100 && r > 1e-12; ++it) {
      const Eigen::MatrixXd j = constraint_jacobian(arm, c, q);
      const Eigen::VectorXd step = j.completeOrthogonalDecomposition().solve(constraint_residual(arm, c, q));
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        const Eigen::VectorXd cand = clamp(q - t * step);
        const double rc = constraint_residual(arm, c, cand).norm();
        if (rc < r) {
          q = cand;
          r = rc;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    return q;
  }

  /// Metric-weighted Newton correction onto c(q) = 0. Joints the correction
  /// would push through a bound are held there and the rest re-solved.
  Eigen::VectorXd restore(Eigen::VectorXd q) const {
    const int d = static_cast<int>(q.size());
    for (int it = 0; it < 30; ++it) {
      const Eigen::VectorXd r = constraint_residual(arm, c, q);
      if (r.norm() <= 1e-13) break;
      const Eigen::MatrixXd j = constraint_jacobian(arm, c, q);
      std::vector<bool> held(d, false);
      Eigen::VectorXd next = q;
      for (int pass = 0; pass <= d; ++pass) {
        std::vector<int> free;
        for (int i = 0; i < d; ++i) {
          if (!held[i]) free.push_back(i);
        }
        if (free.empty()) break;
        const int nf = static_cast<int>(free.size());
        Eigen::MatrixXd jf(j.rows(), nf), mf(nf, nf);
        for (int a = 0; a < nf; ++a) {
          jf.col(a) = j.col(free[a]);
          for (int b = 0; b < nf; ++b) mf(a, b) = m(free[a], free[b]);
        }
        const Eigen::MatrixXd mj = mf.ldlt().solve(jf.transpose());
        const Eigen::VectorXd lambda = (jf * mj).completeOrthogonalDecomposition().solve(r);
        const Eigen::VectorXd step = mj * lambda;
        next = q;
        bool clamped = false;
        for (int a = 0; a < nf; ++a) {
          const int i = free[a];
          next[i] = q[i] - step[a];
          if (next[i] < lo[i] || next[i] > hi[i]) {
            next[i] = std::clamp(next[i], lo[i], hi[i]);
            held[i] = true;
            clamped = true;
          }
        }
        if (!clamped) break;
      }
      if (!next.allFinite()) break;
      if (constraint_residual(arm, c, next).norm() >= r.norm()) break;
      q = next;
    }
    return q;
  }
};

inline double reach_of(const PlanarArm& arm) { return arm.reach(); }
inline double reach_of(const ChainArm& arm) { return arm.reach(); }

}  // namespace detail

/// Penalty-method projection with random restarts. The returned q_star is the
/// displacement representative near the start, so cost = mahalanobis_sq(M, q_s, q_star).
template <class ArmT>
ProjectionResult project_multistart(const ArmT& arm, const Configuration& start, const Constraint& constraint,
                                    const Metric& metric, const MultistartOptions& opts = {}) {
  require_dim(start, arm.dof(), "project_multistart");
  require(metric.dim() == arm.dof(), "project_multistart: metric dimension mismatch");
  require(opts.restarts >= 1, "project_multistart: restarts must be >= 1");
  if (!start.allFinite()) throw ContractViolation("project_multistart: non-finite start");
  check_constraint(arm, constraint);

  const Configuration s = representative(arm, start, start);
  auto [lo, hi] = search_box(arm, s);
  detail::PenaltyProblem<ArmT> prob{arm, constraint, metric.matrix(), s, lo, hi};

  // Perturbed starts are Latin-hypercube stratified over the search box.
  std::mt19937_64 rng(opts.seed);
  const int perturbed = opts.restarts - 1;
  std::vector<std::vector<int>> strata(arm.dof());
  for (auto& st : strata) {
    st.resize(perturbed);
    for (int k = 0; k < perturbed; ++k) st[k] = k;
    std::shuffle(st.begin(), st.end(), rng);
  }
  std::vector<Eigen::VectorXd> finals;
  std::vector<double> residuals;
  for (int r = 0; r < opts.restarts; ++r) {
    Eigen::VectorXd q(arm.dof());
    double floor = 0.0;
    if (r == 0) {
      q = prob.clamp(s);
    } else {
      for (int i = 0; i < arm.dof(); ++i) {
        const double u = (strata[i][r - 1] + std::uniform_real_distribution<double>(0.0, 1.0)(rng)) / perturbed;
        q[i] = lo[i] + u * (hi[i] - lo[i]);
      }
      q = prob.feasibility(q);
      floor = opts.perturbed_mu_floor;
    }
    for (double mu : opts.mu_schedule) {
      if (mu >= floor) q = prob.minimize(q, mu, opts.max_iters_per_mu);
    }
    q = prob.restore(q);
    finals.push_back(q);
    residuals.push_back(constraint_residual(arm, constraint, q).norm());
  }

  int best = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    if (!(residuals[r] <= opts.feasibility_tol)) continue;
    const double cost = mahalanobis_sq(metric.matrix(), s, finals[r]);
    const bool better = cost < best_cost ||
                        (cost == best_cost && best >= 0 &&
                         std::lexicographical_compare(finals[r].begin(), finals[r].end(), finals[best].begin(),
                                                      finals[best].end()));
    if (better) best = r, best_cost = cost;
  }
  if (best < 0) {
    const double min_res = *std::min_element(residuals.begin(), residuals.end());
    throw Infeasible("project_multistart: no restart reached feasibility (best residual " + std::to_string(min_res) +
                     ", target within reach " + std::to_string(detail::reach_of(arm)) + ")");
  }

  ProjectionResult out;
  out.q_star = finals[best];
  out.cost = best_cost;
  out.residual = residuals[best];
  out.solver = Solver::Multistart;
  out.restarts = opts.restarts;
  for (int r = 0; r < opts.restarts; ++r) {
    if (residuals[r] <= opts.feasibility_tol && (finals[r] - finals[best]).norm() <= opts.agreement_tol) {
      ++out.restarts_agreeing;
    }
  }
  if constexpr (std::is_same_v<ArmT, PlanarArm>) out.branch = branch_of(out.q_star);
  return out;
}

// ---------------------------------------------------------------------------
// Sublevel sets

struct SublevelInterval {
  double phi_begin = 0.0;
  double phi_end = 0.0;
  Branch branch = Branch::ElbowUp;  ///< branch at the interval's minimum
  bool spans_junction = false;
  double min_cost = 0.0;
  int samples = 0;
};

struct SublevelReport {
  int component_count = 0;
  std::vector<SublevelInterval> intervals;
  double threshold = 0.0;  ///< delta
  double min_cost = 0.0;
};

/// Connected runs of manifold samples whose cost is within (1 + delta) of the
/// minimum. Runs follow manifold adjacency, so a run can pass through the
/// straight-elbow junction between branches but never through the folded seam.
inline SublevelReport sublevel_components(const PlanarArm& arm, const Configuration& start,
                                          const Eigen::Vector2d& target, const Metric& metric, double delta = 0.05,
                                          int n = 3600) {
  require(delta >= 0.0 && delta < 1.0, "sublevel_components: delta must be in [0, 1)");
  require_dim(start, 3, "sublevel_components");
  require(metric.dim() == 3, "sublevel_components: metric dimension must be 3");
  const auto sc = detail::sweep_costs(arm, start, target, metric.matrix(), n, BranchPolicy::Any);

  double gmin = std::numeric_limits<double>::infinity();
  for (const auto& c : sc.costs) {
    for (double v : c) gmin = std::min(gmin, v);
  }
  const double cut = (1.0 + delta) * gmin;

  SublevelReport rep;
  rep.threshold = delta;
  rep.min_cost = gmin;
  for (std::size_t a = 0; a < sc.manifold.arcs.size(); ++a) {
    const auto& arc = sc.manifold.arcs[a];
    const auto& c = sc.costs[a];
    const std::size_t len = c.size();
    std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end] inclusive
    for (std::size_t k = 0; k < len;) {
      if (!(c[k] <= cut)) {
        ++k;
        continue;
      }
      std::size_t e = k;
      while (e + 1 < len && c[e + 1] <= cut) ++e;
      runs.push_back({k, e});
      k = e + 1;
    }
    bool wraps = false;
    if (arc.closed && runs.size() > 1 && runs.front().first == 0 && runs.back().second == len - 1) {
      runs.front().first = runs.back().first;
      runs.pop_back();
      wraps = true;
    }
    for (std::size_t ri = 0; ri < runs.size(); ++ri) {
      const auto [b, e] = runs[ri];
      SublevelInterval iv;
      iv.phi_begin = arc.samples[b].phi;
      iv.phi_end = arc.samples[e].phi;
      iv.min_cost = std::numeric_limits<double>::infinity();
      const bool wrapped_run = wraps && ri == 0;
      const std::size_t count = wrapped_run ? (len - b) + e + 1 : e - b + 1;
      bool up = false, down = false;
      for (std::size_t t = 0; t < count; ++t) {
        const std::size_t k = (b + t) % len;
        const auto& smp = arc.samples[k];
        (smp.branch == Branch::ElbowUp ? up : down) = true;
        if (c[k] < iv.min_cost) iv.min_cost = c[k], iv.branch = smp.branch;
      }
      iv.spans_junction = up && down;
      iv.samples = static_cast<int>(count);
      rep.intervals.push_back(iv);
    }
  }
  rep.component_count = static_cast<int>(rep.intervals.size());
  return rep;
}

/// CSV cost profile: phi,branch,cost.
inline void write_cost_profile_csv(std::ostream& out, const PlanarArm& arm, const Configuration& start,
                                   const Eigen::Vector2d& target, const Metric& metric, int n = 3600) {
  const auto sc = detail::sweep_costs(arm, start, target, metric.matrix(), n, BranchPolicy::Any);
  out << "phi,branch,cost\n";
  char buf[96];
  for (std::size_t a = 0; a < sc.manifold.arcs.size(); ++a) {
    for (std::size_t k = 0; k < sc.costs[a].size(); ++k) {
      const auto& s = sc.manifold.arcs[a].samples[k];
      std::snprintf(buf, sizeof buf, "%.17g,%s,%.17g\n", s.phi, to_string(s.branch), sc.costs[a][k]);
      out << buf;
    }
  }
}

// ---------------------------------------------------------------------------
// Basins

struct BasinCluster {
  Configuration solution;
  int count = 0;
};

struct BasinMap {
  std::vector<Configuration> solutions;  ///< per start, canonical (-pi, pi]
  std::vector<int> cluster_of;           ///< per start
  std::vector<BasinCluster> clusters;
  double largest_fraction = 0.0;
};

inline Configuration canonical(const Configuration& q) {
  Configuration c = q;
  for (int i = 0; i < c.size(); ++i) c[i] = wrap_pi(c[i]);
  return c;
}

inline double wrapped_distance(const Configuration& a, const Configuration& b) {
  return detail::joint_distance_wrapped(a, b);
}

/// Projects every start onto the target's manifold without changing elbow
/// branch and groups starts whose solutions agree within `tol`.
inline BasinMap basin_map(const PlanarArm& arm, const Eigen::Vector2d& target, const Metric& metric,
                          const std::vector<Configuration>& starts, double tol = 1e-4, int n = 3600) {
  require(!starts.empty(), "basin_map: empty start grid");
  BasinMap out;
  for (const auto& s : starts) {
    const auto r = project_sweep(arm, s, target, metric, n, BranchPolicy::SameAsStart);
    const Configuration q = canonical(r.q_star);
    int id = -1;
    for (std::size_t c = 0; c < out.clusters.size(); ++c) {
      if (wrapped_distance(out.clusters[c].solution, q) <= tol) {
        id = static_cast<int>(c);
        break;
      }
    }
    if (id < 0) {
      id = static_cast<int>(out.clusters.size());
      out.clusters.push_back({q, 0});
    }
    ++out.clusters[id].count;
    out.solutions.push_back(q);
    out.cluster_of.push_back(id);
  }
  int largest = 0;
  for (const auto& c : out.clusters) largest = std::max(largest, c.count);
  out.largest_fraction = static_cast<double>(largest) / static_cast<double>(starts.size());
  return out;
}

/// Largest per-start solution disagreement between two basin maps.
inline double basin_map_gap(const BasinMap& a, const BasinMap& b) {
  require(a.solutions.size() == b.solutions.size(), "basin_map_gap: grids differ");
  double g = 0.0;
  for (std::size_t i = 0; i < a.solutions.size(); ++i) g = std::max(g, wrapped_distance(a.solutions[i], b.solutions[i]));
  return g;
}

// ---------------------------------------------------------------------------
// Mirror experiment

struct MirrorReport {
  ProjectionResult original;
  ProjectionResult mirrored;
  double gap = 0.0;  ///< ||mirror(q1*) - q2*|| with wrapped joints compared modulo 2pi
  bool robust = true;
};

inline int find_joint(const ChainArm& arm, const std::string& name) {
  for (int i = 0; i < arm.dof(); ++i) {
    if (arm.joints[i].name == name) return i;
  }
  throw ContractViolation("chain arm has no joint named '" + name + "'");
}

/// Bends the elbow to 90 degrees from q_s and from its mirror image and
/// compares the mirrored first solution with the second.
inline MirrorReport mirror_experiment(const ChainArm& arm, const Metric& metric, const Configuration& start,
                                      const MultistartOptions& opts = {}) {
  const int elbow = find_joint(arm, "elbow");
  require(arm.joints[elbow].mirror_sign == 1, "mirror_experiment: elbow must be mirror-invariant");
  const Constraint c = Constraint::joint_equals(elbow, kPi / 2.0);
  MirrorReport rep;
  rep.original = project_multistart(arm, start, c, metric, opts);
  rep.mirrored = project_multistart(arm, arm.mirror(start), c, metric, opts);
  const Configuration m1 = arm.mirror(rep.original.q_star);
  double s = 0.0;
  for (int i = 0; i < arm.dof(); ++i) {
    double d = m1[i] - rep.mirrored.q_star[i];
    if (arm.topology(i) == JointTopology::Wrapped) d = wrap_pi(d);
    s += d * d;
  }
  rep.gap = std::sqrt(s);
  rep.robust = rep.gap <= 0.1;
  return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json config_to_json(const Configuration& q) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < q.size(); ++i) a.push_back(q[i]);
  return a;
}

inline Configuration config_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("configuration must be a JSON array");
  Configuration q(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError("configuration entries must be numbers");
    q[static_cast<int>(i)] = j[i].get<double>();
  }
  return q;
}

inline nlohmann::json to_json(const ProjectionResult& r) {
  nlohmann::json j = {{"q_star", config_to_json(r.q_star)},
                      {"cost", r.cost},
                      {"residual", r.residual},
                      {"solver", to_string(r.solver)}};
  if (r.solver == Solver::Multistart) {
    j["restarts_agreeing"] = r.restarts_agreeing;
    j["restarts"] = r.restarts;
  }
  if (r.phi) j["phi"] = *r.phi;
  if (r.branch) j["branch"] = to_string(*r.branch);
  return j;
}

inline nlohmann::json to_json(const SublevelReport& r) {
  nlohmann::json iv = nlohmann::json::array();
  for (const auto& i : r.intervals) {
    iv.push_back({{"phi_begin", i.phi_begin},
                  {"phi_end", i.phi_end},
                  {"branch", to_string(i.branch)},
                  {"spans_junction", i.spans_junction},
                  {"min_cost", i.min_cost},
                  {"samples", i.samples}});
  }
  return {{"component_count", r.component_count}, {"threshold", r.threshold}, {"min_cost", r.min_cost},
          {"intervals", iv}};
}

inline nlohmann::json to_json(const MirrorReport& r) {
  return {{"original", to_json(r.original)}, {"mirrored", to_json(r.mirrored)}, {"gap", r.gap}, {"robust", r.robust}};
}

}  // namespace cspace
