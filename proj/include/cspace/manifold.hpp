#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cspace/angles.hpp"
#include "cspace/error.hpp"
#include "cspace/kinematics.hpp"

namespace cspace {

/// What the end effector must satisfy.
struct TaskTarget {
  enum class Kind { Point2, Point3, Height };
  Kind kind = Kind::Point2;
  Eigen::VectorXd value;

  static TaskTarget point2(double x, double y) { return {Kind::Point2, Eigen::Vector2d(x, y)}; }
  static TaskTarget point3(double x, double y, double z) { return {Kind::Point3, Eigen::Vector3d(x, y, z)}; }
  static TaskTarget height(double z) { return {Kind::Height, Eigen::VectorXd::Constant(1, z)}; }

  Eigen::Vector2d xy() const {
    require(kind == Kind::Point2 && value.size() == 2, "target: not a planar point");
    return {value[0], value[1]};
  }
};

enum class TaskType { Contraction, Expansion };

inline const char* to_string(TaskType t) { return t == TaskType::Contraction ? "contraction" : "expansion"; }

inline TaskType task_type_from_string(const std::string& s) {
  if (s == "contraction") return TaskType::Contraction;
  if (s == "expansion") return TaskType::Expansion;
  throw ParseError("unknown task type '" + s + "'");
}

/// ElbowUp: relative elbow angle >= 0. The two branches meet where the
/// elbow is straight.
enum class Branch { ElbowUp, ElbowDown };

inline const char* to_string(Branch b) { return b == Branch::ElbowUp ? "up" : "down"; }

inline Branch branch_of(const Configuration& q) { return q[1] >= 0.0 ? Branch::ElbowUp : Branch::ElbowDown; }

struct ManifoldSample {
  double phi = 0.0;  ///< absolute orientation of the last link, [0, 2pi)
  Branch branch = Branch::ElbowUp;
  Configuration q;
};

/// One connected piece of the sampled feasible set. Consecutive samples are
/// neighbours on the manifold; `closed` arcs also connect last to first.
/// Arcs are split where the elbow passes through the folded pose, since a
/// displacement is never measured across that seam.
struct ManifoldArc {
  std::vector<ManifoldSample> samples;
  bool closed = false;
};

struct Manifold {
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  int resolution = 0;
  std::vector<ManifoldArc> arcs;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& a : arcs) n += a.samples.size();
    return n;
  }

  std::vector<ManifoldSample> samples() const {
    std::vector<ManifoldSample> out;
    out.reserve(size());
    for (const auto& a : arcs) out.insert(out.end(), a.samples.begin(), a.samples.end());
    return out;
  }
};

inline void require_reachable(const PlanarArm& arm, const Eigen::Vector2d& target) {
  if (!target.allFinite()) throw ContractViolation("target has non-finite coordinates");
  if (target.norm() > arm.reach() + 1e-12) {
    throw Unreachable("target at distance " + std::to_string(target.norm()) + " exceeds reach " +
                      std::to_string(arm.reach()));
  }
}

/// Closed-form point on the manifold for last-link orientation `phi` on the
/// given branch, canonicalised into (-pi, pi]. Empty when the wrist point
/// falls outside the two-link annulus.
inline std::optional<Configuration> manifold_point(const PlanarArm& arm, const Eigen::Vector2d& target, double phi,
                                                   Branch branch, double tol = 1e-12) {
  const double l1 = arm.link_lengths[0], l2 = arm.link_lengths[1], l3 = arm.link_lengths[2];
  const Eigen::Vector2d wrist = target - l3 * Eigen::Vector2d(std::cos(phi), std::sin(phi));
  const double r2 = wrist.squaredNorm();
  double c = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (c > 1.0 + tol || c < -1.0 - tol) return std::nullopt;
  c = std::clamp(c, -1.0, 1.0);
  const double a = std::acos(c);
  const double q2 = branch == Branch::ElbowUp ? a : -a;
  const double q1 = std::atan2(wrist.y(), wrist.x()) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  Configuration q(3);
  q << wrap_pi(q1), wrap_pi(q2), wrap_pi(phi - q1 - q2);
  return q;
}

namespace detail {

/// Angles where the wrist point crosses the annulus boundaries.
inline std::vector<double> annulus_crossings(const PlanarArm& arm, const Eigen::Vector2d& target) {
  const double l1 = arm.link_lengths[0], l2 = arm.link_lengths[1], l3 = arm.link_lengths[2];
  const double t = target.norm();
  std::vector<double> out;
  if (t == 0.0) return out;
  const double bearing = std::atan2(target.y(), target.x());
  for (double radius : {l1 + l2, std::abs(l1 - l2)}) {
    double c = (t * t + l3 * l3 - radius * radius) / (2.0 * t * l3);
    if (c > 1.0 + 1e-12 || c < -1.0 - 1e-12) continue;
    c = std::clamp(c, -1.0, 1.0);
    const double a = std::acos(c);
    out.push_back(wrap_two_pi(bearing + a));
    out.push_back(wrap_two_pi(bearing - a));
  }
  return out;
}

inline double joint_distance_wrapped(const Configuration& a, const Configuration& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double d = wrap_pi(a[i] - b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

/// Samples the feasible set {q : fk(q) = target} by sweeping the last-link
/// orientation over n uniform values (plus the exact annulus crossings) and
/// solving the two-link problem in closed form on both elbow branches.
inline Manifold sample_manifold(const PlanarArm& arm, const Eigen::Vector2d& target, int n = 3600) {
  require(n >= 8, "sample_manifold: n must be >= 8");
  arm.validate();
  require_reachable(arm, target);

  struct Node {
    double phi;
    bool valid;
  };
  std::vector<Node> nodes;
  nodes.reserve(n + 4);
  for (int k = 0; k < n; ++k) {
    const double phi = kTwoPi * k / n;
    nodes.push_back({phi, manifold_point(arm, target, phi, Branch::ElbowUp).has_value()});
  }
  for (double phi : detail::annulus_crossings(arm, target)) nodes.push_back({phi, true});
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.phi < b.phi; });
  // Merge near-duplicates; a crossing wins over a grid point.
  std::vector<Node> uniq;
  for (const auto& nd : nodes) {
    if (!uniq.empty() && nd.phi - uniq.back().phi < 1e-12) {
      uniq.back().valid = uniq.back().valid || nd.valid;
      continue;
    }
    uniq.push_back(nd);
  }
  if (uniq.size() > 1 && uniq.front().phi + kTwoPi - uniq.back().phi < 1e-12) {
    uniq.front().valid = uniq.front().valid || uniq.back().valid;
    uniq.pop_back();
  }

  Manifold out;
  out.target = target;
  out.resolution = n;

  const std::size_t m = uniq.size();
  const bool all_valid = std::all_of(uniq.begin(), uniq.end(), [](const Node& nd) { return nd.valid; });
  auto sample_at = [&](double phi, Branch b) {
    auto q = manifold_point(arm, target, phi, b);
    if (!q) q = manifold_point(arm, target, phi, b, 1e-9);
    ManifoldSample s{phi, b, *q};
    s.branch = branch_of(s.q);
    return s;
  };

  std::vector<std::vector<ManifoldSample>> loops;
  std::vector<bool> loop_closed;
  if (all_valid) {
    for (Branch b : {Branch::ElbowUp, Branch::ElbowDown}) {
      std::vector<ManifoldSample> loop;
      for (const auto& nd : uniq) loop.push_back(sample_at(nd.phi, b));
      loops.push_back(std::move(loop));
      loop_closed.push_back(true);
    }
  } else {
    // Rotate so index 0 is invalid; every valid run is then contiguous.
    std::size_t start = 0;
    while (uniq[start].valid) ++start;
    std::vector<double> run;
    auto flush = [&]() {
      if (run.empty()) return;
      std::vector<ManifoldSample> loop;
      for (double phi : run) loop.push_back(sample_at(phi, Branch::ElbowUp));
      // The run ends on annulus crossings where both branches coincide.
      for (std::size_t k = run.size(); k-- > 0;) {
        if (k == run.size() - 1 || k == 0) continue;
        loop.push_back(sample_at(run[k], Branch::ElbowDown));
      }
      loop_closed.push_back(run.size() > 1);
      loops.push_back(std::move(loop));
      run.clear();
    };
    for (std::size_t k = 0; k < m; ++k) {
      const Node& nd = uniq[(start + k) % m];
      if (nd.valid) {
        run.push_back(nd.phi);
      } else {
        flush();
      }
    }
    flush();
  }
  if (loops.empty()) throw Infeasible("sample_manifold: the wrist circle never meets the two-link annulus");

  // Split loops where the elbow jumps across the folded seam.
  for (std::size_t li = 0; li < loops.size(); ++li) {
    auto& loop = loops[li];
    const std::size_t len = loop.size();
    auto seam = [&](std::size_t a, std::size_t b) { return std::abs(loop[a].q[1] - loop[b].q[1]) > kPi; };
    std::vector<std::size_t> cuts;  // cut after index k
    for (std::size_t k = 0; k + 1 < len; ++k) {
      if (seam(k, k + 1)) cuts.push_back(k);
    }
    const bool wrap_cut = loop_closed[li] && len > 1 && seam(len - 1, 0);
    if (cuts.empty() && !wrap_cut) {
      out.arcs.push_back({loop, loop_closed[li]});
      continue;
    }
    if (!loop_closed[li] || wrap_cut) {
      std::size_t begin = 0;
      for (std::size_t c : cuts) {
        out.arcs.push_back({{loop.begin() + begin, loop.begin() + c + 1}, false});
        begin = c + 1;
      }
      out.arcs.push_back({{loop.begin() + begin, loop.end()}, false});
      continue;
    }
    // Closed loop with interior cuts: rotate to start right after the first cut.
    std::vector<ManifoldSample> rotated(loop.begin() + cuts.front() + 1, loop.end());
    rotated.insert(rotated.end(), loop.begin(), loop.begin() + cuts.front() + 1);
    const std::size_t shift = cuts.front() + 1;
    std::size_t begin = 0;
    for (std::size_t ci = 1; ci < cuts.size(); ++ci) {
      const std::size_t c = cuts[ci] - shift;
      out.arcs.push_back({{rotated.begin() + begin, rotated.begin() + c + 1}, false});
      begin = c + 1;
    }
    out.arcs.push_back({{rotated.begin() + begin, rotated.end()}, false});
  }
  return out;
}

inline Manifold sample_manifold(const PlanarArm& arm, const TaskTarget& target, int n = 3600) {
  return sample_manifold(arm, target.xy(), n);
}

/// Arc-length-weighted mean of the samples. Each joint is averaged on the
/// unwrapped branch around its circular mean.
inline Configuration manifold_centroid(const Manifold& manifold) {
  const auto all = manifold.samples();
  if (all.empty()) throw ContractViolation("manifold_centroid: empty sample set");
  if (all.size() == 1) return all.front().q;

  std::vector<const Configuration*> pts;
  std::vector<double> weights;
  for (const auto& arc : manifold.arcs) {
    const auto& s = arc.samples;
    const std::size_t len = s.size();
    for (std::size_t k = 0; k < len; ++k) {
      double w = 0.0;
      if (k > 0) w += 0.5 * detail::joint_distance_wrapped(s[k].q, s[k - 1].q);
      else if (arc.closed && len > 1) w += 0.5 * detail::joint_distance_wrapped(s[k].q, s[len - 1].q);
      if (k + 1 < len) w += 0.5 * detail::joint_distance_wrapped(s[k].q, s[k + 1].q);
      else if (arc.closed && len > 1) w += 0.5 * detail::joint_distance_wrapped(s[k].q, s[0].q);
      pts.push_back(&s[k].q);
      weights.push_back(w);
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) std::fill(weights.begin(), weights.end(), 1.0), total = static_cast<double>(weights.size());

  const int d = static_cast<int>(pts.front()->size());
  Configuration c(d);
  for (int j = 0; j < d; ++j) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      sx += weights[k] * std::cos((*pts[k])[j]);
      sy += weights[k] * std::sin((*pts[k])[j]);
    }
    const double ref = std::atan2(sy, sx);
    double acc = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) acc += weights[k] * wrap_near((*pts[k])[j], ref);
    c[j] = acc / total;
  }
  return c;
}

/// Contraction if the start's end effector is farther from the base than the
/// target; ties count as expansion.
inline TaskType classify_task(const PlanarArm& arm, const Configuration& start, const Eigen::Vector2d& target) {
  require_reachable(arm, target);
  const double start_radius = fk_planar(arm, start).ee.norm();
  return start_radius > target.norm() ? TaskType::Contraction : TaskType::Expansion;
}

/// Reflection across the base-target line: (2a - q1, -q2, -q3), canonicalised.
inline Configuration reflect_across_target(const Configuration& q, const Eigen::Vector2d& target) {
  const double alpha = std::atan2(target.y(), target.x());
  Configuration r(3);
  r << wrap_pi(2.0 * alpha - q[0]), wrap_pi(-q[1]), wrap_pi(-q[2]);
  return r;
}

/// Distance from q to the sampled manifold treated as a polyline through
/// neighbouring samples, with joint differences taken modulo 2pi.
inline double distance_to_manifold(const Manifold& manifold, const Configuration& q) {
  double best = std::numeric_limits<double>::infinity();
  auto seg = [&](const Configuration& a, const Configuration& b) {
    const int d = static_cast<int>(q.size());
    Eigen::VectorXd pa(d), ab(d);
    for (int i = 0; i < d; ++i) {
      pa[i] = wrap_pi(a[i] - q[i]);
      ab[i] = wrap_pi(b[i] - a[i]);
    }
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp(-pa.dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (pa + t * ab).norm());
  };
  for (const auto& arc : manifold.arcs) {
    const auto& s = arc.samples;
    if (s.size() == 1) seg(s[0].q, s[0].q);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) seg(s[k].q, s[k + 1].q);
    if (arc.closed && s.size() > 1) seg(s.back().q, s.front().q);
  }
  return best;
}

/// Hausdorff distance between the reflected sample set and the sampled
/// manifold. The reflection is an isometry of the wrapped distance, so the
/// other direction gives the same value.
inline double reflection_gap(const Manifold& manifold) {
  double gap = 0.0;
  for (const auto& arc : manifold.arcs) {
    for (const auto& s : arc.samples) {
      gap = std::max(gap, distance_to_manifold(manifold, reflect_across_target(s.q, manifold.target)));
    }
  }
  return gap;
}

/// Largest wrapped distance between two samples.
inline double manifold_diameter(const Manifold& manifold) {
  const auto all = manifold.samples();
  double d = 0.0;
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) d = std::max(d, detail::joint_distance_wrapped(all[a].q, all[b].q));
  }
  return d;
}

/// CSV rows: phi,branch,q1,q2,q3.
inline void write_manifold_csv(std::ostream& out, const Manifold& manifold) {
  out << "phi,branch,q1,q2,q3\n";
  char buf[160];
  for (const auto& arc : manifold.arcs) {
    for (const auto& s : arc.samples) {
      std::snprintf(buf, sizeof buf, "%.17g,%s,%.17g,%.17g,%.17g\n", s.phi, to_string(s.branch), s.q[0], s.q[1],
                    s.q[2]);
      out << buf;
    }
  }
}

}  // namespace cspace
