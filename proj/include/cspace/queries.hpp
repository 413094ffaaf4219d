#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cspace/manifold.hpp"
#include "cspace/projection.hpp"

namespace cspace {

/// A multiple-choice preference question. `candidates` are kept in canonical
/// (wrist-sorted) order; `permutation[k]` is the canonical index shown at
/// presentation slot k.
struct Query {
  std::string id;
  std::string arm = "planar3";
  Configuration start;
  TaskTarget target;
  std::vector<Configuration> candidates;
  std::vector<int> permutation;
  TaskType task_type = TaskType::Contraction;

  int m() const { return static_cast<int>(candidates.size()); }
  int dim() const { return static_cast<int>(start.size()); }

  std::vector<Configuration> presented() const {
    std::vector<Configuration> out;
    out.reserve(permutation.size());
    for (int k : permutation) out.push_back(candidates[k]);
    return out;
  }

  /// Canonical index of the candidate shown at presentation slot `slot`.
  int canonical_index(int slot) const {
    require(slot >= 0 && slot < static_cast<int>(permutation.size()), "query: choice index out of range");
    return permutation[slot];
  }
};

/// Indices 0..n-1 picked at uniformly spaced ranks, first and last included.
inline std::vector<int> uniform_ranks(int n, int m) {
  require(m >= 2, "uniform_ranks: m must be at least 2");
  require(n >= m, "uniform_ranks: fewer items than picks");
  std::vector<int> out(m);
  for (int k = 0; k < m; ++k) {
    out[k] = static_cast<int>(std::llround(static_cast<double>(k) * (n - 1) / (m - 1)));
  }
  return out;
}

/// Fisher-Yates shuffle of 0..m-1 driven by `rng`.
inline std::vector<int> random_permutation(int m, std::mt19937_64& rng) {
  std::vector<int> p(m);
  std::iota(p.begin(), p.end(), 0);
  for (int i = m - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(p[i], p[pick(rng)]);
  }
  return p;
}

/// Query angles: the free shoulder is taken nearest the start, elbow and
/// wrist stay canonical. A limited wrist cannot pass through pi, so plain
/// differences of these representatives are the true displacements.
inline Configuration query_representative(const PlanarArm& arm, const Configuration& start, const Configuration& q) {
  Configuration r(3);
  r[0] = arm.limits[0].bounded() ? wrap_pi(q[0]) : wrap_near(q[0], start[0]);
  r[1] = wrap_pi(q[1]);
  r[2] = wrap_pi(q[2]);
  return r;
}

struct SurvivorCounts {
  std::size_t sampled = 0;
  std::size_t branch = 0;
  std::size_t limits = 0;
  std::size_t collision = 0;
  std::size_t distinct = 0;
};

inline std::string describe(const SurvivorCounts& c) {
  std::ostringstream s;
  s << "sampled " << c.sampled << ", same elbow branch " << c.branch << ", within limits " << c.limits
    << ", collision-free " << c.collision << ", distinct wrist values " << c.distinct;
  return s.str();
}

/// Filtered manifold samples sorted by increasing wrist value.
inline std::vector<Configuration> query_survivors(const PlanarArm& arm, const Configuration& start,
                                                  const Eigen::Vector2d& target, int n, SurvivorCounts* counts) {
  const Manifold man = sample_manifold(arm, target, n);
  const Branch b = branch_of(start);
  SurvivorCounts c;
  std::vector<Configuration> keep;
  for (const auto& s : man.samples()) {
    ++c.sampled;
    if (branch_of(s.q) != b) continue;
    ++c.branch;
    const Configuration q = query_representative(arm, start, s.q);
    if (!within_limits(arm, q)) continue;
    ++c.limits;
    if (self_collides(arm, q)) continue;
    ++c.collision;
    keep.push_back(q);
  }
  std::stable_sort(keep.begin(), keep.end(), [](const Configuration& a, const Configuration& b) { return a[2] < b[2]; });
  keep.erase(std::unique(keep.begin(), keep.end(), [](const Configuration& a, const Configuration& b) { return a[2] == b[2]; }),
             keep.end());
  c.distinct = keep.size();
  if (counts) *counts = c;
  return keep;
}

inline Query generate_query(const PlanarArm& arm, const Configuration& start, const Eigen::Vector2d& target, int m,
                            std::uint64_t seed, int n = 3600, std::string id = "q0") {
  require(m >= 2, "generate_query: m must be at least 2");
  require_dim(start, 3, "generate_query");
  require(within_limits(arm, start), "generate_query: start outside joint limits");
  const TaskType type = classify_task(arm, start, target);
  SurvivorCounts counts;
  const auto keep = query_survivors(arm, start, target, n, &counts);
  if (static_cast<int>(keep.size()) < m) {
    throw InsufficientDiversity("generate_query: need " + std::to_string(m) + " candidates but only " +
                                std::to_string(keep.size()) + " survive (" + describe(counts) + ")");
  }
  Query q;
  q.id = std::move(id);
  q.start = start;
  q.target = TaskTarget::point2(target.x(), target.y());
  q.task_type = type;
  for (int r : uniform_ranks(static_cast<int>(keep.size()), m)) q.candidates.push_back(keep[r]);
  std::mt19937_64 rng(seed);
  q.permutation = random_permutation(m, rng);
  return q;
}

// ---------------------------------------------------------------------------
// Batteries

struct BatterySpec {
  int contraction = 18;
  int expansion = 18;
  int m = 4;
  double radius_lo = 0.3;
  double radius_hi = 2.9;
  int resolution = 3600;
  int max_attempts = 20000;
};

/// Start configurations are drawn within limits (free joints on [-pi, pi])
/// and redrawn until collision-free; targets are polar-uniform in the
/// spec's radius band. Each query's shuffle seed derives from `seed`.
inline std::vector<Query> generate_battery(const PlanarArm& arm, const BatterySpec& spec, std::uint64_t seed) {
  require(spec.contraction >= 0 && spec.expansion >= 0, "battery: negative query counts");
  require(spec.radius_lo >= 0.0 && spec.radius_lo <= spec.radius_hi, "battery: bad radius range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const JointLimit& lim) {
    const double lo = lim.bounded() ? lim.lo : -kPi, hi = lim.bounded() ? lim.hi : kPi;
    return lo + (hi - lo) * unit(rng);
  };
  int want[2] = {spec.contraction, spec.expansion};
  std::vector<Query> out;
  std::vector<std::string> rejected;
  std::size_t unreachable = 0, thin = 0;
  for (int attempt = 0; attempt < spec.max_attempts && (want[0] > 0 || want[1] > 0); ++attempt) {
    Configuration qs(3);
    for (int i = 0; i < 3; ++i) qs[i] = draw(arm.limits[i]);
    const double a = -kPi + kTwoPi * unit(rng);
    const double r = spec.radius_lo + (spec.radius_hi - spec.radius_lo) * unit(rng);
    const std::uint64_t qseed = rng();
    if (self_collides(arm, qs)) continue;
    const Eigen::Vector2d t(r * std::cos(a), r * std::sin(a));
    if (r > arm.reach()) {
      ++unreachable;
      if (rejected.size() < 5) {
        std::ostringstream s;
        s << "(" << t.x() << "," << t.y() << ")";
        rejected.push_back(s.str());
      }
      continue;
    }
    const TaskType type = classify_task(arm, qs, t);
    int& left = want[type == TaskType::Contraction ? 0 : 1];
    if (left == 0) continue;
    char id[16];
    std::snprintf(id, sizeof id, "q%02zu", out.size());
    try {
      out.push_back(generate_query(arm, qs, t, spec.m, qseed, spec.resolution, id));
      --left;
    } catch (const InsufficientDiversity&) {
      ++thin;
    } catch (const Infeasible&) {
      ++thin;
    }
  }
  if (want[0] > 0 || want[1] > 0) {
    std::ostringstream s;
    if (out.empty() && thin == 0 && unreachable > 0) {
      s << "battery: no target in radius band [" << spec.radius_lo << ", " << spec.radius_hi << "] is within reach "
        << arm.reach() << "; rejected targets:";
      for (const auto& r : rejected) s << ' ' << r;
      throw Unreachable(s.str());
    }
    s << "battery: sampling budget of " << spec.max_attempts << " attempts exhausted with " << want[0]
      << " contraction and " << want[1] << " expansion queries missing; " << unreachable
      << " unreachable targets, " << thin << " with too few candidates";
    if (!rejected.empty()) {
      s << "; rejected targets:";
      for (const auto& r : rejected) s << ' ' << r;
    }
    throw InsufficientDiversity(s.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json target_to_json(const TaskTarget& t) {
  const char* kind = t.kind == TaskTarget::Kind::Point2 ? "point2" : t.kind == TaskTarget::Kind::Point3 ? "point3" : "height";
  return {{"kind", kind}, {"value", config_to_json(t.value)}};
}

inline TaskTarget target_from_json(const nlohmann::json& j) {
  try {
    const std::string k = j.at("kind").get<std::string>();
    TaskTarget t;
    t.value = config_from_json(j.at("value"));
    if (k == "point2") t.kind = TaskTarget::Kind::Point2;
    else if (k == "point3") t.kind = TaskTarget::Kind::Point3;
    else if (k == "height") t.kind = TaskTarget::Kind::Height;
    else throw ParseError("unknown target kind '" + k + "'");
    const int want = t.kind == TaskTarget::Kind::Point2 ? 2 : t.kind == TaskTarget::Kind::Point3 ? 3 : 1;
    if (t.value.size() != want) throw ParseError("target '" + k + "' has wrong length");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("target json: ") + e.what());
  }
}

/// Candidates appear in presentation order, as the UI shows them.
inline nlohmann::json to_json(const Query& q) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : q.presented()) cands.push_back(config_to_json(c));
  return {{"id", q.id},
          {"arm", q.arm},
          {"start", config_to_json(q.start)},
          {"target", target_to_json(q.target)},
          {"candidates", cands},
          {"permutation", q.permutation},
          {"task_type", to_string(q.task_type)}};
}

inline Query query_from_json(const nlohmann::json& j) {
  try {
    Query q;
    q.id = j.at("id").get<std::string>();
    q.arm = j.value("arm", std::string("planar3"));
    q.start = config_from_json(j.at("start"));
    q.target = target_from_json(j.at("target"));
    q.task_type = task_type_from_string(j.at("task_type").get<std::string>());
    const auto& cands = j.at("candidates");
    q.permutation = j.at("permutation").get<std::vector<int>>();
    const int m = static_cast<int>(cands.size());
    if (m < 2 || static_cast<int>(q.permutation.size()) != m) throw ParseError("query " + q.id + ": bad candidate count");
    std::vector<int> seen(m, 0);
    q.candidates.assign(m, Configuration());
    for (int k = 0; k < m; ++k) {
      const int c = q.permutation[k];
      if (c < 0 || c >= m || seen[c]++) throw ParseError("query " + q.id + ": permutation is not a bijection");
      q.candidates[c] = config_from_json(cands[k]);
      if (q.candidates[c].size() != q.start.size()) throw ParseError("query " + q.id + ": candidate dimension mismatch");
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("query json: ") + e.what());
  }
}

inline nlohmann::json battery_to_json(const std::vector<Query>& qs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& q : qs) a.push_back(to_json(q));
  return {{"queries", a}};
}

inline std::vector<Query> battery_from_json(const nlohmann::json& j) {
  if (!j.contains("queries") || !j["queries"].is_array()) throw ParseError("battery json: missing 'queries' array");
  std::vector<Query> out;
  for (const auto& q : j["queries"]) out.push_back(query_from_json(q));
  return out;
}

}  // namespace cspace
