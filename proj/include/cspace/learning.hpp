#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "cspace/metric.hpp"
#include "cspace/queries.hpp"

namespace cspace {

enum class Criterion { Naturalness, VisualSimilarity, Closeness, Predictability };

inline constexpr Criterion kAllCriteria[] = {Criterion::Naturalness, Criterion::VisualSimilarity, Criterion::Closeness,
                                             Criterion::Predictability};

inline const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::Naturalness: return "naturalness";
    case Criterion::VisualSimilarity: return "visual_similarity";
    case Criterion::Closeness: return "closeness";
    case Criterion::Predictability: return "predictability";
  }
  return "?";
}

inline Criterion criterion_from_string(const std::string& s) {
  for (Criterion c : kAllCriteria) {
    if (s == to_string(c)) return c;
  }
  throw ParseError("unknown criterion '" + s + "'");
}

/// f(Q_i): probabilities over the query's candidates in canonical order.
struct AnswerDistribution {
  std::string query_id;
  Criterion criterion = Criterion::Naturalness;
  Eigen::VectorXd probs;
};

struct PreferenceItem {
  Query query;
  AnswerDistribution dist;
};

struct PreferenceDataset {
  std::string arm = "planar3";
  std::optional<TaskType> task_type;
  std::vector<PreferenceItem> items;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
  int dim() const { return items.empty() ? 0 : items.front().query.dim(); }
};

/// Checks the dataset invariants: shared dimension, simplex distributions,
/// unique query ids per criterion.
inline void check_dataset(const PreferenceDataset& ds) {
  require(!ds.empty(), "dataset is empty");
  const int d = ds.dim();
  std::map<std::pair<std::string, Criterion>, int> seen;
  for (const auto& it : ds.items) {
    require(it.query.dim() == d, "dataset: query " + it.query.id + " has dimension " + std::to_string(it.query.dim()) +
                                     ", expected " + std::to_string(d));
    require(it.dist.probs.size() == it.query.m(), "dataset: distribution size differs from candidate count for " +
                                                      it.query.id);
    require((it.dist.probs.array() >= 0.0).all() && std::abs(it.dist.probs.sum() - 1.0) <= 1e-9,
            "dataset: distribution for " + it.query.id + " is not on the simplex");
    require(seen[{it.query.id, it.dist.criterion}]++ == 0, "dataset: duplicate query id " + it.query.id);
  }
}

// ---------------------------------------------------------------------------
// Choice model

/// Squared distances from the start to each candidate under a raw matrix.
inline Eigen::VectorXd candidate_sq_distances(const Eigen::MatrixXd& m, const Query& q) {
  require(m.rows() == q.dim() && m.cols() == q.dim(), "query dimension differs from metric dimension");
  Eigen::VectorXd d(q.m());
  for (int j = 0; j < q.m(); ++j) d[j] = mahalanobis_sq(m, q.start, q.candidates[j]);
  return d;
}

inline double log_sum_exp(const Eigen::VectorXd& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

/// softmax(-d2), shifted by the minimum distance.
inline Eigen::VectorXd softmax_neg(const Eigen::VectorXd& d2) {
  const Eigen::ArrayXd e = (-(d2.array() - d2.minCoeff())).exp();
  return e / e.sum();
}

inline Eigen::VectorXd softmax_dist(const Eigen::MatrixXd& m, const Query& q) {
  return softmax_neg(candidate_sq_distances(m, q));
}

inline Eigen::VectorXd softmax_dist(const Metric& m, const Query& q) { return softmax_dist(m.matrix(), q); }

/// D_KL(p || r) with 0 log 0 = 0.
inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& r) {
  double s = 0.0;
  for (int j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) s += p[j] * (std::log(p[j]) - std::log(r[j]));
  }
  return s;
}

/// Sum by pairwise halving; the grouping depends only on the count, so a
/// parallel split over the same blocks reproduces it bit for bit.
template <class T>
T pairwise_sum(std::vector<T> v) {
  require(!v.empty(), "pairwise_sum: empty input");
  while (v.size() > 1) {
    std::size_t half = (v.size() + 1) / 2;
    for (std::size_t i = 0; i + half < v.size(); ++i) v[i] = v[i] + v[i + half];
    v.resize(half);
  }
  return v.front();
}

/// KL of one item: sum_j f_j log f_j - sum_j f_j log sigma_j, evaluated
/// directly from the softmax.
inline double query_kl(const Eigen::MatrixXd& m, const PreferenceItem& it) {
  return kl_divergence(it.dist.probs, softmax_dist(m, it.query));
}

/// The same term in log-sum-exp form: sum_j f_j (log f_j + d2_j) + LSE(-d2).
inline double query_kl_lse(const Eigen::MatrixXd& m, const PreferenceItem& it) {
  const Eigen::VectorXd d2 = candidate_sq_distances(m, it.query);
  const Eigen::VectorXd& f = it.dist.probs;
  double s = 0.0;
  for (int j = 0; j < f.size(); ++j) {
    if (f[j] > 0.0) s += f[j] * (std::log(f[j]) + d2[j]);
  }
  return s + f.sum() * log_sum_exp(-d2);
}

inline std::vector<double> per_query_kl(const Eigen::MatrixXd& m, const PreferenceDataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& it : ds.items) out.push_back(query_kl(m, it));
  return out;
}

inline double kl_objective(const Eigen::MatrixXd& m, const PreferenceDataset& ds) {
  if (ds.empty()) return 0.0;
  return pairwise_sum(per_query_kl(m, ds));
}

inline double kl_objective(const Metric& m, const PreferenceDataset& ds) { return kl_objective(m.matrix(), ds); }

inline double kl_objective_lse(const Eigen::MatrixXd& m, const PreferenceDataset& ds) {
  if (ds.empty()) return 0.0;
  std::vector<double> t;
  t.reserve(ds.size());
  for (const auto& it : ds.items) t.push_back(query_kl_lse(m, it));
  return pairwise_sum(std::move(t));
}

/// dKL/dM = sum_i sum_j (f_j - sigma_j) D_j D_j^T with D_j = q_s - q^(j),
/// treating every entry of M as an independent variable.
inline Eigen::MatrixXd objective_gradient(const Eigen::MatrixXd& m, const PreferenceDataset& ds) {
  const int d = static_cast<int>(m.rows());
  if (ds.empty()) return Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::MatrixXd> terms;
  terms.reserve(ds.size());
  for (const auto& it : ds.items) {
    const Eigen::VectorXd s = softmax_dist(m, it.query);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, d);
    for (int j = 0; j < it.query.m(); ++j) {
      const Eigen::VectorXd dj = it.query.start - it.query.candidates[j];
      g.noalias() += (it.dist.probs[j] - s[j]) * dj * dj.transpose();
    }
    terms.push_back(std::move(g));
  }
  return pairwise_sum(std::move(terms));
}

inline Eigen::MatrixXd objective_gradient(const Metric& m, const PreferenceDataset& ds) {
  return objective_gradient(m.matrix(), ds);
}

inline Eigen::VectorXd objective_gradient_diagonal(const Eigen::VectorXd& w, const PreferenceDataset& ds) {
  return objective_gradient(Eigen::MatrixXd(w.asDiagonal()), ds).diagonal();
}

// ---------------------------------------------------------------------------
// Constraint projection

/// Symmetrize, floor eigenvalues at eps (relative to the largest once it
/// exceeds one, so the result always passes metric validation), then scale to
/// unit Frobenius norm.
inline Metric project_spd_unit(const Eigen::MatrixXd& a, double eps = 1e-6) {
  require(a.rows() == a.cols() && a.rows() > 0, "project_spd_unit: matrix must be square");
  require(eps > 0.0, "project_spd_unit: eps must be positive");
  require(a.allFinite(), "project_spd_unit: non-finite entries");
  const Eigen::MatrixXd s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const double floor = eps * std::max(1.0, eig.eigenvalues().maxCoeff());
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd m = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose());
  return Metric(m / m.norm());
}

// ---------------------------------------------------------------------------
// Learning

enum class Parameterization { Full, Diagonal };

inline const char* to_string(Parameterization p) { return p == Parameterization::Full ? "full" : "diagonal"; }

inline Parameterization parameterization_from_string(const std::string& s) {
  if (s == "full") return Parameterization::Full;
  if (s == "diagonal") return Parameterization::Diagonal;
  throw ParseError("unknown parameterization '" + s + "'");
}

struct LearnOptions {
  Parameterization parameterization = Parameterization::Full;
  int max_iters = 20000;
  double initial_step = 1.0;  ///< first trial step; later trials use the Barzilai-Borwein ratio
  double armijo = 1e-4;
  double tolerance = 1e-10;
  double eigen_floor = 1e-6;
  int restarts = 8;  ///< identity plus restarts-1 random SPD starts
  std::uint64_t seed = 0;
  bool record_metrics = false;
};

struct TraceEntry {
  int iteration = 0;
  double objective = 0.0;
  double step = 0.0;
  std::optional<Metric> metric;
};

struct LearnResult {
  Metric metric = Metric::identity(1);
  double objective = 0.0;
  int iterations = 0;
  int restart = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;  ///< winning restart only
  std::vector<double> per_query_kl;
  std::vector<double> restart_objectives;
};

namespace detail {

inline Eigen::MatrixXd restrict(const Eigen::MatrixXd& g, Parameterization p) {
  if (p == Parameterization::Full) return g;
  return Eigen::MatrixXd(g.diagonal().asDiagonal());
}

inline Metric random_start(int d, Parameterization p, std::mt19937_64& rng, double eps) {
  std::normal_distribution<double> n(0.0, 1.0);
  if (p == Parameterization::Diagonal) {
    Eigen::VectorXd w(d);
    for (int i = 0; i < d; ++i) w[i] = std::exp(n(rng));
    return project_spd_unit(w.asDiagonal().toDenseMatrix(), eps);
  }
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d * d; ++i) a(i / d, i % d) = n(rng);
  return project_spd_unit(a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d), eps);
}

/// Projected gradient descent from `m0`; backtracks until the sufficient
/// decrease f(x+) <= f(x) - c ||x+ - x||^2 / t holds.
inline LearnResult descend(const PreferenceDataset& ds, Metric m0, const LearnOptions& o) {
  LearnResult r;
  Metric m = std::move(m0);
  double f = kl_objective(m, ds);
  Eigen::MatrixXd g = detail::restrict(objective_gradient(m, ds), o.parameterization);
  double t = o.initial_step;
  auto record = [&](int it, double step) {
    TraceEntry e{it, f, step, std::nullopt};
    if (o.record_metrics) e.metric = m;
    r.trace.push_back(std::move(e));
  };
  record(0, 0.0);
  int it = 0;
  for (; it < o.max_iters; ++it) {
    if (g.squaredNorm() == 0.0) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    Metric next = m;
    double fn = f;
    for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
      next = project_spd_unit(m.matrix() - t * g, o.eigen_floor);
      fn = kl_objective(next, ds);
      if (fn <= f - o.armijo * (next.matrix() - m.matrix()).squaredNorm() / t) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      r.converged = true;
      break;
    }
    const Eigen::MatrixXd gn = detail::restrict(objective_gradient(next, ds), o.parameterization);
    const Eigen::MatrixXd sdiff = next.matrix() - m.matrix();
    const Eigen::MatrixXd ydiff = gn - g;
    const double improvement = f - fn;
    m = std::move(next);
    f = fn;
    g = gn;
    record(it + 1, t);
    if (improvement < o.tolerance) {
      r.converged = true;
      ++it;
      break;
    }
    const double sy = (sdiff.array() * ydiff.array()).sum();
    t = sy > 0.0 ? sdiff.squaredNorm() / sy : o.initial_step;
    t = std::clamp(t, 1e-12, 1e12);
  }
  r.metric = m;
  r.objective = f;
  r.iterations = it;
  return r;
}

}  // namespace detail

/// Best of several projected-gradient runs over the unit-Frobenius SPD set.
inline LearnResult learn(const PreferenceDataset& ds, const LearnOptions& o = {}) {
  require(o.max_iters >= 1, "learn: max_iters must be at least 1");
  require(o.eigen_floor > 0.0, "learn: eigen floor must be positive");
  require(o.restarts >= 1, "learn: need at least one start");
  if (ds.empty()) throw ContractViolation("learn: dataset is empty");
  check_dataset(ds);
  const int d = ds.dim();
  std::mt19937_64 rng(o.seed);
  std::optional<LearnResult> best;
  std::vector<double> objs;
  for (int k = 0; k < o.restarts; ++k) {
    Metric m0 = k == 0 ? project_spd_unit(Eigen::MatrixXd::Identity(d, d), o.eigen_floor)
                       : detail::random_start(d, o.parameterization, rng, o.eigen_floor);
    LearnResult r = detail::descend(ds, std::move(m0), o);
    r.restart = k;
    objs.push_back(r.objective);
    if (!best || r.objective < best->objective) best = std::move(r);
  }
  best->restart_objectives = std::move(objs);
  best->per_query_kl = per_query_kl(best->metric.matrix(), ds);
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Synthetic answers and aggregation

/// One participant's pick, indexed in presentation order.
struct Response {
  std::string query_id;
  Criterion criterion = Criterion::Naturalness;
  int choice = 0;
};

/// Empirical frequencies per (query, criterion) in canonical candidate
/// order. Output follows battery order, then criterion order; pairs with no
/// responses are omitted.
inline std::vector<AnswerDistribution> aggregate(const std::vector<Response>& responses,
                                                 const std::vector<Query>& battery) {
  std::map<std::string, int> index;
  for (int i = 0; i < static_cast<int>(battery.size()); ++i) index[battery[i].id] = i;
  std::map<std::pair<int, int>, Eigen::VectorXd> counts;
  for (const auto& r : responses) {
    const auto f = index.find(r.query_id);
    if (f == index.end()) throw ContractViolation("aggregate: unknown query id '" + r.query_id + "'");
    const Query& q = battery[f->second];
    require(r.choice >= 0 && r.choice < q.m(), "aggregate: choice index out of range for " + r.query_id);
    auto& c = counts.try_emplace({f->second, static_cast<int>(r.criterion)}, Eigen::VectorXd::Zero(q.m())).first->second;
    c[q.canonical_index(r.choice)] += 1.0;
  }
  std::vector<AnswerDistribution> out;
  for (const auto& [key, c] : counts) {
    out.push_back({battery[key.first].id, static_cast<Criterion>(key.second), c / c.sum()});
  }
  return out;
}

enum class SynthMode { Exact, Sampled };

/// Simulated picks from the choice model of `truth`: `respondents` draws per
/// query, query by query, reported in presentation order.
inline std::vector<Response> synth_responses(const Metric& truth, const std::vector<Query>& queries, int respondents,
                                             std::uint64_t seed, Criterion criterion = Criterion::Naturalness) {
  require(respondents >= 1, "synth_answers: need at least one respondent");
  std::mt19937_64 rng(seed);
  std::vector<Response> out;
  out.reserve(queries.size() * static_cast<std::size_t>(respondents));
  for (const auto& q : queries) {
    const Eigen::VectorXd s = softmax_dist(truth, q);
    std::vector<int> slot(q.m());
    for (int k = 0; k < q.m(); ++k) slot[q.permutation[k]] = k;
    std::discrete_distribution<int> pick(s.data(), s.data() + s.size());
    for (int k = 0; k < respondents; ++k) out.push_back({q.id, criterion, slot[pick(rng)]});
  }
  return out;
}

/// f(Q_i) from the choice model of `truth`: exact probabilities, or the
/// aggregated picks of `respondents` simulated participants.
inline PreferenceDataset synth_answers(const Metric& truth, const std::vector<Query>& queries, SynthMode mode,
                                       std::uint64_t seed, int respondents = 23,
                                       Criterion criterion = Criterion::Naturalness) {
  PreferenceDataset ds;
  if (!queries.empty()) ds.arm = queries.front().arm;
  if (mode == SynthMode::Sampled) {
    const auto dists = aggregate(synth_responses(truth, queries, respondents, seed, criterion), queries);
    for (std::size_t i = 0; i < queries.size(); ++i) ds.items.push_back({queries[i], dists[i]});
  } else {
    for (const auto& q : queries) ds.items.push_back({q, AnswerDistribution{q.id, criterion, softmax_dist(truth, q)}});
  }
  bool one_type = !queries.empty();
  for (const auto& q : queries) one_type = one_type && q.task_type == queries.front().task_type;
  if (one_type) ds.task_type = queries.front().task_type;
  return ds;
}

/// Pairs each distribution with its query, keeping one criterion and
/// optionally one task type.
inline PreferenceDataset make_dataset(const std::vector<AnswerDistribution>& dists, const std::vector<Query>& battery,
                                      Criterion criterion, std::optional<TaskType> type = std::nullopt) {
  std::map<std::string, const Query*> index;
  for (const auto& q : battery) index[q.id] = &q;
  PreferenceDataset ds;
  if (!battery.empty()) ds.arm = battery.front().arm;
  ds.task_type = type;
  for (const auto& a : dists) {
    if (a.criterion != criterion) continue;
    const auto f = index.find(a.query_id);
    if (f == index.end()) throw ContractViolation("dataset: unknown query id '" + a.query_id + "'");
    if (type && f->second->task_type != *type) continue;
    ds.items.push_back({*f->second, a});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSON / JSON Lines

inline nlohmann::json to_json(const AnswerDistribution& a) {
  nlohmann::json p = nlohmann::json::array();
  for (int i = 0; i < a.probs.size(); ++i) p.push_back(a.probs[i]);
  return {{"query_id", a.query_id}, {"criterion", to_string(a.criterion)}, {"probs", p}};
}

inline AnswerDistribution distribution_from_json(const nlohmann::json& j) {
  try {
    AnswerDistribution a;
    a.query_id = j.at("query_id").get<std::string>();
    a.criterion = criterion_from_string(j.at("criterion").get<std::string>());
    a.probs = config_from_json(j.at("probs"));
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("distribution json: ") + e.what());
  }
}

inline nlohmann::json to_json(const Response& r) {
  return {{"query_id", r.query_id}, {"criterion", to_string(r.criterion)}, {"choice", r.choice}};
}

inline Response response_from_json(const nlohmann::json& j) {
  try {
    return {j.at("query_id").get<std::string>(), criterion_from_string(j.at("criterion").get<std::string>()),
            j.at("choice").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("response json: ") + e.what());
  }
}

/// One distribution per line, each carrying its query.
inline void write_dataset_jsonl(std::ostream& out, const PreferenceDataset& ds) {
  for (const auto& it : ds.items) {
    nlohmann::json j = to_json(it.dist);
    j["query"] = to_json(it.query);
    out << j.dump() << '\n';
  }
}

inline PreferenceDataset read_dataset_jsonl(std::istream& in) {
  PreferenceDataset ds;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.contains("query")) throw ParseError("dataset line " + std::to_string(n) + ": missing 'query'");
    PreferenceItem it{query_from_json(j["query"]), distribution_from_json(j)};
    if (it.dist.query_id != it.query.id) throw ParseError("dataset line " + std::to_string(n) + ": query id mismatch");
    ds.items.push_back(std::move(it));
  }
  if (!ds.items.empty()) {
    ds.arm = ds.items.front().query.arm;
    bool one = true;
    for (const auto& it : ds.items) one = one && it.query.task_type == ds.items.front().query.task_type;
    if (one) ds.task_type = ds.items.front().query.task_type;
  }
  return ds;
}

/// Learned metric report: the learned fit next to the unit-norm Euclidean
/// baseline I/sqrt(d).
inline nlohmann::json learn_report(const LearnResult& r, const PreferenceDataset& ds, Parameterization p) {
  const int d = ds.dim();
  const Eigen::MatrixXd eu = Eigen::MatrixXd::Identity(d, d) / std::sqrt(static_cast<double>(d));
  const double max_kl = r.per_query_kl.empty() ? 0.0 : *std::max_element(r.per_query_kl.begin(), r.per_query_kl.end());
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    per.push_back({{"query_id", ds.items[i].query.id}, {"kl", r.per_query_kl[i]}});
  }
  return {{"metric", metric_to_json(r.metric)},
          {"parameterization", to_string(p)},
          {"objective", r.objective},
          {"learned_kl", r.objective},
          {"euclidean_kl", kl_objective(eu, ds)},
          {"iterations", r.iterations},
          {"restart", r.restart},
          {"converged", r.converged},
          {"queries", static_cast<int>(ds.size())},
          {"max_query_kl", max_kl},
          {"per_query_kl", per}};
}

/// Learns `ds` and reports the fit next to the Euclidean baseline, tagged
/// with its split. The service and the command line both emit this.
inline nlohmann::json learn_and_report(const PreferenceDataset& ds, Criterion criterion, std::optional<TaskType> type,
                                       const LearnOptions& opts) {
  if (ds.empty()) throw InsufficientDiversity("no answered queries for this criterion and task type");
  const LearnResult r = learn(ds, opts);
  nlohmann::json rep = learn_report(r, ds, opts.parameterization);
  rep["criterion"] = to_string(criterion);
  rep["task_type"] = type ? nlohmann::json(to_string(*type)) : nlohmann::json(nullptr);
  return rep;
}

}  // namespace cspace
