#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

// Eigen must precede httplib: a system header it pulls in defines macros
// that clash with Eigen internals.
#include "cspace/learning.hpp"

#include "httplib.h"
#include "json.hpp"

namespace cspace {

/// Current UTC time as RFC 3339 with millisecond precision.
inline std::string rfc3339_now() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const std::time_t t = system_clock::to_time_t(now);
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

/// Prompt shown for each criterion.
inline const char* criterion_prompt(Criterion c) {
  switch (c) {
    case Criterion::Naturalness: return "In which answer choice does the robot look most natural?";
    case Criterion::VisualSimilarity:
      return "In which answer choice does the robot look most visually similar to the start position?";
    case Criterion::Closeness: return "In which answer choice is the robot closest to the start position?";
    case Criterion::Predictability:
      return "In which answer choice does the robot move how you would expect given the start configuration and red dot?";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Answer log

/// One line of the answer log. `choice` is in presentation order.
struct AnswerRecord {
  std::string session_id;
  std::string query_id;
  Criterion criterion = Criterion::Naturalness;
  int choice = 0;
  std::string received_at;
};

struct SessionRecord {
  std::string session_id;
  std::string created_at;
};

inline nlohmann::json to_json(const AnswerRecord& r) {
  return {{"type", "answer"},
          {"session_id", r.session_id},
          {"query_id", r.query_id},
          {"criterion", to_string(r.criterion)},
          {"choice", r.choice},
          {"received_at", r.received_at}};
}

inline nlohmann::json to_json(const SessionRecord& s) {
  return {{"type", "session"}, {"session_id", s.session_id}, {"created_at", s.created_at}};
}

struct AnswerLog {
  std::vector<SessionRecord> sessions;
  std::vector<AnswerRecord> answers;

  std::vector<Response> responses() const {
    std::vector<Response> out;
    out.reserve(answers.size());
    for (const auto& a : answers) out.push_back({a.query_id, a.criterion, a.choice});
    return out;
  }
};

/// Parses a JSON Lines log. A torn final line (crash mid-append) is
/// ignored; malformed lines elsewhere are errors.
inline AnswerLog read_answer_log(std::istream& in) {
  AnswerLog log;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "session") {
        log.sessions.push_back({j.at("session_id").get<std::string>(), j.at("created_at").get<std::string>()});
      } else if (type == "answer") {
        log.answers.push_back({j.at("session_id").get<std::string>(), j.at("query_id").get<std::string>(),
                               criterion_from_string(j.at("criterion").get<std::string>()), j.at("choice").get<int>(),
                               j.at("received_at").get<std::string>()});
      } else {
        throw ParseError("unknown record type '" + type + "'");
      }
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) break;
      throw ParseError("answer log line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return log;
}

inline AnswerLog read_answer_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  return read_answer_log(in);
}

/// Append-only file; each batch is written then fsynced before returning.
class AppendFile {
 public:
  AppendFile() = default;
  explicit AppendFile(const std::string& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open answer log '" + path + "': " + std::strerror(errno));
  }
  AppendFile(const AppendFile&) = delete;
  AppendFile& operator=(const AppendFile&) = delete;
  ~AppendFile() {
    if (fd_ >= 0) ::close(fd_);
  }

  bool is_open() const { return fd_ >= 0; }

  void append(const std::string& data) {
    if (fd_ < 0) return;
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("answer log write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error(std::string("answer log fsync failed: ") + std::strerror(errno));
  }

 private:
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Service

struct ServiceOptions {
  std::optional<std::vector<Query>> battery;
  PlanarArm arm;
  std::string log_path;    ///< empty keeps answers in memory only
  std::string static_dir;  ///< empty serves no static assets
  LearnOptions learn;
};

inline std::optional<std::vector<Query>> load_battery(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("cannot read battery '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("battery '" + path + "': " + e.what());
  }
  return battery_from_json(j);
}

/// Distributions for one criterion (all when unset), optionally restricted
/// to one task type, as the service reports them.
inline nlohmann::json distributions_json(const std::vector<Response>& responses, const std::vector<Query>& battery,
                                         std::optional<Criterion> criterion, std::optional<TaskType> type) {
  std::map<std::string, const Query*> index;
  for (const auto& q : battery) index[q.id] = &q;
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : aggregate(responses, battery)) {
    if (criterion && d.criterion != *criterion) continue;
    if (type && index.at(d.query_id)->task_type != *type) continue;
    out.push_back(to_json(d));
  }
  return out;
}

/// Learns one criterion/task split of the logged answers.
inline nlohmann::json learn_split(const std::vector<Response>& responses, const std::vector<Query>& battery,
                                  Criterion criterion, std::optional<TaskType> type, const LearnOptions& opts) {
  return learn_and_report(make_dataset(aggregate(responses, battery), battery, criterion, type), criterion, type, opts);
}

/// HTTP front end of a preference study: hands out sessions and queries,
/// records answers in an append-only log, aggregates and learns.
class StudyService {
 public:
  explicit StudyService(ServiceOptions opts) : opts_(std::move(opts)) {
    if (opts_.battery) {
      for (int i = 0; i < static_cast<int>(opts_.battery->size()); ++i) {
        const Query& q = (*opts_.battery)[i];
        require(q.dim() == 3, "service: battery query " + q.id + " is not a planar 3-joint query");
        require(index_.emplace(q.id, i).second, "service: duplicate query id " + q.id);
      }
    }
    server_.set_tcp_nodelay(true);  // small JSON replies otherwise wait on delayed ACKs
    if (!opts_.log_path.empty()) {
      replay(read_answer_log(opts_.log_path));
      log_ = std::make_unique<AppendFile>(opts_.log_path);
    }
    if (!opts_.static_dir.empty()) {
      if (!std::filesystem::is_directory(opts_.static_dir)) {
        throw ContractViolation("static directory '" + opts_.static_dir + "' does not exist");
      }
      server_.set_mount_point("/", opts_.static_dir);
    }
    routes();
  }

  httplib::Server& server() { return server_; }

  /// Binds an ephemeral port on `host` and returns it.
  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

  std::vector<Response> responses() const {
    std::shared_lock lk(mu_);
    std::vector<Response> out;
    out.reserve(answers_.size());
    for (const auto& a : answers_) out.push_back({a.query_id, a.criterion, a.choice});
    return out;
  }

  nlohmann::json distributions(std::optional<Criterion> c, std::optional<TaskType> t) const {
    if (!opts_.battery) return nlohmann::json::array();
    return distributions_json(responses(), *opts_.battery, c, t);
  }

 private:
  struct Session {
    std::string created_at;
    std::vector<char> answered;
    int cursor = 0;
  };

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& msg) { reply(res, status, {{"error", msg}}); }

  int battery_size() const { return opts_.battery ? static_cast<int>(opts_.battery->size()) : 0; }

  void advance(Session& s) {
    while (s.cursor < battery_size() && s.answered[s.cursor]) ++s.cursor;
  }

  void replay(const AnswerLog& log) {
    for (const auto& s : log.sessions) {
      sessions_[s.session_id] = Session{s.created_at, std::vector<char>(battery_size(), 0), 0};
    }
    for (const auto& a : log.answers) {
      const auto s = sessions_.find(a.session_id);
      const auto q = index_.find(a.query_id);
      if (s == sessions_.end() || q == index_.end()) {
        throw ParseError("answer log references unknown session or query (" + a.session_id + ", " + a.query_id + ")");
      }
      s->second.answered[q->second] = 1;
      advance(s->second);
      answers_.push_back(a);
    }
  }

  std::string new_token() {
    std::uniform_int_distribution<unsigned> nib(0, 15);
    std::string s(32, '0');
    for (char& c : s) c = "0123456789abcdef"[nib(token_rng_)];
    return s;
  }

  void routes() {
    auto create_session = [this](const httplib::Request&, httplib::Response& res) {
      if (!opts_.battery) return fail(res, 503, "no query battery loaded");
      std::unique_lock lk(mu_);
      std::string id;
      do id = new_token();
      while (sessions_.count(id));
      SessionRecord rec{id, rfc3339_now()};
      if (log_) log_->append(to_json(rec).dump() + "\n");
      sessions_[id] = Session{rec.created_at, std::vector<char>(battery_size(), 0), 0};
      reply(res, 200, {{"session_id", id}, {"battery_length", battery_size()}, {"cursor", 0}, {"created_at", rec.created_at}});
    };
    server_.Get("/api/session", create_session);
    server_.Post("/api/session", create_session);

    server_.Get(R"(/api/queries/([0-9A-Za-z_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lk(mu_);
      const auto s = sessions_.find(req.matches[1]);
      if (s == sessions_.end()) return fail(res, 404, "unknown session");
      if (s->second.cursor >= battery_size()) {
        res.status = 204;
        return;
      }
      const Query& q = (*opts_.battery)[s->second.cursor];
      nlohmann::json cands = nlohmann::json::array();
      for (const auto& c : q.presented()) cands.push_back(config_to_json(c));
      nlohmann::json criteria = nlohmann::json::array();
      for (Criterion c : kAllCriteria) criteria.push_back({{"key", to_string(c)}, {"prompt", criterion_prompt(c)}});
      const int answered = static_cast<int>(std::count(s->second.answered.begin(), s->second.answered.end(), 1));
      reply(res, 200,
            {{"session_id", s->first},
             {"query_id", q.id},
             {"index", s->second.cursor},
             {"total", battery_size()},
             {"answered", answered},
             {"m", q.m()},
             {"link_lengths", opts_.arm.link_lengths},
             {"start", config_to_json(q.start)},
             {"target", config_to_json(q.target.value)},
             {"candidates", cands},
             {"criteria", criteria}});
    });

    server_.Post("/api/answers", [this](const httplib::Request& req, httplib::Response& res) {
      if (!opts_.battery) return fail(res, 503, "no query battery loaded");
      std::string sid, qid;
      std::vector<std::pair<Criterion, int>> picks;
      try {
        const auto j = nlohmann::json::parse(req.body);
        sid = j.at("session_id").get<std::string>();
        qid = j.at("query_id").get<std::string>();
        const auto& a = j.at("answers");
        if (!a.is_object()) throw ParseError("'answers' must be an object");
        for (Criterion c : kAllCriteria) {
          if (!a.contains(to_string(c))) {
            throw ParseError(std::string("missing answer for criterion '") + to_string(c) + "'");
          }
          picks.push_back({c, a.at(to_string(c)).get<int>()});
        }
        if (a.size() != picks.size()) throw ParseError("unexpected criterion in 'answers'");
      } catch (const std::exception& e) {
        return fail(res, 400, e.what());
      }
      std::unique_lock lk(mu_);
      const auto s = sessions_.find(sid);
      if (s == sessions_.end()) return fail(res, 404, "unknown session");
      const auto q = index_.find(qid);
      if (q == index_.end()) return fail(res, 400, "unknown query id '" + qid + "'");
      const int m = (*opts_.battery)[q->second].m();
      for (const auto& [c, k] : picks) {
        if (k < 0 || k >= m) return fail(res, 400, std::string("choice out of range for ") + to_string(c));
      }
      if (s->second.answered[q->second]) return fail(res, 409, "query already answered in this session");
      const std::string now = rfc3339_now();
      std::string batch;
      std::vector<AnswerRecord> recs;
      for (const auto& [c, k] : picks) {
        recs.push_back({sid, qid, c, k, now});
        batch += to_json(recs.back()).dump() + "\n";
      }
      if (log_) log_->append(batch);
      answers_.insert(answers_.end(), recs.begin(), recs.end());
      s->second.answered[q->second] = 1;
      advance(s->second);
      reply(res, 200, {{"session_id", sid}, {"query_id", qid}, {"cursor", s->second.cursor}, {"received_at", now}});
    });

    server_.Get("/api/distributions", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<Criterion> c;
      std::optional<TaskType> t;
      try {
        if (req.has_param("criterion")) c = criterion_from_string(req.get_param_value("criterion"));
        if (req.has_param("task_type")) t = task_type_from_string(req.get_param_value("task_type"));
      } catch (const std::exception& e) {
        return fail(res, 400, e.what());
      }
      reply(res, 200, distributions(c, t));
    });

    server_.Post("/api/learn", [this](const httplib::Request& req, httplib::Response& res) {
      if (!opts_.battery) return fail(res, 503, "no query battery loaded");
      Criterion c{};
      std::optional<TaskType> t;
      LearnOptions lo = opts_.learn;
      try {
        const auto j = nlohmann::json::parse(req.body);
        c = criterion_from_string(j.at("criterion").get<std::string>());
        if (j.contains("task_type") && !j["task_type"].is_null()) t = task_type_from_string(j["task_type"].get<std::string>());
        if (j.contains("parameterization")) lo.parameterization = parameterization_from_string(j["parameterization"].get<std::string>());
      } catch (const std::exception& e) {
        return fail(res, 400, e.what());
      }
      std::unique_lock job(learn_mu_, std::try_to_lock);
      if (!job.owns_lock()) return fail(res, 409, "a learning job is already running");
      try {
        reply(res, 200, learn_split(responses(), *opts_.battery, c, t, lo));
      } catch (const InsufficientDiversity& e) {
        fail(res, 422, e.what());
      }
    });

    server_.Get("/api/fk", [this](const httplib::Request& req, httplib::Response& res) {
      Configuration q;
      try {
        std::vector<double> v;
        std::stringstream ss(req.get_param_value("q"));
        for (std::string tok; std::getline(ss, tok, ',');) v.push_back(std::stod(tok));
        q = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
        require_dim(q, 3, "fk");
      } catch (const std::exception& e) {
        return fail(res, 400, std::string("q must be three comma-separated angles: ") + e.what());
      }
      const Pose2 p = fk_planar(opts_.arm, q);
      nlohmann::json joints = nlohmann::json::array();
      for (const auto& x : p.joints) joints.push_back({x.x(), x.y()});
      reply(res, 200, {{"joints", joints}, {"ee", {p.ee.x(), p.ee.y()}}});
    });

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      } catch (...) {
        fail(res, 500, "internal error");
      }
    });
  }

  ServiceOptions opts_;
  std::map<std::string, int> index_;
  httplib::Server server_;
  mutable std::shared_mutex mu_;
  std::mutex learn_mu_;
  std::map<std::string, Session> sessions_;
  std::vector<AnswerRecord> answers_;
  std::unique_ptr<AppendFile> log_;
  std::mt19937_64 token_rng_{std::random_device{}()};
};

}  // namespace cspace
