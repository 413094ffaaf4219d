#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "cspace/service.hpp"

using namespace cspace;
namespace fs = std::filesystem;

namespace {

std::vector<Query> small_battery(int c = 2, int e = 2, std::uint64_t seed = 3) {
  BatterySpec spec;
  spec.contraction = c;
  spec.expansion = e;
  spec.resolution = 720;
  return generate_battery(PlanarArm{}, spec, seed);
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cspace_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

/// Runs a service on an ephemeral port for the lifetime of the object.
struct Running {
  explicit Running(ServiceOptions o) : svc(std::move(o)) {
    port = svc.bind_any_port();
    th = std::thread([this] { svc.listen_after_bind(); });
    svc.wait_until_ready();
    cli = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
  ~Running() {
    svc.stop();
    th.join();
  }
  StudyService svc;
  int port = 0;
  std::thread th;
  std::unique_ptr<httplib::Client> cli;
};

nlohmann::json answers_body(const std::string& sid, const std::string& qid, int n, int v, int c, int p) {
  return {{"session_id", sid},
          {"query_id", qid},
          {"answers", {{"naturalness", n}, {"visual_similarity", v}, {"closeness", c}, {"predictability", p}}}};
}

}  // namespace

TEST(Service, NoBatteryIs503) {
  Running r(ServiceOptions{});
  auto res = r.cli->Get("/api/session");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
}

TEST(Service, SessionQueryAnswerFlow) {
  ServiceOptions o;
  o.battery = small_battery();
  Running r(o);
  auto s = r.cli->Get("/api/session");
  ASSERT_TRUE(s);
  ASSERT_EQ(s->status, 200);
  const auto sj = nlohmann::json::parse(s->body);
  EXPECT_EQ(sj["cursor"], 0);
  EXPECT_EQ(sj["battery_length"], 4);
  const std::string sid = sj["session_id"];
  const std::string created = sj["created_at"];
  EXPECT_EQ(created.size(), 24u);
  EXPECT_EQ(created.back(), 'Z');

  auto q = r.cli->Get("/api/queries/" + sid);
  ASSERT_EQ(q->status, 200);
  const auto qj = nlohmann::json::parse(q->body);
  EXPECT_EQ(qj["query_id"], (*o.battery)[0].id);
  EXPECT_EQ(qj["candidates"].size(), 4u);
  EXPECT_EQ(qj["link_lengths"], nlohmann::json({1.0, 1.0, 1.0}));
  EXPECT_EQ(qj["criteria"].size(), 4u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(config_from_json(qj["candidates"][k]), (*o.battery)[0].candidates[(*o.battery)[0].permutation[k]]);
  }

  auto bad = r.cli->Get("/api/queries/nosuchsession");
  EXPECT_EQ(bad->status, 404);

  auto partial = answers_body(sid, qj["query_id"], 0, 1, 2, 3);
  partial["answers"].erase("predictability");
  EXPECT_EQ(r.cli->Post("/api/answers", partial.dump(), "application/json")->status, 400);
  EXPECT_EQ(r.cli->Post("/api/answers", "{not json", "application/json")->status, 400);
  EXPECT_EQ(r.cli->Post("/api/answers", answers_body(sid, qj["query_id"], 0, 1, 2, 9).dump(), "application/json")->status,
            400);

  for (int i = 0; i < 4; ++i) {
    const std::string qid = (*o.battery)[i].id;
    auto a = r.cli->Post("/api/answers", answers_body(sid, qid, 0, 1, 2, 3).dump(), "application/json");
    ASSERT_EQ(a->status, 200) << a->body;
    EXPECT_EQ(nlohmann::json::parse(a->body)["cursor"], i + 1);
  }
  EXPECT_EQ(r.cli->Post("/api/answers", answers_body(sid, (*o.battery)[0].id, 0, 0, 0, 0).dump(), "application/json")->status,
            409);
  EXPECT_EQ(r.cli->Get("/api/queries/" + sid)->status, 204);
}

TEST(Service, DistributionsUnpermuteAndFilter) {
  ServiceOptions o;
  o.battery = small_battery();
  Running r(o);
  EXPECT_EQ(r.cli->Get("/api/distributions")->body, "[]");
  const Query& q = (*o.battery)[0];
  for (int k = 0; k < 4; ++k) {
    const std::string sid = nlohmann::json::parse(r.cli->Get("/api/session")->body)["session_id"];
    const int n = k < 3 ? 0 : 1;
    ASSERT_EQ(r.cli->Post("/api/answers", answers_body(sid, q.id, n, 2, 2, 2).dump(), "application/json")->status, 200);
  }
  auto d = r.cli->Get("/api/distributions?criterion=naturalness");
  ASSERT_EQ(d->status, 200);
  const auto dj = nlohmann::json::parse(d->body);
  ASSERT_EQ(dj.size(), 1u);
  EXPECT_EQ(dj[0]["criterion"], "naturalness");
  Eigen::Vector4d want = Eigen::Vector4d::Zero();
  want[q.permutation[0]] = 0.75;
  want[q.permutation[1]] = 0.25;
  EXPECT_EQ(config_from_json(dj[0]["probs"]), Eigen::VectorXd(want));

  const std::string other = q.task_type == TaskType::Contraction ? "expansion" : "contraction";
  EXPECT_EQ(r.cli->Get("/api/distributions?task_type=" + other)->body, "[]");
  EXPECT_EQ(nlohmann::json::parse(r.cli->Get("/api/distributions")->body).size(), 4u);
  EXPECT_EQ(r.cli->Get("/api/distributions?criterion=bogus")->status, 400);
  EXPECT_EQ(r.cli->Get("/api/distributions")->body,
            distributions_json(r.svc.responses(), *o.battery, std::nullopt, std::nullopt).dump());
}

TEST(Service, LearnEndpoint) {
  ServiceOptions o;
  o.battery = small_battery(3, 3);
  Running r(o);
  const nlohmann::json req = {{"criterion", "closeness"}, {"task_type", "contraction"}, {"parameterization", "full"}};
  EXPECT_EQ(r.cli->Post("/api/learn", req.dump(), "application/json")->status, 422);
  const Metric truth = frobenius_normalize(make_correlated(Metric::identity(3), {{0, 2, 0.9}}));
  const auto picks = synth_responses(truth, *o.battery, 30, 5, Criterion::Closeness);
  for (int s = 0; s < 30; ++s) {
    const std::string sid = nlohmann::json::parse(r.cli->Get("/api/session")->body)["session_id"];
    for (std::size_t i = 0; i < o.battery->size(); ++i) {
      const int c = picks[i * 30 + s].choice;
      r.cli->Post("/api/answers", answers_body(sid, (*o.battery)[i].id, 0, 0, c, 0).dump(), "application/json");
    }
  }
  auto l = r.cli->Post("/api/learn", req.dump(), "application/json");
  ASSERT_EQ(l->status, 200) << l->body;
  const auto lj = nlohmann::json::parse(l->body);
  EXPECT_TRUE(lj.contains("euclidean_kl"));
  EXPECT_TRUE(lj.contains("learned_kl"));
  EXPECT_EQ(lj["queries"], 3);
  EXPECT_TRUE(is_unit_frobenius(metric_from_json(lj["metric"])));
  EXPECT_EQ(r.cli->Post("/api/learn", "{}", "application/json")->status, 400);
}

TEST(Service, LogReplayReproducesDistributions) {
  const fs::path log = temp_path("replay.jsonl");
  fs::remove(log);
  ServiceOptions o;
  o.battery = small_battery();
  o.log_path = log.string();
  std::string before, sid;
  {
    Running r(o);
    sid = nlohmann::json::parse(r.cli->Get("/api/session")->body)["session_id"];
    r.cli->Post("/api/answers", answers_body(sid, (*o.battery)[0].id, 1, 2, 3, 0).dump(), "application/json");
    r.cli->Post("/api/answers", answers_body(sid, (*o.battery)[1].id, 0, 0, 1, 1).dump(), "application/json");
    before = r.cli->Get("/api/distributions")->body;
  }
  const AnswerLog parsed = read_answer_log(log.string());
  EXPECT_EQ(parsed.sessions.size(), 1u);
  EXPECT_EQ(parsed.answers.size(), 8u);
  EXPECT_EQ(distributions_json(parsed.responses(), *o.battery, std::nullopt, std::nullopt).dump(), before);
  {
    Running r(o);
    EXPECT_EQ(r.cli->Get("/api/distributions")->body, before);
    auto q = r.cli->Get("/api/queries/" + sid);
    ASSERT_EQ(q->status, 200);
    EXPECT_EQ(nlohmann::json::parse(q->body)["index"], 2);
    EXPECT_EQ(r.cli->Post("/api/answers", answers_body(sid, (*o.battery)[0].id, 0, 0, 0, 0).dump(), "application/json")->status,
              409);
  }
  // a torn final line from an interrupted append is ignored
  {
    std::ofstream out(log, std::ios::app);
    out << "{\"type\":\"answer\",\"sess";
  }
  EXPECT_EQ(read_answer_log(log.string()).answers.size(), 8u);
}

TEST(Service, StaticAssetsAndFk) {
  const fs::path dir = temp_path("static");
  fs::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>study</html>";
  ServiceOptions o;
  o.static_dir = dir.string();
  Running r(o);
  auto page = r.cli->Get("/index.html");
  ASSERT_EQ(page->status, 200);
  EXPECT_EQ(page->body, "<html>study</html>");
  auto fk = r.cli->Get("/api/fk?q=0,0,0");
  ASSERT_EQ(fk->status, 200);
  EXPECT_EQ(nlohmann::json::parse(fk->body)["ee"], nlohmann::json({3.0, 0.0}));
  EXPECT_EQ(r.cli->Get("/api/fk?q=1,2")->status, 400);
  ServiceOptions missing;
  missing.static_dir = (dir / "nope").string();
  EXPECT_THROW(StudyService{missing}, ContractViolation);
}
