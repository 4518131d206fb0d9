#include <gtest/gtest.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <future>
#include <thread>

#include "sifu/engine.hpp"
#include "sifu/http_server.hpp"
#include "sifu/json_io.hpp"
#include "sifu/store.hpp"
#include "support.hpp"

using namespace sifu;

namespace {

const std::string kGood = "read name\necho \"hello $name\"\n";

class EngineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    spdlog::set_level(spdlog::level::warn);
    store = open_sqlite_store(dir / "db.sqlite");
    EngineOptions opts;
    opts.workers = 2;
    opts.workspace_dir = dir / "ws";
    engine = std::make_unique<Engine>(std::vector<ChallengeManifest>{test::toy()}, *store, clock, opts);
  }

  test::TempDir dir;
  ManualClock clock{1'000'000};
  std::unique_ptr<Store> store;
  std::unique_ptr<Engine> engine;
};

class HttpTest : public EngineTest {
 protected:
  void SetUp() override {
    EngineTest::SetUp();
    server = std::make_unique<HttpServer>(*engine);
    ASSERT_TRUE(server->bind("127.0.0.1", 0));
    thread = std::thread([this] { server->run(); });
    server->wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", server->port());
    client->set_read_timeout(30, 0);
  }
  void TearDown() override {
    server->stop();
    thread.join();
  }

  std::string login(const std::string& name = "ada") {
    auto res = client->Post("/api/session", Json{{"display_name", name}}.dump(), "application/json");
    EXPECT_EQ(res->status, 200);
    return Json::parse(res->body).at("token").get<std::string>();
  }
  httplib::Headers auth(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }
  httplib::Result post(const std::string& path, const std::string& token, const Json& body) {
    return client->Post(path, auth(token), body.dump(), "application/json");
  }

  std::unique_ptr<HttpServer> server;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST_F(EngineTest, SessionsAuthenticate) {
  const auto s = engine->create_session("ada");
  EXPECT_EQ(engine->authenticate(s.token), s.player_id);
  EXPECT_THROW(engine->authenticate("bogus"), Unauthorized);
  EXPECT_THROW(engine->authenticate(""), Unauthorized);
  clock.advance(8LL * 24 * 3600 * 1000);
  EXPECT_THROW(engine->authenticate(s.token), Unauthorized);
}

TEST_F(EngineTest, SubmitWalksTheLadderAndSolves) {
  const auto s = engine->create_session("ada");
  auto r = engine->submit(s.token, s.player_id, "toy-echo", {});
  EXPECT_EQ(r.outcome.verdict, Verdict::Unsolved);
  ASSERT_TRUE(r.outcome.hint_issued());
  EXPECT_EQ(r.outcome.feedback->text, "Read https://www.shellcheck.net/wiki/SC2294");

  r = engine->submit(s.token, s.player_id, "toy-echo", {{"prog.sh", "if then\n"}});
  EXPECT_EQ(r.outcome.reason, RejectReason::CompileError);
  ASSERT_FALSE(r.outcome.diagnostics.empty());
  EXPECT_EQ(r.outcome.diagnostics[0], "prog.sh:1: Error: shell syntax error");

  r = engine->submit(s.token, s.player_id, "toy-echo", {{"prog.sh", kGood}});
  EXPECT_EQ(r.outcome.verdict, Verdict::Solved);
  EXPECT_TRUE(r.points_awarded);
  EXPECT_TRUE(verify_flag(*r.outcome.flag, s.player_id, "toy-echo", "toy-secret"));
  r = engine->submit(s.token, s.player_id, "toy-echo", {{"prog.sh", kGood}});
  EXPECT_FALSE(r.points_awarded);
  EXPECT_EQ(store->submissions(s.player_id).size(), 4u);
  EXPECT_TRUE(engine->state_of(s.player_id, "toy-echo").solved);
  EXPECT_EQ(engine->scoreboard()[0].points, 10);
}

TEST_F(EngineTest, ConcurrentSubmissionOnOneSessionIsRateLimited) {
  const auto s = engine->create_session("ada");
  auto slow = std::async(std::launch::async, [&] {
    return engine->submit(s.token, s.player_id, "toy-echo", {{"prog.sh", "sleep 1\n"}});
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  EXPECT_THROW(engine->submit(s.token, s.player_id, "toy-echo", {}), RateLimited);
  slow.get();
  EXPECT_NO_THROW(engine->submit(s.token, s.player_id, "toy-echo", {}));
}

TEST_F(EngineTest, ConcurrentPlayersKeepIndependentStates) {
  std::vector<SessionRecord> sessions;
  for (int i = 0; i < 4; ++i) sessions.push_back(engine->create_session("p" + std::to_string(i)));
  std::vector<std::future<SubmitResult>> jobs;
  for (const auto& s : sessions)
    jobs.push_back(std::async(std::launch::async, [&, s] { return engine->submit(s.token, s.player_id, "toy-echo", {}); }));
  for (auto& j : jobs) EXPECT_TRUE(j.get().outcome.hint_issued());
  for (const auto& s : sessions) EXPECT_EQ(engine->state_of(s.player_id, "toy-echo").level_of("eval-injection"), 1);
}

TEST_F(EngineTest, SameMutationsReplayToSameState) {
  // Two players, identical submission sequences and timing, identical states.
  const auto a = engine->create_session("a");
  const auto b = engine->create_session("b");
  for (int i = 0; i < 5; ++i) {
    clock.advance(100'000);
    engine->submit(a.token, a.player_id, "toy-echo", {});
    engine->submit(b.token, b.player_id, "toy-echo", {});
  }
  auto sa = engine->state_of(a.player_id, "toy-echo");
  auto sb = engine->state_of(b.player_id, "toy-echo");
  sb.player_id = sa.player_id;
  EXPECT_EQ(sa, sb);
}

TEST_F(EngineTest, UnknownChallengeAndIllegalEdits) {
  const auto s = engine->create_session("ada");
  EXPECT_THROW(engine->submit(s.token, s.player_id, "nope", {}), UnknownChallenge);
  EXPECT_THROW(engine->submit(s.token, s.player_id, "toy-echo", {{"build.sh", "x"}}), IllegalEdit);
  EXPECT_TRUE(store->submissions().empty());
}

TEST_F(EngineTest, CatalogLoading) {
  test::TempDir cat;
  std::filesystem::copy(test::fixture("toy-bundle"), cat / "toy", std::filesystem::copy_options::recursive);
  std::filesystem::create_directories(cat / "empty-dir");
  const auto loaded = load_catalog(cat.path());
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].id, "toy-echo");
  std::filesystem::copy(test::fixture("toy-bundle"), cat / "dup", std::filesystem::copy_options::recursive);
  EXPECT_THROW(load_catalog(cat.path()), Error);
}

TEST_F(HttpTest, SessionPayloadValidation) {
  EXPECT_EQ(client->Post("/api/session", "{}", "application/json")->status, 422);
  EXPECT_EQ(client->Post("/api/session", "not json", "application/json")->status, 422);
  EXPECT_EQ(client->Post("/api/session", Json{{"display_name", ""}}.dump(), "application/json")->status, 422);
  EXPECT_FALSE(login().empty());
}

TEST_F(HttpTest, ListsChallengesWithoutAuth) {
  auto res = client->Get("/api/challenges");
  ASSERT_EQ(res->status, 200);
  const auto j = Json::parse(res->body);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].at("id"), "toy-echo");
  EXPECT_EQ(j[0].at("points"), 10);
}

TEST_F(HttpTest, AuthAndNotFound) {
  EXPECT_EQ(client->Get("/api/challenges/toy-echo/files")->status, 401);
  EXPECT_EQ(client->Get("/api/challenges/toy-echo/files", auth("bogus"))->status, 401);
  EXPECT_EQ(client->Get("/api/scoreboard")->status, 401);
  const auto token = login();
  EXPECT_EQ(client->Get("/api/challenges/nope/files", auth(token))->status, 404);
  EXPECT_EQ(post("/api/challenges/nope/submit", token, Json::object())->status, 404);
  auto files = client->Get("/api/challenges/toy-echo/files", auth(token));
  ASSERT_EQ(files->status, 200);
  EXPECT_NE(files->body.find("prog.sh"), std::string::npos);
  // Hidden scaffolding is not served.
  EXPECT_EQ(files->body.find("check.sh"), std::string::npos);
}

TEST_F(HttpTest, SubmitFlow) {
  const auto token = login();
  EXPECT_EQ(post("/api/challenges/toy-echo/submit", token, Json{{"edits", "x"}})->status, 422);
  EXPECT_EQ(post("/api/challenges/toy-echo/submit", token, Json{{"edits", {{"prog.sh", 5}}}})->status, 422);
  EXPECT_EQ(post("/api/challenges/toy-echo/submit", token, Json{{"edits", {{"../x", "y"}}}})->status, 422);

  auto res = post("/api/challenges/toy-echo/submit", token, Json{{"edits", Json::object()}});
  ASSERT_EQ(res->status, 200);
  auto j = Json::parse(res->body);
  EXPECT_EQ(j.at("verdict"), "Unsolved");
  EXPECT_EQ(j.at("hint").at("level"), 1);
  EXPECT_FALSE(j.at("hint").contains("ladder_id"));
  EXPECT_EQ(j.at("stages").at("UnitSecurity"), "Failed");

  res = post("/api/challenges/toy-echo/submit", token, Json{{"edits", Json::object()}});
  j = Json::parse(res->body);
  EXPECT_TRUE(j.at("hint").at("withheld").get<bool>());

  res = post("/api/challenges/toy-echo/submit", token, Json{{"edits", {{"prog.sh", kGood}}}});
  j = Json::parse(res->body);
  EXPECT_EQ(j.at("verdict"), "Solved");
  EXPECT_EQ(j.at("points_awarded"), 10);
  EXPECT_TRUE(j.at("flag").is_string());
  EXPECT_EQ(j.at("solved_page"), "Input never reaches eval now.");

  res = post("/api/challenges/toy-echo/submit", token, Json{{"edits", {{"prog.sh", kGood}}}});
  EXPECT_EQ(Json::parse(res->body).at("points_awarded"), 0);

  auto board = Json::parse(client->Get("/api/scoreboard", auth(token))->body);
  ASSERT_EQ(board.size(), 1u);
  EXPECT_EQ(board[0].at("rank"), 1);
  EXPECT_EQ(board[0].at("points"), 10);
}

TEST_F(HttpTest, ReloadDoesNotTouchState) {
  const auto token = login();
  post("/api/challenges/toy-echo/submit", token, Json{{"edits", Json::object()}});
  const auto player = engine->authenticate(token);
  const auto before = engine->state_of(player, "toy-echo");
  auto res = post("/api/challenges/toy-echo/reload", token, Json::object());
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(engine->state_of(player, "toy-echo"), before);
  EXPECT_EQ(store->submissions(player).size(), 1u);
}

TEST_F(HttpTest, ConcurrentSubmitIs429) {
  const auto token = login();
  auto slow = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", server->port());
    c.set_read_timeout(30, 0);
    return c.Post("/api/challenges/toy-echo/submit", auth(token),
                  Json{{"edits", {{"prog.sh", "sleep 1\n"}}}}.dump(), "application/json")
        ->status;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  EXPECT_EQ(post("/api/challenges/toy-echo/submit", token, Json{{"edits", Json::object()}})->status, 429);
  EXPECT_EQ(slow.get(), 200);
}

TEST_F(HttpTest, RatingSurveyReport) {
  const auto token = login();
  EXPECT_EQ(post("/api/challenges/toy-echo/rating", token, Json{{"q1", 5}, {"q2", 4}, {"q3", 3}})->status, 200);
  EXPECT_EQ(post("/api/challenges/toy-echo/rating", token, Json{{"q1", 6}, {"q2", 4}, {"q3", 3}})->status, 422);
  EXPECT_EQ(post("/api/challenges/toy-echo/rating", token, Json{{"q1", "5"}, {"q2", 4}, {"q3", 3}})->status, 422);
  Json survey;
  for (int i = 1; i <= 9; ++i) survey["f" + std::to_string(i)] = 4;
  EXPECT_EQ(post("/api/survey", token, survey)->status, 200);
  survey.erase("f9");
  EXPECT_EQ(post("/api/survey", token, survey)->status, 422);
  EXPECT_EQ(post("/api/challenges/toy-echo/report", token, Json{{"text", "typo in the text"}})->status, 200);
  EXPECT_EQ(post("/api/challenges/toy-echo/report", token, Json{{"text", "   "}})->status, 422);
  EXPECT_EQ(store->aggregate("Q1").mean, 5.0);
  EXPECT_EQ(store->reports().size(), 1u);
}
