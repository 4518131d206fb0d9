#include "sifu/http_server.hpp"

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "sifu/engine.hpp"
#include "sifu/json_io.hpp"

namespace sifu {

namespace {

/// Client payload problems.
class BadPayload : public Error {
 public:
  using Error::Error;
};

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(dump_json(body), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  reply(res, status, Json{{"error", code}, {"message", message}});
}

Json body_of(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json j = Json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BadPayload("body must be a JSON object");
  return j;
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  if (h.starts_with("Bearer ")) return h.substr(7);
  return req.get_header_value("X-Sifu-Token");
}

int likert(const Json& body, const std::string& key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_number_integer()) throw BadPayload("'" + key + "' must be an integer from 1 to 5");
  return it->get<int>();
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Unauthorized& e) {
    fail(res, 401, "unauthorized", e.what());
  } catch (const UnknownPlayer& e) {
    fail(res, 401, "unauthorized", e.what());
  } catch (const UnknownChallenge& e) {
    fail(res, 404, "not_found", e.what());
  } catch (const RateLimited& e) {
    fail(res, 429, "rate_limited", e.what());
  } catch (const BadPayload& e) {
    fail(res, 422, "invalid_payload", e.what());
  } catch (const IllegalEdit& e) {
    fail(res, 422, "illegal_edit", e.what());
  } catch (const InvalidLikert& e) {
    fail(res, 422, "invalid_likert", e.what());
  } catch (const InfrastructureError& e) {
    spdlog::error("infrastructure: {}", e.what());
    fail(res, 503, "unavailable", e.what());
  } catch (const InjectionError& e) {
    spdlog::error("challenge scaffolding: {}", e.what());
    fail(res, 503, "unavailable", e.what());
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    fail(res, 503, "unavailable", "internal error");
  }
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(Engine& e) : engine(e) {}
  Engine& engine;
  httplib::Server server;
  int port = -1;
};

HttpServer::HttpServer(Engine& engine, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(engine)) {
  auto& svr = impl_->server;
  Engine& eng = engine;

  svr.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info(R"({{"method":"{}","path":"{}","status":{}}})", req.method, req.path, res.status);
  });

  svr.Post("/api/session", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_of(req);
      auto it = body.find("display_name");
      if (it == body.end() || !it->is_string()) throw BadPayload("'display_name' must be a string");
      auto name = it->get<std::string>();
      if (name.empty() || name.size() > 64) throw BadPayload("'display_name' must have 1 to 64 characters");
      const auto s = eng.create_session(name);
      reply(res, 200, Json{{"token", s.token}, {"player_id", s.player_id}, {"expires_at", s.expires_at}});
    });
  });

  svr.Get("/api/challenges", [&eng](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      Json list = Json::array();
      for (const auto& m : eng.catalog())
        list.push_back({{"id", m.id}, {"title", m.title}, {"description", m.description}, {"points", m.points}});
      reply(res, 200, list);
    });
  });

  auto files = [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      eng.authenticate(bearer(req));
      reply(res, 200, files_view(eng.challenge(req.matches[1])));
    });
  };
  svr.Get(R"(/api/challenges/([^/]+)/files)", files);
  svr.Post(R"(/api/challenges/([^/]+)/reload)", files);

  svr.Post(R"(/api/challenges/([^/]+)/submit)", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto token = bearer(req);
      const auto player = eng.authenticate(token);
      const auto& m = eng.challenge(req.matches[1]);
      const auto body = body_of(req);
      Edits edits;
      if (auto it = body.find("edits"); it != body.end()) {
        if (!it->is_object()) throw BadPayload("'edits' must map file paths to text");
        for (const auto& [path, text] : it->items()) {
          if (!text.is_string()) throw BadPayload("edit for '" + path + "' must be text");
          edits[path] = text.get<std::string>();
        }
      }
      reply(res, 200, submit_response(eng.submit(token, player, m.id, edits), m));
    });
  });

  svr.Post(R"(/api/challenges/([^/]+)/report)", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto player = eng.authenticate(bearer(req));
      const auto& m = eng.challenge(req.matches[1]);
      const auto body = body_of(req);
      auto it = body.find("text");
      if (it == body.end() || !it->is_string() ||
          it->get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos)
        throw BadPayload("'text' must be non-empty text");
      eng.report(player, m.id, it->get<std::string>());
      reply(res, 200, Json{{"ok", true}});
    });
  });

  svr.Post(R"(/api/challenges/([^/]+)/rating)", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto player = eng.authenticate(bearer(req));
      const auto& m = eng.challenge(req.matches[1]);
      const auto body = body_of(req);
      eng.rate(player, m.id, likert(body, "q1"), likert(body, "q2"), likert(body, "q3"));
      reply(res, 200, Json{{"ok", true}});
    });
  });

  svr.Post("/api/survey", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto player = eng.authenticate(bearer(req));
      const auto body = body_of(req);
      std::array<int, 9> answers{};
      for (int i = 0; i < 9; ++i) answers[i] = likert(body, "f" + std::to_string(i + 1));
      eng.survey(player, answers);
      reply(res, 200, Json{{"ok", true}});
    });
  });

  svr.Get("/api/scoreboard", [&eng](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      eng.authenticate(bearer(req));
      Json list = Json::array();
      int rank = 0;
      for (const auto& e : eng.scoreboard())
        list.push_back({{"rank", ++rank}, {"display_name", e.display_name}, {"points", e.points}, {"solved", e.solved}});
      reply(res, 200, list);
    });
  });

  if (static_dir && !svr.set_mount_point("/", static_dir->string()))
    spdlog::warn("static directory '{}' not found; serving the API only", static_dir->string());
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    return impl_->port > 0;
  }
  if (!impl_->server.bind_to_port(host, port)) return false;
  impl_->port = port;
  return true;
}

int HttpServer::port() const { return impl_->port; }

bool HttpServer::run() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace sifu
