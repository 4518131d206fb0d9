#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace sifu {

class Engine;

/// JSON-over-HTTP front end for an Engine.
///
///   POST /api/session                     {display_name} -> {token, player_id, expires_at}
///   GET  /api/challenges                  -> [{id, title, description, points}]
///   GET  /api/challenges/{id}/files       -> {challenge_id, files: [{path, content, editable}]}
///   POST /api/challenges/{id}/submit      {edits: {path: text}} -> submit response
///   POST /api/challenges/{id}/reload      -> same as /files; coach state untouched
///   POST /api/challenges/{id}/report      {text} -> {ok}
///   POST /api/challenges/{id}/rating      {q1, q2, q3} -> {ok}
///   POST /api/survey                      {f1 .. f9} -> {ok}
///   GET  /api/scoreboard                  -> [{rank, display_name, points, solved}]
///
/// Everything except /api/session and GET /api/challenges needs
/// `Authorization: Bearer <token>`. Errors are {error, message} with status
/// 401, 404, 422, 429 or 503.
class HttpServer {
 public:
  explicit HttpServer(Engine& engine, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. False if the address cannot be bound.
  bool bind(const std::string& host, int port);
  int port() const;
  /// Serves until stop(); returns false on listener failure.
  bool run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sifu
