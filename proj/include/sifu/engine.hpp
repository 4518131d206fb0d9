#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sifu/adapters.hpp"
#include "sifu/challenge.hpp"
#include "sifu/clock.hpp"
#include "sifu/coach.hpp"
#include "sifu/pipeline.hpp"
#include "sifu/store.hpp"
#include "sifu/worker_pool.hpp"

namespace sifu {

/// A second submission while one is still running for the same session.
class RateLimited : public Error {
 public:
  using Error::Error;
};

/// Missing, malformed or expired session token.
class Unauthorized : public Error {
 public:
  using Error::Error;
};

struct EngineOptions {
  SandboxPolicy policy;
  std::size_t workers = 1;
  long session_ttl_s = 7 * 24 * 3600;
  std::filesystem::path workspace_dir;  // empty = default_workspace_base()
};

struct SubmitResult {
  PipelineReport report;
  CoachOutcome outcome;
  std::int64_t submission_id = 0;
  bool points_awarded = false;
};

/// Game logic behind the HTTP API: catalog, sessions, submissions and the
/// coach, backed by a Store. Thread-safe.
class Engine {
 public:
  Engine(std::vector<ChallengeManifest> catalog, Store& store, const Clock& clock, EngineOptions options);

  const std::vector<ChallengeManifest>& catalog() const { return catalog_; }
  /// Throws UnknownChallenge.
  const ChallengeManifest& challenge(const std::string& id) const;

  SessionRecord create_session(const std::string& display_name);
  /// Player behind a valid token. Throws Unauthorized.
  std::string authenticate(const std::string& token) const;

  /// Materializes, assesses and coaches one submission; blocks until done.
  /// `session` identifies the caller for the one-in-flight rule.
  SubmitResult submit(const std::string& session, const std::string& player_id, const std::string& challenge_id,
                      const Edits& edits);

  /// Current coach state (fresh if the player never submitted).
  CoachState state_of(const std::string& player_id, const std::string& challenge_id);

  void rate(const std::string& player_id, const std::string& challenge_id, int q1, int q2, int q3);
  void survey(const std::string& player_id, const std::array<int, 9>& answers);
  void report(const std::string& player_id, const std::string& challenge_id, const std::string& text);
  std::vector<ScoreEntry> scoreboard() { return store_.scoreboard(); }

  Store& store() { return store_; }
  const AnalyzerRegistry& registry() const { return registry_; }

 private:
  std::mutex& key_mutex(const std::string& player_id, const std::string& challenge_id);

  std::vector<ChallengeManifest> catalog_;
  Store& store_;
  const Clock& clock_;
  EngineOptions options_;
  AnalyzerRegistry registry_;
  WorkerPool pool_;

  std::mutex in_flight_mu_;
  std::set<std::string> in_flight_;
  std::mutex keys_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> key_mutexes_;
};

/// Loads every bundle (directory or .tar) directly under `dir`. Throws on
/// the first unreadable bundle or a duplicate id.
std::vector<ChallengeManifest> load_catalog(const std::filesystem::path& dir);

/// Player-facing view of a submission: no ladder ids, no raw tool output.
nlohmann::json submit_response(const SubmitResult& r, const ChallengeManifest& m);
/// Files the player may browse, with edit permissions.
nlohmann::json files_view(const ChallengeManifest& m);

}  // namespace sifu
