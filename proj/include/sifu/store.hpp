#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sifu/clock.hpp"
#include "sifu/coach.hpp"

namespace sifu {

struct PlayerRecord {
  std::string player_id;
  std::string display_name;
  EpochMs created_at = 0;

  bool operator==(const PlayerRecord&) const = default;
};

struct SessionRecord {
  std::string token;
  std::string player_id;
  EpochMs expires_at = 0;

  bool operator==(const SessionRecord&) const = default;
};

/// Immutable audit row for one submission.
struct SubmissionRecord {
  std::int64_t id = 0;  // assigned by the store
  std::string player_id;
  std::string challenge_id;
  EpochMs submitted_at = 0;
  std::string content_hash;
  nlohmann::json pipeline_summary = nlohmann::json::object();  // stage -> status
  std::string verdict;
  std::optional<std::string> reason;
  std::optional<std::pair<std::string, int>> hint_issued;

  bool operator==(const SubmissionRecord&) const = default;
};

struct RatingRecord {
  std::string player_id;
  std::string challenge_id;
  int q1 = 0, q2 = 0, q3 = 0;
  EpochMs submitted_at = 0;

  bool operator==(const RatingRecord&) const = default;
};

struct SurveyRecord {
  std::string player_id;
  std::array<int, 9> f{};
  EpochMs submitted_at = 0;

  bool operator==(const SurveyRecord&) const = default;
};

struct ChallengeReport {
  std::string player_id;
  std::string challenge_id;
  std::string text;
  EpochMs submitted_at = 0;

  bool operator==(const ChallengeReport&) const = default;
};

struct ScoreEntry {
  std::string player_id;
  std::string display_name;
  int points = 0;
  int solved = 0;

  bool operator==(const ScoreEntry&) const = default;
};

struct Aggregate {
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 when n == 1
  int n = 0;
};

struct CommitResult {
  std::int64_t submission_id = 0;
  bool first_solve = false;  // points were awarded by this commit
};

/// Durable game state. Every method is atomic and thread-safe.
class Store {
 public:
  virtual ~Store() = default;

  virtual void add_player(const PlayerRecord& p) = 0;
  virtual std::optional<PlayerRecord> find_player(const std::string& player_id) = 0;
  virtual void upsert_challenge(const std::string& challenge_id, const std::string& title, int points) = 0;

  virtual void put_session(const SessionRecord& s) = 0;
  virtual std::optional<SessionRecord> find_session(const std::string& token) = 0;

  virtual std::int64_t append_submission(const SubmissionRecord& rec) = 0;
  virtual std::vector<SubmissionRecord> submissions(const std::optional<std::string>& player_id = std::nullopt,
                                                    const std::optional<std::string>& challenge_id = std::nullopt) = 0;
  /// Submission row, coach state and (for solves) the score entry in one transaction.
  virtual CommitResult commit_evaluation(const SubmissionRecord& rec, const CoachState& state) = 0;

  virtual void record_rating(const RatingRecord& r) = 0;
  virtual std::vector<RatingRecord> ratings(const std::optional<std::string>& challenge_id = std::nullopt) = 0;
  /// Last write wins: one survey per player.
  virtual void record_survey(const SurveyRecord& s) = 0;
  virtual std::optional<SurveyRecord> survey_of(const std::string& player_id) = 0;
  virtual void record_report(const ChallengeReport& r) = 0;
  virtual std::vector<ChallengeReport> reports() = 0;

  /// Stored coach state, or nullopt if the player never submitted this challenge.
  virtual std::optional<CoachState> player_state(const std::string& player_id, const std::string& challenge_id) = 0;
  virtual void save_state(const CoachState& s) = 0;

  virtual std::vector<ScoreEntry> scoreboard() = 0;

  /// "Q1".."Q3" over ratings, "F1".."F9" over surveys. Throws NoData when empty.
  virtual Aggregate aggregate(const std::string& question) = 0;

  /// Every record, one JSON object per line, tagged with "type".
  virtual void export_ndjson(std::ostream& out) = 0;
};

/// Single-file SQLite store; ":memory:" for a throwaway database.
std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& path);

/// Mean and sample standard deviation. Throws NoData on empty input.
Aggregate aggregate_values(const std::vector<int>& values);

void to_json(nlohmann::json& j, const SubmissionRecord& r);

}  // namespace sifu
