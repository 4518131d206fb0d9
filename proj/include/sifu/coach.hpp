#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sifu/challenge.hpp"
#include "sifu/clock.hpp"
#include "sifu/pipeline.hpp"
#include "sifu/vulnerability.hpp"

namespace sifu {

/// Per (player, challenge) coaching memory.
struct CoachState {
  std::string player_id;
  std::string challenge_id;
  std::map<std::string, int> ladder_levels;  // last issued level; absent = 0
  std::optional<EpochMs> last_hint_at;
  int submissions_since_last_hint = 0;
  bool solved = false;

  int level_of(const std::string& ladder_id) const {
    auto it = ladder_levels.find(ladder_id);
    return it == ladder_levels.end() ? 0 : it->second;
  }

  bool operator==(const CoachState&) const = default;
};

CoachState fresh_state(std::string player_id, std::string challenge_id);

enum class Verdict { Solved, Rejected, Unsolved };
enum class RejectReason { CompileError, FunctionalFailure };

std::string to_string(Verdict v);
std::string to_string(RejectReason r);

struct FeedbackMessage {
  std::optional<std::string> ladder_id;
  std::optional<int> level;
  std::string text;
  bool withheld = false;
  // Set when withheld: what still has to happen before the next hint.
  std::optional<int> wait_seconds;
  std::optional<int> submissions_needed;

  bool operator==(const FeedbackMessage&) const = default;
};

struct CoachOutcome {
  Verdict verdict = Verdict::Unsolved;
  std::optional<RejectReason> reason;  // set iff Rejected
  std::optional<std::string> flag;     // set iff Solved
  std::vector<std::string> diagnostics;
  std::optional<FeedbackMessage> feedback;
  CoachState state_after;

  /// (ladder, level) if this evaluation issued a hint.
  std::optional<std::pair<std::string, int>> hint_issued() const;

  bool operator==(const CoachOutcome&) const = default;
};

/// Both thresholds must be met before another hint is sent.
struct BackoffRule {
  EpochMs min_interval_ms = 240'000;
  int min_submissions = 3;
};

CoachOutcome evaluate(const PipelineReport& report, const std::vector<VulnerabilityInstance>& vulns,
                      const CoachState& state, EpochMs now, const ChallengeManifest& m,
                      const AnalyzerRegistry& registry, const BackoffRule& rule = {});
CoachOutcome evaluate(const PipelineReport& report, const std::vector<VulnerabilityInstance>& vulns,
                      const CoachState& state, EpochMs now, const ChallengeManifest& m);

/// Highest-priority active ladder; ties go to the ladder declared first.
std::optional<std::string> select_ladder(const std::vector<VulnerabilityInstance>& vulns,
                                         const ChallengeManifest& m);
std::optional<std::string> select_ladder(const std::vector<VulnerabilityInstance>& vulns,
                                         const std::vector<HintLadder>& ladders);

/// The rung after the last one issued on this ladder, if any. Does not touch state.
std::optional<HintRung> next_hint(const CoachState& state, const HintLadder& ladder);

bool backoff_gate(const CoachState& state, EpochMs now, const BackoffRule& rule = {});

/// Substitutes every placeholder. Throws UnresolvedPlaceholder.
FeedbackMessage enrich(const HintRung& rung, const VulnerabilityInstance& vuln, const ChallengeManifest& m);
std::string render_template(const std::string& text, const std::map<std::string, std::string>& values);

/// `SIFU{<26 base-32 chars>}` keyed on (player, challenge).
std::string issue_flag(const std::string& player_id, const std::string& challenge_id, const std::string& secret);
bool verify_flag(const std::string& flag, const std::string& player_id, const std::string& challenge_id,
                 const std::string& secret);

/// The compile/functional diagnostics a rejected submission gets back.
std::vector<std::string> rejection_diagnostics(const PipelineReport& report, Stage stage,
                                               const AnalyzerRegistry& registry);

void to_json(nlohmann::json& j, const CoachState& s);
void from_json(const nlohmann::json& j, CoachState& s);
void to_json(nlohmann::json& j, const FeedbackMessage& f);
void from_json(const nlohmann::json& j, FeedbackMessage& f);
void to_json(nlohmann::json& j, const CoachOutcome& o);
void from_json(const nlohmann::json& j, CoachOutcome& o);

}  // namespace sifu
