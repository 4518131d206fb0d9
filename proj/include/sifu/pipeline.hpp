#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sifu/adapters.hpp"
#include "sifu/challenge.hpp"
#include "sifu/clock.hpp"
#include "sifu/finding.hpp"
#include "sifu/policy.hpp"

namespace sifu {

class Workspace;

enum class Stage { Compile, SAST, UnitFunctional, UnitSecurity, DAST, RASP };
inline constexpr Stage kStageOrder[] = {Stage::Compile,      Stage::SAST, Stage::UnitFunctional,
                                        Stage::UnitSecurity, Stage::DAST, Stage::RASP};

enum class StageStatus { Passed, Failed, Skipped, Timeout, ToolError };

std::string to_string(Stage s);
std::string to_string(StageStatus s);
Stage stage_from_string(const std::string& s);
StageStatus stage_status_from_string(const std::string& s);

struct StageResult {
  Stage stage = Stage::Compile;
  StageStatus status = StageStatus::Skipped;
  std::vector<RawReport> raw_reports;
  double duration = 0;             // seconds, measured with the pipeline clock
  std::vector<std::string> notes;  // tool errors, failed test names, exit summaries

  bool operator==(const StageResult&) const = default;
};

struct PipelineReport {
  std::string challenge_id;
  std::string workspace_hash;
  /// Where the tools ran; only used to relativize paths in raw reports.
  std::string workspace_root;
  std::vector<StageResult> stages;
  std::optional<Stage> gated_at;

  const StageResult& stage(Stage s) const;
  StageStatus status(Stage s) const { return stage(s).status; }
};

/// Registry and clock used by the stages. Defaults: all shipped adapters and the system clock.
struct StageEnv {
  const AnalyzerRegistry* registry = nullptr;
  const Clock* clock = nullptr;
};

StageResult compile_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                          const StageEnv& env = {});
StageResult sast_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env = {});
StageResult functional_test_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                                  const StageEnv& env = {});
StageResult security_test_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                                const StageEnv& env = {});
StageResult dast_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env = {});
StageResult rasp_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env = {});

/// Runs every stage in order. A compile stage that does not pass skips the rest.
PipelineReport run_pipeline(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                            const AnalyzerRegistry& analyzers, const Clock& clock);
PipelineReport run_pipeline(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                            const AnalyzerRegistry& analyzers);

/// Normalized findings of one stage. Unreadable reports are logged and skipped.
std::vector<Finding> stage_findings(const PipelineReport& report, Stage s, const AnalyzerRegistry& registry);
/// Findings of every executed stage, in stage order.
std::vector<Finding> collect_findings(const PipelineReport& report, const AnalyzerRegistry& registry);

void to_json(nlohmann::json& j, const StageResult& s);
void from_json(const nlohmann::json& j, StageResult& s);
void to_json(nlohmann::json& j, const PipelineReport& r);
void from_json(const nlohmann::json& j, PipelineReport& r);

/// Stage name -> status, the summary stored with each submission.
nlohmann::json stage_summary(const PipelineReport& r);

}  // namespace sifu
