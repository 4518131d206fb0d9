#include "sifu/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include "sifu/analyzer.hpp"
#include "sifu/error.hpp"
#include "sifu/json_io.hpp"
#include "sifu/sandbox.hpp"
#include "sifu/workspace.hpp"

namespace sifu {

namespace {

constexpr const char* kStageNames[] = {"Compile", "SAST", "UnitFunctional", "UnitSecurity", "DAST", "RASP"};
constexpr const char* kStatusNames[] = {"Passed", "Failed", "Skipped", "Timeout", "ToolError"};

const AnalyzerRegistry& registry_of(const StageEnv& env) {
  static const AnalyzerRegistry defaults = AnalyzerRegistry::with_defaults();
  return env.registry ? *env.registry : defaults;
}

const Clock& clock_of(const StageEnv& env) {
  static const SystemClock system;
  return env.clock ? *env.clock : system;
}

class StageTimer {
 public:
  StageTimer(const Clock& c) : clock_(c), start_(c.now()) {}
  double seconds() const { return static_cast<double>(clock_.now() - start_) / 1000.0; }

 private:
  const Clock& clock_;
  EpochMs start_;
};

/// First line with any letters or digits; sanitizer banners are rows of '='.
std::string first_line(const std::string& s) {
  std::size_t start = 0;
  while (start < s.size()) {
    auto eol = s.find('\n', start);
    if (eol == std::string::npos) eol = s.size();
    auto line = s.substr(start, eol - start);
    if (std::any_of(line.begin(), line.end(), [](unsigned char c) { return std::isalnum(c); })) {
      // Addresses and pids differ between runs; keep summaries reproducible.
      static const std::regex pid(R"(==\d+==)"), addr(R"(0x[0-9a-fA-F]{4,})");
      line = std::regex_replace(std::regex_replace(line, pid, ""), addr, "0x?");
      if (line.size() > 200) line = line.substr(0, 200) + "...";
      return line;
    }
    start = eol + 1;
  }
  return {};
}

std::string read_workspace_file(const Workspace& w, const std::string& rel) {
  std::ifstream in(w.resolve(rel), std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Findings at Warning or above from the given raw reports.
bool has_significant_findings(const std::vector<RawReport>& reports, const AnalyzerRegistry& registry,
                              const Workspace& w) {
  const NormalizeContext ctx{w.root().string()};
  for (const auto& r : reports) {
    if (r.format == "unit-results") continue;
    try {
      for (const auto& f : registry.normalize(r, ctx))
        if (f.severity >= Severity::Warning) return true;
    } catch (const std::exception& e) {
      spdlog::warn("report '{}' unreadable: {}", r.format, e.what());
    }
  }
  return false;
}

struct SuiteRun {
  std::vector<RawReport> reports;
  std::vector<std::string> notes;
  bool failed = false;
  bool timed_out = false;
  Json results = Json::array();
};

void run_test(const TestSpec& t, const Workspace& w, const SandboxPolicy& policy, SuiteRun& run,
              const RunOptions& extra = {}) {
  RunOptions opts = extra;
  opts.stdin_data = t.stdin_data;
  const auto out = run_sandboxed(t.command, w, policy, opts);

  bool passed = out.exit_status.is_exit(t.expect_exit);
  std::string detail;
  if (!passed) {
    detail = out.exit_status.describe();
    if (out.exit_status.kind == ExitStatus::Kind::Exited)
      detail += " (expected " + std::to_string(t.expect_exit) + ")";
    if (const auto err = first_line(out.stderr_data); !err.empty()) detail += ": " + err;
  } else if (t.expected_stdout && out.stdout_data != *t.expected_stdout) {
    passed = false;
    detail = "unexpected output";
  }
  const bool timeout = out.exit_status.is_killed(KillReason::TimeLimit);
  if (!passed) {
    (timeout ? run.timed_out : run.failed) = true;
    run.notes.push_back("test '" + t.name + "' failed: " + detail);
  }
  run.results.push_back({{"name", t.name},
                         {"passed", passed},
                         {"status", passed ? "passed" : timeout ? "timeout" : "failed"},
                         {"detail", detail}});

  if (t.report_format) {
    std::string bytes = t.report_file ? read_workspace_file(w, *t.report_file) : out.stderr_data;
    if (!bytes.empty()) run.reports.push_back({*t.report_format, std::move(bytes)});
  }
}

StageResult finish_suite(Stage stage, const std::string& suite, SuiteRun run, const AnalyzerRegistry& registry,
                         const Workspace& w, const StageTimer& timer) {
  StageResult r;
  r.stage = stage;
  r.raw_reports.push_back({"unit-results", dump_json(Json{{"suite", suite}, {"tests", run.results}})});
  for (auto& rep : run.reports) r.raw_reports.push_back(std::move(rep));
  r.notes = std::move(run.notes);
  const bool findings = has_significant_findings(r.raw_reports, registry, w);
  if (run.failed || findings) r.status = StageStatus::Failed;
  else if (run.timed_out) r.status = StageStatus::Timeout;
  else r.status = StageStatus::Passed;
  r.duration = timer.seconds();
  return r;
}

StageResult run_suite(Stage stage, const std::string& suite, const std::vector<TestSpec>& tests, const Workspace& w,
                      const SandboxPolicy& policy, const StageEnv& env) {
  StageTimer timer(clock_of(env));
  SuiteRun run;
  for (const auto& t : tests) run_test(t, w, policy, run);
  return finish_suite(stage, suite, std::move(run), registry_of(env), w, timer);
}

StageResult skipped(Stage s) {
  StageResult r;
  r.stage = s;
  r.status = StageStatus::Skipped;
  return r;
}

}  // namespace

std::string to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }
std::string to_string(StageStatus s) { return kStatusNames[static_cast<int>(s)]; }

Stage stage_from_string(const std::string& s) {
  for (int i = 0; i < 6; ++i)
    if (s == kStageNames[i]) return static_cast<Stage>(i);
  throw ParseError("unknown stage '" + s + "'");
}

StageStatus stage_status_from_string(const std::string& s) {
  for (int i = 0; i < 5; ++i)
    if (s == kStatusNames[i]) return static_cast<StageStatus>(i);
  throw ParseError("unknown stage status '" + s + "'");
}

const StageResult& PipelineReport::stage(Stage s) const {
  for (const auto& r : stages)
    if (r.stage == s) return r;
  throw Error("report has no " + to_string(s) + " stage");
}

StageResult compile_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                          const StageEnv& env) {
  StageTimer timer(clock_of(env));
  StageResult r;
  r.stage = Stage::Compile;
  const auto out = run_sandboxed(m.build.command, w, policy);
  r.raw_reports.push_back({m.build.report_format, out.stderr_data});

  bool error_diagnostic = false;
  try {
    for (const auto& f : registry_of(env).normalize(r.raw_reports.back(), {w.root().string()}))
      error_diagnostic = error_diagnostic || f.severity >= Severity::Error;
  } catch (const MalformedReport& e) {
    r.notes.push_back(std::string("diagnostics unreadable: ") + e.what());
  }

  if (out.exit_status.is_killed(KillReason::TimeLimit)) {
    r.status = StageStatus::Timeout;
    r.notes.push_back("build " + out.exit_status.describe());
  } else if (!out.exit_status.is_exit(0) || error_diagnostic) {
    r.status = StageStatus::Failed;
    if (!out.exit_status.is_exit(0)) r.notes.push_back("build " + out.exit_status.describe());
  } else {
    r.status = StageStatus::Passed;
  }
  r.duration = timer.seconds();
  return r;
}

StageResult sast_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env) {
  StageTimer timer(clock_of(env));
  const auto& registry = registry_of(env);
  StageResult r;
  r.stage = Stage::SAST;

  try {
    r.raw_reports.push_back({"sarif", to_sarif(builtin_analyze(w), kBuiltinToolName)});
  } catch (const std::exception& e) {
    spdlog::warn("built-in analyzer failed: {}", e.what());
    r.notes.push_back(std::string("tool error (") + kBuiltinToolName + "): " + e.what());
  }

  // External analyzers: a tool that crashes or emits garbage is dropped, not held against the player.
  for (const auto& t : m.sast_tools) {
    const auto out = run_sandboxed(t.command, w, policy);
    std::string bytes = t.report_file ? read_workspace_file(w, *t.report_file) : out.stdout_data;
    const auto format = t.report_format.value_or("sarif");
    std::string problem;
    if (!out.exit_status.is_exit(t.expect_exit)) {
      problem = out.exit_status.describe();
    } else {
      try {
        registry.normalize({format, bytes}, {w.root().string()});
      } catch (const std::exception& e) {
        problem = e.what();
      }
    }
    if (!problem.empty()) {
      spdlog::warn("SAST tool '{}' failed: {}", t.name, problem);
      r.notes.push_back("tool error (" + t.name + "): " + problem);
      continue;
    }
    r.raw_reports.push_back({format, std::move(bytes)});
  }

  if (r.raw_reports.empty()) r.status = StageStatus::Skipped;
  else r.status = has_significant_findings(r.raw_reports, registry, w) ? StageStatus::Failed : StageStatus::Passed;
  r.duration = timer.seconds();
  return r;
}

StageResult functional_test_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                                  const StageEnv& env) {
  return run_suite(Stage::UnitFunctional, "functional", m.functional_tests, w, policy, env);
}

StageResult security_test_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                                const StageEnv& env) {
  const bool fuzzing = m.fuzz && m.fuzz->budget_execs > 0 && m.fuzz->budget_seconds > 0;
  if (m.security_tests.empty() && !fuzzing) return skipped(Stage::UnitSecurity);
  StageTimer timer(clock_of(env));
  SuiteRun run;
  for (const auto& t : m.security_tests) run_test(t, w, policy, run);
  auto result = finish_suite(Stage::UnitSecurity, "security", std::move(run), registry_of(env), w, timer);

  if (!fuzzing) return result;

  // The harness stops itself at the budget; running out of wall clock also ends the campaign.
  const auto& fz = *m.fuzz;
  RunOptions opts;
  opts.extra_env = {{"SIFU_FUZZ_RUNS", std::to_string(fz.budget_execs)},
                    {"SIFU_FUZZ_SEED", std::to_string(fz.seed)},
                    {"SIFU_FUZZ_SECONDS", std::to_string(fz.budget_seconds)}};
  opts.wall_clock_limit = fz.budget_seconds + 1.0;
  const auto out = run_sandboxed(fz.command, w, policy, opts);
  const bool passed = out.exit_status.is_exit(0) || out.exit_status.is_killed(KillReason::TimeLimit);
  std::string detail;
  if (!passed) {
    detail = out.exit_status.describe();
    if (const auto err = first_line(out.stderr_data); !err.empty()) detail += ": " + err;
    result.notes.push_back("fuzzing found a failure: " + detail);
    result.raw_reports.push_back({fz.report_format, out.stderr_data});
  }
  result.raw_reports.push_back(
      {"unit-results",
       dump_json(Json{{"suite", "fuzz"},
                      {"tests", Json::array({{{"name", "harness"},
                                              {"passed", passed},
                                              {"status", passed ? "passed" : "failed"},
                                              {"detail", detail}}})}})});
  if (!passed) result.status = StageStatus::Failed;
  result.duration = timer.seconds();
  return result;
}

StageResult dast_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env) {
  if (m.dast.empty()) return skipped(Stage::DAST);
  return run_suite(Stage::DAST, "dast", m.dast, w, policy, env);
}

StageResult rasp_stage(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                       const StageEnv& env) {
  if (m.rasp.empty()) return skipped(Stage::RASP);
  return run_suite(Stage::RASP, "rasp", m.rasp, w, policy, env);
}

PipelineReport run_pipeline(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                            const AnalyzerRegistry& analyzers, const Clock& clock) {
  const StageEnv env{&analyzers, &clock};
  PipelineReport report;
  report.challenge_id = m.id;
  report.workspace_hash = w.content_hash();
  report.workspace_root = w.root().string();

  report.stages.push_back(compile_stage(w, m, policy, env));
  if (report.stages.back().status != StageStatus::Passed) {
    report.gated_at = Stage::Compile;
    for (const auto s : kStageOrder)
      if (s != Stage::Compile) report.stages.push_back(skipped(s));
    return report;
  }
  report.stages.push_back(sast_stage(w, m, policy, env));
  report.stages.push_back(functional_test_stage(w, m, policy, env));
  report.stages.push_back(security_test_stage(w, m, policy, env));
  report.stages.push_back(dast_stage(w, m, policy, env));
  report.stages.push_back(rasp_stage(w, m, policy, env));
  return report;
}

PipelineReport run_pipeline(const Workspace& w, const ChallengeManifest& m, const SandboxPolicy& policy,
                            const AnalyzerRegistry& analyzers) {
  static const SystemClock system;
  return run_pipeline(w, m, policy, analyzers, system);
}

std::vector<Finding> stage_findings(const PipelineReport& report, Stage s, const AnalyzerRegistry& registry) {
  std::vector<Finding> out;
  const auto& stage = report.stage(s);
  if (stage.status == StageStatus::Skipped) return out;
  const NormalizeContext ctx{report.workspace_root};
  for (const auto& raw : stage.raw_reports) {
    try {
      auto found = registry.normalize(raw, ctx);
      out.insert(out.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
    } catch (const std::exception& e) {
      spdlog::warn("{} report '{}' skipped: {}", to_string(s), raw.format, e.what());
    }
  }
  return out;
}

std::vector<Finding> collect_findings(const PipelineReport& report, const AnalyzerRegistry& registry) {
  std::vector<Finding> out;
  for (const auto& s : report.stages) {
    auto found = stage_findings(report, s.stage, registry);
    out.insert(out.end(), std::make_move_iterator(found.begin()), std::make_move_iterator(found.end()));
  }
  return out;
}

void to_json(Json& j, const StageResult& s) {
  Json raw = Json::array();
  for (const auto& r : s.raw_reports) raw.push_back({{"format", r.format}, {"bytes", r.bytes}});
  j = Json{{"stage", to_string(s.stage)},
           {"status", to_string(s.status)},
           {"duration", s.duration},
           {"notes", s.notes},
           {"raw_reports", raw}};
}

void from_json(const Json& j, StageResult& s) {
  s.stage = stage_from_string(j.at("stage").get<std::string>());
  s.status = stage_status_from_string(j.at("status").get<std::string>());
  s.duration = j.value("duration", 0.0);
  s.notes = j.value("notes", std::vector<std::string>{});
  s.raw_reports.clear();
  for (const auto& r : j.value("raw_reports", Json::array()))
    s.raw_reports.push_back({r.at("format").get<std::string>(), r.at("bytes").get<std::string>()});
}

void to_json(Json& j, const PipelineReport& r) {
  j = Json{{"challenge_id", r.challenge_id},
           {"workspace_hash", r.workspace_hash},
           {"workspace_root", r.workspace_root},
           {"stages", r.stages},
           {"gated_at", r.gated_at ? Json(to_string(*r.gated_at)) : Json()}};
}

void from_json(const Json& j, PipelineReport& r) {
  r.challenge_id = j.value("challenge_id", "");
  r.workspace_hash = j.value("workspace_hash", "");
  r.workspace_root = j.value("workspace_root", "");
  r.stages = j.at("stages").get<std::vector<StageResult>>();
  r.gated_at.reset();
  if (auto it = j.find("gated_at"); it != j.end() && !it->is_null())
    r.gated_at = stage_from_string(it->get<std::string>());
}

Json stage_summary(const PipelineReport& r) {
  Json j = Json::object();
  for (const auto& s : r.stages) j[to_string(s.stage)] = to_string(s.status);
  return j;
}

}  // namespace sifu
