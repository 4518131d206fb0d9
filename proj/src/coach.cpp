#include "sifu/coach.hpp"

#include <algorithm>

#include "sifu/crypto.hpp"
#include "sifu/error.hpp"
#include "sifu/json_io.hpp"

namespace sifu {

CoachState fresh_state(std::string player_id, std::string challenge_id) {
  CoachState s;
  s.player_id = std::move(player_id);
  s.challenge_id = std::move(challenge_id);
  return s;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Solved: return "Solved";
    case Verdict::Rejected: return "Rejected";
    case Verdict::Unsolved: return "Unsolved";
  }
  return "";
}

std::string to_string(RejectReason r) {
  return r == RejectReason::CompileError ? "CompileError" : "FunctionalFailure";
}

std::optional<std::pair<std::string, int>> CoachOutcome::hint_issued() const {
  if (!feedback || feedback->withheld || !feedback->ladder_id || !feedback->level) return std::nullopt;
  return std::make_pair(*feedback->ladder_id, *feedback->level);
}

std::optional<std::string> select_ladder(const std::vector<VulnerabilityInstance>& vulns,
                                         const std::vector<HintLadder>& ladders) {
  const HintLadder* best = nullptr;
  for (const auto& l : ladders) {
    const bool active = std::any_of(vulns.begin(), vulns.end(),
                                    [&](const VulnerabilityInstance& v) { return v.ladder_id == l.ladder_id; });
    if (active && (!best || l.priority > best->priority)) best = &l;
  }
  if (!best) return std::nullopt;
  return best->ladder_id;
}

std::optional<std::string> select_ladder(const std::vector<VulnerabilityInstance>& vulns,
                                         const ChallengeManifest& m) {
  return select_ladder(vulns, m.ladders);
}

std::optional<HintRung> next_hint(const CoachState& state, const HintLadder& ladder) {
  const int want = state.level_of(ladder.ladder_id) + 1;
  for (const auto& r : ladder.rungs)
    if (r.level == want) return r;
  return std::nullopt;
}

bool backoff_gate(const CoachState& state, EpochMs now, const BackoffRule& rule) {
  if (!state.last_hint_at) return true;
  return now - *state.last_hint_at >= rule.min_interval_ms && state.submissions_since_last_hint >= rule.min_submissions;
}

std::string render_template(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '{' || c == '}') && i + 1 < text.size() && text[i + 1] == c) {
      out.push_back(c);
      ++i;
      continue;
    }
    if (c == '}') throw UnresolvedPlaceholder("unbalanced '}' in hint template");
    if (c != '{') {
      out.push_back(c);
      continue;
    }
    const auto close = text.find('}', i);
    if (close == std::string::npos) throw UnresolvedPlaceholder("unterminated placeholder in hint template");
    const auto name = text.substr(i + 1, close - i - 1);
    auto it = values.find(name);
    if (it == values.end()) throw UnresolvedPlaceholder("no value for placeholder {" + name + "}");
    out += it->second;
    i = close;
  }
  return out;
}

FeedbackMessage enrich(const HintRung& rung, const VulnerabilityInstance& vuln, const ChallengeManifest& m) {
  auto values = vuln.captures;
  if (!vuln.guideline.url.empty()) values["guideline"] = vuln.guideline.url;
  for (std::size_t i = 0; i < m.links.size(); ++i) values["link:" + std::to_string(i + 1)] = m.links[i];
  FeedbackMessage f;
  f.ladder_id = vuln.ladder_id;
  f.level = rung.level;
  f.text = render_template(rung.text, values);
  return f;
}

std::string issue_flag(const std::string& player_id, const std::string& challenge_id, const std::string& secret) {
  std::string msg = player_id;
  msg.push_back('\0');
  msg += challenge_id;
  const auto mac = crypto::hmac_sha256(crypto::as_bytes(secret), crypto::as_bytes(msg));
  return "SIFU{" + crypto::base32(mac).substr(0, 26) + "}";
}

bool verify_flag(const std::string& flag, const std::string& player_id, const std::string& challenge_id,
                 const std::string& secret) {
  if (secret.empty()) return false;
  return crypto::constant_time_equal(flag, issue_flag(player_id, challenge_id, secret));
}

std::vector<std::string> rejection_diagnostics(const PipelineReport& report, Stage stage,
                                               const AnalyzerRegistry& registry) {
  std::vector<std::string> out;
  const auto& result = report.stage(stage);
  if (stage == Stage::Compile) {
    for (const auto& f : stage_findings(report, stage, registry)) {
      if (f.severity < Severity::Warning) continue;
      std::string loc = f.file.empty() ? f.captures.contains("external_file") ? f.captures.at("external_file") : "<build>"
                                       : f.file;
      if (f.line > 0) loc += ":" + std::to_string(f.line);
      out.push_back(loc + ": " + std::string(to_string(f.severity)) + ": " + f.message);
    }
    if (out.empty() && !result.raw_reports.empty()) {
      // Not machine-readable; pass the build output through.
      std::size_t start = 0;
      const auto& text = result.raw_reports.front().bytes;
      while (start < text.size() && out.size() < 50) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) out.push_back(text.substr(start, end - start));
        start = end + 1;
      }
    }
  }
  for (const auto& n : result.notes) out.push_back(n);
  return out;
}

CoachOutcome evaluate(const PipelineReport& report, const std::vector<VulnerabilityInstance>& vulns,
                      const CoachState& state, EpochMs now, const ChallengeManifest& m,
                      const AnalyzerRegistry& registry, const BackoffRule& rule) {
  if (state.challenge_id != m.id || (!report.challenge_id.empty() && report.challenge_id != m.id))
    throw StateMismatch("coach state for '" + state.challenge_id + "' and report for '" + report.challenge_id +
                        "' do not belong to challenge '" + m.id + "'");

  CoachOutcome out;
  out.state_after = state;
  auto solved = [&] {
    out.verdict = Verdict::Solved;
    out.flag = issue_flag(state.player_id, m.id, m.flag_secret);
    out.feedback = FeedbackMessage{std::nullopt, std::nullopt, m.solve_discussion, false, std::nullopt, std::nullopt};
    out.state_after.solved = true;
    return out;
  };
  if (state.solved) return solved();

  if (report.status(Stage::Compile) != StageStatus::Passed) {
    out.verdict = Verdict::Rejected;
    out.reason = RejectReason::CompileError;
    out.diagnostics = rejection_diagnostics(report, Stage::Compile, registry);
    out.state_after.submissions_since_last_hint += 1;
    return out;
  }
  if (report.status(Stage::UnitFunctional) != StageStatus::Passed) {
    out.verdict = Verdict::Rejected;
    out.reason = RejectReason::FunctionalFailure;
    out.diagnostics = rejection_diagnostics(report, Stage::UnitFunctional, registry);
    out.state_after.submissions_since_last_hint += 1;
    return out;
  }

  bool security_clean = vulns.empty();
  for (const auto s : {Stage::SAST, Stage::UnitSecurity, Stage::DAST, Stage::RASP}) {
    const auto st = report.status(s);
    if (st != StageStatus::Passed && st != StageStatus::Skipped) {
      security_clean = false;
      for (const auto& n : report.stage(s).notes) out.diagnostics.push_back(n);
    }
  }
  if (security_clean) return solved();

  out.verdict = Verdict::Unsolved;
  auto& next = out.state_after;
  next.submissions_since_last_hint += 1;

  const auto ladder_id = select_ladder(vulns, m);
  if (!ladder_id) {
    out.feedback = FeedbackMessage{std::nullopt, std::nullopt,
                                   "The code works, but the security assessment still reports problems.", false,
                                   std::nullopt, std::nullopt};
    return out;
  }
  const HintLadder& ladder = *m.find_ladder(*ladder_id);
  const auto rung = next_hint(next, ladder);
  if (!rung) return out;  // ladder exhausted: nothing more to say

  if (!backoff_gate(next, now, rule)) {
    FeedbackMessage f;
    f.withheld = true;
    const auto wait_ms = std::max<EpochMs>(0, *next.last_hint_at + rule.min_interval_ms - now);
    f.wait_seconds = static_cast<int>((wait_ms + 999) / 1000);
    f.submissions_needed = std::max(0, rule.min_submissions - next.submissions_since_last_hint);
    f.text = "The next hint is not available yet. Keep working on the code";
    if (*f.wait_seconds > 0) f.text += "; it unlocks in " + std::to_string(*f.wait_seconds) + " s";
    if (*f.submissions_needed > 0)
      f.text += (*f.wait_seconds > 0 ? " and after " : "; it unlocks after ") +
                std::to_string(*f.submissions_needed) + " more submission" + (*f.submissions_needed == 1 ? "" : "s");
    f.text += ".";
    out.feedback = std::move(f);
    return out;
  }

  const auto vuln = std::find_if(vulns.begin(), vulns.end(),
                                 [&](const VulnerabilityInstance& v) { return v.ladder_id == *ladder_id; });
  out.feedback = enrich(*rung, *vuln, m);
  next.ladder_levels[*ladder_id] = rung->level;
  next.last_hint_at = now;
  next.submissions_since_last_hint = 0;
  return out;
}

CoachOutcome evaluate(const PipelineReport& report, const std::vector<VulnerabilityInstance>& vulns,
                      const CoachState& state, EpochMs now, const ChallengeManifest& m) {
  static const AnalyzerRegistry registry = AnalyzerRegistry::with_defaults();
  return evaluate(report, vulns, state, now, m, registry);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json();
}

template <class T>
std::optional<T> opt_get(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

}  // namespace

void to_json(Json& j, const CoachState& s) {
  j = Json{{"player_id", s.player_id},
           {"challenge_id", s.challenge_id},
           {"ladder_levels", s.ladder_levels},
           {"last_hint_at", opt(s.last_hint_at)},
           {"submissions_since_last_hint", s.submissions_since_last_hint},
           {"solved", s.solved}};
}

void from_json(const Json& j, CoachState& s) {
  s.player_id = j.at("player_id").get<std::string>();
  s.challenge_id = j.at("challenge_id").get<std::string>();
  s.ladder_levels = j.value("ladder_levels", std::map<std::string, int>{});
  s.last_hint_at = opt_get<EpochMs>(j, "last_hint_at");
  s.submissions_since_last_hint = j.value("submissions_since_last_hint", 0);
  s.solved = j.value("solved", false);
}

void to_json(Json& j, const FeedbackMessage& f) {
  j = Json{{"ladder_id", opt(f.ladder_id)}, {"level", opt(f.level)},           {"text", f.text},
           {"withheld", f.withheld},        {"wait_seconds", opt(f.wait_seconds)}, {"submissions_needed", opt(f.submissions_needed)}};
}

void from_json(const Json& j, FeedbackMessage& f) {
  f.ladder_id = opt_get<std::string>(j, "ladder_id");
  f.level = opt_get<int>(j, "level");
  f.text = j.value("text", "");
  f.withheld = j.value("withheld", false);
  f.wait_seconds = opt_get<int>(j, "wait_seconds");
  f.submissions_needed = opt_get<int>(j, "submissions_needed");
}

void to_json(Json& j, const CoachOutcome& o) {
  j = Json{{"verdict", to_string(o.verdict)},
           {"reason", o.reason ? Json(to_string(*o.reason)) : Json()},
           {"flag", opt(o.flag)},
           {"diagnostics", o.diagnostics},
           {"feedback", o.feedback ? Json(*o.feedback) : Json()},
           {"state_after", o.state_after}};
}

void from_json(const Json& j, CoachOutcome& o) {
  const auto v = j.at("verdict").get<std::string>();
  if (v == "Solved") o.verdict = Verdict::Solved;
  else if (v == "Rejected") o.verdict = Verdict::Rejected;
  else if (v == "Unsolved") o.verdict = Verdict::Unsolved;
  else throw ParseError("unknown verdict '" + v + "'");
  o.reason.reset();
  if (auto r = opt_get<std::string>(j, "reason"))
    o.reason = *r == "CompileError" ? RejectReason::CompileError : RejectReason::FunctionalFailure;
  o.flag = opt_get<std::string>(j, "flag");
  o.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  o.feedback = opt_get<FeedbackMessage>(j, "feedback");
  o.state_after = j.at("state_after").get<CoachState>();
}

}  // namespace sifu
