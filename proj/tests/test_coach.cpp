#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <regex>
#include <set>

#include "sifu/coach.hpp"
#include "sifu/error.hpp"
#include "sifu/json_io.hpp"
#include "support.hpp"

using namespace sifu;
using sifu::test::ladder_manifest;
using sifu::test::report_with;

namespace {

using SS = StageStatus;

VulnerabilityInstance vuln(const std::string& ladder, std::map<std::string, std::string> caps = {}) {
  VulnerabilityInstance v;
  v.ladder_id = ladder;
  v.captures = std::move(caps);
  return v;
}

PipelineReport unsolved_report(const std::string& id) { return report_with(id, {{Stage::SAST, SS::Failed}}); }

// Oracle: argmax over priorities, earliest declared wins ties.
std::optional<std::string> brute_argmax(const std::vector<int>& prio, const std::vector<int>& active) {
  std::optional<int> best;
  for (int i : active)
    if (!best || prio[i] > prio[*best] || (prio[i] == prio[*best] && i < *best)) best = i;
  if (!best) return std::nullopt;
  return "l" + std::to_string(*best);
}

}  // namespace

TEST(SelectLadder, MatchesBruteForceArgmax) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> prio(5);
    for (auto& p : prio) p = rng() % 4;
    const auto m = ladder_manifest(prio);
    for (int mask = 0; mask < 32; ++mask) {
      std::vector<int> active;
      std::vector<VulnerabilityInstance> vulns;
      for (int i = 0; i < 5; ++i)
        if (mask & (1 << i)) {
          active.push_back(i);
          vulns.push_back(vuln("l" + std::to_string(i)));
        }
      std::shuffle(vulns.begin(), vulns.end(), rng);
      ASSERT_EQ(select_ladder(vulns, m), brute_argmax(prio, active)) << "mask " << mask;
    }
  }
}

TEST(SelectLadder, IgnoresUnknownLadders) {
  const auto m = ladder_manifest({1, 2});
  EXPECT_EQ(select_ladder({vuln("nope")}, m), std::nullopt);
  EXPECT_EQ(select_ladder({vuln("nope"), vuln("l0")}, m), "l0");
}

TEST(Backoff, GateBoundaries) {
  auto s = fresh_state("p", "c");
  EXPECT_TRUE(backoff_gate(s, 0));
  s.last_hint_at = 1'000'000;
  s.submissions_since_last_hint = 3;
  EXPECT_FALSE(backoff_gate(s, 1'000'000 + 239'999));
  EXPECT_TRUE(backoff_gate(s, 1'000'000 + 240'000));
  s.submissions_since_last_hint = 2;
  EXPECT_FALSE(backoff_gate(s, 1'000'000 + 10'000'000));
  EXPECT_TRUE(backoff_gate(s, 1'000'000 + 60'000, BackoffRule{60'000, 2}));
}

TEST(NextHint, WalksRungsAndStops) {
  const auto m = ladder_manifest({1}, 2);
  auto s = fresh_state("p", "ladders");
  EXPECT_EQ(next_hint(s, m.ladders[0])->level, 1);
  s.ladder_levels["l0"] = 1;
  EXPECT_EQ(next_hint(s, m.ladders[0])->level, 2);
  s.ladder_levels["l0"] = 2;
  EXPECT_FALSE(next_hint(s, m.ladders[0]).has_value());
}

TEST(Evaluate, CompileFailureRejectsWithoutTouchingLevels) {
  const auto m = ladder_manifest({1});
  auto s = fresh_state("p", m.id);
  s.ladder_levels["l0"] = 1;
  s.last_hint_at = 5;
  const auto report = report_with(m.id, {{Stage::Compile, SS::Failed}, {Stage::SAST, SS::Skipped}});
  const auto o = evaluate(report, {vuln("l0")}, s, 10'000'000, m);
  EXPECT_EQ(o.verdict, Verdict::Rejected);
  EXPECT_EQ(o.reason, RejectReason::CompileError);
  EXPECT_FALSE(o.hint_issued());
  EXPECT_FALSE(o.flag);
  EXPECT_EQ(o.state_after.ladder_levels, s.ladder_levels);
  EXPECT_EQ(o.state_after.last_hint_at, s.last_hint_at);
  EXPECT_EQ(o.state_after.submissions_since_last_hint, 1);
}

TEST(Evaluate, CompileTimeoutIsACompileError) {
  const auto m = ladder_manifest({1});
  const auto o = evaluate(report_with(m.id, {{Stage::Compile, SS::Timeout}}), {}, fresh_state("p", m.id), 0, m);
  EXPECT_EQ(o.reason, RejectReason::CompileError);
}

TEST(Evaluate, FunctionalFailureRejects) {
  const auto m = ladder_manifest({1});
  for (const auto st : {SS::Failed, SS::Timeout, SS::ToolError}) {
    const auto o = evaluate(report_with(m.id, {{Stage::UnitFunctional, st}, {Stage::SAST, SS::Failed}}),
                            {vuln("l0")}, fresh_state("p", m.id), 0, m);
    EXPECT_EQ(o.verdict, Verdict::Rejected);
    EXPECT_EQ(o.reason, RejectReason::FunctionalFailure);
    EXPECT_FALSE(o.feedback);
    EXPECT_TRUE(o.state_after.ladder_levels.empty());
  }
}

TEST(Evaluate, SolvedNeedsCleanSecurityStagesAndNoVulnerabilities) {
  const auto m = ladder_manifest({1});
  const auto s = fresh_state("p", m.id);
  const auto clean = evaluate(report_with(m.id, {{Stage::DAST, SS::Skipped}}), {}, s, 0, m);
  EXPECT_EQ(clean.verdict, Verdict::Solved);
  ASSERT_TRUE(clean.flag);
  EXPECT_TRUE(verify_flag(*clean.flag, "p", m.id, m.flag_secret));
  EXPECT_EQ(clean.feedback->text, "done");
  EXPECT_TRUE(clean.state_after.solved);

  EXPECT_EQ(evaluate(report_with(m.id, {}), {vuln("l0")}, s, 0, m).verdict, Verdict::Unsolved);
  for (const auto stage : {Stage::SAST, Stage::UnitSecurity, Stage::DAST, Stage::RASP})
    for (const auto st : {SS::Failed, SS::Timeout, SS::ToolError})
      EXPECT_EQ(evaluate(report_with(m.id, {{stage, st}}), {}, s, 0, m).verdict, Verdict::Unsolved);
}

TEST(Evaluate, SolvedIsAbsorbing) {
  const auto m = ladder_manifest({1});
  auto s = fresh_state("p", m.id);
  s.solved = true;
  const auto o = evaluate(report_with(m.id, {{Stage::Compile, SS::Failed}}), {vuln("l0")}, s, 0, m);
  EXPECT_EQ(o.verdict, Verdict::Solved);
  EXPECT_EQ(o.state_after, s);
}

TEST(Evaluate, GenericFeedbackWithoutLadder) {
  const auto m = ladder_manifest({1});
  const auto o = evaluate(unsolved_report(m.id), {}, fresh_state("p", m.id), 0, m);
  EXPECT_EQ(o.verdict, Verdict::Unsolved);
  ASSERT_TRUE(o.feedback);
  EXPECT_FALSE(o.feedback->ladder_id);
  EXPECT_FALSE(o.hint_issued());
  EXPECT_EQ(o.state_after.submissions_since_last_hint, 1);
}

TEST(Evaluate, IssuesWithholdsAndExhausts) {
  const auto m = ladder_manifest({1}, 2);
  auto s = fresh_state("p", m.id);
  const auto r = unsolved_report(m.id);

  auto o = evaluate(r, {vuln("l0")}, s, 1000, m);
  ASSERT_EQ(o.hint_issued(), std::make_pair(std::string("l0"), 1));
  EXPECT_EQ(o.feedback->text, "l0 hint 1");
  EXPECT_EQ(o.state_after.last_hint_at, 1000);
  EXPECT_EQ(o.state_after.submissions_since_last_hint, 0);
  s = o.state_after;

  o = evaluate(r, {vuln("l0")}, s, 61'000, m);
  ASSERT_TRUE(o.feedback && o.feedback->withheld);
  EXPECT_EQ(o.feedback->wait_seconds, 180);
  EXPECT_EQ(o.feedback->submissions_needed, 2);
  EXPECT_FALSE(o.hint_issued());
  s = o.state_after;
  EXPECT_EQ(s.submissions_since_last_hint, 1);

  s.submissions_since_last_hint = 2;
  o = evaluate(r, {vuln("l0")}, s, 241'000, m);
  ASSERT_EQ(o.hint_issued(), std::make_pair(std::string("l0"), 2));
  s = o.state_after;

  s.submissions_since_last_hint = 10;
  o = evaluate(r, {vuln("l0")}, s, 10'000'000, m);
  EXPECT_EQ(o.verdict, Verdict::Unsolved);
  EXPECT_FALSE(o.feedback);
  EXPECT_EQ(o.state_after.level_of("l0"), 2);
}

TEST(Evaluate, RejectsForeignState) {
  const auto m = ladder_manifest({1});
  EXPECT_THROW(evaluate(unsolved_report(m.id), {}, fresh_state("p", "other"), 0, m), StateMismatch);
  EXPECT_THROW(evaluate(unsolved_report("other"), {}, fresh_state("p", m.id), 0, m), StateMismatch);
}

// Random traces: every issued hint respects the back-off against the previous one,
// and each ladder's issued levels are 1, 2, ..., k.
TEST(Evaluate, TracePropertiesHold) {
  std::mt19937 rng(9);
  const auto m = ladder_manifest({3, 1, 3}, 4);
  for (int trace = 0; trace < 100; ++trace) {
    auto s = fresh_state("p", m.id);
    EpochMs now = 0;
    std::optional<std::pair<EpochMs, int>> last;
    std::map<std::string, std::vector<int>> issued;
    for (int i = 0; i < 300; ++i) {
      now += rng() % 120'000;
      std::map<Stage, SS> st;
      const int kind = rng() % 10;
      if (kind == 0) st[Stage::Compile] = SS::Failed;
      else if (kind == 1) st[Stage::UnitFunctional] = SS::Failed;
      else st[Stage::SAST] = SS::Failed;
      std::vector<VulnerabilityInstance> vulns;
      for (int l = 0; l < 3; ++l)
        if (rng() % 2) vulns.push_back(vuln("l" + std::to_string(l)));
      const auto o = evaluate(report_with(m.id, st), vulns, s, now, m);
      if (auto h = o.hint_issued()) {
        if (last) {
          ASSERT_GE(now - last->first, 240'000);
          ASSERT_GE(i - last->second, 3);
        }
        last = {now, i};
        issued[h->first].push_back(h->second);
      }
      s = o.state_after;
    }
    for (const auto& [ladder, levels] : issued)
      for (std::size_t k = 0; k < levels.size(); ++k) ASSERT_EQ(levels[k], static_cast<int>(k) + 1) << ladder;
  }
}

TEST(Template, RendersAndEscapes) {
  EXPECT_EQ(render_template("a {x} {{y}} }}", {{"x", "1"}}), "a 1 {y} }");
  EXPECT_THROW(render_template("{missing}", {}), UnresolvedPlaceholder);
  EXPECT_THROW(render_template("{open", {}), UnresolvedPlaceholder);
  EXPECT_THROW(render_template("close}", {}), UnresolvedPlaceholder);
}

TEST(Template, EnrichSuppliesGuidelineAndLinks) {
  ChallengeManifest m;
  m.links = {"https://a", "https://b"};
  auto v = vuln("l", {{"symbol", "i"}});
  v.guideline.url = "https://g";
  const auto f = enrich({4, "{link:2} {guideline} {symbol}"}, v, m);
  EXPECT_EQ(f.text, "https://b https://g i");
  EXPECT_EQ(f.level, 4);
  EXPECT_EQ(f.ladder_id, "l");
}

TEST(Flag, FormatAndVerification) {
  static const std::regex shape("^SIFU\\{[A-Z2-7]{26}\\}$");
  std::set<std::string> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto player = "player-" + std::to_string(i);
    const auto flag = issue_flag(player, "ch", "secret");
    ASSERT_TRUE(std::regex_match(flag, shape)) << flag;
    ASSERT_TRUE(verify_flag(flag, player, "ch", "secret"));
    ASSERT_FALSE(verify_flag(flag, player + "x", "ch", "secret"));
    ASSERT_FALSE(verify_flag(flag, player, "ch2", "secret"));
    ASSERT_FALSE(verify_flag(flag, player, "ch", "other"));
    seen.insert(flag);
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(issue_flag("p", "c", "k"), issue_flag("p", "c", "k"));
  // The separator keeps ("ab","c") and ("a","bc") apart.
  EXPECT_NE(issue_flag("ab", "c", "k"), issue_flag("a", "bc", "k"));
  EXPECT_FALSE(verify_flag(issue_flag("p", "c", ""), "p", "c", ""));
}

TEST(CoachJson, RoundTrip) {
  auto s = fresh_state("p", "c");
  s.ladder_levels = {{"a", 2}};
  s.last_hint_at = 123;
  s.submissions_since_last_hint = 4;
  EXPECT_EQ(Json(s).get<CoachState>(), s);

  CoachOutcome o;
  o.verdict = Verdict::Rejected;
  o.reason = RejectReason::FunctionalFailure;
  o.diagnostics = {"x"};
  o.feedback = FeedbackMessage{std::nullopt, std::nullopt, "t", true, 3, 1};
  o.state_after = s;
  EXPECT_EQ(Json(o).get<CoachOutcome>(), o);
}
