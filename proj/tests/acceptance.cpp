// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fixture_expectations.hpp"
#include "programs.hpp"
#include "sifu/coach.hpp"
#include "sifu/engine.hpp"
#include "sifu/sandbox.hpp"
#include "sifu/store.hpp"
#include "sifu/vulnerability.hpp"
#include "sifu/workspace.hpp"
#include "support.hpp"

using namespace sifu;
using SS = StageStatus;

namespace {

struct Check {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

template <class... Args>
std::string cat(Args&&... parts) {
  std::ostringstream ss;
  (ss << ... << parts);
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Reference challenge end to end

// Hint ladder of six levels, verbatim; <link> is filled from the bundle.
const std::vector<std::string> kLadderText = {
    "The following links contain information that might be helpful: <link>, <link>",
    "The compiler is free to optimize the compiled code assuming that there is no undefined behavior in the code",
    "Look at the variable 'i'",
    "Read carefully the following secure coding guideline: <link>",
    "The code accesses the variable \"Values\" - check carefully the bounds",
    "Since undefined behavior is not allowed, and the variable \"Values\" must be indexed within the bounds, the "
    "check i<4 is removed by the compiler!",
};

std::string fill_links(std::string text, std::vector<std::string> links) {
  std::size_t at;
  std::size_t next = 0;
  while ((at = text.find("<link>")) != std::string::npos) {
    text.replace(at, 6, links.at(next++));
  }
  return text;
}

Check reference_end_to_end() {
  Check v;
  const auto started = std::chrono::steady_clock::now();
  const auto& m = test::ub_values();
  const auto& arr30 = m.guidelines.at("arr30").url;
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < kLadderText.size(); ++i)
    expected.push_back(fill_links(kLadderText[i], i == 0 ? m.links : std::vector<std::string>{arr30}));

  test::TempDir dir;
  auto store = open_sqlite_store(dir / "e2e.db");
  ManualClock clock(1'700'000'000'000);
  EngineOptions opts;
  opts.workspace_dir = dir / "ws";
  Engine engine({m}, *store, clock, opts);
  const auto session = engine.create_session("player");
  auto submit = [&](const Edits& e) { return engine.submit(session.token, session.player_id, m.id, e); };

  for (int level = 1; level <= 6 && v.pass; ++level) {
    if (level > 1) {
      // Two early submissions are refused a hint; the third, past the interval, gets one.
      for (int k = 0; k < 2; ++k) {
        clock.advance(1'000);
        const auto r = submit({});
        if (!r.outcome.feedback || !r.outcome.feedback->withheld)
          v.fail(cat("level ", level, ": submission ", k + 1, " after a hint was not withheld"));
      }
      clock.advance(240'000);
    }
    const auto r = submit({});
    if (r.outcome.verdict != sifu::Verdict::Unsolved) v.fail(cat("level ", level, ": verdict is not Unsolved"));
    const auto hint = r.outcome.hint_issued();
    if (!hint || hint->first != "undefined-behavior" || hint->second != level) {
      v.fail(cat("level ", level, ": no hint from the undefined-behavior ladder"));
    } else if (r.outcome.feedback->text != expected[level - 1]) {
      v.fail(cat("level ", level, ": got '", r.outcome.feedback->text, "'"));
    }
  }
  if (v.pass) {
    for (int k = 0; k < 3; ++k) submit({});
    clock.advance(240'000);
    const auto r = submit({});
    if (r.outcome.hint_issued() || r.outcome.feedback)
      v.fail("an eligible 7th request still produced feedback");
  }
  if (v.pass) {
    const auto r = submit(m.solution);
    if (r.outcome.verdict != sifu::Verdict::Solved || !r.outcome.flag)
      v.fail("canonical solution not Solved");
    else if (!verify_flag(*r.outcome.flag, session.player_id, m.id, m.flag_secret))
      v.fail("flag does not verify");
    else if (!r.points_awarded)
      v.fail("no points for the first solve");
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (secs >= 60) v.fail(cat("took ", secs, " s"));
  if (v.pass) v.detail = cat("six hints verbatim, no 7th, solved with verifying flag in ", secs, " s");
  return v;
}

// ---------------------------------------------------------------------------
// 2. Gating

Check gating_property() {
  Check v;
  const auto& m = test::toy();
  const auto registry = AnalyzerRegistry::with_defaults();
  const ManualClock clock(0);
  std::mt19937 rng(2024);
  int compile_failures = 0, functional_failures = 0;
  for (int i = 0; i < 200 && v.pass; ++i) {
    const bool compiles = i % 2 == 0;
    const bool functional = (i / 2) % 2 == 0;
    std::string prog = "# variant " + std::to_string(rng()) + "\nread name\n";
    prog += rng() % 2 ? "eval \"echo hello $name\"\n" : "echo \"hello $name\"\n";
    if (!functional) prog += "echo extra\n";
    if (!compiles) prog += rng() % 2 ? "if then\n" : "while do done\n";

    auto w = materialize_workspace(m, {{"prog.sh", prog}});
    const auto report = run_pipeline(w, m, default_policy(), registry, clock);
    const auto vulns = match_vulnerabilities(collect_findings(report, registry), m);
    // A state where a hint would be due if the gate were open.
    auto state = fresh_state("p", m.id);
    state.submissions_since_last_hint = static_cast<int>(rng() % 10);
    const auto o = evaluate(report, vulns, state, 10'000'000, m, registry);

    const bool compile_ok = report.status(Stage::Compile) == SS::Passed;
    if (compile_ok != compiles) {
      v.fail(cat("workspace ", i, ": compile status ", to_string(report.status(Stage::Compile))));
      break;
    }
    if (!compile_ok) {
      ++compile_failures;
      for (const auto s : kStageOrder)
        if (s != Stage::Compile && report.status(s) != SS::Skipped)
          v.fail(cat("workspace ", i, ": ", to_string(s), " ran after a compile failure"));
      if (o.hint_issued() || o.verdict != sifu::Verdict::Rejected || o.reason != RejectReason::CompileError)
        v.fail(cat("workspace ", i, ": compile failure not rejected without hint"));
      continue;
    }
    if (report.status(Stage::UnitFunctional) != SS::Passed) {
      ++functional_failures;
      if (o.hint_issued() || o.verdict != sifu::Verdict::Rejected || o.reason != RejectReason::FunctionalFailure)
        v.fail(cat("workspace ", i, ": functional failure not Rejected(FunctionalFailure) without hint"));
    } else if (!functional) {
      v.fail(cat("workspace ", i, ": broken program passed the functional test"));
    }
  }
  if (v.pass)
    v.detail = cat("200 workspaces, ", compile_failures, " compile failures, ", functional_failures,
                   " functional failures, zero violations");
  return v;
}

// ---------------------------------------------------------------------------
// 3. Ladder selection

Check ladder_selection() {
  Check v;
  std::mt19937 rng(77);
  long cases = 0;
  for (int assignment = 0; assignment < 100; ++assignment) {
    std::vector<int> prio(5);
    for (auto& p : prio) p = static_cast<int>(rng() % 4);  // small range forces ties
    const auto m = test::ladder_manifest(prio);
    for (int mask = 0; mask < 32; ++mask) {
      std::optional<int> best;
      std::vector<VulnerabilityInstance> vulns;
      for (int i = 0; i < 5; ++i) {
        if (!(mask & (1 << i))) continue;
        VulnerabilityInstance vi;
        vi.ladder_id = "l" + std::to_string(i);
        vulns.push_back(vi);
        if (!best || prio[i] > prio[*best]) best = i;
      }
      const std::optional<std::string> want =
          best ? std::optional<std::string>("l" + std::to_string(*best)) : std::nullopt;
      for (int shuffle = 0; shuffle < 4; ++shuffle) {
        std::shuffle(vulns.begin(), vulns.end(), rng);
        ++cases;
        if (select_ladder(vulns, m) != want) {
          v.fail(cat("mask ", mask, " assignment ", assignment, " disagrees with argmax"));
          return v;
        }
      }
    }
  }
  v.detail = cat(cases, " selections (32 subsets x 100 assignments x 4 orders), zero mismatches");
  return v;
}

// ---------------------------------------------------------------------------
// 4 and 5. Random coach traces

struct TraceStats {
  long hints = 0;
  long backoff_violations = 0;
  long monotonic_violations = 0;
  std::string first_problem;
};

TraceStats run_traces(unsigned seed, int traces, int events) {
  const auto& m = test::ub_values();
  const auto registry = AnalyzerRegistry::with_defaults();
  std::mt19937 rng(seed);
  TraceStats st;
  for (int t = 0; t < traces; ++t) {
    auto s = fresh_state("p" + std::to_string(t), m.id);
    EpochMs now = 1'000'000;
    std::optional<std::pair<EpochMs, int>> last;
    std::map<std::string, int> level;
    for (int e = 0; e < events; ++e) {
      now += static_cast<EpochMs>(rng() % 150'000);
      std::map<Stage, SS> statuses;
      switch (rng() % 8) {
        case 0: statuses[Stage::Compile] = SS::Failed; break;
        case 1: statuses[Stage::UnitFunctional] = SS::Failed; break;
        default: statuses[Stage::SAST] = SS::Failed;
      }
      std::vector<VulnerabilityInstance> vulns;
      for (const auto& l : m.ladders) {
        if (rng() % 3 == 0) continue;
        VulnerabilityInstance vi;
        vi.ladder_id = l.ladder_id;
        vi.captures = {{"symbol", "i"}, {"array", "Values"}, {"check", "i<4"}, {"file", "src/values.c"}};
        vi.guideline = m.guidelines.at(l.guideline);
        vulns.push_back(vi);
      }
      const auto o = evaluate(test::report_with(m.id, statuses), vulns, s, now, m, registry);
      if (const auto h = o.hint_issued()) {
        ++st.hints;
        if (last && (now - last->first < 240'000 || e - last->second < 3)) {
          ++st.backoff_violations;
          if (st.first_problem.empty())
            st.first_problem = cat("trace ", t, " event ", e, ": dt=", now - last->first, " ms, ds=", e - last->second);
        }
        last = {now, e};
        if (h->second != level[h->first] + 1) {
          ++st.monotonic_violations;
          if (st.first_problem.empty())
            st.first_problem = cat("trace ", t, ": ladder ", h->first, " jumped to ", h->second);
        }
        level[h->first] = h->second;
      }
      s = o.state_after;
    }
  }
  return st;
}

Check backoff_property() {
  Check v;
  const auto st = run_traces(404, 1000, 1000);
  if (st.backoff_violations) v.fail(cat(st.backoff_violations, " violations; ", st.first_problem));
  else v.detail = cat("1000 traces x 1000 events, ", st.hints, " hints, zero violations");
  return v;
}

Check monotonicity_property() {
  Check v;
  const auto st = run_traces(505, 1000, 200);
  if (st.monotonic_violations) v.fail(cat(st.monotonic_violations, " violations; ", st.first_problem));
  else v.detail = cat("1000 traces, ", st.hints, " hints, levels always 1..k");
  return v;
}

// ---------------------------------------------------------------------------
// 6. Sandbox liveness

Check sandbox_liveness() {
  Check v;
  test::TempDir ws;
  SandboxPolicy p;
  p.wall_clock_limit = 2.0;
  std::ostringstream detail;
  for (const auto& [name, source] : {std::pair<std::string, const char*>{"loop", test::kLoopSource},
                                     std::pair<std::string, const char*>{"forker", test::kForkSource}}) {
    const auto bin = test::compile_program(ws.path(), name, source);
    const auto o = run_sandboxed(CommandSpec{{bin.string()}, {}, {}, std::nullopt}, ws.path(), p);
    if (!o.exit_status.is_killed(KillReason::TimeLimit))
      v.fail(cat(name, ": ", o.exit_status.describe()));
    else if (o.duration > 3.0)
      v.fail(cat(name, ": took ", o.duration, " s"));
    detail << name << " killed after " << o.duration << " s; ";
  }
  const auto net = test::compile_program(ws.path(), "net", test::kNetSource);
  test::LoopbackObserver observer;
  const auto o = run_sandboxed(CommandSpec{{net.string(), std::to_string(observer.port())}, {}, {}, std::nullopt},
                               ws.path(), p);
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  if (observer.bytes() != 0) v.fail(cat("observer received ", observer.bytes(), " bytes"));
  detail << "network program " << o.exit_status.describe() << ", observer received " << observer.bytes()
         << " bytes";
  if (v.pass) v.detail = detail.str();
  return v;
}

// ---------------------------------------------------------------------------
// 7. Normalization fixtures

Check normalization_fixtures() {
  Check v;
  const auto registry = AnalyzerRegistry::with_defaults();
  int total = 0;
  for (const auto& e : fixtures::expected_fixtures()) {
    auto got = registry.normalize({e.format, test::read_file(test::fixture(e.file))}, {fixtures::kRoot});
    auto want = e.findings;
    std::sort(got.begin(), got.end(), FindingLess{});
    std::sort(want.begin(), want.end(), FindingLess{});
    if (got != want) v.fail(cat(e.file, ": ", got.size(), " findings, expected ", want.size()));
    total += static_cast<int>(want.size());
  }
  if (v.pass) v.detail = cat("5 adapters, ", total, " findings, exact match");
  return v;
}

// ---------------------------------------------------------------------------
// 8. Aggregation

Check aggregation() {
  Check v;
  test::TempDir dir;
  auto store = open_sqlite_store(dir / "agg.db");
  store->upsert_challenge("c", "C", 1);
  const std::vector<int> answers = {5, 4, 5, 4};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const auto p = "p" + std::to_string(i);
    store->add_player({p, p, 0});
    store->record_rating({p, "c", answers[i], 3, 3, 0});
  }
  const auto a = store->aggregate("Q1");
  if (a.n != 4 || std::abs(a.mean - 4.5) > 1e-12 || std::abs(a.stddev - 0.577) > 0.001)
    v.fail(cat("mean ", a.mean, " sd ", a.stddev, " n ", a.n));
  else v.detail = cat("mean ", a.mean, ", sample sd ", a.stddev);
  return v;
}

// ---------------------------------------------------------------------------
// 9. Determinism

Check determinism() {
  Check v;
  test::TempDir dir;
  const auto& m = test::ub_values();
  for (const auto& f : m.files)
    if (f.editable) test::write_file(dir / "sub" / f.path, f.content);
  const auto args = "assess --json --clock-fixed 1700000000000 --bundle '" +
                    (test::source_dir() / "challenges" / "ub-values").string() + "' --submission '" +
                    (dir / "sub").string() + "'";
  const auto a = test::run_cli(args + " --out '" + (dir / "a.json").string() + "'");
  const auto b = test::run_cli(args + " --out '" + (dir / "b.json").string() + "'");
  const auto ja = test::read_file(dir / "a.json"), jb = test::read_file(dir / "b.json");
  if (a.status != 0 || b.status != 0) v.fail(cat("exit status ", a.status, "/", b.status));
  else if (ja.empty()) v.fail("empty output");
  else if (ja != jb) v.fail("outputs differ");
  else v.detail = cat("two runs, ", ja.size(), " identical bytes");
  return v;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<const char*, Check (*)()>> criteria = {
      {"reference challenge end to end", reference_end_to_end},
      {"gating", gating_property},
      {"ladder selection", ladder_selection},
      {"hint back-off", backoff_property},
      {"hint monotonicity", monotonicity_property},
      {"sandbox liveness", sandbox_liveness},
      {"normalization fixtures", normalization_fixtures},
      {"aggregation", aggregation},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.fail(cat("exception: ", e.what()));
    }
    failed += !v.pass;
    std::cout << "criterion " << i + 1 << " " << (v.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return failed ? 1 : 0;
}
