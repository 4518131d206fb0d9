#include "sifu/engine.hpp"

#include <spdlog/spdlog.h>

#include "sifu/crypto.hpp"
#include "sifu/json_io.hpp"
#include "sifu/vulnerability.hpp"
#include "sifu/workspace.hpp"

namespace fs = std::filesystem;

namespace sifu {

std::vector<ChallengeManifest> load_catalog(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error("bundle directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> sources;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) sources.push_back(e.path());
    else if (e.is_regular_file() && e.path().extension() == ".tar") sources.push_back(e.path());
  }
  std::sort(sources.begin(), sources.end());
  std::vector<ChallengeManifest> out;
  std::set<std::string> ids;
  for (const auto& s : sources) {
    try {
      out.push_back(load_bundle(s));
    } catch (const Error& e) {
      throw Error("bundle '" + s.string() + "': " + e.what());
    }
    if (!ids.insert(out.back().id).second) throw Error("duplicate challenge id '" + out.back().id + "'");
  }
  return out;
}

Engine::Engine(std::vector<ChallengeManifest> catalog, Store& store, const Clock& clock, EngineOptions options)
    : catalog_(std::move(catalog)),
      store_(store),
      clock_(clock),
      options_(std::move(options)),
      registry_(AnalyzerRegistry::with_defaults()),
      pool_(options_.workers) {
  if (options_.workspace_dir.empty()) options_.workspace_dir = default_workspace_base();
  for (const auto& m : catalog_) store_.upsert_challenge(m.id, m.title, m.points);
}

const ChallengeManifest& Engine::challenge(const std::string& id) const {
  for (const auto& m : catalog_)
    if (m.id == id) return m;
  throw UnknownChallenge("unknown challenge '" + id + "'");
}

SessionRecord Engine::create_session(const std::string& display_name) {
  PlayerRecord p{"p-" + crypto::random_token(8), display_name, clock_.now()};
  store_.add_player(p);
  SessionRecord s{crypto::random_token(24), p.player_id, clock_.now() + options_.session_ttl_s * 1000};
  store_.put_session(s);
  return s;
}

std::string Engine::authenticate(const std::string& token) const {
  if (token.empty()) throw Unauthorized("missing session token");
  auto s = store_.find_session(token);
  if (!s || s->expires_at <= clock_.now()) throw Unauthorized("invalid or expired session");
  return s->player_id;
}

std::mutex& Engine::key_mutex(const std::string& player_id, const std::string& challenge_id) {
  std::lock_guard lock(keys_mu_);
  auto& slot = key_mutexes_[player_id + '\n' + challenge_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

CoachState Engine::state_of(const std::string& player_id, const std::string& challenge_id) {
  return store_.player_state(player_id, challenge_id).value_or(fresh_state(player_id, challenge_id));
}

SubmitResult Engine::submit(const std::string& session, const std::string& player_id,
                            const std::string& challenge_id, const Edits& edits) {
  const auto& m = challenge(challenge_id);
  {
    std::lock_guard lock(in_flight_mu_);
    if (!in_flight_.insert(session).second) throw RateLimited("a submission is already being assessed");
  }
  struct Release {
    Engine& e;
    const std::string& key;
    ~Release() {
      std::lock_guard lock(e.in_flight_mu_);
      e.in_flight_.erase(key);
    }
  } release{*this, session};

  // Edits are checked before anything is queued.
  plan_workspace(m, edits);
  const auto policy = m.effective_policy(options_.policy);
  auto job = pool_.submit([&]() {
    auto w = materialize_workspace(m, edits, options_.workspace_dir);
    return run_pipeline(w, m, policy, registry_, clock_);
  });
  SubmitResult result;
  result.report = job.get();

  const auto findings = collect_findings(result.report, registry_);
  const auto vulns = match_vulnerabilities(findings, m);

  std::lock_guard commit_lock(key_mutex(player_id, challenge_id));
  const auto state = state_of(player_id, challenge_id);
  const auto now = clock_.now();
  result.outcome = evaluate(result.report, vulns, state, now, m, registry_);

  SubmissionRecord rec;
  rec.player_id = player_id;
  rec.challenge_id = challenge_id;
  rec.submitted_at = now;
  rec.content_hash = result.report.workspace_hash;
  rec.pipeline_summary = stage_summary(result.report);
  rec.verdict = to_string(result.outcome.verdict);
  if (result.outcome.reason) rec.reason = to_string(*result.outcome.reason);
  rec.hint_issued = result.outcome.hint_issued();
  const auto commit = store_.commit_evaluation(rec, result.outcome.state_after);
  result.submission_id = commit.submission_id;
  result.points_awarded = commit.first_solve;
  spdlog::info("submission {} player={} challenge={} verdict={}{}", commit.submission_id, player_id, challenge_id,
               rec.verdict, rec.hint_issued ? " hint=" + std::to_string(rec.hint_issued->second) : "");
  return result;
}

void Engine::rate(const std::string& player_id, const std::string& challenge_id, int q1, int q2, int q3) {
  challenge(challenge_id);
  store_.record_rating({player_id, challenge_id, q1, q2, q3, clock_.now()});
}

void Engine::survey(const std::string& player_id, const std::array<int, 9>& answers) {
  store_.record_survey({player_id, answers, clock_.now()});
}

void Engine::report(const std::string& player_id, const std::string& challenge_id, const std::string& text) {
  challenge(challenge_id);
  store_.record_report({player_id, challenge_id, text, clock_.now()});
}

Json submit_response(const SubmitResult& r, const ChallengeManifest& m) {
  const auto& o = r.outcome;
  Json j{{"submission_id", r.submission_id},
         {"verdict", to_string(o.verdict)},
         {"reason", o.reason ? Json(to_string(*o.reason)) : Json()},
         {"diagnostics", o.diagnostics},
         {"stages", stage_summary(r.report)},
         {"hint", nullptr},
         {"solved_page", nullptr},
         {"flag", nullptr},
         {"points_awarded", r.points_awarded ? m.points : 0}};
  if (o.verdict == Verdict::Solved) {
    j["solved_page"] = m.solve_discussion;
    j["flag"] = *o.flag;
  } else if (o.feedback) {
    Json hint{{"text", o.feedback->text}, {"withheld", o.feedback->withheld}};
    hint["level"] = o.feedback->level ? Json(*o.feedback->level) : Json();
    if (o.feedback->wait_seconds) hint["wait_seconds"] = *o.feedback->wait_seconds;
    if (o.feedback->submissions_needed) hint["submissions_needed"] = *o.feedback->submissions_needed;
    j["hint"] = std::move(hint);
  }
  return j;
}

Json files_view(const ChallengeManifest& m) {
  Json files = Json::array();
  for (const auto& f : m.files) files.push_back({{"path", f.path}, {"content", f.content}, {"editable", f.editable}});
  return Json{{"challenge_id", m.id}, {"files", files}};
}

}  // namespace sifu
