// sifu: serve the game, validate bundles, assess submissions offline,
// replay coach traces, export the database.
//
// Exit codes: 0 ok, 1 domain failure, 2 usage or configuration, 3 environment.

#include <signal.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "sifu/coach.hpp"
#include "sifu/config.hpp"
#include "sifu/engine.hpp"
#include "sifu/http_server.hpp"
#include "sifu/json_io.hpp"
#include "sifu/pipeline.hpp"
#include "sifu/store.hpp"
#include "sifu/vulnerability.hpp"
#include "sifu/workspace.hpp"

namespace fs = std::filesystem;
using namespace sifu;

namespace {

enum Exit { kOk = 0, kDomain = 1, kUsage = 2, kEnvironment = 3 };

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to --out if given, else stdout.
void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw ConfigError("cannot write '" + out_path + "'");
}

bool bundle_present(const fs::path& p) {
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) return true;
  if (!fs::is_directory(p, ec)) return false;
  if (fs::exists(p / "manifest.json")) return true;
  // A single wrapper directory is accepted as well.
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) return true;
  return false;
}

ChallengeManifest load_bundle_or_exit(const fs::path& p) {
  if (!bundle_present(p)) {
    std::cerr << "error: no bundle manifest at '" << p.string() << "'\n";
    std::exit(kUsage);
  }
  return load_bundle(p);
}

/// Submission directory -> edits. Unchanged read-only files are ignored.
Edits read_submission(const ChallengeManifest& m, const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError("submission '" + dir.string() + "' is not a directory");
  Edits edits;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    const auto content = slurp(e.path());
    const auto* spec = m.find_file(rel);
    if (spec && !spec->editable && spec->content == content) continue;
    edits[rel] = content;
  }
  return edits;
}

// ---------------------------------------------------------------------------
// serve

int cmd_serve(const std::string& config_path) {
  ServiceConfig cfg;
  std::vector<ChallengeManifest> catalog;
  try {
    cfg = config_path.empty() ? config_from_environment({}) : load_config(config_path);
    catalog = load_catalog(cfg.bundle_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  std::unique_ptr<Store> store;
  try {
    store = open_sqlite_store(cfg.database);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEnvironment;
  }

  // Handle shutdown signals on a dedicated thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SystemClock clock;
  EngineOptions opts;
  opts.policy = cfg.sandbox;
  opts.workers = cfg.workers;
  opts.session_ttl_s = cfg.session_ttl_s;
  if (cfg.workspace_dir) opts.workspace_dir = *cfg.workspace_dir;
  Engine engine(std::move(catalog), *store, clock, opts);
  HttpServer server(engine, cfg.static_dir);
  if (!server.bind(cfg.bind_address, cfg.port)) {
    std::cerr << "error: cannot listen on " << cfg.bind_address << ":" << cfg.port << "\n";
    return kEnvironment;
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}; shutting down", sig);
    server.stop();
  });
  spdlog::info("listening on {}:{} with {} challenge(s)", cfg.bind_address, server.port(), engine.catalog().size());
  const bool ok = server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return ok ? kOk : kEnvironment;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const std::string& bundle, bool json) {
  if (!bundle_present(bundle)) {
    std::cerr << "error: no bundle manifest at '" << bundle << "'\n";
    return kUsage;
  }
  try {
    const auto m = load_bundle(bundle);
    if (json) std::cout << dump_json(Json{{"id", m.id}, {"violations", Json::array()}}) << "\n";
    else std::cout << "ok: " << m.id << " (" << m.ladders.size() << " ladders)\n";
    return kOk;
  } catch (const ValidationError& e) {
    if (json) {
      Json list = Json::array();
      for (const auto& v : e.violations()) list.push_back({{"code", v.code}, {"path", v.path}, {"message", v.message}});
      std::cout << dump_json(Json{{"violations", list}}) << "\n";
    } else {
      for (const auto& v : e.violations()) std::cout << v.code << " " << v.path << ": " << v.message << "\n";
    }
    return kDomain;
  } catch (const ParseError& e) {
    std::cout << "ParseError: " << e.what() << "\n";
    return kDomain;
  }
}

// ---------------------------------------------------------------------------
// assess

Json assessment_json(const PipelineReport& report, const std::vector<VulnerabilityInstance>& vulns,
                     const CoachOutcome& outcome, const AnalyzerRegistry& registry) {
  Json stages = Json::array();
  for (const auto& s : report.stages)
    stages.push_back({{"stage", to_string(s.stage)},
                      {"status", to_string(s.status)},
                      {"duration", s.duration},
                      {"notes", s.notes},
                      {"findings", stage_findings(report, s.stage, registry)}});
  Json vj = Json::array();
  for (const auto& v : vulns)
    vj.push_back({{"ladder_id", v.ladder_id}, {"captures", v.captures}, {"guideline", v.guideline}});
  return Json{{"challenge_id", report.challenge_id},
              {"workspace_hash", report.workspace_hash},
              {"gated_at", report.gated_at ? Json(to_string(*report.gated_at)) : Json()},
              {"stages", stages},
              {"vulnerabilities", vj},
              {"outcome", outcome}};
}

std::string assessment_text(const PipelineReport& report, const CoachOutcome& o, const AnalyzerRegistry& registry) {
  std::ostringstream out;
  out << "challenge " << report.challenge_id << "  " << report.workspace_hash << "\n";
  for (const auto& s : report.stages) {
    out << "  " << to_string(s.stage) << std::string(16 - to_string(s.stage).size(), ' ') << to_string(s.status);
    if (s.status != StageStatus::Skipped) {
      const auto n = stage_findings(report, s.stage, registry).size();
      if (n) out << "  (" << n << " finding" << (n == 1 ? "" : "s") << ")";
    }
    out << "\n";
  }
  out << "verdict: " << to_string(o.verdict);
  if (o.reason) out << " (" << to_string(*o.reason) << ")";
  out << "\n";
  for (const auto& d : o.diagnostics) out << "  " << d << "\n";
  if (o.flag) out << "flag: " << *o.flag << "\n";
  if (o.feedback) {
    if (o.verdict == Verdict::Solved) out << "\n" << o.feedback->text << "\n";
    else if (o.feedback->withheld) out << "hint withheld: " << o.feedback->text << "\n";
    else if (o.feedback->level) out << "hint (level " << *o.feedback->level << "): " << o.feedback->text << "\n";
    else out << "feedback: " << o.feedback->text << "\n";
  }
  return out.str();
}

struct AssessArgs {
  std::string bundle, submission, out, state_file, record, player = "offline";
  bool json = false;
  std::optional<std::int64_t> clock_fixed;
};

int cmd_assess(const AssessArgs& a) {
  const auto m = load_bundle_or_exit(a.bundle);
  const auto edits = read_submission(m, a.submission);

  std::unique_ptr<Clock> clock;
  if (a.clock_fixed) clock = std::make_unique<ManualClock>(*a.clock_fixed);
  else clock = std::make_unique<SystemClock>();

  CoachState state = fresh_state(a.player, m.id);
  if (!a.state_file.empty() && fs::exists(a.state_file)) state = Json::parse(slurp(a.state_file)).get<CoachState>();

  const auto registry = AnalyzerRegistry::with_defaults();
  PipelineReport report;
  {
    auto w = materialize_workspace(m, edits);
    report = run_pipeline(w, m, m.effective_policy(default_policy()), registry, *clock);
  }
  const auto findings = collect_findings(report, registry);
  const auto vulns = match_vulnerabilities(findings, m);
  const auto now = clock->now();
  const auto outcome = evaluate(report, vulns, state, now, m, registry);

  if (!a.state_file.empty()) {
    std::ofstream out(a.state_file, std::ios::trunc);
    out << dump_json(Json(outcome.state_after), 2) << "\n";
  }
  if (!a.record.empty()) {
    std::ofstream out(a.record, std::ios::app);
    out << dump_json(Json{{"at", now}, {"player_id", state.player_id}, {"stages", stage_summary(report)},
                          {"findings", findings}})
        << "\n";
  }
  emit(a.json ? dump_json(assessment_json(report, vulns, outcome, registry), 2) + "\n"
              : assessment_text(report, outcome, registry),
       a.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// replay

class CorruptTrace : public Error {
 public:
  using Error::Error;
};

/// Trace: one JSON object per line, {"at", "player_id", "stages": {stage: status}, "findings": [...]},
/// as written by `assess --record`.
CoachState replay(const ChallengeManifest& m, std::istream& in) {
  std::optional<CoachState> state;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json ev = Json::parse(line);
      const auto player = ev.at("player_id").get<std::string>();
      if (!state) state = fresh_state(player, m.id);
      if (player != state->player_id) throw CorruptTrace("trace mixes players");
      PipelineReport report;
      report.challenge_id = m.id;
      for (const auto s : kStageOrder) {
        StageResult r;
        r.stage = s;
        r.status = stage_status_from_string(ev.at("stages").at(to_string(s)).get<std::string>());
        report.stages.push_back(std::move(r));
      }
      if (report.status(Stage::Compile) != StageStatus::Passed) report.gated_at = Stage::Compile;
      const auto findings = ev.at("findings").get<std::vector<Finding>>();
      const auto vulns = match_vulnerabilities(findings, m);
      static const auto registry = AnalyzerRegistry::with_defaults();
      state = evaluate(report, vulns, *state, ev.at("at").get<EpochMs>(), m, registry).state_after;
    } catch (const Json::exception& e) {
      throw CorruptTrace("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw CorruptTrace("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return state.value_or(fresh_state("offline", m.id));
}

int cmd_replay(const std::string& trace, const std::string& bundle, const std::string& out) {
  const auto m = load_bundle_or_exit(bundle);
  std::ifstream in(trace);
  if (!in) {
    std::cerr << "error: cannot read trace '" << trace << "'\n";
    return kUsage;
  }
  try {
    emit(dump_json(Json(replay(m, in)), 2) + "\n", out);
    return kOk;
  } catch (const CorruptTrace& e) {
    std::cerr << "error: corrupt trace: " << e.what() << "\n";
    return kDomain;
  }
}

// ---------------------------------------------------------------------------
// export / stats

std::unique_ptr<Store> open_from(const std::string& config, const std::string& database) {
  fs::path db = database;
  if (db.empty()) db = config.empty() ? config_from_environment({}).database : load_config(config).database;
  if (!fs::exists(db)) throw ConfigError("database '" + db.string() + "' does not exist");
  return open_sqlite_store(db);
}

int cmd_export(const std::string& config, const std::string& database, const std::string& out) {
  auto store = open_from(config, database);
  std::ostringstream ss;
  store->export_ndjson(ss);
  emit(ss.str(), out);
  return kOk;
}

int cmd_stats(const std::string& config, const std::string& database) {
  auto store = open_from(config, database);
  std::vector<std::string> questions = {"Q1", "Q2", "Q3"};
  for (int i = 1; i <= 9; ++i) questions.push_back("F" + std::to_string(i));
  for (const auto& q : questions) {
    try {
      const auto a = store->aggregate(q);
      std::cout << q << " mean=" << a.mean << " sd=" << a.stddev << " n=" << a.n << "\n";
    } catch (const NoData&) {
      std::cout << q << " n=0\n";
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Secure-coding challenge engine"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  std::string config;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", config, "JSON config file");

  std::string bundle;
  bool json = false;
  auto* validate = app.add_subcommand("validate", "Check a challenge bundle");
  validate->add_option("--bundle,bundle", bundle, "Bundle directory or .tar")->required();
  validate->add_flag("--json", json, "Machine-readable output");

  AssessArgs assess_args;
  std::int64_t clock_fixed = 0;
  auto* assess = app.add_subcommand("assess", "Assess one submission with a fresh coach state");
  assess->add_option("--bundle", assess_args.bundle, "Bundle directory or .tar")->required();
  assess->add_option("--submission", assess_args.submission, "Directory with the player's files")->required();
  assess->add_flag("--json", assess_args.json, "Machine-readable output");
  assess->add_option("--out", assess_args.out, "Write the result here instead of stdout");
  auto* fixed_opt = assess->add_option("--clock-fixed", clock_fixed, "Simulated clock (epoch ms)");
  assess->add_option("--state", assess_args.state_file, "Coach state file, read if present and rewritten");
  assess->add_option("--record", assess_args.record, "Append a replayable event to this trace file");
  assess->add_option("--player", assess_args.player, "Player id used for the flag");

  std::string trace, out;
  auto* replay_cmd = app.add_subcommand("replay", "Rebuild the coach state from a trace");
  replay_cmd->add_option("trace", trace, "Trace file (NDJSON)")->required();
  replay_cmd->add_option("--bundle", bundle, "Bundle the trace belongs to")->required();
  replay_cmd->add_option("--out", out, "Write the state here instead of stdout");

  std::string database;
  auto* export_cmd = app.add_subcommand("export", "Dump every record as NDJSON");
  export_cmd->add_option("--config", config, "Service config (for the database path)");
  export_cmd->add_option("--database", database, "Database file");
  export_cmd->add_option("--out", out, "Output file");

  auto* stats = app.add_subcommand("stats", "Mean and sample deviation of rating and survey answers");
  stats->add_option("--config", config, "Service config (for the database path)");
  stats->add_option("--database", database, "Database file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_default_logger(spdlog::stderr_color_mt("sifu"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve) return cmd_serve(config);
    if (*validate) return cmd_validate(bundle, json);
    if (*assess) {
      if (*fixed_opt) assess_args.clock_fixed = clock_fixed;
      return cmd_assess(assess_args);
    }
    if (*replay_cmd) return cmd_replay(trace, bundle, out);
    if (*export_cmd) return cmd_export(config, database, out);
    if (*stats) return cmd_stats(config, database);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InfrastructureError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEnvironment;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  }
  return kUsage;
}
