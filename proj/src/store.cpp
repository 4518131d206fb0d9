#include "sifu/store.hpp"

#include <sqlite3.h>

#include <cmath>
#include <mutex>

#include "sifu/error.hpp"
#include "sifu/json_io.hpp"

namespace sifu {

Aggregate aggregate_values(const std::vector<int>& values) {
  if (values.empty()) throw NoData("no responses recorded");
  Aggregate a;
  a.n = static_cast<int>(values.size());
  double sum = 0;
  for (int v : values) sum += v;
  a.mean = sum / a.n;
  if (a.n > 1) {
    double sq = 0;
    for (int v : values) sq += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(sq / (a.n - 1));
  }
  return a;
}

void to_json(Json& j, const SubmissionRecord& r) {
  j = Json{{"id", r.id},
           {"player_id", r.player_id},
           {"challenge_id", r.challenge_id},
           {"submitted_at", r.submitted_at},
           {"content_hash", r.content_hash},
           {"pipeline_summary", r.pipeline_summary},
           {"verdict", r.verdict},
           {"reason", r.reason ? Json(*r.reason) : Json()},
           {"hint_issued", r.hint_issued ? Json{{"ladder_id", r.hint_issued->first}, {"level", r.hint_issued->second}}
                                         : Json()}};
}

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS players (
  player_id TEXT PRIMARY KEY,
  display_name TEXT NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
  token TEXT PRIMARY KEY,
  player_id TEXT NOT NULL REFERENCES players(player_id),
  expires_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS challenges (
  challenge_id TEXT PRIMARY KEY,
  title TEXT NOT NULL,
  points INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS submissions (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  player_id TEXT NOT NULL,
  challenge_id TEXT NOT NULL,
  submitted_at INTEGER NOT NULL,
  content_hash TEXT NOT NULL,
  pipeline_summary TEXT NOT NULL,
  verdict TEXT NOT NULL,
  reason TEXT,
  hint_ladder TEXT,
  hint_level INTEGER
);
CREATE TRIGGER IF NOT EXISTS submissions_no_update BEFORE UPDATE ON submissions
  BEGIN SELECT RAISE(ABORT, 'submissions are append-only'); END;
CREATE TRIGGER IF NOT EXISTS submissions_no_delete BEFORE DELETE ON submissions
  BEGIN SELECT RAISE(ABORT, 'submissions are append-only'); END;
CREATE TABLE IF NOT EXISTS ratings (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  player_id TEXT NOT NULL,
  challenge_id TEXT NOT NULL,
  q1 INTEGER NOT NULL, q2 INTEGER NOT NULL, q3 INTEGER NOT NULL,
  submitted_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS surveys (
  player_id TEXT PRIMARY KEY,
  f1 INTEGER NOT NULL, f2 INTEGER NOT NULL, f3 INTEGER NOT NULL,
  f4 INTEGER NOT NULL, f5 INTEGER NOT NULL, f6 INTEGER NOT NULL,
  f7 INTEGER NOT NULL, f8 INTEGER NOT NULL, f9 INTEGER NOT NULL,
  submitted_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS reports (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  player_id TEXT NOT NULL,
  challenge_id TEXT NOT NULL,
  text TEXT NOT NULL,
  submitted_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS coach_states (
  player_id TEXT NOT NULL,
  challenge_id TEXT NOT NULL,
  state TEXT NOT NULL,
  PRIMARY KEY (player_id, challenge_id)
);
CREATE TABLE IF NOT EXISTS solves (
  player_id TEXT NOT NULL,
  challenge_id TEXT NOT NULL,
  solved_at INTEGER NOT NULL,
  PRIMARY KEY (player_id, challenge_id)
);
)sql";

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw Error(std::string("sqlite prepare: ") + sqlite3_errmsg(db));
  }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  ~Statement() { sqlite3_finalize(stmt_); }

  Statement& bind(int i, const std::string& v) {
    sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  Statement& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Statement& bind_null(int i) {
    sqlite3_bind_null(stmt_, i);
    return *this;
  }

  /// true while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(std::string("sqlite step: ") + sqlite3_errmsg(db_));
  }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p), sqlite3_column_bytes(stmt_, col)) : std::string();
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void check_likert(int v, const std::string& what) {
  if (v < 1 || v > 5) throw InvalidLikert(what + " must be between 1 and 5, got " + std::to_string(v));
}

class SqliteStore final : public Store {
 public:
  explicit SqliteStore(const std::filesystem::path& path) {
    if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw Error("cannot open store '" + path.string() + "': " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA synchronous=FULL");
    exec("PRAGMA foreign_keys=ON");
    exec(kSchema);
  }
  ~SqliteStore() override { sqlite3_close(db_); }

  void add_player(const PlayerRecord& p) override {
    std::lock_guard lock(mu_);
    Statement st(db_, "INSERT OR REPLACE INTO players(player_id, display_name, created_at) VALUES (?,?,?)");
    st.bind(1, p.player_id).bind(2, p.display_name).bind(3, p.created_at).step();
  }

  std::optional<PlayerRecord> find_player(const std::string& player_id) override {
    std::lock_guard lock(mu_);
    Statement st(db_, "SELECT player_id, display_name, created_at FROM players WHERE player_id = ?");
    st.bind(1, player_id);
    if (!st.step()) return std::nullopt;
    return PlayerRecord{st.text(0), st.text(1), st.integer(2)};
  }

  void upsert_challenge(const std::string& id, const std::string& title, int points) override {
    std::lock_guard lock(mu_);
    Statement st(db_,
                 "INSERT INTO challenges(challenge_id, title, points) VALUES (?,?,?) "
                 "ON CONFLICT(challenge_id) DO UPDATE SET title = excluded.title, points = excluded.points");
    st.bind(1, id).bind(2, title).bind(3, points).step();
  }

  void put_session(const SessionRecord& s) override {
    std::lock_guard lock(mu_);
    require_player(s.player_id);
    Statement st(db_, "INSERT OR REPLACE INTO sessions(token, player_id, expires_at) VALUES (?,?,?)");
    st.bind(1, s.token).bind(2, s.player_id).bind(3, s.expires_at).step();
  }

  std::optional<SessionRecord> find_session(const std::string& token) override {
    std::lock_guard lock(mu_);
    Statement st(db_, "SELECT token, player_id, expires_at FROM sessions WHERE token = ?");
    st.bind(1, token);
    if (!st.step()) return std::nullopt;
    return SessionRecord{st.text(0), st.text(1), st.integer(2)};
  }

  std::int64_t append_submission(const SubmissionRecord& rec) override {
    std::lock_guard lock(mu_);
    Transaction tx(*this);
    const auto id = insert_submission(rec);
    tx.commit();
    return id;
  }

  std::vector<SubmissionRecord> submissions(const std::optional<std::string>& player_id,
                                            const std::optional<std::string>& challenge_id) override {
    std::lock_guard lock(mu_);
    Statement st(db_,
                 "SELECT id, player_id, challenge_id, submitted_at, content_hash, pipeline_summary, verdict, reason, "
                 "hint_ladder, hint_level FROM submissions "
                 "WHERE (?1 IS NULL OR player_id = ?1) AND (?2 IS NULL OR challenge_id = ?2) ORDER BY id");
    if (player_id) st.bind(1, *player_id); else st.bind_null(1);
    if (challenge_id) st.bind(2, *challenge_id); else st.bind_null(2);
    std::vector<SubmissionRecord> out;
    while (st.step()) {
      SubmissionRecord r;
      r.id = st.integer(0);
      r.player_id = st.text(1);
      r.challenge_id = st.text(2);
      r.submitted_at = st.integer(3);
      r.content_hash = st.text(4);
      r.pipeline_summary = Json::parse(st.text(5));
      r.verdict = st.text(6);
      if (!st.is_null(7)) r.reason = st.text(7);
      if (!st.is_null(8)) r.hint_issued = std::make_pair(st.text(8), static_cast<int>(st.integer(9)));
      out.push_back(std::move(r));
    }
    return out;
  }

  CommitResult commit_evaluation(const SubmissionRecord& rec, const CoachState& state) override {
    std::lock_guard lock(mu_);
    if (state.player_id != rec.player_id || state.challenge_id != rec.challenge_id)
      throw StateMismatch("coach state does not belong to the submission");
    Transaction tx(*this);
    CommitResult result;
    result.submission_id = insert_submission(rec);
    write_state(state);
    if (rec.verdict == "Solved") {
      Statement st(db_, "INSERT OR IGNORE INTO solves(player_id, challenge_id, solved_at) VALUES (?,?,?)");
      st.bind(1, rec.player_id).bind(2, rec.challenge_id).bind(3, rec.submitted_at).step();
      result.first_solve = sqlite3_changes(db_) > 0;
    }
    tx.commit();
    return result;
  }

  void record_rating(const RatingRecord& r) override {
    check_likert(r.q1, "q1");
    check_likert(r.q2, "q2");
    check_likert(r.q3, "q3");
    std::lock_guard lock(mu_);
    require_player(r.player_id);
    require_challenge(r.challenge_id);
    Statement st(db_, "INSERT INTO ratings(player_id, challenge_id, q1, q2, q3, submitted_at) VALUES (?,?,?,?,?,?)");
    st.bind(1, r.player_id).bind(2, r.challenge_id).bind(3, r.q1).bind(4, r.q2).bind(5, r.q3).bind(6, r.submitted_at);
    st.step();
  }

  std::vector<RatingRecord> ratings(const std::optional<std::string>& challenge_id) override {
    std::lock_guard lock(mu_);
    Statement st(db_,
                 "SELECT player_id, challenge_id, q1, q2, q3, submitted_at FROM ratings "
                 "WHERE ?1 IS NULL OR challenge_id = ?1 ORDER BY id");
    if (challenge_id) st.bind(1, *challenge_id); else st.bind_null(1);
    std::vector<RatingRecord> out;
    while (st.step())
      out.push_back({st.text(0), st.text(1), static_cast<int>(st.integer(2)), static_cast<int>(st.integer(3)),
                     static_cast<int>(st.integer(4)), st.integer(5)});
    return out;
  }

  void record_survey(const SurveyRecord& s) override {
    for (int i = 0; i < 9; ++i) check_likert(s.f[i], "f" + std::to_string(i + 1));
    std::lock_guard lock(mu_);
    require_player(s.player_id);
    Statement st(db_,
                 "INSERT OR REPLACE INTO surveys(player_id, f1, f2, f3, f4, f5, f6, f7, f8, f9, submitted_at) "
                 "VALUES (?,?,?,?,?,?,?,?,?,?,?)");
    st.bind(1, s.player_id);
    for (int i = 0; i < 9; ++i) st.bind(i + 2, s.f[i]);
    st.bind(11, s.submitted_at).step();
  }

  std::optional<SurveyRecord> survey_of(const std::string& player_id) override {
    std::lock_guard lock(mu_);
    Statement st(db_, "SELECT f1, f2, f3, f4, f5, f6, f7, f8, f9, submitted_at FROM surveys WHERE player_id = ?");
    st.bind(1, player_id);
    if (!st.step()) return std::nullopt;
    SurveyRecord s;
    s.player_id = player_id;
    for (int i = 0; i < 9; ++i) s.f[i] = static_cast<int>(st.integer(i));
    s.submitted_at = st.integer(9);
    return s;
  }

  void record_report(const ChallengeReport& r) override {
    if (r.text.find_first_not_of(" \t\r\n") == std::string::npos) throw Error("report text must not be empty");
    std::lock_guard lock(mu_);
    require_player(r.player_id);
    require_challenge(r.challenge_id);
    Statement st(db_, "INSERT INTO reports(player_id, challenge_id, text, submitted_at) VALUES (?,?,?,?)");
    st.bind(1, r.player_id).bind(2, r.challenge_id).bind(3, r.text).bind(4, r.submitted_at).step();
  }

  std::vector<ChallengeReport> reports() override {
    std::lock_guard lock(mu_);
    Statement st(db_, "SELECT player_id, challenge_id, text, submitted_at FROM reports ORDER BY id");
    std::vector<ChallengeReport> out;
    while (st.step()) out.push_back({st.text(0), st.text(1), st.text(2), st.integer(3)});
    return out;
  }

  std::optional<CoachState> player_state(const std::string& player_id, const std::string& challenge_id) override {
    std::lock_guard lock(mu_);
    Statement st(db_, "SELECT state FROM coach_states WHERE player_id = ? AND challenge_id = ?");
    st.bind(1, player_id).bind(2, challenge_id);
    if (!st.step()) return std::nullopt;
    return Json::parse(st.text(0)).get<CoachState>();
  }

  void save_state(const CoachState& s) override {
    std::lock_guard lock(mu_);
    write_state(s);
  }

  std::vector<ScoreEntry> scoreboard() override {
    std::lock_guard lock(mu_);
    Statement st(db_,
                 "SELECT p.player_id, p.display_name, COALESCE(SUM(c.points), 0), COUNT(c.challenge_id) "
                 "FROM players p LEFT JOIN solves s ON s.player_id = p.player_id "
                 "LEFT JOIN challenges c ON c.challenge_id = s.challenge_id "
                 "GROUP BY p.player_id ORDER BY 3 DESC, MIN(s.solved_at) ASC, p.player_id ASC");
    std::vector<ScoreEntry> out;
    while (st.step())
      out.push_back({st.text(0), st.text(1), static_cast<int>(st.integer(2)), static_cast<int>(st.integer(3))});
    return out;
  }

  Aggregate aggregate(const std::string& question) override {
    std::string sql;
    if (question.size() == 2 && question[0] == 'Q' && question[1] >= '1' && question[1] <= '3')
      sql = "SELECT q" + question.substr(1) + " FROM ratings";
    else if (question.size() == 2 && question[0] == 'F' && question[1] >= '1' && question[1] <= '9')
      sql = "SELECT f" + question.substr(1) + " FROM surveys";
    else
      throw Error("unknown question '" + question + "' (expected Q1-Q3 or F1-F9)");
    std::vector<int> values;
    {
      std::lock_guard lock(mu_);
      Statement st(db_, sql.c_str());
      while (st.step()) values.push_back(static_cast<int>(st.integer(0)));
    }
    if (values.empty()) throw NoData("no responses for " + question);
    return aggregate_values(values);
  }

  void export_ndjson(std::ostream& out) override {
    std::lock_guard lock(mu_);
    auto rows = [&](const char* type, const char* sql, auto&& to_row) {
      Statement st(db_, sql);
      while (st.step()) {
        Json j = to_row(st);
        j["type"] = type;
        out << dump_json(j) << '\n';
      }
    };
    rows("player", "SELECT player_id, display_name, created_at FROM players ORDER BY player_id", [](Statement& s) {
      return Json{{"player_id", s.text(0)}, {"display_name", s.text(1)}, {"created_at", s.integer(2)}};
    });
    rows("challenge", "SELECT challenge_id, title, points FROM challenges ORDER BY challenge_id", [](Statement& s) {
      return Json{{"challenge_id", s.text(0)}, {"title", s.text(1)}, {"points", s.integer(2)}};
    });
    rows("submission",
         "SELECT id, player_id, challenge_id, submitted_at, content_hash, pipeline_summary, verdict, reason, "
         "hint_ladder, hint_level FROM submissions ORDER BY id",
         [](Statement& s) {
           return Json{{"id", s.integer(0)},
                       {"player_id", s.text(1)},
                       {"challenge_id", s.text(2)},
                       {"submitted_at", s.integer(3)},
                       {"content_hash", s.text(4)},
                       {"pipeline_summary", Json::parse(s.text(5))},
                       {"verdict", s.text(6)},
                       {"reason", s.is_null(7) ? Json() : Json(s.text(7))},
                       {"hint_issued", s.is_null(8) ? Json() : Json{{"ladder_id", s.text(8)}, {"level", s.integer(9)}}}};
         });
    rows("rating", "SELECT player_id, challenge_id, q1, q2, q3, submitted_at FROM ratings ORDER BY id",
         [](Statement& s) {
           return Json{{"player_id", s.text(0)}, {"challenge_id", s.text(1)}, {"q1", s.integer(2)},
                       {"q2", s.integer(3)},     {"q3", s.integer(4)},           {"submitted_at", s.integer(5)}};
         });
    rows("survey", "SELECT player_id, f1, f2, f3, f4, f5, f6, f7, f8, f9, submitted_at FROM surveys ORDER BY player_id",
         [](Statement& s) {
           Json j{{"player_id", s.text(0)}, {"submitted_at", s.integer(10)}};
           for (int i = 1; i <= 9; ++i) j["f" + std::to_string(i)] = s.integer(i);
           return j;
         });
    rows("report", "SELECT player_id, challenge_id, text, submitted_at FROM reports ORDER BY id", [](Statement& s) {
      return Json{{"player_id", s.text(0)}, {"challenge_id", s.text(1)}, {"text", s.text(2)}, {"submitted_at", s.integer(3)}};
    });
    rows("coach_state", "SELECT state FROM coach_states ORDER BY player_id, challenge_id",
         [](Statement& s) { return Json{{"state", Json::parse(s.text(0))}}; });
    rows("solve", "SELECT player_id, challenge_id, solved_at FROM solves ORDER BY solved_at, player_id", [](Statement& s) {
      return Json{{"player_id", s.text(0)}, {"challenge_id", s.text(1)}, {"solved_at", s.integer(2)}};
    });
  }

 private:
  class Transaction {
   public:
    explicit Transaction(SqliteStore& s) : s_(s) { s_.exec("BEGIN IMMEDIATE"); }
    ~Transaction() {
      if (!done_) sqlite3_exec(s_.db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
      s_.exec("COMMIT");
      done_ = true;
    }

   private:
    SqliteStore& s_;
    bool done_ = false;
  };

  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw Error("sqlite: " + msg);
    }
  }

  bool exists(const char* sql, const std::string& key) {
    Statement st(db_, sql);
    st.bind(1, key);
    return st.step();
  }
  void require_player(const std::string& id) {
    if (!exists("SELECT 1 FROM players WHERE player_id = ?", id)) throw UnknownPlayer("unknown player '" + id + "'");
  }
  void require_challenge(const std::string& id) {
    if (!exists("SELECT 1 FROM challenges WHERE challenge_id = ?", id))
      throw UnknownChallenge("unknown challenge '" + id + "'");
  }

  std::int64_t insert_submission(const SubmissionRecord& rec) {
    require_player(rec.player_id);
    require_challenge(rec.challenge_id);
    Statement st(db_,
                 "INSERT INTO submissions(player_id, challenge_id, submitted_at, content_hash, pipeline_summary, "
                 "verdict, reason, hint_ladder, hint_level) VALUES (?,?,?,?,?,?,?,?,?)");
    st.bind(1, rec.player_id).bind(2, rec.challenge_id).bind(3, rec.submitted_at).bind(4, rec.content_hash);
    st.bind(5, dump_json(rec.pipeline_summary)).bind(6, rec.verdict);
    if (rec.reason) st.bind(7, *rec.reason); else st.bind_null(7);
    if (rec.hint_issued) st.bind(8, rec.hint_issued->first).bind(9, rec.hint_issued->second);
    else st.bind_null(8).bind_null(9);
    st.step();
    return sqlite3_last_insert_rowid(db_);
  }

  void write_state(const CoachState& s) {
    Statement st(db_, "INSERT OR REPLACE INTO coach_states(player_id, challenge_id, state) VALUES (?,?,?)");
    st.bind(1, s.player_id).bind(2, s.challenge_id).bind(3, dump_json(Json(s))).step();
  }

  sqlite3* db_ = nullptr;
  std::mutex mu_;
};

}  // namespace

std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& path) {
  return std::make_unique<SqliteStore>(path);
}

}  // namespace sifu
