#pragma once

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "sifu/challenge.hpp"
#include "sifu/coach.hpp"
#include "sifu/pipeline.hpp"

namespace sifu::test {

namespace fs = std::filesystem;

inline fs::path source_dir() { return SIFU_SOURCE_DIR; }
inline fs::path fixture(const std::string& name) { return source_dir() / "tests" / "fixtures" / name; }
inline fs::path cli_path() { return SIFU_CLI_PATH; }

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline const ChallengeManifest& ub_values() {
  static const ChallengeManifest m = load_bundle(source_dir() / "challenges" / "ub-values");
  return m;
}

inline const ChallengeManifest& toy() {
  static const ChallengeManifest m = load_bundle(fixture("toy-bundle"));
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("sifu-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

/// Report with the given stage statuses and no raw output.
inline PipelineReport report_with(const std::string& challenge_id, std::map<Stage, StageStatus> statuses) {
  PipelineReport r;
  r.challenge_id = challenge_id;
  for (const auto s : kStageOrder) {
    StageResult sr;
    sr.stage = s;
    sr.status = statuses.contains(s) ? statuses.at(s) : StageStatus::Passed;
    r.stages.push_back(sr);
  }
  if (r.status(Stage::Compile) != StageStatus::Passed) r.gated_at = Stage::Compile;
  return r;
}

/// Five ladders l0..l4, each with `rungs` rungs and a literal text per rung.
inline ChallengeManifest ladder_manifest(const std::vector<int>& priorities, int rungs = 3) {
  ChallengeManifest m;
  m.id = "ladders";
  m.flag_secret = "s";
  m.solve_discussion = "done";
  for (std::size_t i = 0; i < priorities.size(); ++i) {
    HintLadder l;
    l.ladder_id = "l" + std::to_string(i);
    l.priority = priorities[i];
    l.matcher.expression = MatchExpr::leaf(FindingPredicate{"", std::nullopt, "R" + std::to_string(i)});
    for (int k = 1; k <= rungs; ++k) l.rungs.push_back({k, l.ladder_id + " hint " + std::to_string(k)});
    m.ladders.push_back(std::move(l));
  }
  return m;
}

struct CliResult {
  int status = -1;
  std::string out;
};

/// Runs the CLI through the shell; stderr is discarded.
inline CliResult run_cli(const std::string& args) {
  CliResult r;
  const auto cmd = cli_path().string() + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

}  // namespace sifu::test
