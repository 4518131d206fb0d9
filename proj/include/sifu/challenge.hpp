#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sifu/error.hpp"
#include "sifu/matcher.hpp"
#include "sifu/policy.hpp"

namespace sifu {

enum class Language { C, CPP };

struct SourceFileSpec {
  std::string path;  // workspace-relative, forward slashes
  std::string content;
  bool editable = false;

  bool operator==(const SourceFileSpec&) const = default;
};

/// argv plus environment, run with the workspace root as working directory.
struct CommandSpec {
  std::vector<std::string> argv;
  std::vector<std::string> env_allow;  // host variables passed through
  std::map<std::string, std::string> env;
  std::optional<double> timeout_s;     // overrides the policy wall clock for this command

  bool operator==(const CommandSpec&) const = default;
};

struct BuildSpec {
  CommandSpec command;
  std::string report_format = "gcc-json";  // adapter applied to the build's stderr

  bool operator==(const BuildSpec&) const = default;
};

struct TestSpec {
  std::string name;
  CommandSpec command;
  int expect_exit = 0;
  std::optional<std::string> stdin_data;
  std::optional<std::string> expected_stdout;
  std::optional<std::string> report_format;  // parse stderr (or report_file) with this adapter
  std::optional<std::string> report_file;    // workspace-relative

  bool operator==(const TestSpec&) const = default;
};

/// Harness gets SIFU_FUZZ_RUNS and SIFU_FUZZ_SEED; it loops internally.
struct FuzzSpec {
  CommandSpec command;
  std::uint64_t budget_execs = 10000;
  double budget_seconds = 2.0;
  std::uint64_t seed = 0;
  std::string report_format = "asan-log";

  bool operator==(const FuzzSpec&) const = default;
};

/// Replaces the line holding `marker` in aux file `into` with the
/// (possibly edited) content of player file `source`.
struct Injection {
  std::string into;
  std::string source;
  std::string marker;

  bool operator==(const Injection&) const = default;
};

struct GuidelineRef {
  std::string standard;
  std::string rule_id;
  std::string url;

  bool operator==(const GuidelineRef&) const = default;
};

struct HintRung {
  int level = 1;
  std::string text;  // template: {file} {line} {rule} {guideline} {link:N} {<capture>}

  bool operator==(const HintRung&) const = default;
};

struct HintLadder {
  std::string ladder_id;
  int priority = 0;  // higher = more critical
  FindingMatcher matcher;
  std::string guideline;  // key into ChallengeManifest::guidelines
  std::vector<HintRung> rungs;

  bool operator==(const HintLadder&) const = default;
};

struct ChallengeManifest {
  std::string id;
  std::string title;
  std::string description;
  Language language = Language::C;
  int points = 100;
  std::vector<SourceFileSpec> files;
  std::vector<SourceFileSpec> aux_files;
  std::vector<Injection> injections;
  BuildSpec build;
  std::vector<TestSpec> functional_tests;
  std::vector<TestSpec> security_tests;
  std::optional<FuzzSpec> fuzz;
  std::vector<TestSpec> sast_tools;
  std::vector<TestSpec> dast;
  std::vector<TestSpec> rasp;
  std::vector<HintLadder> ladders;  // declaration order breaks priority ties
  std::map<std::string, GuidelineRef> guidelines;
  std::vector<std::string> links;   // {link:N}, 1-based
  std::string solve_discussion;
  std::string flag_secret;
  std::optional<SandboxPolicy> sandbox_overrides;
  /// Canonical fixed sources (bundle `solution/`), never shown to players.
  std::map<std::string, std::string> solution;

  const HintLadder* find_ladder(const std::string& ladder_id) const;
  const SourceFileSpec* find_file(const std::string& path) const;
  SandboxPolicy effective_policy(const SandboxPolicy& base) const {
    return sandbox_overrides ? *sandbox_overrides : base;
  }

  bool operator==(const ChallengeManifest&) const = default;
};

/// path -> text, the player's edits.
using Edits = std::map<std::string, std::string>;

/// Empty iff every manifest invariant holds.
std::vector<Violation> validate_manifest(const ChallengeManifest& m);

/// Reads a bundle directory or an uncompressed tar archive.
ChallengeManifest load_bundle(const std::filesystem::path& source);
/// Same, from an in-memory map of bundle-relative path -> bytes.
ChallengeManifest load_bundle_files(const std::map<std::string, std::string>& files);
/// Writes manifest.json plus the files/, aux/, tests/ and solution/ subtrees.
void save_bundle(const ChallengeManifest& m, const std::filesystem::path& dir);

/// Where an aux file lives inside a bundle.
std::string bundle_location_of_aux(const std::string& workspace_path);

/// True for relative, forward-slash paths without `..`, `.` or empty segments.
bool is_safe_relative_path(const std::string& p);

/// Placeholder names appearing in a rung template, in order. Throws ParseError on bad syntax.
std::vector<std::string> template_placeholders(const std::string& text);

}  // namespace sifu
