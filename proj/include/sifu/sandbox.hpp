#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "sifu/challenge.hpp"
#include "sifu/policy.hpp"

namespace sifu {

class Workspace;

enum class KillReason { TimeLimit, MemoryLimit, ForbiddenOperation };

struct ExitStatus {
  enum class Kind { Exited, Signaled, Killed };

  Kind kind = Kind::Exited;
  int code = 0;  // exit code, or signal number for Signaled
  KillReason reason = KillReason::TimeLimit;

  static ExitStatus exited(int c) { return {Kind::Exited, c, {}}; }
  static ExitStatus signaled(int sig) { return {Kind::Signaled, sig, {}}; }
  static ExitStatus killed(KillReason r) { return {Kind::Killed, 0, r}; }

  bool is_exit(int c) const { return kind == Kind::Exited && code == c; }
  bool is_killed(KillReason r) const { return kind == Kind::Killed && reason == r; }
  std::string describe() const;

  bool operator==(const ExitStatus&) const = default;
};

struct ExecutionOutcome {
  ExitStatus exit_status;
  std::string stdout_data;
  std::string stderr_data;
  double duration = 0;  // seconds, wall clock
};

struct RunOptions {
  std::optional<std::string> stdin_data;
  std::map<std::string, std::string> extra_env;
  std::optional<double> wall_clock_limit;  // overrides policy and command timeout
  std::size_t output_cap = 1 << 20;        // per stream; excess is discarded
};

/// What the host lets the sandbox enforce. Network and debugging are always
/// blocked by the syscall filter; namespaces and cgroups add isolation on top.
struct SandboxCapabilities {
  bool namespaces = false;
  bool cgroup_memory = false;
  bool cgroup_pids = false;
};

SandboxCapabilities sandbox_capabilities();

/// Runs `cmd` with `root` as working directory under `policy`. Player-caused
/// misbehaviour is reported in the outcome; only host failures throw
/// InfrastructureError.
ExecutionOutcome run_sandboxed(const CommandSpec& cmd, const std::filesystem::path& root,
                               const SandboxPolicy& policy, const RunOptions& options = {});
ExecutionOutcome run_sandboxed(const CommandSpec& cmd, const Workspace& w, const SandboxPolicy& policy,
                               const RunOptions& options = {});

}  // namespace sifu
