#include <gtest/gtest.h>

#include "programs.hpp"
#include "sifu/sandbox.hpp"
#include "support.hpp"

using namespace sifu;
namespace fs = std::filesystem;

namespace {

CommandSpec sh(const std::string& script) { return CommandSpec{{"sh", "-c", script}, {}, {}, std::nullopt}; }

SandboxPolicy quick() {
  SandboxPolicy p;
  p.wall_clock_limit = 2.0;
  return p;
}

}  // namespace

TEST(Sandbox, ExitCodeAndOutput) {
  test::TempDir ws;
  const auto o = run_sandboxed(sh("echo out; echo err >&2; exit 7"), ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_exit(7)) << o.exit_status.describe();
  EXPECT_EQ(o.stdout_data, "out\n");
  EXPECT_EQ(o.stderr_data, "err\n");
}

TEST(Sandbox, StdinIsDelivered) {
  test::TempDir ws;
  RunOptions opts;
  opts.stdin_data = "a\nb\n";
  const auto o = run_sandboxed(sh("cat"), ws.path(), quick(), opts);
  EXPECT_EQ(o.stdout_data, "a\nb\n");
}

TEST(Sandbox, MissingExecutableExits127) {
  test::TempDir ws;
  const auto o = run_sandboxed(CommandSpec{{"./does-not-exist"}, {}, {}, std::nullopt}, ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_exit(127)) << o.exit_status.describe();
}

TEST(Sandbox, EnvironmentIsScrubbed) {
  test::TempDir ws;
  ::setenv("SIFU_TEST_SECRET", "leak", 1);
  CommandSpec cmd = sh("echo \"$HOME|$SIFU_TEST_SECRET|$MINE|$EXTRA\"");
  cmd.env["MINE"] = "1";
  RunOptions opts;
  opts.extra_env["EXTRA"] = "2";
  const auto o = run_sandboxed(cmd, ws.path(), quick(), opts);
  EXPECT_EQ(o.stdout_data, ws.path().string() + "||1|2\n");
  cmd = sh("echo \"$SIFU_TEST_SECRET\"");
  cmd.env_allow = {"SIFU_TEST_SECRET"};
  EXPECT_EQ(run_sandboxed(cmd, ws.path(), quick()).stdout_data, "leak\n");
}

TEST(Sandbox, WorkingDirectoryIsTheWorkspace) {
  test::TempDir ws;
  test::write_file(ws / "data.txt", "x");
  const auto o = run_sandboxed(sh("cat data.txt && echo y > out.txt"), ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_exit(0));
  EXPECT_EQ(o.stdout_data, "x");
  EXPECT_EQ(test::read_file(ws / "out.txt"), "y\n");
}

TEST(Sandbox, OutsideWorkspaceIsReadOnly) {
  if (!sandbox_capabilities().namespaces) GTEST_SKIP() << "no mount namespaces";
  test::TempDir ws, outside;
  const auto target = outside / "planted";
  const auto o = run_sandboxed(sh("echo x > '" + target.string() + "'"), ws.path(), quick());
  EXPECT_FALSE(o.exit_status.is_exit(0));
  EXPECT_FALSE(fs::exists(target));
}

TEST(Sandbox, WritablePathsRestrictWrites) {
  if (!sandbox_capabilities().namespaces) GTEST_SKIP() << "no mount namespaces";
  test::TempDir ws;
  fs::create_directories(ws / "build");
  auto p = quick();
  p.writable_paths = {"build"};
  EXPECT_TRUE(run_sandboxed(sh("echo a > build/x"), ws.path(), p).exit_status.is_exit(0));
  EXPECT_FALSE(run_sandboxed(sh("echo a > top"), ws.path(), p).exit_status.is_exit(0));
  EXPECT_FALSE(fs::exists(ws / "top"));
}

TEST(Sandbox, InfiniteLoopHitsTimeLimit) {
  test::TempDir ws;
  const auto bin = test::compile_program(ws.path(), "loop", test::kLoopSource);
  const auto o = run_sandboxed(CommandSpec{{bin.string()}, {}, {}, std::nullopt}, ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_killed(KillReason::TimeLimit)) << o.exit_status.describe();
  EXPECT_LT(o.duration, 3.0);
  EXPECT_GE(o.duration, 1.9);
}

TEST(Sandbox, CommandTimeoutAndOptionPrecedence) {
  test::TempDir ws;
  auto cmd = sh("sleep 5");
  cmd.timeout_s = 0.5;
  auto o = run_sandboxed(cmd, ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_killed(KillReason::TimeLimit));
  EXPECT_LT(o.duration, 1.5);
  RunOptions opts;
  opts.wall_clock_limit = 0.3;
  cmd.timeout_s = 4;
  o = run_sandboxed(cmd, ws.path(), quick(), opts);
  EXPECT_TRUE(o.exit_status.is_killed(KillReason::TimeLimit));
  EXPECT_LT(o.duration, 1.5);
}

TEST(Sandbox, ForkStormIsContained) {
  test::TempDir ws;
  const auto bin = test::compile_program(ws.path(), "forker", test::kForkSource);
  const auto o = run_sandboxed(CommandSpec{{bin.string()}, {}, {}, std::nullopt}, ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_killed(KillReason::TimeLimit)) << o.exit_status.describe();
  EXPECT_LT(o.duration, 3.0);
  // Nothing from the storm survives.
  const auto left = std::system("pgrep -x forker >/dev/null");
  EXPECT_NE(left, 0);
}

TEST(Sandbox, BackgroundChildrenDoNotOutliveTheRun) {
  test::TempDir ws;
  const auto o = run_sandboxed(sh("sleep 30 & echo started"), ws.path(), quick());
  EXPECT_TRUE(o.exit_status.is_exit(0));
  EXPECT_LT(o.duration, 3.0);
}

TEST(Sandbox, MemoryLimit) {
  const auto caps = sandbox_capabilities();
  if (!caps.cgroup_memory) GTEST_SKIP() << "no memory cgroup";
  test::TempDir ws;
  const auto bin = test::compile_program(ws.path(), "alloc", test::kAllocSource);
  auto p = quick();
  p.memory_limit = 64ull << 20;
  const auto o = run_sandboxed(CommandSpec{{bin.string()}, {}, {}, std::nullopt}, ws.path(), p);
  EXPECT_TRUE(o.exit_status.is_killed(KillReason::MemoryLimit)) << o.exit_status.describe();
}

TEST(Sandbox, NetworkIsBlocked) {
  test::TempDir ws;
  const auto bin = test::compile_program(ws.path(), "net", test::kNetSource);
  test::LoopbackObserver observer;
  const auto o = run_sandboxed(CommandSpec{{bin.string(), std::to_string(observer.port())}, {}, {}, std::nullopt},
                               ws.path(), quick());
  EXPECT_FALSE(o.exit_status.is_exit(0)) << o.exit_status.describe();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  EXPECT_EQ(observer.bytes(), 0);
  EXPECT_EQ(observer.connections(), 0);
}

TEST(Sandbox, OutputIsCapped) {
  test::TempDir ws;
  RunOptions opts;
  opts.output_cap = 1000;
  const auto o = run_sandboxed(sh("head -c 100000 /dev/zero"), ws.path(), quick(), opts);
  EXPECT_TRUE(o.exit_status.is_exit(0));
  EXPECT_EQ(o.stdout_data.size(), 1000u);
}

TEST(Sandbox, SignalDeathIsReported) {
  test::TempDir ws;
  const auto o = run_sandboxed(sh("kill -SEGV $$"), ws.path(), quick());
  EXPECT_EQ(o.exit_status, ExitStatus::signaled(SIGSEGV)) << o.exit_status.describe();
}

TEST(Sandbox, Describe) {
  EXPECT_EQ(ExitStatus::exited(3).describe(), "exited with code 3");
  EXPECT_FALSE(ExitStatus::killed(KillReason::MemoryLimit).describe().empty());
}
