#include <gtest/gtest.h>

#include "sifu/json_io.hpp"
#include "support.hpp"

using namespace sifu;
using test::run_cli;

namespace {

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string toy_bundle() { return q(test::fixture("toy-bundle")); }

}  // namespace

TEST(Cli, UsageErrorsExit2) {
  EXPECT_EQ(run_cli("").status, 2);
  EXPECT_EQ(run_cli("frobnicate").status, 2);
  EXPECT_EQ(run_cli("assess --bundle x").status, 2);
  EXPECT_EQ(run_cli("--help").status, 0);
}

TEST(Cli, Validate) {
  EXPECT_EQ(run_cli("validate " + toy_bundle()).status, 0);
  EXPECT_EQ(run_cli("validate /nonexistent").status, 2);

  test::TempDir dir;
  std::filesystem::copy(test::fixture("toy-bundle"), dir / "b", std::filesystem::copy_options::recursive);
  auto j = Json::parse(test::read_file(dir / "b" / "manifest.json"));
  j["ladders"][1]["rungs"][1]["level"] = 4;
  test::write_file(dir / "b" / "manifest.json", j.dump());
  const auto r = run_cli("validate --json " + q(dir / "b"));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(Json::parse(r.out).at("violations")[0].at("code"), "NonConsecutiveRungs");
}

TEST(Cli, AssessIsDeterministicWithFixedClock) {
  test::TempDir dir;
  test::write_file(dir / "sub" / "prog.sh", "read n\neval \"echo hello $n\"\n");
  const auto args = "assess --json --clock-fixed 5000 --bundle " + toy_bundle() + " --submission " + q(dir / "sub");
  const auto a = run_cli(args), b = run_cli(args);
  ASSERT_EQ(a.status, 0);
  EXPECT_EQ(a.out, b.out);
  const auto j = Json::parse(a.out);
  EXPECT_FALSE(j.contains("workspace_root"));
  EXPECT_EQ(j.at("outcome").at("verdict"), "Unsolved");
  EXPECT_EQ(j.at("stages").size(), 6u);
  EXPECT_EQ(a.out.find(dir.path().string()), std::string::npos);
}

TEST(Cli, AssessVerdicts) {
  test::TempDir dir;
  test::write_file(dir / "ok" / "prog.sh", "read name\necho \"hello $name\"\n");
  auto r = run_cli("assess --json --player p --bundle " + toy_bundle() + " --submission " + q(dir / "ok"));
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(Json::parse(r.out).at("outcome").at("verdict"), "Solved");

  test::write_file(dir / "bad" / "prog.sh", "if then\n");
  r = run_cli("assess --bundle " + toy_bundle() + " --submission " + q(dir / "bad"));
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("verdict: Rejected (CompileError)"), std::string::npos);

  test::write_file(dir / "extra" / "build.sh", "exit 0\n");
  EXPECT_EQ(run_cli("assess --bundle " + toy_bundle() + " --submission " + q(dir / "extra")).status, 1);
  EXPECT_EQ(run_cli("assess --bundle " + toy_bundle() + " --submission /nonexistent").status, 2);
}

TEST(Cli, RecordedTraceReplaysToTheLiveState) {
  test::TempDir dir;
  test::write_file(dir / "sub" / "prog.sh", "read n\neval \"echo hello $n\"\n");
  const auto state = dir / "state.json", trace = dir / "trace.ndjson";
  const std::vector<long> times = {0, 1000, 250000, 260000, 270000, 600000, 601000, 602000, 900000, 2000000};
  for (const auto t : times) {
    const auto r = run_cli("assess --clock-fixed " + std::to_string(t) + " --state " + q(state) + " --record " +
                           q(trace) + " --bundle " + toy_bundle() + " --submission " + q(dir / "sub"));
    ASSERT_EQ(r.status, 0);
  }
  const auto replayed = run_cli("replay " + q(trace) + " --bundle " + toy_bundle());
  ASSERT_EQ(replayed.status, 0);
  const auto live = Json::parse(test::read_file(state));
  EXPECT_EQ(Json::parse(replayed.out), live);
  EXPECT_EQ(live.at("ladder_levels").at("eval-injection"), 3);

  test::write_file(dir / "bad.ndjson", "{\"at\": 1}\n");
  EXPECT_EQ(run_cli("replay " + q(dir / "bad.ndjson") + " --bundle " + toy_bundle()).status, 1);
  EXPECT_EQ(run_cli("replay /nonexistent --bundle " + toy_bundle()).status, 2);
}

TEST(Cli, ExportAndStats) {
  EXPECT_EQ(run_cli("export --database /nonexistent/db").status, 2);
  test::TempDir dir;
  test::write_file(dir / "bad.json", "{");
  EXPECT_EQ(run_cli("serve --config " + q(dir / "bad.json")).status, 2);
}
