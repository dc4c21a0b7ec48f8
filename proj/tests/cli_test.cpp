#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "goalfactor/pipeline.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
namespace gf = goalfactor;
using gf::testing::TempDir;

namespace {

struct Run {
  int rc;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "goalfactor");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = gf::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {rc, out.str(), err.str()};
}

/// Fresh copy of the mock workspace.
void copy_mock(const fs::path& dst) {
  const fs::path src = fs::path(GOALFACTOR_SOURCE_DIR) / "data" / "mock";
  for (const char* f : {"config.json", "documents.jsonl", "transcript.jsonl"}) fs::copy_file(src / f, dst / f);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kArtifacts = {"out/properties.jsonl", "out/matrix.ilfm", "out/model.bin",
                                             "out/factors.json", "out/factors.md", "out/result.json"};

std::map<std::string, std::string> run_all(const std::string& threads) {
  TempDir dir;
  copy_mock(dir.path());
  const auto r = run({"all", "--config", dir / "config.json", "--threads", threads, "--log-level", "off"});
  EXPECT_EQ(r.rc, 0) << r.err;
  std::map<std::string, std::string> bytes;
  for (const auto& a : kArtifacts) bytes[a] = slurp(dir.path() / a);
  return bytes;
}

}  // namespace

TEST(Cli, AllIsByteIdenticalAcrossRunsAndThreads) {
  const auto a = run_all("1");
  const auto b = run_all("1");
  const auto c = run_all("4");
  for (const auto& name : kArtifacts) {
    EXPECT_FALSE(a.at(name).empty()) << name;
    EXPECT_EQ(a.at(name), b.at(name)) << name;
    EXPECT_EQ(a.at(name), c.at(name)) << name;
  }
}

TEST(Cli, SummaryIsJsonAndSidecarsRecordHashes) {
  TempDir dir;
  copy_mock(dir.path());
  const auto r = run({"all", "--config", dir / "config.json", "--log-level", "off"});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto summary = gf::json::parse(r.out);
  EXPECT_EQ(summary["stage"], "all");
  EXPECT_EQ(summary["status"], "ok");
  const std::string hash = summary["config_hash"];
  EXPECT_EQ(hash.size(), 64u);
  const auto meta = gf::json::parse(slurp(dir.path() / "out/model.bin.meta.json"));
  EXPECT_EQ(meta["config_hash"], hash);
  EXPECT_EQ(meta["stage"], "discover");
  EXPECT_EQ(meta["inputs"]["matrix"], gf::sha256_hex(slurp(dir.path() / "out/matrix.ilfm")));
  EXPECT_EQ(meta["artifact_sha256"], gf::sha256_hex(slurp(dir.path() / "out/model.bin")));
  const auto result = gf::json::parse(slurp(dir.path() / "out/result.json"));
  EXPECT_EQ(result["task"], "rec");
  EXPECT_TRUE(result["metrics"].contains("hit@1"));
}

TEST(Cli, StagesRunSeparatelyMatchAll) {
  TempDir whole, staged;
  copy_mock(whole.path());
  copy_mock(staged.path());
  ASSERT_EQ(run({"all", "--config", whole / "config.json", "--log-level", "off"}).rc, 0);
  for (const char* stage : {"propose", "link", "discover", "eval"}) {
    const auto r = run({stage, "--config", staged / "config.json", "--log-level", "off"});
    ASSERT_EQ(r.rc, 0) << stage << ": " << r.err;
  }
  for (const auto& a : kArtifacts) EXPECT_EQ(slurp(whole.path() / a), slurp(staged.path() / a)) << a;
  fs::remove(staged.path() / "out/factors.json");
  ASSERT_EQ(run({"report", "--config", staged / "config.json", "--log-level", "off"}).rc, 0);
  EXPECT_EQ(slurp(whole.path() / "out/factors.json"), slurp(staged.path() / "out/factors.json"));
}

TEST(Cli, MissingUpstreamArtifactNamesProducer) {
  TempDir dir;
  copy_mock(dir.path());
  const auto r = run({"discover", "--config", dir / "config.json"});
  EXPECT_EQ(r.rc, 3);
  EXPECT_NE(r.err.find("link"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("matrix"), std::string::npos) << r.err;
}

TEST(Cli, InvalidFractionIsConfigError) {
  TempDir dir;
  copy_mock(dir.path());
  const auto r = run({"link", "--config", dir / "config.json", "--binarize", "1.5"});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("fraction in (0,1)"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir.path() / "out/matrix.ilfm"));
}

TEST(Cli, AllViolationsReportedTogether) {
  TempDir dir;
  copy_mock(dir.path());
  const auto r = run({"link", "--config", dir / "config.json", "--binarize", "0", "--batch", "1", "--epochs", "0"});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("binarize"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("batch"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("epochs"), std::string::npos) << r.err;
}

TEST(Cli, MalformedConfigFileIsConfigError) {
  TempDir dir;
  std::ofstream(dir / "bad.json") << "{\"corex\": {\"factors\": \"many\"}, \"seed\": -1, \"eval\": {\"ks\": [1, -5]}}";
  const auto r = run({"discover", "--config", dir / "bad.json"});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("factors"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("eval.ks"), std::string::npos) << r.err;
  EXPECT_EQ(run({"bogus"}).rc, 2);
  EXPECT_EQ(run({"all", "--out", dir / "x"}).rc, 2);
}

TEST(Cli, FlagsOverrideConfigAndChangeHash) {
  TempDir dir;
  copy_mock(dir.path());
  ASSERT_EQ(run({"all", "--config", dir / "config.json", "--log-level", "off"}).rc, 0);
  const auto base = run({"discover", "--config", dir / "config.json", "--log-level", "off"});
  const auto other = run({"discover", "--config", dir / "config.json", "--log-level", "off", "--factors", "2",
                          "--out", dir / "m2.bin"});
  ASSERT_EQ(other.rc, 0) << other.err;
  EXPECT_NE(gf::json::parse(base.out)["config_hash"], gf::json::parse(other.out)["config_hash"]);
  EXPECT_EQ(gf::load_model(dir / "m2.bin").factors(), 2u);
  // Threads and paths are not part of the hash.
  const auto threaded = run({"discover", "--config", dir / "config.json", "--log-level", "off", "--threads", "3",
                             "--out", dir / "m3.bin"});
  EXPECT_EQ(gf::json::parse(base.out)["config_hash"], gf::json::parse(threaded.out)["config_hash"]);
}

TEST(Cli, EvalRefusesModelFitOnAnotherMatrix) {
  TempDir dir;
  copy_mock(dir.path());
  ASSERT_EQ(run({"all", "--config", dir / "config.json", "--log-level", "off"}).rc, 0);
  // A second matrix from a different encoder seed.
  ASSERT_EQ(run({"link", "--config", dir / "config.json", "--log-level", "off", "--seed", "5", "--out",
                 dir / "other.ilfm"})
                .rc,
            0);
  const auto r = run({"eval", "--config", dir / "config.json", "--matrix", dir / "other.ilfm"});
  EXPECT_EQ(r.rc, 4);
  EXPECT_NE(r.err.find("mismatched"), std::string::npos) << r.err;
  // Raw scores need no model.
  EXPECT_EQ(run({"eval", "--config", dir / "config.json", "--log-level", "off", "--matrix", dir / "other.ilfm",
                 "--representation", "c"})
                .rc,
            0);
}

TEST(Cli, EvalTasksAndBaseline) {
  TempDir dir;
  copy_mock(dir.path());
  ASSERT_EQ(run({"all", "--config", dir / "config.json", "--log-level", "off"}).rc, 0);
  const auto maj = run({"eval", "--config", dir / "config.json", "--log-level", "off", "--majority", "--ks", "1,2"});
  ASSERT_EQ(maj.rc, 0) << maj.err;
  const auto result = gf::json::parse(slurp(dir.path() / "out/result.json"));
  EXPECT_EQ(result["config"]["baseline"], "majority");
  EXPECT_TRUE(result["metrics"].contains("hit@2"));
  const auto probe = run({"eval", "--config", dir / "config.json", "--task", "probe"});
  EXPECT_EQ(probe.rc, 2);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("discover"), std::string::npos);
}
