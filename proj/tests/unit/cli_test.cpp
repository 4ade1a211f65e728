#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

namespace {

int curator(const std::string& args, const test_util::TempDir& dir) {
    const std::string cmd = std::string(CURATOR_CLI) + " " + args + " >" + (dir / "stdout").string() + " 2>" +
                            (dir / "stderr").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(Cli, HelpAndVersion) {
    test_util::TempDir dir;
    EXPECT_EQ(curator("--help", dir), 0);
    EXPECT_NE(test_util::slurp(dir / "stdout").find("dedup"), std::string::npos);
    EXPECT_EQ(curator("--version", dir), 0);
}

TEST(Cli, UsageErrorsExitOne) {
    test_util::TempDir dir;
    EXPECT_EQ(curator("", dir), 1);
    EXPECT_EQ(curator("frobnicate", dir), 1);
    EXPECT_EQ(curator("--config " + (dir / "none.json").string() + " run", dir), 1);
}

TEST(Cli, SynthRunAndRerun) {
    test_util::TempDir dir;
    const auto corpus = (dir / "corpus").string();
    ASSERT_EQ(curator("synth " + corpus, dir), 0);
    const auto cfg = "--config " + corpus + "/config.json";
    ASSERT_EQ(curator(cfg + " run --eval", dir), 0) << test_util::slurp(dir / "stderr");
    EXPECT_NE(test_util::slurp(dir / "stdout").find("export    ran"), std::string::npos);
    ASSERT_EQ(curator(cfg + " run", dir), 0);
    EXPECT_NE(test_util::slurp(dir / "stdout").find("export    up to date"), std::string::npos);
    EXPECT_EQ(curator(cfg + " --set dedup.threshold=40 run", dir), 1);
    EXPECT_NE(test_util::slurp(dir / "stderr").find("threshold"), std::string::npos);
}

TEST(Cli, MissingUpstreamExitsOne) {
    test_util::TempDir dir;
    const auto corpus = (dir / "corpus").string();
    ASSERT_EQ(curator("synth " + corpus, dir), 0);
    EXPECT_EQ(curator("--config " + corpus + "/config.json export", dir), 1);
    EXPECT_NE(test_util::slurp(dir / "stderr").find("first"), std::string::npos);
}

TEST(Cli, DedupQuery) {
    test_util::TempDir dir;
    test_util::write(dir / "s.tsv", "a\t0000000000000000\nb\t0000000000000007\nc\tffffffffffffffff\n");
    ASSERT_EQ(curator("dedup query --signatures " + (dir / "s.tsv").string() + " --probe 0000000000000001 -r 2", dir), 0);
    const auto out = test_util::slurp(dir / "stdout");
    EXPECT_NE(out.find("\"a\""), std::string::npos);
    EXPECT_NE(out.find("\"b\""), std::string::npos);
    EXPECT_EQ(out.find("\"c\""), std::string::npos);
}

TEST(Cli, AuditSampleAndScore) {
    test_util::TempDir dir;
    std::string m = "#domain=bird\n";
    for (int i = 0; i < 20; ++i)
        m += "i" + std::to_string(i) + "\tu\tc\t" + std::to_string(i) + "\n";
    test_util::write(dir / "m.tsv", m);
    ASSERT_EQ(curator("--seed 3 audit sample --manifest " + (dir / "m.tsv").string() + " -n 20 -o " +
                          (dir / "audit.json").string(),
                      dir),
              0);
    std::string labels;
    for (int i = 0; i < 20; ++i)
        labels += "i" + std::to_string(i) + (i < 5 ? "\tcross_domain\n" : "\tin_domain\n");
    test_util::write(dir / "labels.tsv", labels);
    ASSERT_EQ(curator("audit score --audit " + (dir / "audit.json").string() + " --labels " +
                          (dir / "labels.tsv").string(),
                      dir),
              0);
    EXPECT_NE(test_util::slurp(dir / "stdout").find("0.25"), std::string::npos);
}

TEST(Cli, MalformedManifestExitsOne) {
    test_util::TempDir dir;
    test_util::write(dir / "bad.tsv", "only\ttwo\n");
    EXPECT_EQ(curator("audit sample --manifest " + (dir / "bad.tsv").string() + " -n 1", dir), 1);
    EXPECT_NE(test_util::slurp(dir / "stderr").find(":1:"), std::string::npos);
}
