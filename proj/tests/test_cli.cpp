#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "splitnn/bytes.hpp"
#include "splitnn/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int rc = -1;
    std::string out;
};

Run sh(const std::string& args) {
    const std::string cmd = std::string(SPLITNN_CLI) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int st = ::pclose(p);
    r.rc = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough for a unit test; shared by all CLI tests.
const fs::path& work() {
    static const fs::path dir = [] {
        auto d = fixtures::temp_dir("cli");
        std::ofstream(d / "tiny.cfg") << "[dataset]\nimage_size = 16\ntrain_samples = 240\neval_samples = 80\n"
                                      << "[model]\nepochs = 2\n[train]\nepochs = 1\n[search]\ntrials = 3\n"
                                      << "channel_choices = 2,8\n[paths]\nwork_dir = " << (d / "runs").string()
                                      << "\n";
        return d;
    }();
    return dir;
}

std::string cfg() { return "--config " + (work() / "tiny.cfg").string(); }

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
    EXPECT_EQ(sh("").rc, 2);
    EXPECT_EQ(sh("no-such-command").rc, 2);
    EXPECT_EQ(sh("config --set bogus.key=1").rc, 2);
    EXPECT_EQ(sh("config --set search.trials=abc").rc, 2);
    EXPECT_EQ(sh("config").rc, 0);
}

TEST(Cli, MissingFilesExitWithThree) {
    EXPECT_EQ(sh("eval --bundle /nonexistent/bundle --param-set 0").rc, 3);
    EXPECT_EQ(sh("codec decode /nonexistent/file.bin -").rc, 3);
}

TEST(Cli, ConfigRendersOverrides) {
    auto r = sh("config --set search.trials=9");
    ASSERT_EQ(r.rc, 0);
    EXPECT_NE(r.out.find("trials = 9"), std::string::npos);
}

TEST(Cli, CodecPipeIsLossless) {
    const auto d = work();
    splitnn::Tensor<float> t(splitnn::Shape{3, 4, 5});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 0.5f * static_cast<float>(static_cast<int>(i % 7) - 3);
    splitnn::write_file((d / "t.sstn").string(), splitnn::serialize_tensor(t));
    const std::string cli = SPLITNN_CLI;
    const std::string cmd = cli + " codec encode " + (d / "t.sstn").string() + " - --q 0.5 | " + cli +
                            " codec decode - " + (d / "back.sstn").string();
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_EQ(slurp(d / "t.sstn"), slurp(d / "back.sstn"));
    // and the bitstream form matches the library
    auto enc = sh("codec encode " + (d / "t.sstn").string() + " - --q 0.5");
    ASSERT_EQ(enc.rc, 0);
    EXPECT_EQ(enc.out.substr(0, 4), "SSCF");
}

TEST(Cli, EndToEndAndManifestReplay) {
    const auto d = work();
    ASSERT_EQ(sh("train-base " + cfg()).rc, 0);
    const auto s1 = d / "s1";
    ASSERT_EQ(sh("search " + cfg() + " --run-dir " + s1.string()).rc, 0);
    ASSERT_TRUE(fs::exists(s1 / "frontier.csv"));
    // up to date on re-run, and a different config is refused
    EXPECT_EQ(sh("search " + cfg() + " --run-dir " + s1.string()).rc, 0);
    EXPECT_EQ(sh("search " + cfg() + " --set search.seed=99 --run-dir " + s1.string()).rc, 2);

    const auto s2 = d / "s2";
    ASSERT_EQ(sh("search --from-manifest " + (s1 / "config.json").string() + " --run-dir " + s2.string()).rc, 0);
    EXPECT_EQ(slurp(s1 / "frontier.csv"), slurp(s2 / "frontier.csv"));
    EXPECT_EQ(slurp(s1 / "manifest.json"), slurp(s2 / "manifest.json"));

    auto csv = sh("pareto --run " + s1.string());
    ASSERT_EQ(csv.rc, 0);
    EXPECT_EQ(csv.out, slurp(s1 / "frontier.csv"));

    const auto b = d / "bundle";
    auto pub = sh("publish --run " + s1.string() + " --out " + b.string());
    ASSERT_EQ(pub.rc, 0);
    ASSERT_TRUE(fs::exists(b / "manifest.json"));
    auto ev = sh("eval --bundle " + b.string() + " --param-set 0");
    EXPECT_EQ(ev.rc, 0) << ev.out;
    EXPECT_EQ(sh("eval --bundle " + b.string() + " --param-set 200").rc, 1);
}
