#include <gtest/gtest.h>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "oracles.hpp"
#include "ssvep/dsp.hpp"

extern char** environ;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result run(const oracle::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + SSVEP_CLI + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, HelpAndUsage) {
  oracle::TempDir d;
  EXPECT_EQ(run(d, "--help").code, 0);
  EXPECT_EQ(run(d, "").code, 2);
  EXPECT_EQ(run(d, "frobnicate").code, 2);
  EXPECT_EQ(run(d, "gen-data").code, 2);  // --data is required
}

TEST(Cli, GenDataAndTrainAreDeterministic) {
  oracle::TempDir d;
  const std::string gen = "gen-data --trials-per-class 6 --seed 5 --snr-db 0 --data ";
  ASSERT_EQ(run(d, gen + q(d / "a.rec")).code, 0);
  ASSERT_EQ(run(d, gen + q(d / "b.rec")).code, 0);
  EXPECT_EQ(slurp(d / "a.rec"), slurp(d / "b.rec"));
  EXPECT_EQ(std::filesystem::file_size(d / "a.rec"), 8u + 2 + 4 + 2 + 8 + 8 + 4 + 18 * 24 + 18 * 1024 * 8);

  const std::string train = "train --epochs 3 --seed 2 --data " + q(d / "a.rec") + " --model ";
  const auto r1 = run(d, train + q(d / "m1.bin") + " --history " + q(d / "h.csv"));
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(run(d, train + q(d / "m2.bin")).code, 0);
  EXPECT_EQ(slurp(d / "m1.bin"), slurp(d / "m2.bin"));
  EXPECT_NE(r1.out.find("set,metric,value"), std::string::npos);
  EXPECT_NE(r1.out.find("test,accuracy,"), std::string::npos);
  const auto hist = slurp(d / "h.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 4);

  const auto ev = run(d, "eval --set all --data " + q(d / "a.rec") + " --model " + q(d / "m1.bin") +
                             " --metrics " + q(d / "ev.csv"));
  EXPECT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(slurp(d / "ev.csv").find("all,accuracy,"), std::string::npos);

  const auto mismatch = run(d, "eval --nfft 2048 --data " + q(d / "a.rec") + " --model " + q(d / "m1.bin"));
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.err.find("shape mismatch"), std::string::npos);

  const auto cv = run(d, "cv --folds 3 --epochs 2 --data " + q(d / "a.rec") + " --history-dir " + q(d / "cv"));
  EXPECT_EQ(cv.code, 0) << cv.err;
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(std::filesystem::exists(d / ("cv/fold_" + std::to_string(i) + ".csv")));
}

TEST(Cli, ExitCodes) {
  oracle::TempDir d;
  EXPECT_EQ(run(d, "gen-data --snr-db loud --data " + q(d / "x.rec")).code, 2);
  EXPECT_EQ(run(d, "simulate --maze " + q(d / "missing.txt")).code, 2);
  EXPECT_EQ(run(d, "train --data " + q(d / "missing.rec") + " --model " + q(d / "m.bin")).code, 2);
  EXPECT_EQ(run(d, "filter-coeffs --order 3").code, 2);
  {
    std::ofstream(d / "junk.rec") << "not a recording";
  }
  const auto r = run(d, "train --data " + q(d / "junk.rec") + " --model " + q(d / "m.bin"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run(d, "gen-data --trials-per-class 0 --data " + q(d / "x.rec")).code, 2);
}

TEST(Cli, FilterCoeffsMatchLibrary) {
  oracle::TempDir d;
  const auto r = run(d, "filter-coeffs --fs 256 --order 4 --band-lo 8 --band-hi 16");
  ASSERT_EQ(r.code, 0);
  const auto f = ssvep::dsp::design_bandpass(256, 8, 16, 4);
  std::istringstream in(r.out);
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double b0, b1, b2, a1, a2;
    ls >> b0 >> b1 >> b2 >> a1 >> a2;
    ASSERT_LT(i, f.sections.size());
    EXPECT_EQ(b0, f.sections[i].b0);
    EXPECT_EQ(b2, f.sections[i].b2);
    EXPECT_EQ(a1, f.sections[i].a1);
    EXPECT_EQ(a2, f.sections[i].a2);
    ++i;
  }
  EXPECT_EQ(i, f.sections.size());
}

TEST(Cli, SimulateWritesTrace) {
  oracle::TempDir d;
  {
    std::ofstream(d / "maze.txt") << "+--+--+--+\n|S>    E |\n+--+--+--+\n";
  }
  const auto r = run(d, "simulate --maze " + q(d / "maze.txt") + " --trace " + q(d / "t.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("finished          yes"), std::string::npos);
  EXPECT_NE(slurp(d / "t.json").find("\"summary\""), std::string::npos);
}

TEST(Cli, ServeStopsOnSigint) {
  oracle::TempDir d;
  const auto out = d / "serve.txt";
  const std::string cmd = std::string("exec '") + SSVEP_CLI +
                          "' serve --host 127.0.0.1 --port-robot 0 --port-console 0 --no-robot >'" + out.string() +
                          "' 2>&1";
  const char* argv[] = {"/bin/sh", "-c", cmd.c_str(), nullptr};
  pid_t pid = 0;
  ASSERT_EQ(posix_spawn(&pid, "/bin/sh", nullptr, nullptr, const_cast<char**>(argv), environ), 0);
  bool ready = false;
  for (int i = 0; i < 600 && !ready; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    ready = slurp(out).find("console stream on") != std::string::npos;
  }
  ASSERT_TRUE(ready) << slurp(out);
  ASSERT_EQ(kill(pid, SIGINT), 0);
  int status = 0;
  ASSERT_EQ(waitpid(pid, &status, 0), pid);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_NE(slurp(out).find("shutting down"), std::string::npos);
}
