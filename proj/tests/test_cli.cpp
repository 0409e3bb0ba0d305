#include <gtest/gtest.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "microcarla/bench.hpp"
#include "microcarla/transport.hpp"

using namespace microcarla;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MICROCARLA_CLI + "\" " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  CliRun r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int rc = pclose(p);
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return r;
}

fs::path temp(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("microcarla_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, BadInputsExitTwo) {
  EXPECT_EQ(cli("serve --town /nonexistent/town.json").code, 2);
  EXPECT_EQ(cli("serve --pace fast").code, 2);
  EXPECT_EQ(cli("bench --task loop").code, 2);
  EXPECT_EQ(cli("bench --town c").code, 2);
  EXPECT_EQ(cli("bench --all --task straight").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("replay /nonexistent.jsonl").code, 2);
}

TEST(Cli, UnreachableAgentIsRuntimeFailure) {
  const CliRun r = cli("bench --agent tcp:127.0.0.1:1 --task straight --town a --timeout-ms 500");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("cannot reach agent"), std::string::npos);
}

TEST(Cli, RecordReplayAndDivergence) {
  const fs::path demo = temp("demo.jsonl");
  const CliRun rec = cli("record --expert pilot --minutes 0.5 --seed 3 --out \"" + demo.string() + "\"");
  ASSERT_EQ(rec.code, 0) << rec.output;
  std::vector<std::string> lines;
  {
    std::ifstream f(demo);
    for (std::string l; std::getline(f, l);) lines.push_back(l);
  }
  ASSERT_EQ(lines.size(), 301u);  // header + 30 s at 10 Hz
  EXPECT_EQ(cli("replay \"" + demo.string() + "\"").code, 0);

  // Tamper with the stored frame of sample 40: replay must stop there.
  auto j = nlohmann::json::parse(lines[41]);
  ASSERT_EQ(j.at("tick"), 40);
  j["frame"]["measurements"]["speed_kmh"] = j["frame"]["measurements"]["speed_kmh"].get<double>() + 1.0;
  lines[41] = j.dump();
  {
    std::ofstream f(demo, std::ios::trunc);
    for (const auto& l : lines) f << l << "\n";
  }
  const CliRun bad = cli("replay \"" + demo.string() + "\"");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("divergence_tick 40"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("speed_kmh"), std::string::npos);
  fs::remove(demo);
}

TEST(Cli, BenchWritesReportsAndReportReadsThem) {
  const fs::path out = temp("bench");
  const CliRun r = cli("bench --agent pilot --task straight --town b --seed 2 --jobs 2 --out \"" + out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("Straight"), std::string::npos);
  const auto records = read_episodes(out / "episodes.jsonl");
  ASSERT_EQ(records.size(), 25u);
  for (const auto& rec : records) {
    EXPECT_EQ(rec.config.condition, Condition::NewTown);
    EXPECT_EQ(rec.config.town, "town_b");
  }
  EXPECT_TRUE(fs::exists(out / "summary.csv"));

  const fs::path again = temp("bench_again");
  const CliRun rep = cli("report \"" + out.string() + "\" --out \"" + again.string() + "\"");
  ASSERT_EQ(rep.code, 0) << rep.output;
  std::ifstream a(out / "summary.txt"), b(again / "summary.txt");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  fs::remove_all(out);
  fs::remove_all(again);
}

TEST(Cli, ServeAnswersTcpAndWebsocket) {
  // The shell prints its pid and then becomes the server.
  const std::string cmd = std::string("echo $$; exec \"") + MICROCARLA_CLI + "\" serve --town a --port 0 --ws 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  char line[512];
  ASSERT_TRUE(fgets(line, sizeof line, p));
  const pid_t pid = std::stoi(line);
  int port = 0;
  bool stats = false;
  while (fgets(line, sizeof line, p)) {
    const std::string l = line;
    if (l.find("town_a") != std::string::npos) stats = true;
    const auto at = l.find("listening on 127.0.0.1:");
    if (at != std::string::npos) {
      port = std::stoi(l.substr(at + 23));
      break;
    }
  }
  EXPECT_TRUE(stats);
  ASSERT_GT(port, 0);
  {
    ClientSession tcp("127.0.0.1", port);
    EXPECT_EQ(tcp.town_id(), "town_a");
    ClientOptions o;
    o.websocket = true;
    ClientSession ws("127.0.0.1", port, o);
    MetaCommand m;
    EXPECT_EQ(ws.reset(m).tick, 0);
    EXPECT_EQ(ws.step({0.0, 0.5, 0.0}).tick, 1);
  }
  kill(pid, SIGTERM);
  pclose(p);
}
