#include "doctest.h"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"
#include "surgqa/util.hpp"
#include "test_support.hpp"

#ifndef SURGQA_CLI_PATH
#error "SURGQA_CLI_PATH must be defined by the build"
#endif

using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run run(const std::vector<std::string>& args, const std::string& env = "") {
  static test_support::TempDir scratch;
  static int counter = 0;
  auto out = scratch.path / fmt::format("out{}", counter);
  auto err = scratch.path / fmt::format("err{}", counter++);
  std::string cmd = env + " " + quote(SURGQA_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = surgqa::read_file(out);
  r.err = surgqa::read_file(err);
  return r;
}

std::string fx(const std::string& rel) { return test_support::fixture(rel).string(); }

}  // namespace

TEST_CASE("help for every command exits 0") {
  for (std::string cmd : {"", "ingest", "generate", "stats", "review-serve", "apply-clean", "eval", "decode-sim"}) {
    std::vector<std::string> args;
    if (!cmd.empty()) args.push_back(cmd);
    args.push_back("--help");
    auto r = run(args);
    CHECK_MESSAGE(r.code == 0, cmd);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
}

TEST_CASE("argument and input errors map to exit codes") {
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"generate", "--output", "/tmp/x.jsonl"}).code == 1);  // missing --frames
  CHECK(run({"generate", "--frames", "/nonexistent/frames.jsonl", "-o", "/tmp/x.jsonl"}).code == 2);
  test_support::TempDir dir;
  auto bad = dir.path / "bad.jsonl";
  surgqa::write_file_atomic(bad, "{\"frame_id\": \"x\", \"objects\": 3}\n");
  auto r = run({"ingest", "--schema", "endovis", "--input", bad.string(), "-o", (dir.path / "o.jsonl").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("bad.jsonl:1:") != std::string::npos);
  CHECK(run({"ingest", "--schema", "pascal", "--input", bad.string(), "-o", (dir.path / "o.jsonl").string()}).code == 1);
}

TEST_CASE("ingest, generate twice, stats") {
  test_support::TempDir dir;
  auto frames = (dir.path / "frames.jsonl").string();
  REQUIRE(run({"ingest", "--schema", "endovis", "--input", fx("endovis_sample.jsonl"), "-o", frames}).code == 0);
  auto a = (dir.path / "a.jsonl").string(), b = (dir.path / "b.jsonl").string();
  auto conv = (dir.path / "conv.txt").string();
  REQUIRE(run({"generate", "--frames", frames, "-o", a, "--seed", "7", "--conversations", conv}).code == 0);
  REQUIRE(run({"generate", "--frames", frames, "-o", b, "--seed", "7", "--jobs", "3"}).code == 0);
  CHECK(surgqa::read_file(a) == surgqa::read_file(b));
  CHECK_FALSE(surgqa::read_file(a).empty());
  auto c = (dir.path / "c.jsonl").string();
  REQUIRE(run({"generate", "--frames", frames, "-o", c, "--seed", "8"}).code == 0);
  CHECK(surgqa::read_file(a) != surgqa::read_file(c));
  CHECK(surgqa::read_file(conv).rfind("Human: ", 0) == 0);

  auto s = run({"stats", "--corpus", a, "--json"});
  REQUIRE(s.code == 0);
  auto j = json::parse(s.out);
  CHECK(j["frames"] == 3);
  CHECK(j["records"] == surgqa::read_lines(a).size());

  auto syn = (dir.path / "syn.jsonl").string();
  REQUIRE(run({"ingest", "--synthetic", "5", "--seed", "2", "-o", syn}).code == 0);
  CHECK(surgqa::read_lines(syn).size() == 5);
  REQUIRE(run({"generate", "--frames", fx("copesd_sample.jsonl"), "--schema", "copesd", "-o", c,
               "--cap", "grounding_qa=1", "--no-visual-qa"}).code == 0);
  CHECK(run({"generate", "--frames", frames, "-o", c, "--cap", "bogus=1"}).code == 1);
}

TEST_CASE("eval of the echo transcript") {
  test_support::TempDir dir;
  auto report = (dir.path / "report.json").string();
  auto r = run({"eval", "--transcript", fx("eval/echo_transcript.jsonl"), "--references", fx("eval/references.jsonl"),
                "--report", report});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Acc") != std::string::npos);
  auto j = json::parse(surgqa::read_file(report));
  CHECK(j["rows"].size() >= 5);
  auto sub = run({"eval", "--transcript", fx("eval/echo_transcript.jsonl"), "--references", fx("eval/references.jsonl"),
                  "--metrics", "Acc,BLEU-4"});
  CHECK(sub.code == 0);
  CHECK(run({"eval", "--transcript", fx("eval/echo_transcript.jsonl"), "--references", fx("eval/references.jsonl"),
             "--metrics", "Nope"}).code == 1);
}

TEST_CASE("decode-sim on the counterexample") {
  auto r = run({"decode-sim", "--vocab", fx("vcd/vocab.txt"), "--provider", "scripted:" + fx("vcd/counterexample.txt"),
                "--alpha", "1", "--beta", "0.1", "--sigma", "0.3", "--seed", "0"});
  REQUIRE(r.code == 0);
  auto line_after = [&](const std::string& key) {
    auto pos = r.out.find(key);
    REQUIRE(pos != std::string::npos);
    return surgqa::trim(r.out.substr(pos + key.size(), r.out.find('\n', pos) - pos - key.size()));
  };
  CHECK(line_after("vcd:") == "A </s>");
  CHECK(line_after("plain:") == "B </s>");
  CHECK(run({"decode-sim", "--vocab", fx("vcd/vocab.txt"), "--provider", "magic:x"}).code == 1);
  CHECK(run({"decode-sim", "--vocab", fx("vcd/vocab.txt"), "--provider", "scripted:" + fx("vcd/counterexample.txt"),
             "--beta", "2"}).code == 1);
}

TEST_CASE("apply-clean over an undecided session keeps the corpus") {
  test_support::TempDir dir;
  auto frames = (dir.path / "frames.jsonl").string();
  auto corpus = (dir.path / "corpus.jsonl").string();
  REQUIRE(run({"ingest", "--synthetic", "6", "--seed", "1", "-o", frames}).code == 0);
  REQUIRE(run({"generate", "--frames", frames, "-o", corpus}).code == 0);
  auto log = (dir.path / "log.jsonl").string();
  // review-serve writes the session header; stop it before any decision arrives.
  pid_t pid = fork();
  if (pid == 0) {
    // dup2 rather than freopen: freopen would flush the parent's buffered output a second time.
    int devnull = open("/dev/null", O_WRONLY);
    dup2(devnull, STDOUT_FILENO);
    execl(SURGQA_CLI_PATH, SURGQA_CLI_PATH, "--log-level", "off", "review-serve", "--corpus", corpus.c_str(), "--log",
          log.c_str(), "--port", "0", static_cast<char*>(nullptr));
    _exit(127);
  }
  for (int i = 0; i < 100 && (!std::filesystem::exists(log) || std::filesystem::file_size(log) == 0); ++i) usleep(50000);
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  auto out = (dir.path / "clean.jsonl").string();
  auto changelog = (dir.path / "changes.json").string();
  auto r = run({"apply-clean", "--corpus", corpus, "--log", log, "-o", out, "--changelog", changelog});
  REQUIRE(r.code == 0);
  CHECK(surgqa::read_file(out) == surgqa::read_file(corpus));
  CHECK(run({"apply-clean", "--corpus", corpus, "--log", (dir.path / "missing.jsonl").string(), "-o", out}).code == 2);
}

TEST_CASE("review-serve answers on an ephemeral port and stops on SIGTERM") {
  test_support::TempDir dir;
  auto frames = (dir.path / "frames.jsonl").string();
  auto corpus = (dir.path / "corpus.jsonl").string();
  REQUIRE(run({"ingest", "--synthetic", "4", "--seed", "3", "-o", frames}).code == 0);
  REQUIRE(run({"generate", "--frames", frames, "-o", corpus}).code == 0);
  auto log = (dir.path / "log.jsonl").string();

  int fds[2];
  REQUIRE(pipe(fds) == 0);
  pid_t pid = fork();
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    close(fds[1]);
    setenv("SURGQA_REVIEW_TOKEN", "s3cret", 1);
    execl(SURGQA_CLI_PATH, SURGQA_CLI_PATH, "--log-level", "off", "review-serve", "--corpus", corpus.c_str(), "--log",
          log.c_str(), "--port", "0", static_cast<char*>(nullptr));
    _exit(127);
  }
  close(fds[1]);
  std::string line;
  char ch;
  while (read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
  close(fds[0]);
  auto colon = line.rfind(':');
  REQUIRE(line.rfind("listening on http://", 0) == 0);
  int port = std::stoi(line.substr(colon + 1));
  CHECK(port > 0);

  httplib::Client cli("127.0.0.1", port);
  CHECK(cli.Get("/api/session")->status == 401);
  auto s = cli.Get("/api/session", {{"Authorization", "Bearer s3cret"}});
  REQUIRE(s);
  CHECK(s->status == 200);
  auto summary = json::parse(s->body);
  CHECK(summary["sample_size"].get<int>() > 0);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
