#include "doctest.h"

#include <fstream>

#include "corpus_fixture.hpp"
#include "httplib.h"
#include "surgqa/corpus_io.hpp"
#include "surgqa/review_server.hpp"
#include "surgqa/util.hpp"
#include "test_support.hpp"

using namespace surgqa;
using namespace surgqa::cleaning;
using nlohmann::json;

namespace {

struct Harness {
  test_support::TempDir dir;
  std::vector<InstructionRecord> corpus = fixture::review_corpus(50);
  ReviewSession session = sample_for_review(corpus, 0.2, 11);
  std::unique_ptr<ReviewServer> server;
  std::unique_ptr<httplib::Client> client;
  int port = 0;

  explicit Harness(std::string token = "tok") {
    std::filesystem::create_directories(dir.path / "images");
    for (const auto& id : session.sample) {
      std::ofstream(dir.path / "images" / session.sampled_records.at(id).image_path) << "PNG:" << id;
    }
    DecisionLog log(dir.path / "log.jsonl");
    log.write_header(session);
    ServerConfig cfg;
    cfg.port = 0;
    cfg.token = std::move(token);
    cfg.images_dir = dir.path / "images";
    cfg.output_dir = dir.path / "out";
    server = std::make_unique<ReviewServer>(cfg, corpus, session, log);
    port = server->start_background();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_default_headers({{"Authorization", "Bearer tok"}});
  }
  ~Harness() { server->stop(); }

  httplib::Result decide(const std::string& id, const json& body) {
    return client->Post("/api/items/" + id + "/decision", body.dump(), "application/json");
  }
};

}  // namespace

TEST_CASE("token is required on the API") {
  Harness h;
  httplib::Client anon("127.0.0.1", h.port);
  auto r = anon.Get("/api/session");
  REQUIRE(r);
  CHECK(r->status == 401);
  auto ok = anon.Get("/api/session", {{"X-Review-Token", "tok"}});
  REQUIRE(ok);
  CHECK(ok->status == 200);
  auto wrong = anon.Get("/api/session", {{"Authorization", "Bearer nope"}});
  CHECK(wrong->status == 401);
}

TEST_CASE("session, items and decisions") {
  Harness h;
  auto s = h.client->Get("/api/session");
  REQUIRE(s);
  REQUIRE(s->status == 200);
  auto summary = json::parse(s->body);
  CHECK(summary["sample_size"] == 10);
  CHECK(summary["corpus_size"] == 50);
  CHECK(summary["done"] == false);

  auto next = h.client->Get("/api/items/next");
  REQUIRE(next->status == 200);
  auto item = json::parse(next->body);
  const std::string first = h.session.sample[0];
  CHECK(item["record_id"] == first);
  CHECK(item["index"] == 0);
  CHECK(item["turns"].size() == 2);
  CHECK(item["turns"][0]["role"] == "human");
  CHECK(item["decision"].is_null());
  CHECK(item["progress"]["total"] == 10);

  auto img = h.client->Get(item["image_url"].get<std::string>());
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->body == "PNG:" + first);
  CHECK(h.client->Get("/api/images/unknown-frame")->status == 404);

  SUBCASE("bad bodies are rejected with 400") {
    CHECK(h.client->Post("/api/items/" + first + "/decision", "{not json", "application/json")->status == 400);
    CHECK(h.decide(first, {{"verdict", "edit"}})->status == 400);
    CHECK(h.decide(first, {{"verdict", "flag"}, {"issues", json::array()}})->status == 400);
    CHECK(h.decide(first, {{"verdict", "shrug"}})->status == 400);
    CHECK(h.decide(first, {{"verdict", "accept"}, {"record_id", "other"}})->status == 400);
  }
  SUBCASE("foreign ids are 404") {
    std::string foreign;
    for (const auto& r : h.corpus) {
      if (!h.session.is_sampled(r.record_id)) {
        foreign = r.record_id;
        break;
      }
    }
    CHECK(h.decide(foreign, {{"verdict", "accept"}})->status == 404);
    CHECK(h.client->Get("/api/items/" + foreign)->status == 404);
  }
  SUBCASE("decisions persist, advance and can be revisited") {
    REQUIRE(h.decide(first, {{"verdict", "accept"}})->status == 204);
    auto n2 = json::parse(h.client->Get("/api/items/next")->body);
    CHECK(n2["record_id"] == h.session.sample[1]);
    REQUIRE(h.decide(first, {{"verdict", "flag"}, {"issues", {"relevance"}}, {"note", "off topic"}})->status == 204);
    auto again = json::parse(h.client->Get("/api/items/" + first)->body);
    CHECK(again["decision"]["verdict"] == "flag");
    auto replayed = replay_session(h.corpus, h.dir.path / "log.jsonl");
    CHECK(replayed.decisions == h.server->session_snapshot().decisions);
    CHECK(replayed.decisions.at(first).verdict == Verdict::kFlag);
  }
}

TEST_CASE("finishing the queue and finalize") {
  Harness h;
  for (std::size_t i = 0; i < h.session.sample.size(); ++i) {
    const auto& id = h.session.sample[i];
    const auto& rec = h.session.sampled_records.at(id);
    json body{{"verdict", "accept"}};
    if (rec.last_answer()->text.find("forcep") != std::string::npos) {
      body = {{"verdict", "edit"}, {"edited_text", "The prograsp forceps is idle."}, {"issues", {"clarity"}}};
    }
    REQUIRE(h.decide(id, body)->status == 204);
  }
  CHECK(h.client->Get("/api/items/next")->status == 204);
  CHECK(json::parse(h.client->Get("/api/session")->body)["done"] == true);

  auto fin = h.client->Post("/api/finalize", "", "application/json");
  REQUIRE(fin->status == 200);
  auto out = json::parse(fin->body);
  CHECK(out["corpus_size"] == 50);
  auto cleaned = read_corpus(h.dir.path / "out" / "cleaned.jsonl");
  CHECK(cleaned.size() == 50);
  CHECK(std::filesystem::exists(h.dir.path / "out" / "rules.json"));
  auto changelog = json::parse(read_file(h.dir.path / "out" / "changelog.json"));
  CHECK(changelog["entries"] == out["entries"]);
  std::size_t edited_forcep = 0;
  for (const auto& id : h.session.sample) {
    edited_forcep += h.session.sampled_records.at(id).last_answer()->text.find("forcep") != std::string::npos;
  }
  if (edited_forcep >= 2) {
    REQUIRE(out["rules"].size() == 1);
    for (const auto& r : cleaned) CHECK(r.last_answer()->text.find("forcep ") == std::string::npos);
  }
}

TEST_CASE("no token configured means open API; bind failures are IoError") {
  Harness h("");
  httplib::Client anon("127.0.0.1", h.port);
  CHECK(anon.Get("/api/session")->status == 200);

  ServerConfig cfg;
  cfg.port = h.port;  // already taken
  ReviewServer clash(cfg, h.corpus, h.session, DecisionLog());
  CHECK_THROWS_AS(clash.bind(), IoError);
}
