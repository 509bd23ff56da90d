#include "doctest.h"

#include <algorithm>
#include <random>

#include "httplib.h"
#include "oracles.hpp"
#include "surgqa/grounding.hpp"
#include "surgqa/metrics.hpp"
#include "surgqa/text.hpp"
#include "surgqa/util.hpp"
#include "test_support.hpp"

using namespace surgqa;
using namespace surgqa::metrics;

namespace {

std::vector<EvalPair> to_pairs(const std::vector<oracle::Pair>& in,
                               ConversationParadigm paradigm = ConversationParadigm::kVisualQA) {
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    EvalPair p;
    p.record_id = "r" + std::to_string(i);
    p.paradigm = paradigm;
    p.reference = in[i].ref;
    p.prediction = in[i].hyp;
    out.push_back(p);
  }
  return out;
}

EvalPair text_pair(std::string ref, std::string hyp) {
  EvalPair p;
  p.record_id = "x";
  p.reference = std::move(ref);
  p.prediction = std::move(hyp);
  return p;
}

}  // namespace

TEST_CASE("normalize_answer examples") {
  CHECK(text::normalize_answer("Three.") == "3");
  CHECK(text::normalize_answer("  Prograsp   Forceps ") == "prograsp forceps");
  CHECK(text::normalize_answer("") == "");
  CHECK(text::normalize_answer("TEN!") == "10");
  CHECK(text::normalize_answer("eleven") == "eleven");
}

TEST_CASE("tokenize keeps decimals and hyphenated labels") {
  auto t = text::tokenize("Kidney [0.10, 0.20] at the left-top.");
  CHECK(t == std::vector<std::string>{"kidney", "0.10", "0.20", "at", "the", "left-top"});
}

TEST_CASE("porter stems agree with the fixture stem table") {
  CHECK(text::porter_stem("grasping") == text::porter_stem("grasped"));
  CHECK(text::porter_stem("grasping") == "grasp");
  CHECK(text::porter_stem("cutting") == "cut");
  CHECK(text::porter_stem("caresses") == "caress");
  CHECK(text::porter_stem("ponies") == "poni");
  CHECK(text::porter_stem("relational") == "relat");
  CHECK(text::porter_stem("hopping") == "hop");
  CHECK(text::porter_stem("filing") == "file");
  CHECK(text::porter_stem("generalization") == "gener");
  // The oracle's stem classes over its vocabulary must match Porter's exactly.
  const auto& v = oracle::vocabulary();
  for (const auto& a : v) {
    for (const auto& b : v) {
      bool same_lib = a == b || text::porter_stem(a) == text::porter_stem(b);
      bool same_oracle = a == b || oracle::stem(a) == oracle::stem(b);
      CHECK_MESSAGE(same_lib == same_oracle, a << " / " << b);
    }
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy({text_pair("three", "Three."), text_pair("idle", "idle")}) == 100.0);
  CHECK(accuracy({text_pair("a", "b")}) == 0.0);
  std::vector<EvalPair> p{text_pair("a", "a"), text_pair("b", "b"), text_pair("c", "c"), text_pair("d", "x")};
  CHECK(accuracy(p) == doctest::Approx(75.0));
  CHECK_THROWS_AS(accuracy({}), ValidationError);
}

TEST_CASE("macro F1") {
  CHECK(macro_f1({text_pair("a", "a"), text_pair("b", "b")}) == doctest::Approx(100.0));
  CHECK(macro_f1({text_pair("a", "b"), text_pair("a", "c")}) == 0.0);
  // a: 2 correct; b: 1 of 2 correct, the miss predicted as a.
  std::vector<oracle::Pair> fx{{"a", "a"}, {"a", "a"}, {"b", "b"}, {"b", "a"}};
  CHECK(macro_f1(to_pairs(fx)) == doctest::Approx(oracle::macro_f1(fx)).epsilon(1e-12));
  CHECK(macro_f1(to_pairs(fx)) == doctest::Approx(100.0 * (0.8 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("iou examples and properties") {
  BoundingBox a{0, 0, 0.5, 0.5}, b{0.25, 0.25, 0.75, 0.75};
  CHECK(std::abs(iou(a, b) - 1.0 / 7.0) < 1e-12);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BoundingBox{0.6, 0.6, 0.9, 0.9}) == 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    auto x = oracle::random_box(rng), y = oracle::random_box(rng);
    BoundingBox bx{x.x1, x.y1, x.x2, x.y2}, by{y.x1, y.y1, y.x2, y.y2};
    double v = iou(bx, by);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(iou(by, bx)).epsilon(1e-15));
    CHECK(std::abs(v - oracle::iou(x, y)) < 1e-12);
    CHECK(iou(bx, bx) == doctest::Approx(1.0));
  }
}

TEST_CASE("mean IoU and AP@50") {
  auto grounded = [](const std::string& id, BoundingBox ref, std::string pred) {
    EvalPair p;
    p.record_id = id;
    p.paradigm = ConversationParadigm::kGroundingQA;
    p.reference = generation::render_grounding("obj", ref);
    p.prediction = std::move(pred);
    return p;
  };
  BoundingBox r{0.0, 0.0, 0.5, 0.5};
  SUBCASE("echo") {
    std::vector<EvalPair> p{grounded("1", r, generation::render_grounding("obj", r))};
    CHECK(mean_iou(p) == doctest::Approx(100.0));
    CHECK(ap_at_50(p) == doctest::Approx(100.0));
  }
  SUBCASE("unparseable predictions score zero") {
    std::vector<EvalPair> p{grounded("1", r, "somewhere on the left"), grounded("2", r, "[0.9, 0.9, 0.1, 0.1]")};
    CHECK(mean_iou(p) == 0.0);
    CHECK(ap_at_50(p) == 0.0);
  }
  SUBCASE("IoU set {1, .6, .4, 0} gives AP@50 = 50") {
    // Boxes sharing y extent; widths chosen so IoU is exactly the target.
    BoundingBox ref{0.0, 0.0, 0.5, 1.0};
    auto with_iou = [&](double t) { return BoundingBox{0.0, 0.0, 0.5 * t, 1.0}; };
    std::vector<EvalPair> p{
        grounded("a", ref, generation::render_grounding("o", ref)),
        grounded("b", ref, generation::render_grounding("o", with_iou(0.6))),
        grounded("c", ref, generation::render_grounding("o", with_iou(0.4))),
        grounded("d", ref, "no box")};
    CHECK(ap_at_50(p) == doctest::Approx(50.0));
    CHECK(mean_iou(p) == doctest::Approx(100.0 * (1 + 0.6 + 0.4 + 0) / 4));
  }
  SUBCASE("IoU 0.49 misses the threshold") {
    BoundingBox ref{0.0, 0.0, 1.0, 1.0};
    std::vector<EvalPair> p{grounded("a", ref, "x [0.00, 0.00, 0.49, 1.00]")};
    CHECK(ap_at_50(p) == 0.0);
  }
  SUBCASE("reference without a box is skipped with a warning") {
    EvalPair bad;
    bad.record_id = "nobox";
    bad.reference = "left-top";
    bad.prediction = "x [0.0, 0.0, 0.5, 0.5]";
    std::vector<std::string> warnings;
    std::vector<EvalPair> p{grounded("1", r, generation::render_grounding("obj", r)), bad};
    CHECK(mean_iou(p, &warnings) == doctest::Approx(100.0));
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("nobox") != std::string::npos);
  }
  SUBCASE("mixed fixture of 10 against the per-pair oracle") {
    std::mt19937_64 rng(11);
    std::vector<EvalPair> p;
    double sum = 0;
    int hits = 0;
    for (int i = 0; i < 10; ++i) {
      auto rb = oracle::random_box(rng), pb = oracle::random_box(rng);
      BoundingBox ref{rb.x1, rb.y1, rb.x2, rb.y2};
      std::string pred = i % 4 == 3 ? "cannot tell" : generation::render_grounding("p", {pb.x1, pb.y1, pb.x2, pb.y2});
      double v = i % 4 == 3 ? 0.0 : oracle::iou(rb, pb);
      sum += v;
      hits += v >= 0.5;
      p.push_back(grounded(std::to_string(i), ref, pred));
    }
    CHECK(std::abs(mean_iou(p) - 100 * sum / 10) < 1e-9);
    CHECK(std::abs(ap_at_50(p) - 10.0 * hits) < 1e-9);
  }
}

TEST_CASE("BLEU") {
  std::vector<oracle::Pair> same{{"the forceps is grasping the kidney", "the forceps is grasping the kidney"}};
  CHECK(bleu(to_pairs(same), 4) == doctest::Approx(100.0));
  std::vector<oracle::Pair> disjoint{{"the forceps is idle", "kidney tissue cutting knife"}};
  CHECK(bleu(to_pairs(disjoint), 4) <= 1e-3);
  std::vector<oracle::Pair> two{{"the forceps is grasping the kidney", "the forceps grasps the kidney"},
                                {"the knife is idle at the top", "knife idle at the left top"}};
  for (int n : {3, 4}) CHECK(std::abs(bleu(to_pairs(two), n) - oracle::bleu(two, n)) < 1e-6);
  CHECK(bleu(to_pairs({{"a b c", ""}}), 4) == 0.0);
}

TEST_CASE("CIDEr") {
  std::vector<oracle::Pair> one{{"the forceps is idle", "the forceps is idle"}};
  CHECK(cider(to_pairs(one)) == doctest::Approx(oracle::cider(one)));
  std::vector<oracle::Pair> echo{{"the forceps is idle", "the forceps is idle"},
                                 {"the knife is cutting tissue", "the knife is cutting tissue"}};
  double self = cider(to_pairs(echo));
  CHECK(self == doctest::Approx(oracle::cider(echo)));
  CHECK(self <= 10.0 + 1e-12);
  CHECK(self > 0.0);
  std::vector<oracle::Pair> none{{"the forceps is idle", "kidney cutting knife"}, {"the knife", "left top"}};
  CHECK(cider(to_pairs(none)) == 0.0);
}

TEST_CASE("METEOR") {
  std::vector<oracle::Pair> four{{"the forceps is idle", "the forceps is idle"}};
  CHECK(meteor(to_pairs(four)) == doctest::Approx(99.21875).epsilon(1e-12));
  CHECK(meteor(to_pairs({{"the forceps", "kidney knife"}})) == 0.0);
  // Stem-only alignment.
  double stem = meteor(to_pairs({{"grasped", "grasping"}}));
  CHECK(stem == doctest::Approx(50.0));  // one match, one chunk: 1 - 0.5
  CHECK(meteor(to_pairs({{"a b", ""}})) == 0.0);
}

TEST_CASE("ROUGE") {
  std::vector<oracle::Pair> same{{"the forceps is idle", "the forceps is idle"}};
  CHECK(rouge(to_pairs(same), RougeVariant::kRouge1) == doctest::Approx(100.0));
  CHECK(rouge(to_pairs(same), RougeVariant::kRougeL) == doctest::Approx(100.0));
  std::vector<oracle::Pair> swap{{"a b c", "a c b"}};
  CHECK(rouge(to_pairs(swap), RougeVariant::kRouge1) == doctest::Approx(100.0));
  CHECK(rouge(to_pairs(swap), RougeVariant::kRougeL) == doctest::Approx(200.0 / 3.0));
  CHECK(rouge(to_pairs({{"a b", "c d"}}), RougeVariant::kRougeL) == 0.0);
  CHECK(rouge(to_pairs({{"a b", ""}}), RougeVariant::kRouge1) == 0.0);
}

TEST_CASE("randomized fixtures match the brute-force oracles") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    auto fx = oracle::random_text_fixture(rng);
    auto p = to_pairs(fx);
    CHECK(std::abs(bleu(p, 3) - oracle::bleu(fx, 3)) < 1e-6);
    CHECK(std::abs(bleu(p, 4) - oracle::bleu(fx, 4)) < 1e-6);
    CHECK(std::abs(cider(p) - oracle::cider(fx)) < 1e-6);
    CHECK(std::abs(meteor(p) - oracle::meteor(fx)) < 1e-6);
    CHECK(std::abs(rouge(p, RougeVariant::kRouge1) - oracle::rouge1(fx)) < 1e-6);
    CHECK(std::abs(rouge(p, RougeVariant::kRougeL) - oracle::rougeL(fx)) < 1e-6);
    auto lf = oracle::random_label_fixture(rng);
    auto lp = to_pairs(lf, ConversationParadigm::kSinglePhrase);
    CHECK(std::abs(accuracy(lp) - oracle::accuracy(lf)) < 1e-6);
    CHECK(std::abs(macro_f1(lp) - oracle::macro_f1(lf)) < 1e-6);
  }
}

TEST_CASE("metrics are permutation invariant and monotone under appending the reference") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto fx = oracle::random_text_fixture(rng);
    auto p = to_pairs(fx);
    auto q = p;
    std::shuffle(q.begin(), q.end(), rng);
    CHECK(bleu(p, 4) == doctest::Approx(bleu(q, 4)).epsilon(1e-12));
    CHECK(cider(p) == doctest::Approx(cider(q)).epsilon(1e-12));
    CHECK(meteor(p) == doctest::Approx(meteor(q)).epsilon(1e-12));
    CHECK(rouge(p, RougeVariant::kRougeL) == doctest::Approx(rouge(q, RougeVariant::kRougeL)).epsilon(1e-12));
  }
  for (int trial = 0; trial < 50; ++trial) {
    auto ref = oracle::random_sentence(rng, 1, 8);
    EvalPair empty = text_pair(ref, "");
    EvalPair full = text_pair(ref, ref);
    CHECK(bleu({full}, 4) >= bleu({empty}, 4));
    CHECK(meteor({full}) >= meteor({empty}));
    CHECK(rouge({full}, RougeVariant::kRouge1) >= rouge({empty}, RougeVariant::kRouge1));
    CHECK(rouge({full}, RougeVariant::kRougeL) >= rouge({empty}, RougeVariant::kRougeL));
  }
}

namespace {

class FlakyJudge final : public JudgeClient {
 public:
  double rate(std::string_view ref, std::string_view pred) override {
    if (++calls_ == 2) throw JudgeError("transport failure");
    return stub_.rate(ref, pred);
  }

 private:
  int calls_ = 0;
  StubJudge stub_;
};

}  // namespace

TEST_CASE("judge score") {
  StubJudge stub;
  CHECK(judge_score({text_pair("the forceps is idle", "the forceps is idle")}, stub).score == doctest::Approx(100.0));
  CHECK(judge_score({text_pair("the forceps", "kidney knife")}, stub).score == 0.0);
  FlakyJudge flaky;
  std::vector<EvalPair> four(4, text_pair("a b", "a b"));
  auto r = judge_score(four, flaky);
  CHECK(r.coverage() == doctest::Approx(0.75));
  CHECK(r.scored == 3);
  CHECK(r.score == doctest::Approx(100.0));
}

TEST_CASE("HTTP judge against a local endpoint") {
  httplib::Server srv;
  srv.Post("/judge", [](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    double s = j["reference"] == j["prediction"] ? 100.0 : 25.0;
    if (req.get_header_value("Authorization") != "Bearer secret") {
      res.status = 401;
      return;
    }
    res.set_content(nlohmann::json{{"score", s}}.dump(), "application/json");
  });
  int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  generation::EndpointConfig cfg{fmt::format("http://127.0.0.1:{}/judge", port), "secret", std::chrono::seconds(5)};
  HttpJudgeClient judge(cfg);
  CHECK(judge.rate("a", "a") == 100.0);
  CHECK(judge.rate("a", "b") == 25.0);
  HttpJudgeClient bad({fmt::format("http://127.0.0.1:{}/judge", port), "wrong", std::chrono::seconds(5)});
  CHECK_THROWS_AS(bad.rate("a", "a"), JudgeError);
  srv.stop();
  t.join();
  CHECK_THROWS_AS(HttpJudgeClient({"https://example.org/x", "", std::chrono::seconds(1)}), ValidationError);
}

TEST_CASE("evaluate routes paradigms to their metric sets") {
  auto refs = metrics::read_references(test_support::fixture("eval/references.jsonl"));
  auto echo = metrics::read_transcript(test_support::fixture("eval/echo_transcript.jsonl"));
  std::vector<std::string> unmatched;
  auto pairs = join_pairs(refs, echo, unmatched);
  CHECK(unmatched.empty());
  auto report = evaluate(pairs);
  std::map<std::string, std::set<std::string>> names;
  for (const auto& row : report.rows) {
    for (const auto& n : row.order) names[row.paradigm].insert(n);
    for (const auto& [n, v] : row.values) {
      REQUIRE(v.value.has_value());
      if (n == "METEOR" || n == "CIDEr") continue;
      CHECK_MESSAGE(*v.value == doctest::Approx(100.0).epsilon(1e-12), row.paradigm << "/" << row.subtask << " " << n);
    }
  }
  CHECK(names["single_phrase"] == std::set<std::string>{"Acc", "F-score"});
  CHECK(names["grounding_qa"] == std::set<std::string>{"AP@50", "mIoU"});
  CHECK(names["visual_qa"] == std::set<std::string>{"BLEU-3", "BLEU-4", "CIDEr", "METEOR", "ROUGE-1", "ROUGE-L"});
  CHECK(names["region_based_qa"] == names["visual_qa"]);
  CHECK(names["detailed_description"] == std::set<std::string>{"Judge Score"});
  REQUIRE(report.judge_coverage.has_value());
  CHECK(*report.judge_coverage == 1.0);

  SUBCASE("order independence") {
    auto shuffled = pairs;
    std::mt19937_64 rng(5);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(to_json(evaluate(shuffled)) == to_json(report));
  }
  SUBCASE("metric subset marks inapplicable names") {
    EvalConfig cfg;
    cfg.metrics = {"Acc", "BLEU-4"};
    auto sub = evaluate(pairs, cfg);
    for (const auto& row : sub.rows) {
      CHECK(row.order.size() == 2);
      if (row.paradigm == "single_phrase") {
        CHECK(row.values.at("Acc").value.has_value());
        CHECK(row.values.at("BLEU-4").note == "inapplicable");
      }
    }
    cfg.metrics = {"GPT-5"};
    CHECK_THROWS_AS(evaluate(pairs, cfg), ValidationError);
  }
}

TEST_CASE("evaluate_files rejects too many unmatched ids") {
  test_support::TempDir dir;
  auto refs = dir.path / "refs.jsonl";
  auto tr = dir.path / "tr.jsonl";
  std::string r, t;
  for (int i = 0; i < 10; ++i) {
    r += fmt::format(R"({{"record_id":"r{}","paradigm":"single_phrase","subtask":"IN","text":"two"}})", i) + "\n";
    if (i < 9) t += fmt::format(R"({{"record_id":"r{}","text":"two"}})", i) + "\n";
  }
  write_file_atomic(refs, r);
  write_file_atomic(tr, t);
  auto ok = evaluate_files(tr, refs);
  CHECK(ok.unmatched == std::vector<std::string>{"r9"});
  t += R"({"record_id":"zz","text":"two"})" "\n";
  t += R"({"record_id":"zy","text":"two"})" "\n";
  write_file_atomic(tr, t);
  CHECK_THROWS_AS(evaluate_files(tr, refs), ValidationError);
}
