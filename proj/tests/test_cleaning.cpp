#include "doctest.h"

#include <cmath>
#include <fstream>

#include "corpus_fixture.hpp"
#include "surgqa/cleaning.hpp"
#include "surgqa/corpus_io.hpp"
#include "surgqa/util.hpp"
#include "test_support.hpp"

using namespace surgqa;
using namespace surgqa::cleaning;
using generation::SubTask;

namespace {

ReviewDecision edit(const std::string& id, std::string text) {
  ReviewDecision d;
  d.record_id = id;
  d.verdict = Verdict::kEdit;
  d.edited_text = std::move(text);
  d.issues = {IssueTag::kClarity};
  d.timestamp = "2026-01-01T00:00:00Z";
  return d;
}

ReviewDecision flag(const std::string& id, IssueTag issue = IssueTag::kRelevance) {
  ReviewDecision d;
  d.record_id = id;
  d.verdict = Verdict::kFlag;
  d.issues = {issue};
  d.timestamp = "2026-01-01T00:00:00Z";
  return d;
}

ReviewDecision accept(const std::string& id) {
  ReviewDecision d;
  d.record_id = id;
  d.timestamp = "2026-01-01T00:00:00Z";
  return d;
}

/// Session whose sample is exactly `ids`.
ReviewSession session_over(const std::vector<InstructionRecord>& corpus, std::vector<std::string> ids) {
  ReviewSession s;
  s.corpus_digest = corpus_digest(corpus);
  s.sample = std::move(ids);
  for (const auto& id : s.sample) {
    for (const auto& r : corpus) {
      if (r.record_id == id) s.sampled_records.emplace(id, r);
    }
  }
  return s;
}

std::string stratum(const InstructionRecord& r) {
  return std::string(generation::to_string(r.paradigm)) + "/" + std::string(generation::to_string(*r.subtask));
}

}  // namespace

TEST_CASE("sampling") {
  auto corpus = fixture::review_corpus(100);
  auto s = sample_for_review(corpus, 0.2, 7);
  CHECK(s.sample.size() == 20);
  CHECK(std::set<std::string>(s.sample.begin(), s.sample.end()).size() == 20);
  CHECK(s.sample == sample_for_review(corpus, 0.2, 7).sample);
  CHECK(s.sample != sample_for_review(corpus, 0.2, 8).sample);
  CHECK(sample_for_review(corpus, 1.0, 1).sample.size() == 100);
  CHECK_THROWS_AS(sample_for_review(corpus, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(sample_for_review(corpus, 1.5, 1), ValidationError);
  CHECK_THROWS_AS(sample_for_review({}, 0.2, 1), ValidationError);
  CHECK(s.sampled_records.size() == 20);
  CHECK(s.corpus_digest == corpus_digest(corpus));
}

TEST_CASE("stratified sample sizes over random corpora") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> size(1, 180);
  std::uniform_real_distribution<double> ratio(0.01, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    auto corpus = fixture::review_corpus(size(rng));
    double r = ratio(rng);
    auto s = sample_for_review(corpus, r, trial);
    CHECK(s.sample.size() == static_cast<std::size_t>(std::ceil(r * corpus.size() - 1e-9)));
    std::map<std::string, std::size_t> total, picked;
    std::set<std::string> ids(s.sample.begin(), s.sample.end());
    for (const auto& rec : corpus) {
      total[stratum(rec)]++;
      picked[stratum(rec)] += ids.count(rec.record_id);
    }
    for (const auto& [k, n] : total) {
      double exact = r * n;
      CHECK(picked[k] + 1e-9 >= std::floor(exact + 1e-9));
      CHECK(picked[k] <= std::floor(exact + 1e-9) + 1);
    }
  }
}

TEST_CASE("decision validation and last write wins") {
  auto corpus = fixture::review_corpus(10);
  auto s = session_over(corpus, {"rec-000", "rec-001"});
  ReviewDecision bad_edit = edit("rec-000", "x");
  bad_edit.edited_text.reset();
  CHECK_THROWS_AS(record_decision(s, bad_edit), ValidationError);
  ReviewDecision bad_flag = flag("rec-000");
  bad_flag.issues.clear();
  CHECK_THROWS_AS(record_decision(s, bad_flag), ValidationError);
  CHECK_THROWS_AS(record_decision(s, accept("rec-009")), ValidationError);
  CHECK_THROWS_AS(parse_verdict("maybe"), ValidationError);

  record_decision(s, accept("rec-000"));
  CHECK(s.next_undecided() == 1u);
  record_decision(s, flag("rec-000"));
  CHECK(s.decisions.at("rec-000").verdict == Verdict::kFlag);
  record_decision(s, accept("rec-001"));
  CHECK_FALSE(s.next_undecided().has_value());

  auto d = edit("rec-001", "The prograsp forceps is idle.");
  CHECK(decision_from_json(to_json(d)) == d);
}

TEST_CASE("compile_rules") {
  auto corpus = fixture::review_corpus(30);
  // rec-000, 005, 010, 015, 020, 025 carry "forcep".
  auto s = session_over(corpus, {"rec-000", "rec-005", "rec-001"});
  record_decision(s, edit("rec-000", "The prograsp forceps is idle."));
  SUBCASE("one occurrence is below the threshold") { CHECK(compile_rules(s, 2).empty()); }
  SUBCASE("two occurrences make a rule") {
    record_decision(s, edit("rec-005", "The prograsp forceps is idle."));
    auto rules = compile_rules(s, 2);
    REQUIRE(rules.size() == 1);
    CHECK(rules[0].action == CleaningRule::Action::kReplace);
    CHECK(rules[0].match == "forcep");
    CHECK(rules[0].replacement == "forceps");
    CHECK(rules[0].origin == std::vector<std::string>{"rec-000", "rec-005"});
    CHECK(compile_rules(s, 3).empty());
  }
  SUBCASE("accepts alone yield nothing") {
    auto t = session_over(corpus, {"rec-000", "rec-005", "rec-001"});
    for (const auto& id : t.sample) record_decision(t, accept(id));
    CHECK(compile_rules(t, 1).empty());
  }
  SUBCASE("overlapping substitutions are refused") {
    auto t = session_over(corpus, {"rec-000", "rec-005"});
    record_decision(t, edit("rec-000", "The prograsp forcep forcep is idle."));
    record_decision(t, edit("rec-005", "The prograsp forcep forcep is idle."));
    for (const auto& r : compile_rules(t, 1)) CHECK(r.action != CleaningRule::Action::kReplace);
  }
  SUBCASE("relevance flags become scoped drop rules") {
    auto t = session_over(corpus, {"rec-001", "rec-002"});
    record_decision(t, flag("rec-001"));
    record_decision(t, flag("rec-002", IssueTag::kClarity));
    auto rules = compile_rules(t, 2);
    REQUIRE(rules.size() == 1);
    CHECK(rules[0].action == CleaningRule::Action::kDrop);
    CHECK(rules[0].match == corpus[1].last_answer()->text);
    CHECK(rules[0].template_id == corpus[1].template_id);
  }
}

TEST_CASE("replace_whole_words") {
  CHECK(replace_whole_words("forcep and forceps, forcep.", "forcep", "forceps") == "forceps and forceps, forceps.");
  CHECK(replace_whole_words("aaa", "aa", "b") == "aaa");
  CHECK(replace_whole_words("left top left", "left top", "left-top") == "left-top left");
}

TEST_CASE("apply_rules hits, conservation and idempotence") {
  std::vector<InstructionRecord> corpus;
  for (int i = 0; i < 5; ++i) {
    corpus.push_back(fixture::record(fmt::format("f{}", i), SubTask::kInstrumentMotion, "What is happening?",
                                     "The prograsp forcep is idle."));
  }
  corpus.push_back(fixture::record("g0", SubTask::kTargetTissue, "Which tissue?", "The kidney is the target."));
  corpus.push_back(fixture::record("g1", SubTask::kTargetTissue, "Which tissue?", "The kidney is the target."));
  auto s = session_over(corpus, {"f0", "f1", "g0"});
  record_decision(s, edit("f0", "The prograsp forceps is idle."));
  record_decision(s, edit("f1", "The prograsp forceps is idle."));
  record_decision(s, flag("g0"));
  auto rules = compile_rules(s, 2);
  REQUIRE(rules.size() == 2);

  auto out = apply_rules(corpus, rules, s);
  std::size_t replaced = 0, edited = 0, dropped = 0;
  for (const auto& e : out.log.entries) {
    replaced += e.action == "replaced";
    edited += e.action == "edited";
    dropped += e.action == "dropped";
  }
  CHECK(replaced == 3);
  CHECK(edited == 2);
  CHECK(dropped == 2);  // g0 by decision, g1 by the drop rule
  CHECK(out.corpus.size() + dropped == corpus.size());
  CHECK(out.log.conflicts.empty());
  for (const auto& r : out.corpus) {
    CHECK(r.last_answer()->text.find("forcep ") == std::string::npos);
    CHECK(r.first_question()->text == "What is happening?");
  }
  // Surviving records keep corpus order.
  std::size_t cursor = 0;
  for (const auto& r : out.corpus) {
    while (cursor < corpus.size() && corpus[cursor].record_id != r.record_id) ++cursor;
    CHECK(cursor < corpus.size());
  }

  auto twice = apply_rules(out.corpus, rules);
  CHECK(corpus_to_jsonl(twice.corpus) == corpus_to_jsonl(out.corpus));
  CHECK(twice.log.entries.empty());
}

TEST_CASE("non-commuting rules produce a conflict and leave the record alone") {
  std::vector<InstructionRecord> corpus{
      fixture::record("a", SubTask::kInstrumentCategory, "Which tool?", "The prograsp forcep is idle."),
      fixture::record("b", SubTask::kInstrumentCategory, "Which tool?", "A forcep is idle.")};
  CleaningRule r1{"replace-1", CleaningRule::Action::kReplace, "forcep", "forceps", "", "", {}};
  CleaningRule r2{"replace-2", CleaningRule::Action::kReplace, "prograsp forcep", "grasper", "", "", {}};
  auto out = apply_rules(corpus, {r1, r2});
  REQUIRE(out.log.conflicts.size() == 1);
  CHECK(out.log.conflicts[0].record_id == "a");
  CHECK(out.corpus[0].last_answer()->text == "The prograsp forcep is idle.");
  CHECK(out.corpus[1].last_answer()->text == "A forceps is idle.");

  CleaningRule drop{"drop-1", CleaningRule::Action::kDrop, "A forcep is idle.", "", "Which tool?",
                    corpus[1].template_id, {}};
  auto out2 = apply_rules(corpus, {r1, drop});
  REQUIRE(out2.log.conflicts.size() == 1);
  CHECK(out2.log.conflicts[0].record_id == "b");
  CHECK(out2.corpus.size() == 2);
}

TEST_CASE("decision log replay reproduces the session") {
  test_support::TempDir dir;
  auto corpus = fixture::review_corpus(100);
  auto s = sample_for_review(corpus, 0.2, 3);
  DecisionLog log(dir.path / "decisions.jsonl");
  log.write_header(s);
  for (std::size_t i = 0; i < s.sample.size(); ++i) {
    const auto& id = s.sample[i];
    if (i % 3 == 0) record_decision(s, accept(id), &log);
    if (i % 3 == 1) record_decision(s, flag(id, IssueTag::kCompleteness), &log);
    if (i % 3 == 2) record_decision(s, edit(id, "Rewritten answer text."), &log);
  }
  record_decision(s, accept(s.sample[1]), &log);  // override

  auto replayed = replay_session(corpus, log.path());
  CHECK(replayed.sample == s.sample);
  CHECK(replayed.decisions == s.decisions);
  CHECK(replayed.cursor == s.cursor);
  auto a = apply_rules(corpus, compile_rules(s), s);
  auto b = apply_rules(corpus, compile_rules(replayed), replayed);
  CHECK(corpus_to_jsonl(a.corpus) == corpus_to_jsonl(b.corpus));
  CHECK(to_json(a.log) == to_json(b.log));

  SUBCASE("torn final line is ignored") {
    std::ofstream(log.path(), std::ios::app) << R"({"type":"decision","record_id":"rec)";
    CHECK(replay_session(corpus, log.path()).decisions == s.decisions);
  }
  SUBCASE("corruption in the middle is an error") {
    auto text = read_file(log.path());
    auto pos = text.find('\n');
    text.insert(pos + 1, "garbage\n");
    write_file_atomic(log.path(), text);
    CHECK_THROWS_AS(replay_session(corpus, log.path()), ValidationError);
  }
  SUBCASE("corpus mismatch is an error") {
    auto other = fixture::review_corpus(99);
    CHECK_THROWS_AS(replay_session(other, log.path()), ValidationError);
  }
}
