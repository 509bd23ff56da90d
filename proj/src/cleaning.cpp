#include "surgqa/cleaning.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "surgqa/corpus_io.hpp"
#include "surgqa/util.hpp"

namespace surgqa::cleaning {

using nlohmann::json;

std::string_view to_string(IssueTag t) noexcept {
  switch (t) {
    case IssueTag::kCompleteness: return "completeness";
    case IssueTag::kRelevance: return "relevance";
    case IssueTag::kClarity: return "clarity";
  }
  return "clarity";
}

IssueTag parse_issue(std::string_view text) {
  auto key = to_lower(trim(text));
  for (auto t : {IssueTag::kCompleteness, IssueTag::kRelevance, IssueTag::kClarity}) {
    if (key == to_string(t)) return t;
  }
  throw ValidationError(fmt::format(
      "unknown issue '{}'; expected completeness, relevance or clarity", text));
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::kAccept: return "accept";
    case Verdict::kEdit: return "edit";
    case Verdict::kFlag: return "flag";
  }
  return "accept";
}

Verdict parse_verdict(std::string_view text) {
  auto key = to_lower(trim(text));
  for (auto v : {Verdict::kAccept, Verdict::kEdit, Verdict::kFlag}) {
    if (key == to_string(v)) return v;
  }
  throw ValidationError(fmt::format("unknown verdict '{}'; expected accept, edit or flag", text));
}

void validate(const ReviewDecision& d) {
  if (d.record_id.empty()) throw ValidationError("decision has no record_id");
  if (d.verdict == Verdict::kEdit && (!d.edited_text || trim(*d.edited_text).empty())) {
    throw ValidationError(fmt::format("{}: edit verdict requires edited_text", d.record_id));
  }
  if (d.verdict == Verdict::kFlag && d.issues.empty()) {
    throw ValidationError(fmt::format("{}: flag verdict requires at least one issue", d.record_id));
  }
}

json to_json(const ReviewDecision& d) {
  json issues = json::array();
  for (auto t : d.issues) issues.push_back(to_string(t));
  json j{{"record_id", d.record_id},
         {"verdict", to_string(d.verdict)},
         {"issues", issues},
         {"note", d.note},
         {"timestamp", d.timestamp}};
  j["edited_text"] = d.edited_text ? json(*d.edited_text) : json(nullptr);
  return j;
}

ReviewDecision decision_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("decision must be a JSON object");
  ReviewDecision d;
  auto str = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw ValidationError(fmt::format("decision.{} must be a string", key));
    return it->get<std::string>();
  };
  d.record_id = str("record_id");
  if (!j.contains("verdict")) throw ValidationError("decision.verdict is required");
  d.verdict = parse_verdict(str("verdict"));
  if (auto it = j.find("issues"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError("decision.issues must be an array");
    for (const auto& v : *it) {
      if (!v.is_string()) throw ValidationError("decision.issues entries must be strings");
      d.issues.insert(parse_issue(v.get<std::string>()));
    }
  }
  if (auto it = j.find("edited_text"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ValidationError("decision.edited_text must be a string");
    d.edited_text = it->get<std::string>();
  }
  d.note = str("note");
  d.timestamp = str("timestamp");
  return d;
}

std::string utc_timestamp_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const CleaningRule& r) {
  json j{{"rule_id", r.rule_id},
         {"action", r.action == CleaningRule::Action::kReplace ? "replace" : "drop_record"},
         {"match", r.match},
         {"origin", r.origin}};
  if (r.action == CleaningRule::Action::kReplace) {
    j["with"] = r.replacement;
  } else {
    j["question"] = r.question;
    j["template_id"] = r.template_id;
  }
  return j;
}

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::optional<std::size_t> find_whole_word(std::string_view text, std::string_view match,
                                           std::size_t from) {
  if (match.empty()) return std::nullopt;
  for (auto pos = text.find(match, from); pos != std::string_view::npos;
       pos = text.find(match, pos + 1)) {
    const auto end = pos + match.size();
    const bool left_ok = pos == 0 || !word_char(text[pos - 1]) || !word_char(match.front());
    const bool right_ok = end == text.size() || !word_char(text[end]) || !word_char(match.back());
    if (left_ok && right_ok) return pos;
  }
  return std::nullopt;
}

std::set<std::string> words_of(std::string_view text) {
  std::set<std::string> out;
  std::string cur;
  for (char c : text) {
    if (word_char(c)) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

}  // namespace

std::string replace_whole_words(std::string_view text, std::string_view match,
                                std::string_view replacement) {
  std::string out;
  std::size_t from = 0;
  while (auto pos = find_whole_word(text, match, from)) {
    out.append(text.substr(from, *pos - from));
    out.append(replacement);
    from = *pos + match.size();
  }
  out.append(text.substr(from));
  return out;
}

bool ReviewSession::is_sampled(std::string_view record_id) const {
  return sampled_records.count(std::string(record_id)) > 0;
}

std::optional<std::size_t> ReviewSession::next_undecided() const {
  for (std::size_t i = cursor; i < sample.size(); ++i) {
    if (!decisions.count(sample[i])) return i;
  }
  for (std::size_t i = 0; i < std::min(cursor, sample.size()); ++i) {
    if (!decisions.count(sample[i])) return i;
  }
  return std::nullopt;
}

std::string corpus_digest(const std::vector<InstructionRecord>& corpus) {
  return hex64(fnv1a64(corpus_to_jsonl(corpus)));
}

ReviewSession sample_for_review(const std::vector<InstructionRecord>& corpus, double ratio,
                                std::uint64_t seed) {
  if (corpus.empty()) throw ValidationError("cannot sample an empty corpus");
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ValidationError(fmt::format("sampling ratio must be in (0, 1], got {}", ratio));
  }
  constexpr double kEps = 1e-9;
  const std::size_t n = corpus.size();
  const auto target = static_cast<std::size_t>(std::ceil(ratio * double(n) - kEps));

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = corpus[i];
    strata[fmt::format("{}|{}", generation::to_string(r.paradigm),
                       r.subtask ? generation::to_string(*r.subtask) : "-")]
        .push_back(i);
  }

  struct Alloc {
    std::string key;
    std::size_t take;
    double remainder;
    std::uint64_t tiebreak;
  };
  std::vector<Alloc> alloc;
  std::size_t allocated = 0;
  for (const auto& [key, members] : strata) {
    const double exact = ratio * double(members.size());
    const auto base = static_cast<std::size_t>(std::floor(exact + kEps));
    alloc.push_back({key, base, exact - double(base), derive_seed(seed, key)});
    allocated += base;
  }
  std::vector<std::size_t> order(alloc.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (alloc[a].remainder != alloc[b].remainder) return alloc[a].remainder > alloc[b].remainder;
    return alloc[a].tiebreak < alloc[b].tiebreak;
  });
  for (std::size_t k = 0; allocated < target && k < order.size(); ++k) {
    auto& a = alloc[order[k]];
    if (a.take < strata[a.key].size()) {
      ++a.take;
      ++allocated;
    }
  }

  std::vector<std::size_t> picked;
  for (const auto& a : alloc) {
    auto members = strata[a.key];
    std::mt19937_64 rng(derive_seed(seed, "stratum|" + a.key));
    std::shuffle(members.begin(), members.end(), rng);
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(a.take));
  }
  std::sort(picked.begin(), picked.end());
  std::mt19937_64 rng(derive_seed(seed, "review-order"));
  std::shuffle(picked.begin(), picked.end(), rng);

  ReviewSession s;
  s.corpus_digest = corpus_digest(corpus);
  s.ratio = ratio;
  s.seed = seed;
  for (auto i : picked) {
    s.sample.push_back(corpus[i].record_id);
    s.sampled_records.emplace(corpus[i].record_id, corpus[i]);
  }
  return s;
}

void DecisionLog::append_line(const std::string& line) const {
  int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open decision log " + path_.string());
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    auto w = ::write(fd, p, left);
    if (w < 0) {
      ::close(fd);
      throw IoError("cannot append to decision log " + path_.string());
    }
    p += w;
    left -= static_cast<std::size_t>(w);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw IoError("fsync failed on decision log " + path_.string());
  }
  ::close(fd);
}

void DecisionLog::write_header(const ReviewSession& session) const {
  if (!enabled()) return;
  json header{{"type", "session"},
              {"corpus_digest", session.corpus_digest},
              {"ratio", session.ratio},
              {"seed", session.seed},
              {"sample", session.sample}};
  append_line(header.dump());
}

void DecisionLog::append(const ReviewDecision& decision) const {
  if (!enabled()) return;
  json j = to_json(decision);
  j["type"] = "decision";
  append_line(j.dump());
}

namespace {

void store_decision(ReviewSession& session, const ReviewDecision& decision) {
  session.decisions[decision.record_id] = decision;
  while (session.cursor < session.sample.size() &&
         session.decisions.count(session.sample[session.cursor])) {
    ++session.cursor;
  }
}

}  // namespace

ReviewSession& record_decision(ReviewSession& session, const ReviewDecision& decision,
                               const DecisionLog* log) {
  validate(decision);
  if (!session.is_sampled(decision.record_id)) {
    throw ValidationError(fmt::format("record '{}' is not part of the review sample",
                                      decision.record_id));
  }
  if (log) log->append(decision);
  store_decision(session, decision);
  return session;
}

ReviewSession replay_session(const std::vector<InstructionRecord>& corpus,
                             const std::filesystem::path& log_path) {
  auto lines = read_lines(log_path);
  std::optional<ReviewSession> session;
  std::size_t line_no = 0;
  for (const auto& raw : lines) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      // A torn final line from a crash mid-append is ignored; anything else is corruption.
      if (line_no == lines.size()) break;
      throw ValidationError(fmt::format("{}:{}: malformed log line", log_path.string(), line_no));
    }
    auto type = j.value("type", std::string());
    if (type == "session") {
      if (session) throw ValidationError(log_path.string() + ": duplicate session header");
      ReviewSession s;
      s.corpus_digest = j.at("corpus_digest").get<std::string>();
      s.ratio = j.at("ratio").get<double>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.sample = j.at("sample").get<std::vector<std::string>>();
      if (s.corpus_digest != corpus_digest(corpus)) {
        throw ValidationError(log_path.string() + ": corpus digest does not match the logged session");
      }
      std::map<std::string, const InstructionRecord*> by_id;
      for (const auto& r : corpus) by_id[r.record_id] = &r;
      for (const auto& id : s.sample) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ValidationError("logged sample id '" + id + "' not in corpus");
        s.sampled_records.emplace(id, *it->second);
      }
      session = std::move(s);
    } else if (type == "decision") {
      if (!session) throw ValidationError(log_path.string() + ": decision before session header");
      auto d = decision_from_json(j);
      validate(d);
      if (!session->is_sampled(d.record_id)) {
        throw ValidationError(fmt::format("{}:{}: decision for unsampled record '{}'",
                                          log_path.string(), line_no, d.record_id));
      }
      store_decision(*session, d);
    } else {
      throw ValidationError(fmt::format("{}:{}: unknown entry type '{}'", log_path.string(),
                                        line_no, type));
    }
  }
  if (!session) throw ValidationError(log_path.string() + ": log has no session header");
  return std::move(*session);
}

namespace {

struct Substitution {
  std::string from;
  std::string to;
};

// Character diff widened to word boundaries on both ends.
std::optional<Substitution> single_substitution(std::string_view a, std::string_view b) {
  if (a == b) return std::nullopt;
  std::size_t p = 0;
  while (p < a.size() && p < b.size() && a[p] == b[p]) ++p;
  while (p > 0 && word_char(a[p - 1])) --p;
  const std::size_t limit = std::min(a.size(), b.size()) - p;
  std::size_t s = 0;
  while (s < limit && a[a.size() - 1 - s] == b[b.size() - 1 - s]) ++s;
  while (s > 0 && word_char(a[a.size() - s])) --s;
  auto from = trim(a.substr(p, a.size() - s - p));
  auto to = trim(b.substr(p, b.size() - s - p));
  if (from.empty()) return std::nullopt;
  return Substitution{from, to};
}

}  // namespace

std::vector<CleaningRule> compile_rules(const ReviewSession& session, std::size_t threshold) {
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> substitutions;
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<std::string>> drops;
  for (const auto& id : session.sample) {
    auto d = session.decisions.find(id);
    if (d == session.decisions.end()) continue;
    const auto& record = session.sampled_records.at(id);
    const auto* answer = record.last_answer();
    const auto* question = record.first_question();
    if (!answer) continue;
    if (d->second.verdict == Verdict::kEdit && d->second.edited_text) {
      if (auto sub = single_substitution(answer->text, trim(*d->second.edited_text))) {
        substitutions[{sub->from, sub->to}].push_back(id);
      }
    } else if (d->second.verdict == Verdict::kFlag &&
               d->second.issues.count(IssueTag::kRelevance)) {
      drops[{record.template_id, question ? question->text : std::string(), answer->text}]
          .push_back(id);
    }
  }

  std::vector<CleaningRule> rules;
  for (const auto& [sub, origin] : substitutions) {
    if (origin.size() < std::max<std::size_t>(threshold, 1)) continue;
    // Disjoint vocabularies guarantee a second pass finds nothing to replace.
    auto from_words = words_of(sub.first);
    auto to_words = words_of(sub.second);
    bool disjoint = std::none_of(from_words.begin(), from_words.end(),
                                 [&](const auto& w) { return to_words.count(w) > 0; });
    if (!disjoint) continue;
    CleaningRule r;
    r.rule_id = fmt::format("replace-{}", rules.size() + 1);
    r.action = CleaningRule::Action::kReplace;
    r.match = sub.first;
    r.replacement = sub.second;
    r.origin = origin;
    rules.push_back(std::move(r));
  }
  std::size_t drop_no = 0;
  for (const auto& [key, origin] : drops) {
    CleaningRule r;
    r.rule_id = fmt::format("drop-{}", ++drop_no);
    r.action = CleaningRule::Action::kDrop;
    r.template_id = std::get<0>(key);
    r.question = std::get<1>(key);
    r.match = std::get<2>(key);
    r.origin = origin;
    rules.push_back(std::move(r));
  }
  return rules;
}

json to_json(const ChangeLog& log) {
  json entries = json::array();
  for (const auto& e : log.entries) {
    entries.push_back({{"record_id", e.record_id},
                       {"action", e.action},
                       {"rule_ids", e.rule_ids},
                       {"before", e.before},
                       {"after", e.after}});
  }
  json conflicts = json::array();
  for (const auto& c : log.conflicts) {
    conflicts.push_back({{"record_id", c.record_id}, {"rule_ids", c.rule_ids}});
  }
  return {{"entries", entries}, {"conflicts", conflicts}};
}

namespace {

bool drop_hits(const CleaningRule& r, const InstructionRecord& rec) {
  const auto* a = rec.last_answer();
  const auto* q = rec.first_question();
  return a && q && rec.template_id == r.template_id && a->text == r.match && q->text == r.question;
}

bool replace_hits(const CleaningRule& r, const InstructionRecord& rec) {
  for (const auto& t : rec.turns) {
    if (t.role == generation::Role::kAssistant && find_whole_word(t.text, r.match, 0)) return true;
  }
  return false;
}

std::vector<generation::Turn> apply_replacements(std::vector<generation::Turn> turns,
                                                 const std::vector<const CleaningRule*>& rules) {
  for (const auto* r : rules) {
    for (auto& t : turns) {
      if (t.role != generation::Role::kAssistant) continue;
      auto text = replace_whole_words(t.text, r->match, r->replacement);
      if (text != t.text) t = generation::make_turn(t.role, text);
    }
  }
  return turns;
}

std::string assistant_text(const InstructionRecord& r) {
  std::string out;
  for (const auto& t : r.turns) {
    if (t.role != generation::Role::kAssistant) continue;
    if (!out.empty()) out += "\n";
    out += t.text;
  }
  return out;
}

}  // namespace

CleanResult apply_rules(const std::vector<InstructionRecord>& corpus,
                        const std::vector<CleaningRule>& rules, const ReviewSession& session) {
  CleanResult result;
  for (const auto& rec : corpus) {
    if (session.is_sampled(rec.record_id)) {
      auto d = session.decisions.find(rec.record_id);
      if (d == session.decisions.end() || d->second.verdict == Verdict::kAccept) {
        result.corpus.push_back(rec);
      } else if (d->second.verdict == Verdict::kFlag) {
        result.log.entries.push_back({rec.record_id, "dropped", {"decision"}, assistant_text(rec), ""});
      } else {
        InstructionRecord edited = rec;
        auto* answer = edited.last_answer();
        auto text = trim(*d->second.edited_text);
        if (answer && answer->text != text) {
          *answer = generation::make_turn(generation::Role::kAssistant, text);
          result.log.entries.push_back(
              {rec.record_id, "edited", {"decision"}, rec.last_answer()->text, text});
        }
        result.corpus.push_back(std::move(edited));
      }
      continue;
    }

    std::vector<const CleaningRule*> drop;
    std::vector<const CleaningRule*> replace;
    for (const auto& r : rules) {
      if (r.action == CleaningRule::Action::kDrop ? drop_hits(r, rec) : replace_hits(r, rec)) {
        (r.action == CleaningRule::Action::kDrop ? drop : replace).push_back(&r);
      }
    }
    auto ids = [](const std::vector<const CleaningRule*>& a, const std::vector<const CleaningRule*>& b) {
      std::vector<std::string> out;
      for (const auto* r : a) out.push_back(r->rule_id);
      for (const auto* r : b) out.push_back(r->rule_id);
      return out;
    };
    if (!drop.empty() && !replace.empty()) {
      result.log.conflicts.push_back({rec.record_id, ids(drop, replace)});
      result.corpus.push_back(rec);
      continue;
    }
    if (!drop.empty()) {
      result.log.entries.push_back({rec.record_id, "dropped", ids(drop, {}), assistant_text(rec), ""});
      continue;
    }
    if (replace.empty()) {
      result.corpus.push_back(rec);
      continue;
    }
    auto forward = apply_replacements(rec.turns, replace);
    auto reversed_rules = replace;
    std::reverse(reversed_rules.begin(), reversed_rules.end());
    auto backward = apply_replacements(rec.turns, reversed_rules);
    bool commute = forward.size() == backward.size();
    for (std::size_t i = 0; commute && i < forward.size(); ++i) {
      commute = forward[i].text == backward[i].text;
    }
    if (!commute) {
      result.log.conflicts.push_back({rec.record_id, ids(replace, {})});
      result.corpus.push_back(rec);
      continue;
    }
    InstructionRecord updated = rec;
    updated.turns = std::move(forward);
    auto before = assistant_text(rec);
    auto after = assistant_text(updated);
    if (before != after) {
      result.log.entries.push_back({rec.record_id, "replaced", ids(replace, {}), before, after});
    }
    result.corpus.push_back(std::move(updated));
  }
  return result;
}

CleanResult apply_rules(const std::vector<InstructionRecord>& corpus,
                        const std::vector<CleaningRule>& rules) {
  return apply_rules(corpus, rules, ReviewSession{});
}

}  // namespace surgqa::cleaning
