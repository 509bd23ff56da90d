#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgqa/generation.hpp"

namespace surgqa::cleaning {

using generation::InstructionRecord;

enum class IssueTag { kCompleteness, kRelevance, kClarity };
std::string_view to_string(IssueTag t) noexcept;
IssueTag parse_issue(std::string_view text);

enum class Verdict { kAccept, kEdit, kFlag };
std::string_view to_string(Verdict v) noexcept;
Verdict parse_verdict(std::string_view text);

struct ReviewDecision {
  std::string record_id;
  Verdict verdict = Verdict::kAccept;
  std::set<IssueTag> issues;
  std::optional<std::string> edited_text;
  std::string note;
  std::string timestamp;  // ISO-8601 UTC

  friend bool operator==(const ReviewDecision&, const ReviewDecision&) = default;
};

/// edit requires edited_text, flag requires at least one issue.
void validate(const ReviewDecision& d);

nlohmann::json to_json(const ReviewDecision& d);
ReviewDecision decision_from_json(const nlohmann::json& j);

std::string utc_timestamp_now();

struct CleaningRule {
  enum class Action { kReplace, kDrop };
  std::string rule_id;
  Action action = Action::kReplace;
  /// Replace rules: whole-word literal searched in assistant text.
  /// Drop rules: exact assistant text.
  std::string match;
  std::string replacement;
  /// Drop rules also require the exact question and the same template.
  std::string question;
  std::string template_id;
  std::vector<std::string> origin;

  friend bool operator==(const CleaningRule&, const CleaningRule&) = default;
};

nlohmann::json to_json(const CleaningRule& r);

/// Replaces every leftmost non-overlapping whole-word occurrence of `match`.
std::string replace_whole_words(std::string_view text, std::string_view match,
                                std::string_view replacement);

struct ReviewSession {
  std::string corpus_digest;
  double ratio = 0.2;
  std::uint64_t seed = 0;
  std::vector<std::string> sample;
  std::size_t cursor = 0;
  std::map<std::string, ReviewDecision> decisions;
  /// Sampled records as they were when sampled; rule compilation diffs against these.
  std::map<std::string, InstructionRecord> sampled_records;

  bool is_sampled(std::string_view record_id) const;
  /// Index into `sample` of the first undecided item at or after the cursor, if any.
  std::optional<std::size_t> next_undecided() const;
};

std::string corpus_digest(const std::vector<InstructionRecord>& corpus);

/// ceil(ratio * N) records drawn without replacement, stratified by
/// (paradigm, sub-task): each stratum gets floor(ratio * n) plus at most one
/// more by largest remainder. Throws ValidationError for an empty corpus or a
/// ratio outside (0, 1].
ReviewSession sample_for_review(const std::vector<InstructionRecord>& corpus, double ratio,
                                std::uint64_t seed);

/// Append-only line-delimited decision log: a session header line followed by
/// one line per decision. Appends are flushed and fsync'd before returning.
class DecisionLog {
 public:
  DecisionLog() = default;
  explicit DecisionLog(std::filesystem::path path) : path_(std::move(path)) {}

  bool enabled() const noexcept { return !path_.empty(); }
  const std::filesystem::path& path() const noexcept { return path_; }

  void write_header(const ReviewSession& session) const;
  void append(const ReviewDecision& decision) const;

 private:
  void append_line(const std::string& line) const;
  std::filesystem::path path_;
};

/// Validates, persists (when `log` is enabled) and then stores the decision.
/// Last write wins; the cursor advances past decided items.
ReviewSession& record_decision(ReviewSession& session, const ReviewDecision& decision,
                               const DecisionLog* log = nullptr);

/// Rebuilds a session from its log. The corpus must match the logged digest.
ReviewSession replay_session(const std::vector<InstructionRecord>& corpus,
                             const std::filesystem::path& log_path);

/// Edits whose diff is one contiguous phrase substitution seen in at least
/// `threshold` records become replace rules; relevance flags become drop
/// rules scoped to their template.
std::vector<CleaningRule> compile_rules(const ReviewSession& session, std::size_t threshold = 2);

struct ChangeEntry {
  std::string record_id;
  std::string action;  // edited | dropped | replaced
  std::vector<std::string> rule_ids;
  std::string before;
  std::string after;
};

struct Conflict {
  std::string record_id;
  std::vector<std::string> rule_ids;
};

struct ChangeLog {
  std::vector<ChangeEntry> entries;
  std::vector<Conflict> conflicts;
};

nlohmann::json to_json(const ChangeLog& log);

struct CleanResult {
  std::vector<InstructionRecord> corpus;
  ChangeLog log;
};

/// Sampled records take their explicit decisions (edit applied, flag drops);
/// rules touch only non-sampled records. A record hit by rules that do not
/// commute is left unchanged and reported as a conflict.
CleanResult apply_rules(const std::vector<InstructionRecord>& corpus,
                        const std::vector<CleaningRule>& rules, const ReviewSession& session);
CleanResult apply_rules(const std::vector<InstructionRecord>& corpus,
                        const std::vector<CleaningRule>& rules);

}  // namespace surgqa::cleaning
