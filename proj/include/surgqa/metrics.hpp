#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgqa/enrichment.hpp"
#include "surgqa/generation.hpp"

namespace surgqa::metrics {

using annotations::BoundingBox;
using generation::ConversationParadigm;
using generation::SubTask;

struct EvalPair {
  std::string record_id;
  ConversationParadigm paradigm = ConversationParadigm::kSinglePhrase;
  std::optional<SubTask> subtask;
  std::string reference;
  std::optional<BoundingBox> reference_box;
  std::string prediction;
};

// Metric names as they appear in reports.
inline constexpr std::string_view kAcc = "Acc";
inline constexpr std::string_view kFScore = "F-score";
inline constexpr std::string_view kAP50 = "AP@50";
inline constexpr std::string_view kMIoU = "mIoU";
inline constexpr std::string_view kBleu3 = "BLEU-3";
inline constexpr std::string_view kBleu4 = "BLEU-4";
inline constexpr std::string_view kCider = "CIDEr";
inline constexpr std::string_view kMeteor = "METEOR";
inline constexpr std::string_view kRouge1 = "ROUGE-1";
inline constexpr std::string_view kRougeL = "ROUGE-L";
inline constexpr std::string_view kJudge = "Judge Score";

/// Metric set applicable to a paradigm, in report order.
std::vector<std::string> metrics_for(ConversationParadigm paradigm);
std::vector<std::string> all_metric_names();

// All scoring functions throw ValidationError on an empty pair list.

double accuracy(const std::vector<EvalPair>& pairs);

/// Per-class F1 over the classes present in the normalized references,
/// macro-averaged. Predictions outside that set only count as misses.
double macro_f1(const std::vector<EvalPair>& pairs);

double iou(const BoundingBox& a, const BoundingBox& b);

struct BoxScores {
  /// IoU per scored pair; unparseable predictions contribute 0.
  std::vector<double> ious;
  std::vector<std::string> warnings;
};

/// Reference boxes come from `reference_box` or else the first grounding
/// group in the reference text; pairs with neither are skipped with a warning.
BoxScores box_scores(const std::vector<EvalPair>& pairs);
double mean_iou(const std::vector<EvalPair>& pairs, std::vector<std::string>* warnings = nullptr);
double ap_at_50(const std::vector<EvalPair>& pairs, std::vector<std::string>* warnings = nullptr);

/// Corpus BLEU-n with add-epsilon smoothing of empty precisions.
double bleu(const std::vector<EvalPair>& pairs, int n);

/// CIDEr-D on the 0..10 scale; document frequencies over the references.
double cider(const std::vector<EvalPair>& pairs);

/// Exact then Porter-stem alignment; no synonym stage.
double meteor(const std::vector<EvalPair>& pairs);

enum class RougeVariant { kRouge1, kRougeL };
double rouge(const std::vector<EvalPair>& pairs, RougeVariant variant);

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rates a prediction against its reference on [0, 100].
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual double rate(std::string_view reference, std::string_view prediction) = 0;
};

/// Deterministic stand-in: the pair's ROUGE-L F1 on the 0..100 scale.
class StubJudge final : public JudgeClient {
 public:
  double rate(std::string_view reference, std::string_view prediction) override;
};

/// POSTs {"reference", "prediction"} and expects {"score": number}.
class HttpJudgeClient final : public JudgeClient {
 public:
  explicit HttpJudgeClient(generation::EndpointConfig config);
  double rate(std::string_view reference, std::string_view prediction) override;

 private:
  generation::EndpointConfig config_;
};

struct JudgeResult {
  double score = 0.0;  // mean over scored pairs
  std::size_t scored = 0;
  std::size_t total = 0;
  double coverage() const { return total == 0 ? 0.0 : double(scored) / double(total); }
};

JudgeResult judge_score(const std::vector<EvalPair>& pairs, JudgeClient& judge);

struct MetricValue {
  std::optional<double> value;  // absent when inapplicable or unscorable
  std::string note;
};

struct ReportRow {
  std::string paradigm;
  std::string subtask;  // "all" for the paradigm aggregate, "-" when untagged
  std::size_t pairs = 0;
  std::map<std::string, MetricValue> values;
  std::vector<std::string> order;  // metric names in display order
};

struct MetricReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> unmatched;
  std::vector<std::string> warnings;
  std::optional<double> judge_coverage;
};

nlohmann::json to_json(const MetricReport& report);
std::string to_table(const MetricReport& report);

struct EvalConfig {
  /// Empty selects every applicable metric; otherwise only these names, and
  /// requested names that do not apply to a paradigm are marked inapplicable.
  std::set<std::string> metrics;
  JudgeClient* judge = nullptr;  // the stub judge when null
  double max_unmatched_fraction = 0.10;
};

/// Scores matched pairs bucketed by (paradigm, sub-task), plus one aggregate
/// row per paradigm. Throws ValidationError when more than the allowed
/// fraction of references has no prediction or of predictions no reference.
MetricReport evaluate(const std::vector<EvalPair>& pairs, const EvalConfig& config = {});

struct ReferenceEntry {
  std::string record_id;
  ConversationParadigm paradigm = ConversationParadigm::kSinglePhrase;
  std::optional<SubTask> subtask;
  std::string text;
  std::optional<BoundingBox> box;
};

/// References: corpus records (with "turns"; the last assistant turn is the
/// reference) or {record_id, text, paradigm, subtask?, box?} lines.
std::vector<ReferenceEntry> read_references(const std::filesystem::path& path);
/// Transcript lines {record_id, text}.
std::map<std::string, std::string> read_transcript(const std::filesystem::path& path);

/// Joins references and predictions by record_id. Unmatched ids from either
/// side are appended to `unmatched`.
std::vector<EvalPair> join_pairs(const std::vector<ReferenceEntry>& references,
                                 const std::map<std::string, std::string>& transcript,
                                 std::vector<std::string>& unmatched);

MetricReport evaluate_files(const std::filesystem::path& transcript,
                            const std::filesystem::path& references, const EvalConfig& config = {});

}  // namespace surgqa::metrics
