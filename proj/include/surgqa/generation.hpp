#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "surgqa/annotations.hpp"
#include "surgqa/grounding.hpp"

namespace surgqa::generation {

using annotations::FrameAnnotation;

enum class ConversationParadigm {
  kSinglePhrase,
  kDetailedDescription,
  kVisualQA,
  kRegionBasedQA,
  kGroundingQA,
};

inline constexpr std::array<ConversationParadigm, 5> kAllParadigms = {
    ConversationParadigm::kSinglePhrase, ConversationParadigm::kDetailedDescription,
    ConversationParadigm::kVisualQA, ConversationParadigm::kRegionBasedQA,
    ConversationParadigm::kGroundingQA};

std::string_view to_string(ConversationParadigm p) noexcept;
ConversationParadigm parse_paradigm(std::string_view text);

enum class SubTask {
  kInstrumentNumber,    // IN
  kInstrumentCategory,  // IC
  kObjectPosition,      // OP
  kInstrumentMotion,    // IM
  kTargetTissue,        // TI
  kMotionDirection,     // MD
  kDescription,
};

inline constexpr std::array<SubTask, 7> kAllSubTasks = {
    SubTask::kInstrumentNumber, SubTask::kInstrumentCategory, SubTask::kObjectPosition,
    SubTask::kInstrumentMotion, SubTask::kTargetTissue,       SubTask::kMotionDirection,
    SubTask::kDescription};

/// Short tags: IN, IC, OP, IM, TI, MD, Description.
std::string_view to_string(SubTask s) noexcept;
SubTask parse_subtask(std::string_view text);

/// Observation (0), Operation (1) or Analysis (2) level of the attribute hierarchy.
int hierarchy_level(SubTask s) noexcept;

inline constexpr std::string_view kSinglePhrasePrompt = "Answer the question with a single phrase.";
inline constexpr std::string_view kGroundingPrompt = "Answer the question with just a bounding box.";
inline constexpr std::size_t kSinglePhraseMaxWords = 4;

struct QATemplate {
  std::string template_id;
  ConversationParadigm paradigm = ConversationParadigm::kSinglePhrase;
  SubTask subtask = SubTask::kInstrumentNumber;
  std::vector<std::string> question_patterns;
  std::string answer_pattern;
};

/// Slots a pattern may use. Instrument slots bind once per instrument, tissue
/// slots once per tissue; other slots bind once per frame.
inline constexpr std::array<std::string_view, 10> kKnownSlots = {
    "count", "instrument", "instrument_box", "position", "motion",
    "direction", "tissue", "tissue_box", "tissue_position", "phase"};

/// Parses the tab-separated template format
/// `paradigm TAB subtask TAB question_pattern TAB answer_pattern`.
/// Blank lines and lines starting with '#' are skipped. Lines sharing
/// (paradigm, subtask, answer_pattern) merge into one template whose question
/// pool holds every phrasing. Unknown slots raise TemplateError.
std::vector<QATemplate> parse_templates(std::string_view text);
std::vector<QATemplate> load_templates(const std::string& path);
std::vector<QATemplate> default_templates();
std::string_view default_templates_text();

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Role { kHuman, kAssistant };
std::string_view to_string(Role r) noexcept;

struct Turn {
  Role role = Role::kHuman;
  std::string text;
  std::vector<GroundedBox> boxes;
};

/// Builds a turn whose `boxes` are exactly the grounding groups parsed from
/// `text`. Newlines are folded to spaces so the text fits one serialized line.
Turn make_turn(Role role, std::string_view text);

enum class Provenance { kTemplate, kEnriched };
std::string_view to_string(Provenance p) noexcept;

struct InstructionRecord {
  std::string record_id;
  std::string frame_id;
  std::string image_path;
  annotations::SourceKind source = annotations::SourceKind::kCanonical;
  ConversationParadigm paradigm = ConversationParadigm::kSinglePhrase;
  std::optional<SubTask> subtask;
  std::string template_id;
  std::vector<Turn> turns;
  Provenance provenance = Provenance::kTemplate;

  const Turn* first_question() const;
  const Turn* last_answer() const;
  Turn* last_answer();
};

struct NumeralConfig {
  bool digits = false;  // counts as "3" instead of "three"
};

/// 0-10 as English words (or digits when configured); larger values as digits.
std::string render_count(std::size_t n, NumeralConfig cfg = {});

std::string append_task_prompt(std::string_view question, ConversationParadigm paradigm);

/// Removes a trailing task prompt added by append_task_prompt, if present.
std::string strip_task_prompt(std::string_view question);

struct InstantiateOptions {
  NumeralConfig numerals;
};

/// One record per applicable (template, binding). Question phrasings are drawn
/// from each template's pool by a stream seeded from (seed, frame_id,
/// template_id, binding). Cholec80 frames yield their own classification and
/// sentence QA as SinglePhrase and VisualQA records instead of template output.
std::vector<InstructionRecord> instantiate(const FrameAnnotation& frame,
                                           const std::vector<QATemplate>& templates,
                                           std::uint64_t seed, InstantiateOptions options = {});

class EnrichmentClient;

/// The grounded description draft (every attribute, every box) before enrichment.
std::string describe_frame(const FrameAnnotation& frame, NumeralConfig numerals = {});

struct BuildWarnings {
  std::vector<std::string> messages;
};

/// Throws ValidationError when the frame has no boxes (paradigm unavailable).
InstructionRecord assemble_detailed_description(const FrameAnnotation& frame,
                                                EnrichmentClient& enricher,
                                                std::uint64_t seed = 0,
                                                BuildWarnings* warnings = nullptr,
                                                NumeralConfig numerals = {});

/// Throws std::invalid_argument unless `record` is a SinglePhrase record.
InstructionRecord elaborate_visual_qa(const InstructionRecord& record,
                                      const FrameAnnotation& frame, EnrichmentClient& enricher,
                                      BuildWarnings* warnings = nullptr);

/// RegionBasedQA records for every boxed object, using the region templates
/// from `templates` (the shipped defaults when omitted).
std::vector<InstructionRecord> derive_region_based(const FrameAnnotation& frame,
                                                   std::uint64_t seed);
std::vector<InstructionRecord> derive_region_based(const FrameAnnotation& frame,
                                                   std::uint64_t seed,
                                                   const std::vector<QATemplate>& templates);

/// `Human: <question>\nEndoChat: <answer>\n` per pair.
std::string serialize_conversation(const InstructionRecord& record);

/// Inverse of serialize_conversation; throws ValidationError on grammar violations.
std::vector<Turn> parse_conversation(std::string_view text);

/// Groups up to `max_pairs` question/answer pairs about one frame into a
/// multi-turn conversation ordered Observation, Operation, Analysis.
std::vector<InstructionRecord> assemble_multi_turn(const std::vector<InstructionRecord>& records,
                                                   std::size_t max_pairs = 5);

struct SubtaskSplits {
  std::map<SubTask, std::vector<InstructionRecord>> buckets;
  /// VisualQA and RegionBasedQA records, which belong to no sub-task split.
  std::vector<InstructionRecord> conversational;
};

/// Partitions a corpus into the seven sub-task splits. Sub-task buckets draw
/// from SinglePhrase and GroundingQA; Description holds exactly the
/// DetailedDescription records.
SubtaskSplits derive_subtask_splits(const std::vector<InstructionRecord>& corpus);

struct StatsReport {
  std::size_t frames = 0;
  std::size_t records = 0;
  std::size_t box_records = 0;
  std::map<std::string, std::size_t> per_paradigm;
  std::map<std::string, std::size_t> per_subtask;
  std::map<std::string, std::size_t> per_source;
};

StatsReport corpus_stats(const std::vector<InstructionRecord>& corpus);

/// Checks the structural contract of the record's paradigm. Returns the list
/// of violations (empty when the record conforms).
std::vector<std::string> check_structure(const InstructionRecord& record);

struct GenerationOptions {
  std::uint64_t seed = 0;
  NumeralConfig numerals;
  /// Per-frame record cap per paradigm; absent means unlimited.
  std::map<ConversationParadigm, std::size_t> caps;
  bool visual_qa = true;
  bool detailed_description = true;
  std::size_t jobs = 1;
};

struct GenerationResult {
  std::vector<InstructionRecord> records;
  std::vector<std::string> warnings;
};

/// Whole pipeline over a frame list: template instantiation, VisualQA
/// elaboration of SinglePhrase answers, detailed descriptions, per-paradigm
/// caps. Output order follows the input frame order regardless of `jobs`.
GenerationResult generate_corpus(const std::vector<FrameAnnotation>& frames,
                                 const std::vector<QATemplate>& templates,
                                 EnrichmentClient& enricher, const GenerationOptions& options);

}  // namespace surgqa::generation
