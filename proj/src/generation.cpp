#include "surgqa/generation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "surgqa/enrichment.hpp"
#include "surgqa/util.hpp"

namespace surgqa::generation {

using annotations::SourceKind;

std::string_view to_string(Role r) noexcept { return r == Role::kHuman ? "human" : "assistant"; }

std::string_view to_string(Provenance p) noexcept {
  return p == Provenance::kTemplate ? "template" : "enriched";
}

Turn make_turn(Role role, std::string_view text) {
  std::string folded(text);
  std::replace(folded.begin(), folded.end(), '\n', ' ');
  std::replace(folded.begin(), folded.end(), '\r', ' ');
  folded = trim(folded);
  Turn t{role, folded, {}};
  t.boxes = parse_grounding(t.text).boxes;
  return t;
}

const Turn* InstructionRecord::first_question() const {
  for (const auto& t : turns) {
    if (t.role == Role::kHuman) return &t;
  }
  return nullptr;
}

const Turn* InstructionRecord::last_answer() const {
  for (auto it = turns.rbegin(); it != turns.rend(); ++it) {
    if (it->role == Role::kAssistant) return &*it;
  }
  return nullptr;
}

Turn* InstructionRecord::last_answer() {
  return const_cast<Turn*>(std::as_const(*this).last_answer());
}

std::string render_count(std::size_t n, NumeralConfig cfg) {
  static constexpr std::array<const char*, 11> kWords = {
      "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  if (!cfg.digits && n < kWords.size()) return kWords[n];
  return std::to_string(n);
}

std::string append_task_prompt(std::string_view question, ConversationParadigm paradigm) {
  std::string q = trim(question);
  switch (paradigm) {
    case ConversationParadigm::kSinglePhrase: return q + " " + std::string(kSinglePhrasePrompt);
    case ConversationParadigm::kGroundingQA: return q + " " + std::string(kGroundingPrompt);
    default: return q;
  }
}

std::string strip_task_prompt(std::string_view question) {
  std::string q = trim(question);
  for (auto prompt : {kSinglePhrasePrompt, kGroundingPrompt}) {
    if (q.size() >= prompt.size() && q.compare(q.size() - prompt.size(), prompt.size(), prompt) == 0) {
      return trim(std::string_view(q).substr(0, q.size() - prompt.size()));
    }
  }
  return q;
}

namespace {

using Bindings = std::map<std::string, std::string, std::less<>>;

const std::regex& slot_regex() {
  static const std::regex re(R"(\{([A-Za-z_]+)\})");
  return re;
}

std::set<std::string> slots_of(std::string_view pattern) {
  std::set<std::string> out;
  std::string s(pattern);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), slot_regex());
       it != std::sregex_iterator(); ++it) {
    out.insert((*it)[1]);
  }
  return out;
}

// Substitutes every slot; nullopt when any slot has no value in `b`.
std::optional<std::string> fill(std::string_view pattern, const Bindings& b) {
  std::string s(pattern);
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), slot_regex());
       it != std::sregex_iterator(); ++it) {
    auto found = b.find((*it)[1].str());
    if (found == b.end()) return std::nullopt;
    out.append(s, last, static_cast<std::size_t>(it->position(0)) - last);
    out += found->second;
    last = static_cast<std::size_t>(it->position(0) + it->length(0));
  }
  out.append(s, last, std::string::npos);
  return out;
}

enum class Scope { kFrame, kInstrument, kTissue };

Scope scope_of(const std::set<std::string>& slots) {
  for (const char* s : {"instrument", "instrument_box", "position", "motion", "direction"}) {
    if (slots.count(s)) return Scope::kInstrument;
  }
  for (const char* s : {"tissue", "tissue_box", "tissue_position"}) {
    if (slots.count(s)) return Scope::kTissue;
  }
  return Scope::kFrame;
}

void bind_tissue(Bindings& b, const annotations::TissueObservation& t) {
  b["tissue"] = t.name;
  if (t.box) {
    b["tissue_box"] = render_grounding(t.name, *t.box);
    b["tissue_position"] = std::string(annotations::to_string(annotations::position_of(*t.box)));
  }
}

Bindings frame_bindings(const FrameAnnotation& f, NumeralConfig numerals) {
  Bindings b;
  b["count"] = render_count(f.instrument_count(), numerals);
  if (f.phase) b["phase"] = *f.phase;
  if (!f.tissues.empty()) bind_tissue(b, f.tissues.front());
  return b;
}

struct Binding {
  std::string key;  // f, i<k>, t<k>
  Bindings values;
};

std::vector<Binding> bindings_for(Scope scope, const FrameAnnotation& f, NumeralConfig numerals) {
  std::vector<Binding> out;
  const Bindings base = frame_bindings(f, numerals);
  switch (scope) {
    case Scope::kFrame:
      out.push_back({"f", base});
      break;
    case Scope::kInstrument:
      for (std::size_t i = 0; i < f.instruments.size(); ++i) {
        const auto& inst = f.instruments[i];
        Bindings b = base;
        b["instrument"] = inst.category;
        if (inst.box) {
          b["instrument_box"] = render_grounding(inst.category, *inst.box);
          b["position"] = std::string(annotations::to_string(annotations::position_of(*inst.box)));
        }
        if (!trim(inst.motion).empty()) b["motion"] = inst.motion;
        if (inst.direction) b["direction"] = std::string(annotations::to_string(*inst.direction));
        out.push_back({fmt::format("i{}", i), std::move(b)});
      }
      break;
    case Scope::kTissue:
      for (std::size_t i = 0; i < f.tissues.size(); ++i) {
        Bindings b = base;
        b.erase("tissue_box");
        b.erase("tissue_position");
        bind_tissue(b, f.tissues[i]);
        out.push_back({fmt::format("t{}", i), std::move(b)});
      }
      break;
  }
  return out;
}

bool is_sentence(std::string_view text) {
  auto t = trim(text);
  if (t.empty()) return false;
  char last = t.back();
  return split_whitespace(t).size() >= 3 && (last == '.' || last == '!' || last == '?');
}

std::string as_sentence(std::string_view text) {
  std::string s = trim(text);
  if (s.empty()) return s;
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  char last = s.back();
  if (last != '.' && last != '!' && last != '?') s += '.';
  return s;
}

std::string normalized(std::string_view text) {
  std::string out;
  for (const auto& w : split_whitespace(to_lower(text))) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

bool answer_fits(ConversationParadigm paradigm, const std::string& question,
                 const std::string& answer) {
  auto q_boxes = parse_grounding(question).boxes.size();
  auto a_parse = parse_grounding(answer);
  switch (paradigm) {
    case ConversationParadigm::kSinglePhrase:
      return a_parse.boxes.empty() && !answer.empty() &&
             split_whitespace(answer).size() <= kSinglePhraseMaxWords;
    case ConversationParadigm::kGroundingQA:
      return a_parse.boxes.size() == 1 &&
             trim(answer) == render_grounding(a_parse.boxes[0].label, a_parse.boxes[0].box);
    case ConversationParadigm::kRegionBasedQA:
      return q_boxes >= 1 && a_parse.boxes.empty() && answer.find('[') == std::string::npos;
    case ConversationParadigm::kVisualQA:
    case ConversationParadigm::kDetailedDescription:
      return is_sentence(answer);
  }
  return false;
}

InstructionRecord base_record(const FrameAnnotation& frame) {
  InstructionRecord r;
  r.frame_id = frame.frame_id;
  r.image_path = frame.image_path;
  r.source = frame.source;
  return r;
}

SubTask infer_cholec_subtask(const FrameAnnotation& frame, const annotations::SourceQA& qa) {
  if (qa.subtask) return parse_subtask(*qa.subtask);
  auto q = to_lower(qa.question);
  auto a = to_lower(trim(qa.answer));
  if (q.find("how many") != std::string::npos) return SubTask::kInstrumentNumber;
  for (const auto& inst : frame.instruments) {
    if (to_lower(inst.category) == a) return SubTask::kInstrumentCategory;
  }
  if (q.find("tool") != std::string::npos || q.find("instrument") != std::string::npos) {
    return SubTask::kInstrumentCategory;
  }
  // Phase and operation questions sit at the Operation level.
  return SubTask::kInstrumentMotion;
}

std::vector<InstructionRecord> from_source_qa(const FrameAnnotation& frame) {
  std::vector<InstructionRecord> out;
  for (std::size_t i = 0; i < frame.source_qa.size(); ++i) {
    const auto& qa = frame.source_qa[i];
    InstructionRecord r = base_record(frame);
    r.subtask = infer_cholec_subtask(frame, qa);
    if (qa.kind == annotations::SourceQA::Kind::kClassification) {
      r.paradigm = ConversationParadigm::kSinglePhrase;
      r.template_id = "source:classification";
      r.record_id = fmt::format("{}/source/q{}", frame.frame_id, i);
      r.turns.push_back(make_turn(Role::kHuman, append_task_prompt(qa.question, r.paradigm)));
      r.turns.push_back(make_turn(Role::kAssistant, qa.answer));
      if (!answer_fits(r.paradigm, r.turns[0].text, r.turns[1].text)) continue;
    } else {
      r.paradigm = ConversationParadigm::kVisualQA;
      r.template_id = "source:sentence";
      r.record_id = fmt::format("{}/source/q{}", frame.frame_id, i);
      r.turns.push_back(make_turn(Role::kHuman, qa.question));
      r.turns.push_back(make_turn(Role::kAssistant, as_sentence(qa.answer)));
      if (!answer_fits(r.paradigm, r.turns[0].text, r.turns[1].text)) continue;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t pick_index(std::uint64_t seed, std::string_view key, std::size_t n) {
  std::mt19937_64 rng(derive_seed(seed, key));
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(rng);
}

}  // namespace

std::vector<InstructionRecord> instantiate(const FrameAnnotation& frame,
                                           const std::vector<QATemplate>& templates,
                                           std::uint64_t seed, InstantiateOptions options) {
  if (frame.source == SourceKind::kCholec80) return from_source_qa(frame);

  std::vector<InstructionRecord> out;
  for (const auto& t : templates) {
    if (t.paradigm == ConversationParadigm::kDetailedDescription) continue;
    if (t.question_patterns.empty()) {
      throw TemplateError(fmt::format("template '{}' has no question pattern", t.template_id));
    }
    std::set<std::string> slots = slots_of(t.answer_pattern);
    for (const auto& q : t.question_patterns) {
      auto s = slots_of(q);
      slots.insert(s.begin(), s.end());
    }
    for (const auto& s : slots) {
      if (std::find(kKnownSlots.begin(), kKnownSlots.end(), s) == kKnownSlots.end()) {
        throw TemplateError(
            fmt::format("template '{}': unresolvable slot '{{{}}}'", t.template_id, s));
      }
    }

    struct Candidate {
      std::string key;
      std::string question_key;  // question slot values, phrasing-independent
      std::string question;
      std::string answer;
    };
    std::vector<Candidate> candidates;
    for (const auto& binding : bindings_for(scope_of(slots), frame, options.numerals)) {
      bool complete = true;
      std::string question_key;
      for (const auto& s : slots) {
        auto v = binding.values.find(s);
        if (v == binding.values.end()) {
          complete = false;
          break;
        }
      }
      if (!complete) continue;
      for (const auto& q : t.question_patterns) {
        for (const auto& s : slots_of(q)) question_key += s + "=" + binding.values.at(s) + ";";
      }
      auto idx = pick_index(seed, frame.frame_id + "|" + t.template_id + "|" + binding.key,
                            t.question_patterns.size());
      auto question = fill(t.question_patterns[idx], binding.values);
      auto answer = fill(t.answer_pattern, binding.values);
      if (!question || !answer) continue;
      auto full_question = append_task_prompt(*question, t.paradigm);
      if (!answer_fits(t.paradigm, full_question, *answer)) continue;
      candidates.push_back({binding.key, question_key, full_question, *answer});
    }

    // A question that resolves identically for different answers is ambiguous
    // (e.g. two instruments in the same grid cell); identical pairs collapse.
    std::map<std::string, std::set<std::string>> answers_per_question;
    for (const auto& c : candidates) answers_per_question[c.question_key].insert(c.answer);
    std::set<std::string> emitted;
    for (const auto& c : candidates) {
      if (answers_per_question[c.question_key].size() > 1) continue;
      if (!emitted.insert(c.question_key).second) continue;
      InstructionRecord r = base_record(frame);
      r.paradigm = t.paradigm;
      r.subtask = t.subtask;
      r.template_id = t.template_id;
      r.record_id = fmt::format("{}/{}/{}", frame.frame_id, t.template_id, c.key);
      r.turns.push_back(make_turn(Role::kHuman, c.question));
      r.turns.push_back(make_turn(Role::kAssistant, c.answer));
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string describe_frame(const FrameAnnotation& frame, NumeralConfig numerals) {
  const auto n = frame.instrument_count();
  std::string text = fmt::format("There {} {} {} in the surgical scene.", n == 1 ? "is" : "are",
                                 render_count(n, numerals), n == 1 ? "instrument" : "instruments");
  for (std::size_t i = 0; i < frame.instruments.size(); ++i) {
    const auto& inst = frame.instruments[i];
    text += fmt::format(" Instrument {}: ", i + 1);
    if (inst.box) {
      text += render_grounding(inst.category, *inst.box);
      text += fmt::format(", located at the {} of the image",
                          annotations::to_string(annotations::position_of(*inst.box)));
    } else {
      text += inst.category;
    }
    if (!trim(inst.motion).empty()) text += fmt::format(", with motion {}", inst.motion);
    if (inst.direction) {
      text += fmt::format(", moving {}", annotations::to_string(*inst.direction));
    }
    text += '.';
  }
  for (const auto& t : frame.tissues) {
    text += " Target tissue: ";
    if (t.box) {
      text += render_grounding(t.name, *t.box);
      text += fmt::format(", located at the {} of the image",
                          annotations::to_string(annotations::position_of(*t.box)));
    } else {
      text += t.name;
    }
    text += '.';
  }
  if (frame.phase) text += fmt::format(" Surgical phase: {}.", *frame.phase);
  if (frame.description_seed) text += " " + as_sentence(*frame.description_seed);
  return text;
}

namespace {

// Every attribute of the frame is mentioned and every boxed object grounded.
bool covers_frame(const FrameAnnotation& frame, std::string_view text, NumeralConfig numerals) {
  auto lower = to_lower(text);
  auto mentions = [&](std::string_view s) {
    return lower.find(to_lower(s)) != std::string::npos;
  };
  if (!mentions(render_count(frame.instrument_count(), numerals))) return false;
  std::size_t boxed = 0;
  for (const auto& i : frame.instruments) {
    if (!mentions(i.category)) return false;
    if (!trim(i.motion).empty() && !mentions(i.motion)) return false;
    if (i.direction && !mentions(annotations::to_string(*i.direction))) return false;
    if (i.box) ++boxed;
  }
  for (const auto& t : frame.tissues) {
    if (!mentions(t.name)) return false;
    if (t.box) ++boxed;
  }
  return parse_grounding(text).boxes.size() >= boxed;
}

std::vector<std::string> default_description_questions() {
  std::vector<std::string> out;
  for (const auto& t : default_templates()) {
    if (t.paradigm == ConversationParadigm::kDetailedDescription) {
      out.insert(out.end(), t.question_patterns.begin(), t.question_patterns.end());
    }
  }
  return out;
}

void warn(BuildWarnings* w, std::string msg) {
  if (w) w->messages.push_back(std::move(msg));
}

InstructionRecord description_record(const FrameAnnotation& frame, EnrichmentClient& enricher,
                                     std::uint64_t seed, BuildWarnings* warnings,
                                     NumeralConfig numerals,
                                     const std::vector<std::string>& questions) {
  if (!frame.has_boxes()) {
    throw ValidationError(fmt::format(
        "frame '{}': detailed description unavailable (no grounding boxes)", frame.frame_id));
  }
  const auto& pool = questions.empty() ? default_description_questions() : questions;
  InstructionRecord r = base_record(frame);
  r.paradigm = ConversationParadigm::kDetailedDescription;
  r.subtask = SubTask::kDescription;
  r.template_id = "detailed_description:Description:0";
  r.record_id = fmt::format("{}/{}", frame.frame_id, r.template_id);
  const auto& question = pool[pick_index(seed, frame.frame_id + "|dd", pool.size())];
  const std::string draft = describe_frame(frame, numerals);
  r.turns.push_back(make_turn(Role::kHuman, question));
  r.turns.push_back(make_turn(Role::kAssistant, draft));
  try {
    auto rewritten = trim(enricher.rewrite(
        "Rewrite this surgical scene description fluently. Keep every instrument, motion, "
        "direction, tissue, the instrument count and every bounding box exactly as given.",
        r));
    if (!covers_frame(frame, rewritten, numerals) ||
        !answer_fits(r.paradigm, r.turns[0].text, rewritten)) {
      warn(warnings, fmt::format("{}: enriched description dropped attributes; kept the draft",
                                 r.record_id));
    } else {
      *r.last_answer() = make_turn(Role::kAssistant, rewritten);
      r.provenance = Provenance::kEnriched;
    }
  } catch (const std::exception& e) {
    warn(warnings, fmt::format("{}: enrichment failed ({}); kept the draft", r.record_id, e.what()));
  }
  return r;
}

}  // namespace

InstructionRecord assemble_detailed_description(const FrameAnnotation& frame,
                                                EnrichmentClient& enricher, std::uint64_t seed,
                                                BuildWarnings* warnings, NumeralConfig numerals) {
  return description_record(frame, enricher, seed, warnings, numerals, {});
}

InstructionRecord elaborate_visual_qa(const InstructionRecord& record,
                                      const FrameAnnotation& frame, EnrichmentClient& enricher,
                                      BuildWarnings* warnings) {
  if (record.paradigm != ConversationParadigm::kSinglePhrase) {
    throw std::invalid_argument(
        fmt::format("{}: elaborate_visual_qa expects a single_phrase record", record.record_id));
  }
  const Turn* q = record.first_question();
  const Turn* a = record.last_answer();
  if (!q || !a) throw std::invalid_argument(record.record_id + ": record has no QA pair");

  InstructionRecord r = base_record(frame);
  r.paradigm = ConversationParadigm::kVisualQA;
  r.subtask = record.subtask;
  r.template_id = "visual_qa<" + record.template_id;
  r.record_id = record.record_id + "/vqa";
  r.turns.push_back(make_turn(Role::kHuman, strip_task_prompt(q->text)));

  const std::string phrase = normalized(a->text);
  std::string fallback = fmt::format("The answer is {}.", a->text);
  try {
    auto sentence = trim(enricher.rewrite(
        "Elaborate the single-phrase answer into one complete sentence that keeps the phrase.",
        record));
    if (normalized(sentence).find(phrase) == std::string::npos || !is_sentence(sentence) ||
        !parse_grounding(sentence).boxes.empty()) {
      warn(warnings, fmt::format("{}: enriched sentence lost the answer phrase; used fallback",
                                 r.record_id));
      r.turns.push_back(make_turn(Role::kAssistant, fallback));
    } else {
      r.turns.push_back(make_turn(Role::kAssistant, sentence));
      r.provenance = Provenance::kEnriched;
    }
  } catch (const std::exception& e) {
    warn(warnings, fmt::format("{}: enrichment failed ({}); used fallback", r.record_id, e.what()));
    r.turns.push_back(make_turn(Role::kAssistant, fallback));
  }
  return r;
}

std::vector<InstructionRecord> derive_region_based(const FrameAnnotation& frame,
                                                   std::uint64_t seed) {
  static const std::vector<QATemplate> defaults = default_templates();
  return derive_region_based(frame, seed, defaults);
}

std::vector<InstructionRecord> derive_region_based(const FrameAnnotation& frame,
                                                   std::uint64_t seed,
                                                   const std::vector<QATemplate>& templates) {
  if (!frame.has_boxes() || frame.source == SourceKind::kCholec80) return {};
  std::vector<QATemplate> region;
  std::copy_if(templates.begin(), templates.end(), std::back_inserter(region),
               [](const auto& t) { return t.paradigm == ConversationParadigm::kRegionBasedQA; });
  return instantiate(frame, region, seed);
}

std::string serialize_conversation(const InstructionRecord& record) {
  if (record.turns.size() < 2 || record.turns.size() % 2 != 0) {
    throw ValidationError(fmt::format("{}: record needs alternating question/answer pairs",
                                      record.record_id));
  }
  std::string out;
  for (std::size_t i = 0; i < record.turns.size(); i += 2) {
    const auto& q = record.turns[i];
    const auto& a = record.turns[i + 1];
    if (q.role != Role::kHuman || a.role != Role::kAssistant) {
      throw ValidationError(fmt::format("{}: turns must alternate human/assistant", record.record_id));
    }
    if (q.text.find('\n') != std::string::npos || a.text.find('\n') != std::string::npos) {
      throw ValidationError(fmt::format("{}: turn text contains a newline", record.record_id));
    }
    out += "Human: " + q.text + "\n" + "EndoChat: " + a.text + "\n";
  }
  return out;
}

std::vector<Turn> parse_conversation(std::string_view text) {
  std::vector<Turn> turns;
  std::size_t pos = 0;
  bool expect_human = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      throw ValidationError("conversation text must end with a newline");
    }
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    constexpr std::string_view kHuman = "Human: ";
    constexpr std::string_view kBot = "EndoChat: ";
    const auto prefix = expect_human ? kHuman : kBot;
    if (line.substr(0, prefix.size()) != prefix) {
      throw ValidationError(fmt::format("expected a line starting with '{}'", prefix));
    }
    Turn t;
    t.role = expect_human ? Role::kHuman : Role::kAssistant;
    t.text = std::string(line.substr(prefix.size()));
    t.boxes = parse_grounding(t.text).boxes;
    turns.push_back(std::move(t));
    expect_human = !expect_human;
  }
  if (turns.empty() || !expect_human) throw ValidationError("conversation must hold complete pairs");
  return turns;
}

std::vector<InstructionRecord> assemble_multi_turn(const std::vector<InstructionRecord>& records,
                                                   std::size_t max_pairs) {
  if (max_pairs == 0) throw std::invalid_argument("max_pairs must be positive");
  std::vector<std::pair<std::string, ConversationParadigm>> order;
  std::map<std::pair<std::string, ConversationParadigm>, std::vector<const InstructionRecord*>>
      groups;
  for (const auto& r : records) {
    auto key = std::make_pair(r.frame_id, r.paradigm);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<InstructionRecord> out;
  for (const auto& key : order) {
    auto members = groups[key];
    std::stable_sort(members.begin(), members.end(), [](const auto* a, const auto* b) {
      auto la = a->subtask ? hierarchy_level(*a->subtask) : 3;
      auto lb = b->subtask ? hierarchy_level(*b->subtask) : 3;
      return la < lb;
    });
    for (std::size_t start = 0, n = 0; start < members.size(); start += max_pairs, ++n) {
      InstructionRecord conv = *members[start];
      conv.record_id = fmt::format("{}/multi_turn/{}/{}", key.first, to_string(key.second), n);
      conv.template_id = "multi_turn";
      conv.turns.clear();
      for (std::size_t i = start; i < std::min(members.size(), start + max_pairs); ++i) {
        const auto* q = members[i]->first_question();
        const auto* a = members[i]->last_answer();
        if (!q || !a) continue;
        conv.turns.push_back(*q);
        conv.turns.push_back(*a);
        if (members[i]->provenance == Provenance::kEnriched) conv.provenance = Provenance::kEnriched;
      }
      if (!conv.turns.empty()) out.push_back(std::move(conv));
    }
  }
  return out;
}

SubtaskSplits derive_subtask_splits(const std::vector<InstructionRecord>& corpus) {
  SubtaskSplits splits;
  for (auto s : kAllSubTasks) splits.buckets[s];
  for (const auto& r : corpus) {
    if (!r.subtask) {
      throw ValidationError(fmt::format("{}: record carries no sub-task tag", r.record_id));
    }
    switch (r.paradigm) {
      case ConversationParadigm::kDetailedDescription:
        splits.buckets[SubTask::kDescription].push_back(r);
        break;
      case ConversationParadigm::kSinglePhrase:
      case ConversationParadigm::kGroundingQA:
        if (*r.subtask == SubTask::kDescription) {
          throw ValidationError(fmt::format(
              "{}: Description is reserved for detailed_description records", r.record_id));
        }
        splits.buckets[*r.subtask].push_back(r);
        break;
      case ConversationParadigm::kVisualQA:
      case ConversationParadigm::kRegionBasedQA:
        splits.conversational.push_back(r);
        break;
    }
  }
  return splits;
}

StatsReport corpus_stats(const std::vector<InstructionRecord>& corpus) {
  StatsReport s;
  std::set<std::string> frames;
  for (const auto& r : corpus) {
    frames.insert(r.frame_id);
    ++s.records;
    ++s.per_paradigm[std::string(to_string(r.paradigm))];
    ++s.per_subtask[r.subtask ? std::string(to_string(*r.subtask)) : "untagged"];
    ++s.per_source[std::string(annotations::to_string(r.source))];
    if (std::any_of(r.turns.begin(), r.turns.end(), [](const Turn& t) { return !t.boxes.empty(); })) {
      ++s.box_records;
    }
  }
  s.frames = frames.size();
  return s;
}

std::vector<std::string> check_structure(const InstructionRecord& r) {
  std::vector<std::string> v;
  if (r.turns.size() < 2 || r.turns.size() % 2 != 0) v.push_back("needs complete QA pairs");
  for (std::size_t i = 0; i < r.turns.size(); ++i) {
    const auto& t = r.turns[i];
    Role expected = (i % 2 == 0) ? Role::kHuman : Role::kAssistant;
    if (t.role != expected) v.push_back(fmt::format("turn {} has the wrong role", i));
    if (t.text.find('\n') != std::string::npos) v.push_back(fmt::format("turn {} has a newline", i));
    if (parse_grounding(t.text).boxes != t.boxes) {
      v.push_back(fmt::format("turn {} boxes disagree with its text", i));
    }
  }
  if (!v.empty()) return v;
  for (std::size_t i = 0; i + 1 < r.turns.size(); i += 2) {
    const auto& q = r.turns[i].text;
    const auto& a = r.turns[i + 1].text;
    if (!answer_fits(r.paradigm, q, a)) {
      v.push_back(fmt::format("pair {} violates the {} contract", i / 2, to_string(r.paradigm)));
    }
    auto ends_with = [&](std::string_view s) {
      return q.size() >= s.size() && q.compare(q.size() - s.size(), s.size(), s) == 0;
    };
    if (r.paradigm == ConversationParadigm::kSinglePhrase && !ends_with(kSinglePhrasePrompt)) {
      v.push_back(fmt::format("pair {} question lacks the single-phrase prompt", i / 2));
    }
    if (r.paradigm == ConversationParadigm::kGroundingQA && !ends_with(kGroundingPrompt)) {
      v.push_back(fmt::format("pair {} question lacks the bounding-box prompt", i / 2));
    }
  }
  return v;
}

// ---------------------------------------------------------------------------

namespace {

void apply_cap(std::vector<InstructionRecord>& recs, ConversationParadigm paradigm,
               const GenerationOptions& opt, std::string_view frame_id) {
  auto cap_it = opt.caps.find(paradigm);
  if (cap_it == opt.caps.end()) return;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].paradigm == paradigm) members.push_back(i);
  }
  if (members.size() <= cap_it->second) return;
  std::mt19937_64 rng(derive_seed(opt.seed, std::string(frame_id) + "|cap|" +
                                                std::string(to_string(paradigm))));
  std::shuffle(members.begin(), members.end(), rng);
  std::set<std::size_t> drop(members.begin() + static_cast<std::ptrdiff_t>(cap_it->second),
                             members.end());
  std::vector<InstructionRecord> kept;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!drop.count(i)) kept.push_back(std::move(recs[i]));
  }
  recs = std::move(kept);
}

struct FrameOutput {
  std::vector<InstructionRecord> records;
  std::vector<std::string> warnings;
};

FrameOutput generate_frame(const FrameAnnotation& frame, const std::vector<QATemplate>& templates,
                           const std::vector<std::string>& dd_questions,
                           EnrichmentClient& enricher, const GenerationOptions& opt) {
  FrameOutput out;
  out.records = instantiate(frame, templates, opt.seed, {opt.numerals});
  for (auto p : {ConversationParadigm::kSinglePhrase, ConversationParadigm::kGroundingQA,
                 ConversationParadigm::kRegionBasedQA, ConversationParadigm::kVisualQA}) {
    apply_cap(out.records, p, opt, frame.frame_id);
  }
  BuildWarnings w;
  if (opt.visual_qa && frame.source != SourceKind::kCholec80) {
    std::vector<InstructionRecord> vqa;
    for (const auto& r : out.records) {
      if (r.paradigm == ConversationParadigm::kSinglePhrase) {
        vqa.push_back(elaborate_visual_qa(r, frame, enricher, &w));
      }
    }
    apply_cap(vqa, ConversationParadigm::kVisualQA, opt, frame.frame_id);
    for (auto& r : vqa) out.records.push_back(std::move(r));
  }
  auto dd_cap = opt.caps.find(ConversationParadigm::kDetailedDescription);
  if (opt.detailed_description && frame.has_boxes() &&
      (dd_cap == opt.caps.end() || dd_cap->second > 0)) {
    out.records.push_back(
        description_record(frame, enricher, opt.seed, &w, opt.numerals, dd_questions));
  }
  out.warnings = std::move(w.messages);
  return out;
}

}  // namespace

GenerationResult generate_corpus(const std::vector<FrameAnnotation>& frames,
                                 const std::vector<QATemplate>& templates,
                                 EnrichmentClient& enricher, const GenerationOptions& options) {
  std::vector<std::string> dd_questions;
  for (const auto& t : templates) {
    if (t.paradigm == ConversationParadigm::kDetailedDescription) {
      dd_questions.insert(dd_questions.end(), t.question_patterns.begin(),
                          t.question_patterns.end());
    }
  }
  std::vector<FrameOutput> per_frame(frames.size());
  std::vector<std::exception_ptr> errors(frames.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < frames.size(); i = next++) {
      try {
        per_frame[i] = generate_frame(frames[i], templates, dd_questions, enricher, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(1, frames.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  GenerationResult result;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    for (auto& r : per_frame[i].records) result.records.push_back(std::move(r));
    for (auto& w : per_frame[i].warnings) result.warnings.push_back(std::move(w));
  }
  return result;
}

}  // namespace surgqa::generation
