#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "surgqa/generation.hpp"
#include "surgqa/util.hpp"

namespace surgqa::generation {

std::string_view to_string(ConversationParadigm p) noexcept {
  switch (p) {
    case ConversationParadigm::kSinglePhrase: return "single_phrase";
    case ConversationParadigm::kDetailedDescription: return "detailed_description";
    case ConversationParadigm::kVisualQA: return "visual_qa";
    case ConversationParadigm::kRegionBasedQA: return "region_based_qa";
    case ConversationParadigm::kGroundingQA: return "grounding_qa";
  }
  return "single_phrase";
}

namespace {
std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '_' || c == '-' || c == ' ') continue;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}
}  // namespace

ConversationParadigm parse_paradigm(std::string_view text) {
  auto key = squash(text);
  for (auto p : kAllParadigms) {
    if (key == squash(to_string(p))) return p;
  }
  if (key == "detaildescription") return ConversationParadigm::kDetailedDescription;
  throw ValidationError(fmt::format("unknown conversation paradigm '{}'", text));
}

std::string_view to_string(SubTask s) noexcept {
  switch (s) {
    case SubTask::kInstrumentNumber: return "IN";
    case SubTask::kInstrumentCategory: return "IC";
    case SubTask::kObjectPosition: return "OP";
    case SubTask::kInstrumentMotion: return "IM";
    case SubTask::kTargetTissue: return "TI";
    case SubTask::kMotionDirection: return "MD";
    case SubTask::kDescription: return "Description";
  }
  return "IN";
}

SubTask parse_subtask(std::string_view text) {
  auto key = squash(text);
  static const std::map<std::string, SubTask> kNames = {
      {"in", SubTask::kInstrumentNumber},      {"instrumentnumber", SubTask::kInstrumentNumber},
      {"ic", SubTask::kInstrumentCategory},    {"instrumentcategory", SubTask::kInstrumentCategory},
      {"op", SubTask::kObjectPosition},        {"objectposition", SubTask::kObjectPosition},
      {"im", SubTask::kInstrumentMotion},      {"instrumentmotion", SubTask::kInstrumentMotion},
      {"ti", SubTask::kTargetTissue},          {"targettissue", SubTask::kTargetTissue},
      {"md", SubTask::kMotionDirection},       {"motiondirection", SubTask::kMotionDirection},
      {"description", SubTask::kDescription},
  };
  auto it = kNames.find(key);
  if (it == kNames.end()) throw ValidationError(fmt::format("unknown sub-task '{}'", text));
  return it->second;
}

int hierarchy_level(SubTask s) noexcept {
  switch (s) {
    case SubTask::kInstrumentNumber:
    case SubTask::kInstrumentCategory:
    case SubTask::kTargetTissue:
      return 0;
    case SubTask::kObjectPosition:
    case SubTask::kInstrumentMotion:
    case SubTask::kMotionDirection:
      return 1;
    case SubTask::kDescription:
      return 2;
  }
  return 2;
}

std::vector<QATemplate> parse_templates(std::string_view text) {
  static const std::regex kSlot(R"(\{([A-Za-z_]+)\})");
  using Key = std::tuple<ConversationParadigm, SubTask, std::string>;
  std::map<Key, std::size_t> index;
  std::map<std::pair<ConversationParadigm, SubTask>, std::size_t> ordinal;
  std::vector<QATemplate> out;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;

    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(trim(line.substr(start, tab == std::string::npos ? std::string::npos
                                                                       : tab - start)));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4) {
      throw TemplateError(fmt::format("template line {}: expected 4 tab-separated columns, got {}",
                                      line_no, cols.size()));
    }
    ConversationParadigm paradigm;
    SubTask subtask;
    try {
      paradigm = parse_paradigm(cols[0]);
      subtask = parse_subtask(cols[1]);
    } catch (const ValidationError& e) {
      throw TemplateError(fmt::format("template line {}: {}", line_no, e.what()));
    }

    Key key{paradigm, subtask, cols[3]};
    auto found = index.find(key);
    std::size_t slot_index;
    if (found == index.end()) {
      QATemplate t;
      t.paradigm = paradigm;
      t.subtask = subtask;
      t.answer_pattern = cols[3];
      t.template_id = fmt::format("{}:{}:{}", to_string(paradigm), to_string(subtask),
                                  ordinal[{paradigm, subtask}]++);
      slot_index = out.size();
      index.emplace(key, slot_index);
      out.push_back(std::move(t));
    } else {
      slot_index = found->second;
    }
    QATemplate& t = out[slot_index];
    t.question_patterns.push_back(cols[2]);

    for (const std::string* pattern : {&cols[2], &cols[3]}) {
      for (auto it = std::sregex_iterator(pattern->begin(), pattern->end(), kSlot);
           it != std::sregex_iterator(); ++it) {
        std::string slot = (*it)[1];
        bool known = std::find(kKnownSlots.begin(), kKnownSlots.end(), slot) != kKnownSlots.end();
        if (slot == "description" && paradigm == ConversationParadigm::kDetailedDescription) {
          known = true;
        }
        if (!known) {
          throw TemplateError(fmt::format("template '{}' (line {}): unresolvable slot '{{{}}}'",
                                          t.template_id, line_no, slot));
        }
      }
    }
  }
  return out;
}

std::vector<QATemplate> load_templates(const std::string& path) {
  return parse_templates(read_file(path));
}

std::vector<QATemplate> default_templates() { return parse_templates(default_templates_text()); }

}  // namespace surgqa::generation
