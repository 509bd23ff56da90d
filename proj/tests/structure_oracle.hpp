#pragma once
// Record-shape checker written against the text alone. It shares no code with
// the library's own check_structure: boxes are found with a separate regex and
// compared with the record's stored box list.

#include <regex>
#include <string>
#include <vector>

#include "surgqa/generation.hpp"

namespace oracle {

struct Coords {
  double v[4];
};

inline std::vector<Coords> bracket_groups(const std::string& text) {
  static const std::regex group(R"(\[(\d\.\d+), (\d\.\d+), (\d\.\d+), (\d\.\d+)\])");
  std::vector<Coords> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), group); it != std::sregex_iterator(); ++it) {
    Coords c{};
    for (int i = 0; i < 4; ++i) c.v[i] = std::stod((*it)[i + 1].str());
    out.push_back(c);
  }
  return out;
}

inline bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

inline int word_count(const std::string& s) {
  int n = 0;
  bool in = false;
  for (char c : s) {
    bool space = c == ' ' || c == '\t';
    if (!space && !in) ++n;
    in = !space;
  }
  return n;
}

/// Empty when the record satisfies its paradigm's contract.
inline std::vector<std::string> structure_violations(const surgqa::generation::InstructionRecord& r) {
  using surgqa::generation::ConversationParadigm;
  using surgqa::generation::Role;
  std::vector<std::string> bad;
  if (r.turns.empty() || r.turns.size() % 2) bad.push_back("odd turn count");
  for (std::size_t i = 0; i < r.turns.size(); ++i) {
    const auto& t = r.turns[i];
    if (t.role != (i % 2 ? Role::kAssistant : Role::kHuman)) bad.push_back("role order");
    if (t.text.find('\n') != std::string::npos) bad.push_back("newline in turn");
    auto groups = bracket_groups(t.text);
    if (groups.size() != t.boxes.size()) {
      bad.push_back("box list size differs from text");
      continue;
    }
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto& g = groups[k].v;
      const auto& b = t.boxes[k].box;
      if (std::abs(g[0] - b.x1) > 1e-9 || std::abs(g[1] - b.y1) > 1e-9 || std::abs(g[2] - b.x2) > 1e-9 ||
          std::abs(g[3] - b.y2) > 1e-9) {
        bad.push_back("box coordinates differ from text");
      }
      if (!(0 <= g[0] && g[0] < g[2] && g[2] <= 1 && 0 <= g[1] && g[1] < g[3] && g[3] <= 1)) {
        bad.push_back("box outside the unit square");
      }
    }
  }
  if (!bad.empty()) return bad;
  static const std::regex grounding_answer(R"(^[^\[\]]+ \[\d\.\d\d, \d\.\d\d, \d\.\d\d, \d\.\d\d\]$)");
  for (std::size_t i = 0; i + 1 < r.turns.size(); i += 2) {
    const auto& q = r.turns[i].text;
    const auto& a = r.turns[i + 1].text;
    char last = a.empty() ? 0 : a.back();
    bool sentence = word_count(a) >= 3 && (last == '.' || last == '!' || last == '?');
    switch (r.paradigm) {
      case ConversationParadigm::kSinglePhrase:
        if (!ends_with(q, "Answer the question with a single phrase.")) bad.push_back("missing phrase prompt");
        if (word_count(a) < 1 || word_count(a) > 4) bad.push_back("phrase length");
        if (a.find('[') != std::string::npos) bad.push_back("phrase holds a box");
        break;
      case ConversationParadigm::kGroundingQA:
        if (!ends_with(q, "Answer the question with just a bounding box.")) bad.push_back("missing box prompt");
        if (!std::regex_match(a, grounding_answer)) bad.push_back("grounding answer shape");
        break;
      case ConversationParadigm::kRegionBasedQA:
        if (bracket_groups(q).empty()) bad.push_back("region question without box");
        if (a.find('[') != std::string::npos) bad.push_back("region answer holds a box");
        if (!sentence) bad.push_back("region answer not a sentence");
        break;
      case ConversationParadigm::kVisualQA:
        if (!sentence) bad.push_back("visual answer not a sentence");
        break;
      case ConversationParadigm::kDetailedDescription:
        if (!sentence) bad.push_back("description not a sentence");
        if (bracket_groups(a).empty()) bad.push_back("description without boxes");
        break;
    }
  }
  return bad;
}

}  // namespace oracle
