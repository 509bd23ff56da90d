#include "surgqa/grounding.hpp"

#include <array>
#include <charconv>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "surgqa/util.hpp"

namespace surgqa::generation {

std::string format_coordinate(double value) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed, 2);
  std::string s(buf.data(), res.ptr);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string render_grounding(std::string_view label, const BoundingBox& box) {
  return fmt::format("{} [{}, {}, {}, {}]", label, format_coordinate(box.x1),
                     format_coordinate(box.y1), format_coordinate(box.x2),
                     format_coordinate(box.y2));
}

namespace {

const std::set<std::string>& connectives() {
  static const std::set<std::string> words = {
      "of",   "at",    "is",   "are",  "was",   "were",  "and", "or",    "in",
      "on",   "with",  "by",   "to",   "for",   "from",  "near", "about", "where",
      "what", "which", "how",  "does", "do",    "as",    "into", "onto",  "within"};
  return words;
}

bool is_delimiter(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?':
    case '(': case ')': case '"': case ']': case '[': case '\n':
      return true;
    default:
      return false;
  }
}

std::string extract_label(std::string_view before) {
  std::size_t start = before.size();
  while (start > 0 && !is_delimiter(before[start - 1])) --start;
  auto words = split_whitespace(before.substr(start));
  std::size_t cut = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (connectives().count(to_lower(words[i]))) cut = i + 1;
  }
  std::string label;
  for (std::size_t i = cut; i < words.size(); ++i) {
    if (!label.empty()) label += ' ';
    label += words[i];
  }
  return label;
}

}  // namespace

GroundingParse parse_grounding(std::string_view text) {
  static const std::regex kGroup(
      R"(\[\s*(\d+(?:\.\d{1,4})?)\s*,\s*(\d+(?:\.\d{1,4})?)\s*,\s*(\d+(?:\.\d{1,4})?)\s*,\s*(\d+(?:\.\d{1,4})?)\s*\])");
  GroundingParse out;
  std::string owned(text);
  std::size_t prev_end = 0;
  for (auto it = std::sregex_iterator(owned.begin(), owned.end(), kGroup);
       it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const std::size_t begin = static_cast<std::size_t>(m.position(0));
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) v[i] = std::stod(m.str(i + 1));
    BoundingBox b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) {
      out.warnings.push_back(fmt::format("skipped invalid box group '{}' at offset {}", m.str(0),
                                         begin));
    } else {
      std::string_view before(owned.data() + prev_end, begin - prev_end);
      out.boxes.push_back({extract_label(before), b});
    }
    prev_end = begin + static_cast<std::size_t>(m.length(0));
  }
  return out;
}

}  // namespace surgqa::generation
