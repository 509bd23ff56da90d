#include "surgqa/text.hpp"

#include <array>
#include <cctype>

#include "surgqa/util.hpp"

namespace surgqa::text {

namespace {

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

constexpr std::array<std::string_view, 11> kNumberWords{
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};

}  // namespace

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (alnum(c)) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty() && (c == '.' || c == '\'' || c == '-') && i + 1 < s.size() &&
               alnum(s[i + 1])) {
      cur += c;
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string normalize_answer(std::string_view s) {
  auto words = split_whitespace(to_lower(s));
  if (words.empty()) return {};
  auto& last = words.back();
  while (!last.empty() && std::string_view(".,!?;:").find(last.back()) != std::string_view::npos) {
    last.pop_back();
  }
  if (last.empty()) words.pop_back();
  std::string out;
  for (auto& w : words) {
    for (std::size_t d = 0; d < kNumberWords.size(); ++d) {
      if (w == kNumberWords[d]) {
        w = std::to_string(d);
        break;
      }
    }
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace surgqa::text
