#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace surgqa::text {

/// Lowercased word tokens. A token is a run of letters/digits, optionally
/// joined by single '.', '\'' or '-' characters ("0.25", "don't", "left-top").
std::vector<std::string> tokenize(std::string_view s);

/// Lowercase, trim, collapse whitespace, strip terminal punctuation, and map
/// the number words zero..ten to digits.
std::string normalize_answer(std::string_view s);

/// Classic Porter (1980) suffix stripper. Input is expected lowercase.
std::string porter_stem(std::string_view word);

}  // namespace surgqa::text
