#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "surgqa/annotations.hpp"

namespace surgqa::generation {

using annotations::BoundingBox;

struct GroundedBox {
  std::string label;
  BoundingBox box;
  friend bool operator==(const GroundedBox&, const GroundedBox&) = default;
};

/// "<label> [x1, y1, x2, y2]" with two decimals per coordinate. Ties round
/// half to even on the exact binary value.
std::string render_grounding(std::string_view label, const BoundingBox& box);

/// Coordinate text used inside the brackets, e.g. "0.10".
std::string format_coordinate(double value);

struct GroundingParse {
  std::vector<GroundedBox> boxes;
  std::vector<std::string> warnings;
};

/// Finds every "[f, f, f, f]" group (1-4 decimals, any spacing). Groups that do
/// not form a valid normalized box are skipped with a warning.
///
/// The label is the run of words between the previous delimiter (start of
/// text, a closing bracket, or one of . , ; : ! ? ( ) ") and the bracket, cut
/// after the last connective word (of, at, is, and, ...) when one occurs.
/// Articles stay, so "the mucosal flap [..]" keeps its article.
GroundingParse parse_grounding(std::string_view text);

}  // namespace surgqa::generation
