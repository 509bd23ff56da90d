#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace surgqa::annotations {

/// Axis-aligned rectangle in normalized image coordinates.
///
/// (x1, y1) is the top-left corner and (x2, y2) the bottom-right corner, each a
/// fraction of the image width or height. A valid box satisfies
/// 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  bool valid() const noexcept;
  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (x1 + x2); }
  double center_y() const noexcept { return 0.5 * (y1 + y2); }

  /// Throws ValidationError unless the coordinates form a valid box.
  static BoundingBox checked(double x1, double y1, double x2, double y2);

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Rectangle in pixel units as written by the source annotation files.
struct PixelBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

enum class PositionLabel {
  kLeftTop,
  kTop,
  kRightTop,
  kLeft,
  kCenter,
  kRight,
  kLeftBottom,
  kBottom,
  kRightBottom,
};

inline constexpr std::array<PositionLabel, 9> kAllPositions = {
    PositionLabel::kLeftTop,    PositionLabel::kTop,    PositionLabel::kRightTop,
    PositionLabel::kLeft,       PositionLabel::kCenter, PositionLabel::kRight,
    PositionLabel::kLeftBottom, PositionLabel::kBottom, PositionLabel::kRightBottom,
};

std::string_view to_string(PositionLabel label) noexcept;

enum class DirectionLabel {
  kUpward,
  kDownward,
  kLeft,
  kRight,
  kUpperLeft,
  kUpperRight,
  kLowerLeft,
  kLowerRight,
};

inline constexpr std::array<DirectionLabel, 8> kAllDirections = {
    DirectionLabel::kUpward,    DirectionLabel::kDownward,   DirectionLabel::kLeft,
    DirectionLabel::kRight,     DirectionLabel::kUpperLeft,  DirectionLabel::kUpperRight,
    DirectionLabel::kLowerLeft, DirectionLabel::kLowerRight,
};

std::string_view to_string(DirectionLabel label) noexcept;

/// Accepts the canonical hyphenated form as well as spaces/underscores and any
/// letter case ("lower left", "Lower_Left"). Throws SchemaError listing the
/// eight accepted labels otherwise.
DirectionLabel parse_direction(std::string_view text, std::string_view field_path = "direction");

enum class SourceKind { kCanonical, kEndoVis, kCoPESD, kCholec80 };

std::string_view to_string(SourceKind kind) noexcept;
SourceKind parse_source_kind(std::string_view text);

/// Whether a source annotates motion directions at all. EndoVis actions carry
/// no trajectory, so the direction requirement never applies to them.
bool annotates_direction(SourceKind kind) noexcept;

struct InstrumentObservation {
  std::string category;
  std::optional<BoundingBox> box;
  std::string motion;
  std::optional<DirectionLabel> direction;
};

struct TissueObservation {
  std::string name;
  std::optional<BoundingBox> box;
};

/// A question/answer pair carried verbatim by sources that ship their own QA
/// (Cholec80-style classification and sentence answers).
struct SourceQA {
  enum class Kind { kClassification, kSentence };
  std::string question;
  std::string answer;
  Kind kind = Kind::kClassification;
  std::optional<std::string> subtask;
};

struct FrameAnnotation {
  std::string frame_id;
  std::string image_path;
  ImageSize image_size;
  SourceKind source = SourceKind::kCanonical;
  std::vector<InstrumentObservation> instruments;
  std::vector<TissueObservation> tissues;
  std::optional<std::string> phase;
  std::optional<std::string> description_seed;
  std::vector<SourceQA> source_qa;

  /// The IN attribute; derived, never stored.
  std::size_t instrument_count() const noexcept { return instruments.size(); }
  bool has_boxes() const noexcept;
};

/// Motions outside `stationary` require a DirectionLabel on sources that
/// annotate directions.
struct MotionPolicy {
  std::set<std::string> stationary = {"idle", "hold", "stay idle"};
  bool requires_direction(std::string_view motion) const;
};

/// Throws ValidationError describing the first violated FrameAnnotation invariant.
void validate(const FrameAnnotation& frame, const MotionPolicy& policy = {});

/// Divides pixel coordinates by the image dimensions. Degenerate or
/// out-of-range boxes raise ValidationError naming `frame_id`.
BoundingBox normalize_box(const PixelBox& px, double width, double height,
                          std::string_view frame_id = {});

/// 3x3 grid cell of the box center. Centers exactly on 1/3 or 2/3 go to the
/// lower-index (left/top) cell.
PositionLabel position_of(const BoundingBox& box) noexcept;

struct AdaptResult {
  FrameAnnotation frame;
  std::vector<std::string> warnings;
};

inline constexpr ImageSize kEndoVisImageSize{1280, 1024};
inline constexpr ImageSize kCoPESDImageSize{1306, 1009};
inline constexpr ImageSize kCholec80ImageSize{854, 480};

AdaptResult adapt_canonical(const nlohmann::json& record, const MotionPolicy& policy = {});
AdaptResult adapt_endovis(const nlohmann::json& record, const MotionPolicy& policy = {});
AdaptResult adapt_copesd(const nlohmann::json& record, const MotionPolicy& policy = {});
AdaptResult adapt_cholec80(const nlohmann::json& record, const MotionPolicy& policy = {});

/// Dispatches on a `--schema` value: canonical, endovis, copesd or cholec80.
AdaptResult adapt(std::string_view schema, const nlohmann::json& record,
                  const MotionPolicy& policy = {});

/// Canonical line form (pixel boxes as integer arrays).
nlohmann::json to_canonical_json(const FrameAnnotation& frame);

/// Seeded synthetic frames in the canonical model, spread across the
/// EndoVis and CoPESD styles. Used for demos and pipeline tests.
std::vector<FrameAnnotation> synthetic_frames(std::size_t count, std::uint64_t seed);

}  // namespace surgqa::annotations
