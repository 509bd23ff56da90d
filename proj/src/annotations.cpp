#include "surgqa/annotations.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "surgqa/util.hpp"

namespace surgqa::annotations {

using nlohmann::json;

bool BoundingBox::valid() const noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
}

BoundingBox BoundingBox::checked(double x1, double y1, double x2, double y2) {
  BoundingBox b{x1, y1, x2, y2};
  if (!b.valid()) {
    throw ValidationError(fmt::format("invalid box [{}, {}, {}, {}]", x1, y1, x2, y2));
  }
  return b;
}

std::string_view to_string(PositionLabel label) noexcept {
  switch (label) {
    case PositionLabel::kLeftTop: return "left-top";
    case PositionLabel::kTop: return "top";
    case PositionLabel::kRightTop: return "right-top";
    case PositionLabel::kLeft: return "left";
    case PositionLabel::kCenter: return "center";
    case PositionLabel::kRight: return "right";
    case PositionLabel::kLeftBottom: return "left-bottom";
    case PositionLabel::kBottom: return "bottom";
    case PositionLabel::kRightBottom: return "right-bottom";
  }
  return "center";
}

std::string_view to_string(DirectionLabel label) noexcept {
  switch (label) {
    case DirectionLabel::kUpward: return "upward";
    case DirectionLabel::kDownward: return "downward";
    case DirectionLabel::kLeft: return "left";
    case DirectionLabel::kRight: return "right";
    case DirectionLabel::kUpperLeft: return "upper-left";
    case DirectionLabel::kUpperRight: return "upper-right";
    case DirectionLabel::kLowerLeft: return "lower-left";
    case DirectionLabel::kLowerRight: return "lower-right";
  }
  return "upward";
}

DirectionLabel parse_direction(std::string_view text, std::string_view field_path) {
  std::string key = to_lower(trim(text));
  std::replace(key.begin(), key.end(), ' ', '-');
  std::replace(key.begin(), key.end(), '_', '-');
  for (auto d : kAllDirections) {
    if (key == to_string(d)) return d;
  }
  std::string accepted;
  for (auto d : kAllDirections) {
    if (!accepted.empty()) accepted += ", ";
    accepted += to_string(d);
  }
  throw SchemaError(std::string(field_path),
                    fmt::format("unknown direction '{}'; accepted: {}", text, accepted));
}

std::string_view to_string(SourceKind kind) noexcept {
  switch (kind) {
    case SourceKind::kCanonical: return "canonical";
    case SourceKind::kEndoVis: return "endovis";
    case SourceKind::kCoPESD: return "copesd";
    case SourceKind::kCholec80: return "cholec80";
  }
  return "canonical";
}

SourceKind parse_source_kind(std::string_view text) {
  for (auto k : {SourceKind::kCanonical, SourceKind::kEndoVis, SourceKind::kCoPESD,
                 SourceKind::kCholec80}) {
    if (text == to_string(k)) return k;
  }
  throw ValidationError(fmt::format(
      "unknown schema '{}'; expected one of endovis, copesd, cholec80, canonical", text));
}

bool annotates_direction(SourceKind kind) noexcept {
  return kind == SourceKind::kCanonical || kind == SourceKind::kCoPESD;
}

bool FrameAnnotation::has_boxes() const noexcept {
  return std::any_of(instruments.begin(), instruments.end(),
                     [](const auto& i) { return i.box.has_value(); }) ||
         std::any_of(tissues.begin(), tissues.end(),
                     [](const auto& t) { return t.box.has_value(); });
}

bool MotionPolicy::requires_direction(std::string_view motion) const {
  auto m = to_lower(trim(motion));
  if (m.empty()) return false;
  return stationary.count(m) == 0;
}

void validate(const FrameAnnotation& frame, const MotionPolicy& policy) {
  auto where = [&](std::string_view what) {
    return fmt::format("frame '{}': {}", frame.frame_id, what);
  };
  if (frame.frame_id.empty()) throw ValidationError("frame_id is empty");
  if (frame.image_size.width <= 0 || frame.image_size.height <= 0) {
    throw ValidationError(where("image_size components must be positive"));
  }
  for (std::size_t i = 0; i < frame.instruments.size(); ++i) {
    const auto& inst = frame.instruments[i];
    if (trim(inst.category).empty()) {
      throw ValidationError(where(fmt::format("instruments[{}].category is empty", i)));
    }
    if (inst.box && !inst.box->valid()) {
      throw ValidationError(where(fmt::format("instruments[{}].box is invalid", i)));
    }
    if (annotates_direction(frame.source) && policy.requires_direction(inst.motion) &&
        !inst.direction) {
      throw ValidationError(where(fmt::format(
          "instruments[{}] motion '{}' requires a direction", i, inst.motion)));
    }
  }
  for (std::size_t i = 0; i < frame.tissues.size(); ++i) {
    const auto& t = frame.tissues[i];
    if (trim(t.name).empty()) {
      throw ValidationError(where(fmt::format("tissues[{}].name is empty", i)));
    }
    if (t.box && !t.box->valid()) {
      throw ValidationError(where(fmt::format("tissues[{}].box is invalid", i)));
    }
  }
}

BoundingBox normalize_box(const PixelBox& px, double width, double height,
                          std::string_view frame_id) {
  auto fail = [&](std::string_view why) -> ValidationError {
    return ValidationError(fmt::format("frame '{}': pixel box [{}, {}, {}, {}] {} (image {}x{})",
                                       frame_id, px.x1, px.y1, px.x2, px.y2, why, width, height));
  };
  if (!(width > 0.0) || !(height > 0.0)) throw fail("has non-positive image dimensions");
  if (!(px.x1 < px.x2) || !(px.y1 < px.y2)) throw fail("is degenerate");
  if (px.x1 < 0.0 || px.y1 < 0.0 || px.x2 > width || px.y2 > height) {
    throw fail("exceeds the image bounds");
  }
  BoundingBox b{px.x1 / width, px.y1 / height, px.x2 / width, px.y2 / height};
  if (!b.valid()) throw fail("does not normalize to a valid box");
  return b;
}

PositionLabel position_of(const BoundingBox& box) noexcept {
  auto cell = [](double c) {
    if (c <= 1.0 / 3.0) return 0;
    if (c <= 2.0 / 3.0) return 1;
    return 2;
  };
  int col = cell(box.center_x());
  int row = cell(box.center_y());
  return kAllPositions[static_cast<std::size_t>(row * 3 + col)];
}

// ---------------------------------------------------------------------------
// Adapters

namespace {

std::string join_path(std::string_view base, std::string_view key) {
  if (base.empty()) return std::string(key);
  return fmt::format("{}.{}", base, key);
}

std::string join_path(std::string_view base, std::size_t index) {
  return fmt::format("{}[{}]", base, index);
}

const json& require(const json& obj, std::string_view key, std::string_view base) {
  if (!obj.is_object()) throw SchemaError(std::string(base), "expected an object");
  auto it = obj.find(std::string(key));
  if (it == obj.end() || it->is_null()) {
    throw SchemaError(join_path(base, key), "missing required field");
  }
  return *it;
}

const json* optional_field(const json& obj, std::string_view key) {
  auto it = obj.find(std::string(key));
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string require_string(const json& obj, std::string_view key, std::string_view base) {
  const auto& v = require(obj, key, base);
  if (!v.is_string()) throw SchemaError(join_path(base, key), "expected a string");
  auto s = trim(v.get<std::string>());
  if (s.empty()) throw SchemaError(join_path(base, key), "must not be empty");
  return s;
}

std::optional<std::string> optional_string(const json& obj, std::string_view key,
                                           std::string_view base) {
  const json* v = optional_field(obj, key);
  if (!v) return std::nullopt;
  if (!v->is_string()) throw SchemaError(join_path(base, key), "expected a string");
  auto s = trim(v->get<std::string>());
  if (s.empty()) return std::nullopt;
  return s;
}

const json& require_array(const json& obj, std::string_view key, std::string_view base) {
  const auto& v = require(obj, key, base);
  if (!v.is_array()) throw SchemaError(join_path(base, key), "expected an array");
  return v;
}

int positive_int(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw SchemaError(path, "expected a positive integer");
  }
  return v.get<int>();
}

ImageSize read_size(const json& record, ImageSize fallback, std::string_view base) {
  if (const json* s = optional_field(record, "image_size")) {
    auto path = join_path(base, "image_size");
    if (!s->is_array() || s->size() != 2) throw SchemaError(path, "expected [width, height]");
    return {positive_int((*s)[0], join_path(path, 0)), positive_int((*s)[1], join_path(path, 1))};
  }
  const json* w = optional_field(record, "width");
  const json* h = optional_field(record, "height");
  if (w || h) {
    if (!w) throw SchemaError(join_path(base, "width"), "missing required field");
    if (!h) throw SchemaError(join_path(base, "height"), "missing required field");
    return {positive_int(*w, join_path(base, "width")), positive_int(*h, join_path(base, "height"))};
  }
  return fallback;
}

BoundingBox read_pixel_box(const json& v, const std::string& path, ImageSize size,
                           std::string_view frame_id) {
  if (!v.is_array() || v.size() != 4) throw SchemaError(path, "expected [x1, y1, x2, y2]");
  PixelBox px;
  double* dst[4] = {&px.x1, &px.y1, &px.x2, &px.y2};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw SchemaError(join_path(path, i), "expected a number");
    *dst[i] = v[i].get<double>();
  }
  try {
    return normalize_box(px, size.width, size.height, frame_id);
  } catch (const ValidationError& e) {
    throw SchemaError(path, e.what());
  }
}

std::optional<BoundingBox> optional_pixel_box(const json& obj, std::string_view key,
                                              const std::string& base, ImageSize size,
                                              std::string_view frame_id) {
  const json* v = optional_field(obj, key);
  if (!v) return std::nullopt;
  return read_pixel_box(*v, join_path(base, key), size, frame_id);
}

FrameAnnotation frame_header(const json& record, ImageSize fallback, SourceKind kind) {
  if (!record.is_object()) throw SchemaError("", "record must be an object");
  FrameAnnotation f;
  f.frame_id = require_string(record, "frame_id", "");
  f.image_path = optional_string(record, "image_path", "").value_or("");
  f.image_size = read_size(record, fallback, "");
  f.source = kind;
  f.phase = optional_string(record, "phase", "");
  f.description_seed = optional_string(record, "description_seed", "");
  return f;
}

AdaptResult finish(FrameAnnotation frame, std::vector<std::string> warnings,
                   const MotionPolicy& policy) {
  try {
    validate(frame, policy);
  } catch (const SchemaError&) {
    throw;
  } catch (const ValidationError& e) {
    throw SchemaError("", e.what());
  }
  return {std::move(frame), std::move(warnings)};
}

std::vector<SourceQA> read_qa(const json& record, std::string_view base) {
  std::vector<SourceQA> out;
  const json* qa = optional_field(record, "qa");
  if (!qa) return out;
  auto qa_path = join_path(base, "qa");
  if (!qa->is_array()) throw SchemaError(qa_path, "expected an array");
  for (std::size_t i = 0; i < qa->size(); ++i) {
    auto p = join_path(qa_path, i);
    const auto& item = (*qa)[i];
    SourceQA q;
    q.question = require_string(item, "question", p);
    q.answer = require_string(item, "answer", p);
    auto kind = optional_string(item, "kind", p).value_or("classification");
    if (kind == "classification") {
      q.kind = SourceQA::Kind::kClassification;
    } else if (kind == "sentence") {
      q.kind = SourceQA::Kind::kSentence;
    } else {
      throw SchemaError(join_path(p, "kind"), "expected 'classification' or 'sentence'");
    }
    q.subtask = optional_string(item, "subtask", p);
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace

AdaptResult adapt_canonical(const json& record, const MotionPolicy& policy) {
  SourceKind kind = SourceKind::kCanonical;
  if (auto s = optional_string(record, "source", "")) {
    try {
      kind = parse_source_kind(*s);
    } catch (const ValidationError& e) {
      throw SchemaError("source", e.what());
    }
  }
  FrameAnnotation f = frame_header(record, {0, 0}, kind);
  if (f.image_size.width <= 0) throw SchemaError("image_size", "missing required field");

  if (const json* insts = optional_field(record, "instruments")) {
    if (!insts->is_array()) throw SchemaError("instruments", "expected an array");
    for (std::size_t i = 0; i < insts->size(); ++i) {
      auto p = join_path("instruments", i);
      const auto& item = (*insts)[i];
      InstrumentObservation obs;
      obs.category = require_string(item, "category", p);
      obs.box = optional_pixel_box(item, "box", p, f.image_size, f.frame_id);
      obs.motion = optional_string(item, "motion", p).value_or("");
      if (auto d = optional_string(item, "direction", p)) {
        obs.direction = parse_direction(*d, join_path(p, "direction"));
      }
      f.instruments.push_back(std::move(obs));
    }
  }
  if (const json* tissues = optional_field(record, "tissues")) {
    if (!tissues->is_array()) throw SchemaError("tissues", "expected an array");
    for (std::size_t i = 0; i < tissues->size(); ++i) {
      auto p = join_path("tissues", i);
      TissueObservation t;
      t.name = require_string((*tissues)[i], "name", p);
      t.box = optional_pixel_box((*tissues)[i], "box", p, f.image_size, f.frame_id);
      f.tissues.push_back(std::move(t));
    }
  }
  f.source_qa = read_qa(record, "");
  return finish(std::move(f), {}, policy);
}

// {"frame_id", "image_path", "width", "height", "tissue", "tissue_bbox"?,
//  "objects": [{"instrument", "action", "bbox"}]}
AdaptResult adapt_endovis(const json& record, const MotionPolicy& policy) {
  FrameAnnotation f = frame_header(record, kEndoVisImageSize, SourceKind::kEndoVis);
  const auto& objects = require_array(record, "objects", "");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    auto p = join_path("objects", i);
    InstrumentObservation obs;
    obs.category = require_string(objects[i], "instrument", p);
    obs.motion = require_string(objects[i], "action", p);
    obs.box = read_pixel_box(require(objects[i], "bbox", p), join_path(p, "bbox"), f.image_size,
                             f.frame_id);
    f.instruments.push_back(std::move(obs));
  }
  TissueObservation tissue;
  tissue.name = require_string(record, "tissue", "");
  tissue.box = optional_pixel_box(record, "tissue_bbox", "", f.image_size, f.frame_id);
  f.tissues.push_back(std::move(tissue));
  return finish(std::move(f), {}, policy);
}

// {"frame_id", "image_path", "width"?, "height"?, "targets": [{"tissue", "bbox"?}],
//  "instruments": [{"name", "motion", "direction"?, "bbox"}]}
AdaptResult adapt_copesd(const json& record, const MotionPolicy& policy) {
  FrameAnnotation f = frame_header(record, kCoPESDImageSize, SourceKind::kCoPESD);
  const auto& targets = require_array(record, "targets", "");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto p = join_path("targets", i);
    TissueObservation t;
    t.name = require_string(targets[i], "tissue", p);
    t.box = optional_pixel_box(targets[i], "bbox", p, f.image_size, f.frame_id);
    f.tissues.push_back(std::move(t));
  }
  const auto& insts = require_array(record, "instruments", "");
  for (std::size_t i = 0; i < insts.size(); ++i) {
    auto p = join_path("instruments", i);
    InstrumentObservation obs;
    obs.category = require_string(insts[i], "name", p);
    obs.motion = require_string(insts[i], "motion", p);
    if (auto d = optional_string(insts[i], "direction", p)) {
      obs.direction = parse_direction(*d, join_path(p, "direction"));
    }
    obs.box = read_pixel_box(require(insts[i], "bbox", p), join_path(p, "bbox"), f.image_size,
                             f.frame_id);
    f.instruments.push_back(std::move(obs));
  }
  return finish(std::move(f), {}, policy);
}

// {"frame_id", "image_path", "width"?, "height"?, "phase"?, "tools": [..]?,
//  "qa": [{"question", "answer", "kind"}]}
AdaptResult adapt_cholec80(const json& record, const MotionPolicy& policy) {
  FrameAnnotation f = frame_header(record, kCholec80ImageSize, SourceKind::kCholec80);
  std::vector<std::string> warnings;
  for (const char* key : {"bbox", "box", "boxes", "bboxes"}) {
    if (record.contains(key)) {
      warnings.push_back(fmt::format("frame '{}': field '{}' ignored (schema carries no boxes)",
                                     f.frame_id, key));
    }
  }
  if (const json* tools = optional_field(record, "tools")) {
    if (!tools->is_array()) throw SchemaError("tools", "expected an array");
    for (std::size_t i = 0; i < tools->size(); ++i) {
      const auto& t = (*tools)[i];
      if (t.is_object()) {
        InstrumentObservation obs;
        obs.category = require_string(t, "name", join_path("tools", i));
        obs.motion = optional_string(t, "operation", join_path("tools", i)).value_or("");
        if (t.contains("bbox") || t.contains("box")) {
          warnings.push_back(fmt::format("frame '{}': tools[{}] box ignored", f.frame_id, i));
        }
        f.instruments.push_back(std::move(obs));
      } else if (t.is_string() && !trim(t.get<std::string>()).empty()) {
        f.instruments.push_back({trim(t.get<std::string>()), std::nullopt, "", std::nullopt});
      } else {
        throw SchemaError(join_path("tools", i), "expected a tool name or object");
      }
    }
  }
  f.source_qa = read_qa(record, "");
  return finish(std::move(f), std::move(warnings), policy);
}

AdaptResult adapt(std::string_view schema, const json& record, const MotionPolicy& policy) {
  switch (parse_source_kind(schema)) {
    case SourceKind::kCanonical: return adapt_canonical(record, policy);
    case SourceKind::kEndoVis: return adapt_endovis(record, policy);
    case SourceKind::kCoPESD: return adapt_copesd(record, policy);
    case SourceKind::kCholec80: return adapt_cholec80(record, policy);
  }
  throw ValidationError("unreachable schema");
}

json to_canonical_json(const FrameAnnotation& f) {
  auto px = [&](const BoundingBox& b) {
    const double w = f.image_size.width;
    const double h = f.image_size.height;
    return json::array({std::llround(b.x1 * w), std::llround(b.y1 * h), std::llround(b.x2 * w),
                        std::llround(b.y2 * h)});
  };
  json j;
  j["frame_id"] = f.frame_id;
  j["image_path"] = f.image_path;
  j["image_size"] = json::array({f.image_size.width, f.image_size.height});
  j["source"] = std::string(to_string(f.source));
  json insts = json::array();
  for (const auto& i : f.instruments) {
    json o{{"category", i.category}};
    if (i.box) o["box"] = px(*i.box);
    if (!i.motion.empty()) o["motion"] = i.motion;
    if (i.direction) o["direction"] = std::string(to_string(*i.direction));
    insts.push_back(std::move(o));
  }
  j["instruments"] = std::move(insts);
  json tissues = json::array();
  for (const auto& t : f.tissues) {
    json o{{"name", t.name}};
    if (t.box) o["box"] = px(*t.box);
    tissues.push_back(std::move(o));
  }
  j["tissues"] = std::move(tissues);
  if (f.phase) j["phase"] = *f.phase;
  if (f.description_seed) j["description_seed"] = *f.description_seed;
  if (!f.source_qa.empty()) {
    json qa = json::array();
    for (const auto& q : f.source_qa) {
      json o{{"question", q.question},
             {"answer", q.answer},
             {"kind", q.kind == SourceQA::Kind::kSentence ? "sentence" : "classification"}};
      if (q.subtask) o["subtask"] = *q.subtask;
      qa.push_back(std::move(o));
    }
    j["qa"] = std::move(qa);
  }
  return j;
}

}  // namespace surgqa::annotations
