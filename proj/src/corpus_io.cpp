#include "surgqa/corpus_io.hpp"

#include <fmt/format.h>

#include "surgqa/util.hpp"

namespace surgqa {

using generation::InstructionRecord;
using nlohmann::json;

namespace {

json box_json(const annotations::BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

std::string string_field(const json& j, const char* key, bool required = true) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw SchemaError(key, "missing required field");
    return {};
  }
  if (!it->is_string()) throw SchemaError(key, "expected a string");
  return it->get<std::string>();
}

}  // namespace

json record_to_json(const InstructionRecord& r) {
  json turns = json::array();
  for (const auto& t : r.turns) {
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back({{"label", b.label}, {"box", box_json(b.box)}});
    turns.push_back({{"role", generation::to_string(t.role)}, {"text", t.text}, {"boxes", boxes}});
  }
  json j;
  j["record_id"] = r.record_id;
  j["frame_id"] = r.frame_id;
  j["image_path"] = r.image_path;
  j["source"] = annotations::to_string(r.source);
  j["paradigm"] = generation::to_string(r.paradigm);
  j["subtask"] = r.subtask ? json(generation::to_string(*r.subtask)) : json(nullptr);
  j["template_id"] = r.template_id;
  j["provenance"] = generation::to_string(r.provenance);
  j["turns"] = std::move(turns);
  return j;
}

InstructionRecord record_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("", "record must be an object");
  InstructionRecord r;
  r.record_id = string_field(j, "record_id");
  r.frame_id = string_field(j, "frame_id");
  r.image_path = string_field(j, "image_path", false);
  auto source = string_field(j, "source", false);
  r.source = source.empty() ? annotations::SourceKind::kCanonical
                            : annotations::parse_source_kind(source);
  r.paradigm = generation::parse_paradigm(string_field(j, "paradigm"));
  auto subtask = string_field(j, "subtask", false);
  if (!subtask.empty()) r.subtask = generation::parse_subtask(subtask);
  r.template_id = string_field(j, "template_id", false);
  r.provenance = string_field(j, "provenance", false) == "enriched"
                     ? generation::Provenance::kEnriched
                     : generation::Provenance::kTemplate;
  auto turns = j.find("turns");
  if (turns == j.end() || !turns->is_array()) throw SchemaError("turns", "expected an array");
  for (std::size_t i = 0; i < turns->size(); ++i) {
    const auto& t = (*turns)[i];
    auto path = fmt::format("turns[{}]", i);
    if (!t.is_object()) throw SchemaError(path, "expected an object");
    auto role = string_field(t, "role");
    if (role != "human" && role != "assistant") {
      throw SchemaError(path + ".role", "expected 'human' or 'assistant'");
    }
    generation::Turn turn;
    turn.role = role == "human" ? generation::Role::kHuman : generation::Role::kAssistant;
    turn.text = string_field(t, "text");
    turn.boxes = generation::parse_grounding(turn.text).boxes;
    r.turns.push_back(std::move(turn));
  }
  return r;
}

std::string corpus_to_jsonl(const std::vector<InstructionRecord>& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<InstructionRecord> corpus_from_jsonl(std::string_view text) {
  std::vector<InstructionRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ValidationError(fmt::format("line {}: malformed JSON", line_no));
    try {
      out.push_back(record_from_json(j));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

std::vector<InstructionRecord> read_corpus(const std::filesystem::path& path) {
  return corpus_from_jsonl(read_file(path));
}

FrameLoad read_frames(const std::filesystem::path& path, std::string_view schema,
                      const annotations::MotionPolicy& policy) {
  FrameLoad out;
  std::size_t line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError(fmt::format("{}:{}: malformed JSON", path.string(), line_no));
    }
    try {
      auto res = annotations::adapt(schema, j, policy);
      for (auto& w : res.warnings) out.warnings.push_back(std::move(w));
      out.frames.push_back(std::move(res.frame));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

std::string frames_to_jsonl(const std::vector<annotations::FrameAnnotation>& frames) {
  std::string out;
  for (const auto& f : frames) {
    out += annotations::to_canonical_json(f).dump();
    out += '\n';
  }
  return out;
}

}  // namespace surgqa
