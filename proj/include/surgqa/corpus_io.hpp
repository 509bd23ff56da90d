#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgqa/annotations.hpp"
#include "surgqa/generation.hpp"

namespace surgqa {

nlohmann::json record_to_json(const generation::InstructionRecord& record);
generation::InstructionRecord record_from_json(const nlohmann::json& j);

/// One compact JSON object per line, in corpus order.
std::string corpus_to_jsonl(const std::vector<generation::InstructionRecord>& corpus);
std::vector<generation::InstructionRecord> corpus_from_jsonl(std::string_view text);
std::vector<generation::InstructionRecord> read_corpus(const std::filesystem::path& path);

struct FrameLoad {
  std::vector<annotations::FrameAnnotation> frames;
  std::vector<std::string> warnings;
};

/// Reads a line-delimited annotation file through the adapter chosen by
/// `schema`. Errors name the line number.
FrameLoad read_frames(const std::filesystem::path& path, std::string_view schema,
                      const annotations::MotionPolicy& policy = {});

std::string frames_to_jsonl(const std::vector<annotations::FrameAnnotation>& frames);

}  // namespace surgqa
