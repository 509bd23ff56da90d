#pragma once

#include <fmt/format.h>

#include "surgqa/generation.hpp"

namespace fixture {

using surgqa::generation::ConversationParadigm;
using surgqa::generation::InstructionRecord;
using surgqa::generation::Role;
using surgqa::generation::SubTask;

inline InstructionRecord record(std::string id, SubTask subtask, std::string question, std::string answer,
                                ConversationParadigm paradigm = ConversationParadigm::kVisualQA) {
  InstructionRecord r;
  r.record_id = std::move(id);
  r.frame_id = "frame-" + r.record_id;
  r.image_path = r.frame_id + ".png";
  r.paradigm = paradigm;
  r.subtask = subtask;
  r.template_id = fmt::format("{}:{}:0", surgqa::generation::to_string(paradigm), surgqa::generation::to_string(subtask));
  r.turns.push_back(surgqa::generation::make_turn(Role::kHuman, std::move(question)));
  r.turns.push_back(surgqa::generation::make_turn(Role::kAssistant, std::move(answer)));
  return r;
}

/// n records over four (paradigm, sub-task) strata of unequal size. Every
/// fifth answer carries the misspelling "forcep".
inline std::vector<InstructionRecord> review_corpus(std::size_t n) {
  static const SubTask kinds[] = {SubTask::kInstrumentMotion, SubTask::kTargetTissue,
                                  SubTask::kInstrumentCategory, SubTask::kObjectPosition};
  std::vector<InstructionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    // Strata weights 4:3:2:1.
    std::size_t k = i % 10 < 4 ? 0 : i % 10 < 7 ? 1 : i % 10 < 9 ? 2 : 3;
    std::string answer = i % 5 == 0 ? "The prograsp forcep is idle."
                                    : fmt::format("The scene shows tissue region {}.", i);
    out.push_back(record(fmt::format("rec-{:03d}", i), kinds[k], "What is happening in the image?", answer));
  }
  return out;
}

}  // namespace fixture
