#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>

#include "surgqa/corpus_io.hpp"
#include "surgqa/metrics.hpp"
#include "surgqa/util.hpp"

namespace surgqa::metrics {

using nlohmann::json;

namespace {

std::optional<MetricValue> score_metric(const std::string& name, const std::vector<EvalPair>& pairs,
                                        JudgeClient& judge, MetricReport& report) {
  MetricValue v;
  if (name == kAcc) {
    v.value = accuracy(pairs);
  } else if (name == kFScore) {
    v.value = macro_f1(pairs);
  } else if (name == kAP50 || name == kMIoU) {
    auto s = box_scores(pairs);
    report.warnings.insert(report.warnings.end(), s.warnings.begin(), s.warnings.end());
    if (s.ious.empty()) {
      v.note = "no reference boxes";
    } else {
      v.value = name == kAP50 ? ap_at_50(pairs) : mean_iou(pairs);
    }
  } else if (name == kBleu3) {
    v.value = bleu(pairs, 3);
  } else if (name == kBleu4) {
    v.value = bleu(pairs, 4);
  } else if (name == kCider) {
    v.value = cider(pairs);
  } else if (name == kMeteor) {
    v.value = meteor(pairs);
  } else if (name == kRouge1) {
    v.value = rouge(pairs, RougeVariant::kRouge1);
  } else if (name == kRougeL) {
    v.value = rouge(pairs, RougeVariant::kRougeL);
  } else if (name == kJudge) {
    auto r = judge_score(pairs, judge);
    if (r.scored) v.value = r.score;
    report.judge_coverage = r.coverage();  // the aggregate row is scored last
    v.note = fmt::format("coverage {:.2f}", r.coverage());
  } else {
    return std::nullopt;
  }
  return v;
}

ReportRow score_bucket(std::string paradigm_name, std::string subtask_name,
                       ConversationParadigm paradigm, const std::vector<EvalPair>& pairs,
                       const EvalConfig& config, JudgeClient& judge, MetricReport& report) {
  ReportRow row;
  row.paradigm = std::move(paradigm_name);
  row.subtask = std::move(subtask_name);
  row.pairs = pairs.size();
  const auto applicable = metrics_for(paradigm);
  std::vector<std::string> wanted;
  if (config.metrics.empty()) {
    wanted = applicable;
  } else {
    for (const auto& name : all_metric_names()) {
      if (config.metrics.count(name)) wanted.push_back(name);
    }
  }
  for (const auto& name : wanted) {
    row.order.push_back(name);
    if (std::find(applicable.begin(), applicable.end(), name) == applicable.end()) {
      row.values[name] = MetricValue{std::nullopt, "inapplicable"};
      continue;
    }
    row.values[name] = *score_metric(name, pairs, judge, report);
  }
  return row;
}

}  // namespace

MetricReport evaluate(const std::vector<EvalPair>& input, const EvalConfig& config) {
  for (const auto& name : config.metrics) {
    auto all = all_metric_names();
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw ValidationError(fmt::format("unknown metric '{}'", name));
    }
  }
  StubJudge stub;
  JudgeClient& judge = config.judge ? *config.judge : stub;

  // Sorting by id makes every floating-point reduction independent of input order.
  std::vector<EvalPair> pairs = input;
  std::sort(pairs.begin(), pairs.end(),
            [](const EvalPair& a, const EvalPair& b) { return a.record_id < b.record_id; });

  std::map<ConversationParadigm, std::map<std::string, std::vector<EvalPair>>> buckets;
  for (const auto& p : pairs) {
    std::string sub = p.subtask ? std::string(generation::to_string(*p.subtask)) : "-";
    buckets[p.paradigm][sub].push_back(p);
  }

  MetricReport report;
  for (auto paradigm : generation::kAllParadigms) {
    auto it = buckets.find(paradigm);
    if (it == buckets.end()) continue;
    std::string pname(generation::to_string(paradigm));
    std::vector<EvalPair> all;
    for (const auto& [sub, group] : it->second) {
      report.rows.push_back(score_bucket(pname, sub, paradigm, group, config, judge, report));
      all.insert(all.end(), group.begin(), group.end());
    }
    if (it->second.size() > 1) {
      std::sort(all.begin(), all.end(),
                [](const EvalPair& a, const EvalPair& b) { return a.record_id < b.record_id; });
      report.rows.push_back(score_bucket(pname, "all", paradigm, all, config, judge, report));
    }
  }
  std::sort(report.warnings.begin(), report.warnings.end());
  report.warnings.erase(std::unique(report.warnings.begin(), report.warnings.end()),
                        report.warnings.end());
  return report;
}

json to_json(const MetricReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json metrics = json::object();
    for (const auto& name : r.order) {
      const auto& v = r.values.at(name);
      json entry{{"value", v.value ? json(*v.value) : json(nullptr)}};
      if (!v.note.empty()) entry["note"] = v.note;
      metrics[name] = entry;
    }
    rows.push_back({{"paradigm", r.paradigm}, {"subtask", r.subtask}, {"pairs", r.pairs}, {"metrics", metrics}});
  }
  json out{{"rows", rows}, {"unmatched", report.unmatched}, {"warnings", report.warnings}};
  out["judge_coverage"] = report.judge_coverage ? json(*report.judge_coverage) : json(nullptr);
  return out;
}

std::string to_table(const MetricReport& report) {
  std::string out;
  for (const auto& r : report.rows) {
    out += fmt::format("{:<22} {:<12} n={:<6}", r.paradigm, r.subtask, r.pairs);
    for (const auto& name : r.order) {
      const auto& v = r.values.at(name);
      if (v.value) {
        out += fmt::format("  {}={:.4f}", name, *v.value);
      } else {
        out += fmt::format("  {}=n/a", name);
      }
    }
    out += '\n';
  }
  if (report.judge_coverage) out += fmt::format("judge coverage: {:.2f}\n", *report.judge_coverage);
  if (!report.unmatched.empty()) out += fmt::format("unmatched ids: {}\n", report.unmatched.size());
  return out;
}

std::vector<ReferenceEntry> read_references(const std::filesystem::path& path) {
  std::vector<ReferenceEntry> out;
  std::size_t line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    auto where = [&] { return fmt::format("{}:{}", path.string(), line_no); };
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ValidationError(where() + ": malformed JSON");
    ReferenceEntry e;
    try {
      if (j.contains("turns")) {
        auto rec = record_from_json(j);
        const auto* answer = rec.last_answer();
        if (!answer) throw ValidationError("record has no assistant turn");
        e.record_id = rec.record_id;
        e.paradigm = rec.paradigm;
        e.subtask = rec.subtask;
        e.text = answer->text;
      } else {
        if (!j.contains("record_id") || !j["record_id"].is_string()) throw SchemaError("record_id", "expected a string");
        if (!j.contains("text") || !j["text"].is_string()) throw SchemaError("text", "expected a string");
        if (!j.contains("paradigm") || !j["paradigm"].is_string()) throw SchemaError("paradigm", "expected a string");
        e.record_id = j["record_id"].get<std::string>();
        e.text = j["text"].get<std::string>();
        e.paradigm = generation::parse_paradigm(j["paradigm"].get<std::string>());
        if (auto it = j.find("subtask"); it != j.end() && it->is_string()) {
          e.subtask = generation::parse_subtask(it->get<std::string>());
        }
        if (auto it = j.find("box"); it != j.end() && !it->is_null()) {
          if (!it->is_array() || it->size() != 4) throw SchemaError("box", "expected [x1, y1, x2, y2]");
          e.box = BoundingBox::checked((*it)[0].get<double>(), (*it)[1].get<double>(),
                                       (*it)[2].get<double>(), (*it)[3].get<double>());
        }
      }
    } catch (const ValidationError& err) {
      throw ValidationError(where() + ": " + err.what());
    } catch (const json::exception& err) {
      throw ValidationError(where() + ": " + err.what());
    }
    if (trim(e.text).empty()) throw ValidationError(where() + ": empty reference text");
    out.push_back(std::move(e));
  }
  return out;
}

std::map<std::string, std::string> read_transcript(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  for (const auto& raw : read_lines(path)) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("record_id") || !j["record_id"].is_string() ||
        !j.contains("text") || !j["text"].is_string()) {
      throw ValidationError(fmt::format("{}:{}: expected {{\"record_id\", \"text\"}}", path.string(), line_no));
    }
    auto id = j["record_id"].get<std::string>();
    if (!out.emplace(id, j["text"].get<std::string>()).second) {
      throw ValidationError(fmt::format("{}:{}: duplicate record_id '{}'", path.string(), line_no, id));
    }
  }
  return out;
}

std::vector<EvalPair> join_pairs(const std::vector<ReferenceEntry>& references,
                                 const std::map<std::string, std::string>& transcript,
                                 std::vector<std::string>& unmatched) {
  std::vector<EvalPair> pairs;
  std::set<std::string> seen;
  for (const auto& r : references) {
    seen.insert(r.record_id);
    auto it = transcript.find(r.record_id);
    if (it == transcript.end()) {
      unmatched.push_back(r.record_id);
      continue;
    }
    pairs.push_back({r.record_id, r.paradigm, r.subtask, r.text, r.box, it->second});
  }
  for (const auto& [id, _] : transcript) {
    if (!seen.count(id)) unmatched.push_back(id);
  }
  std::sort(unmatched.begin(), unmatched.end());
  return pairs;
}

MetricReport evaluate_files(const std::filesystem::path& transcript_path,
                            const std::filesystem::path& references_path, const EvalConfig& config) {
  auto references = read_references(references_path);
  auto transcript = read_transcript(transcript_path);
  if (references.empty()) throw ValidationError(references_path.string() + ": no references");
  std::vector<std::string> unmatched;
  auto pairs = join_pairs(references, transcript, unmatched);
  const double denom = double(std::max(references.size(), transcript.size()));
  if (double(unmatched.size()) > config.max_unmatched_fraction * denom) {
    std::string listed;
    for (std::size_t i = 0; i < unmatched.size() && i < 10; ++i) listed += (i ? ", " : "") + unmatched[i];
    throw ValidationError(fmt::format("{} of {} record ids unmatched (limit {:.0f}%): {}{}",
                                      unmatched.size(), std::size_t(denom),
                                      100 * config.max_unmatched_fraction, listed,
                                      unmatched.size() > 10 ? ", ..." : ""));
  }
  if (pairs.empty()) throw ValidationError("no matched pairs to score");
  auto report = evaluate(pairs, config);
  report.unmatched = std::move(unmatched);
  return report;
}

}  // namespace surgqa::metrics
