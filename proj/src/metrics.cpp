#include "surgqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "surgqa/grounding.hpp"
#include "surgqa/text.hpp"
#include "surgqa/util.hpp"

namespace surgqa::metrics {

namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<std::vector<std::string>, double>;

void require_pairs(const std::vector<EvalPair>& pairs, std::string_view metric) {
  if (pairs.empty()) throw ValidationError(fmt::format("{}: no pairs to score", metric));
}

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts out;
  if (static_cast<int>(tokens.size()) < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    out[Tokens(tokens.begin() + i, tokens.begin() + i + n)] += 1.0;
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace

std::vector<std::string> metrics_for(ConversationParadigm paradigm) {
  switch (paradigm) {
    case ConversationParadigm::kSinglePhrase:
      return {std::string(kAcc), std::string(kFScore)};
    case ConversationParadigm::kGroundingQA:
      return {std::string(kAP50), std::string(kMIoU)};
    case ConversationParadigm::kVisualQA:
    case ConversationParadigm::kRegionBasedQA:
      return {std::string(kBleu3), std::string(kBleu4), std::string(kCider),
              std::string(kMeteor), std::string(kRouge1), std::string(kRougeL)};
    case ConversationParadigm::kDetailedDescription:
      return {std::string(kJudge)};
  }
  return {};
}

std::vector<std::string> all_metric_names() {
  return {std::string(kAcc),   std::string(kFScore), std::string(kAP50),   std::string(kMIoU),
          std::string(kBleu3), std::string(kBleu4),  std::string(kCider),  std::string(kMeteor),
          std::string(kRouge1), std::string(kRougeL), std::string(kJudge)};
}

double accuracy(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, kAcc);
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (text::normalize_answer(p.reference) == text::normalize_answer(p.prediction)) ++hits;
  }
  return 100.0 * double(hits) / double(pairs.size());
}

double macro_f1(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, kFScore);
  struct Counts {
    double tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> classes;
  std::vector<std::pair<std::string, std::string>> normalized;
  for (const auto& p : pairs) {
    normalized.emplace_back(text::normalize_answer(p.reference), text::normalize_answer(p.prediction));
    classes[normalized.back().first];
  }
  for (const auto& [ref, pred] : normalized) {
    if (ref == pred) {
      classes[ref].tp += 1;
    } else {
      classes[ref].fn += 1;
      if (auto it = classes.find(pred); it != classes.end()) it->second.fp += 1;
    }
  }
  double sum = 0.0;
  for (const auto& [_, c] : classes) {
    double p = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
    double r = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
    sum += f1(p, r);
  }
  return 100.0 * sum / double(classes.size());
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

BoxScores box_scores(const std::vector<EvalPair>& pairs) {
  BoxScores out;
  for (const auto& p : pairs) {
    std::optional<BoundingBox> ref = p.reference_box;
    if (!ref) {
      auto parsed = generation::parse_grounding(p.reference);
      if (!parsed.boxes.empty()) ref = parsed.boxes.front().box;
    }
    if (!ref) {
      out.warnings.push_back(fmt::format("{}: reference has no box; pair skipped", p.record_id));
      continue;
    }
    auto pred = generation::parse_grounding(p.prediction);
    out.ious.push_back(pred.boxes.empty() ? 0.0 : iou(*ref, pred.boxes.front().box));
  }
  return out;
}

namespace {

BoxScores scored_boxes(const std::vector<EvalPair>& pairs, std::string_view metric,
                       std::vector<std::string>* warnings) {
  require_pairs(pairs, metric);
  auto s = box_scores(pairs);
  if (warnings) warnings->insert(warnings->end(), s.warnings.begin(), s.warnings.end());
  if (s.ious.empty()) throw ValidationError(fmt::format("{}: no pair carries a reference box", metric));
  return s;
}

}  // namespace

double mean_iou(const std::vector<EvalPair>& pairs, std::vector<std::string>* warnings) {
  auto s = scored_boxes(pairs, kMIoU, warnings);
  double sum = 0.0;
  for (double v : s.ious) sum += v;
  return 100.0 * sum / double(s.ious.size());
}

double ap_at_50(const std::vector<EvalPair>& pairs, std::vector<std::string>* warnings) {
  auto s = scored_boxes(pairs, kAP50, warnings);
  std::size_t hits = 0;
  for (double v : s.ious) hits += v >= 0.5 ? 1 : 0;
  return 100.0 * double(hits) / double(s.ious.size());
}

double bleu(const std::vector<EvalPair>& pairs, int n) {
  require_pairs(pairs, "BLEU");
  if (n < 1) throw ValidationError("BLEU order must be at least 1");
  constexpr double kEps = 1e-9;
  std::vector<double> matches(n, 0.0), totals(n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    auto hyp = text::tokenize(p.prediction);
    auto ref = text::tokenize(p.reference);
    hyp_len += double(hyp.size());
    ref_len += double(ref.size());
    for (int k = 1; k <= n; ++k) {
      auto h = ngrams(hyp, k);
      auto r = ngrams(ref, k);
      for (const auto& [g, c] : h) {
        totals[k - 1] += c;
        if (auto it = r.find(g); it != r.end()) matches[k - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double pk = matches[k] > 0 ? matches[k] / totals[k] : (matches[k] + kEps) / (totals[k] + kEps);
    log_sum += std::log(pk);
  }
  double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / n);
}

double cider(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, kCider);
  constexpr int kMaxN = 4;
  constexpr double kSigma = 6.0;
  const double log_n = std::log(double(pairs.size()));

  std::vector<Tokens> hyps, refs;
  std::vector<std::map<std::vector<std::string>, double>> df(kMaxN);
  for (const auto& p : pairs) {
    hyps.push_back(text::tokenize(p.prediction));
    refs.push_back(text::tokenize(p.reference));
    for (int k = 1; k <= kMaxN; ++k) {
      for (const auto& [g, _] : ngrams(refs.back(), k)) df[k - 1][g] += 1.0;
    }
  }

  auto tfidf = [&](const Tokens& toks, int k, double& norm) {
    NgramCounts v = ngrams(toks, k);
    norm = 0.0;
    for (auto& [g, c] : v) {
      auto it = df[k - 1].find(g);
      double d = it == df[k - 1].end() ? 0.0 : it->second;
      c *= log_n - std::log(std::max(1.0, d));
      norm += c * c;
    }
    norm = std::sqrt(norm);
    return v;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double delta = double(hyps[i].size()) - double(refs[i].size());
    const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
    double sum_n = 0.0;
    for (int k = 1; k <= kMaxN; ++k) {
      double nh = 0.0, nr = 0.0;
      auto vh = tfidf(hyps[i], k, nh);
      auto vr = tfidf(refs[i], k, nr);
      double dot = 0.0;
      for (const auto& [g, c] : vh) {
        if (auto it = vr.find(g); it != vr.end()) dot += std::min(c, it->second) * it->second;
      }
      if (nh != 0.0 && nr != 0.0) sum_n += dot / (nh * nr) * penalty;
    }
    total += 10.0 * sum_n / kMaxN;
  }
  return total / double(pairs.size());
}

double meteor(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, kMeteor);
  double total = 0.0;
  for (const auto& p : pairs) {
    auto hyp = text::tokenize(p.prediction);
    auto ref = text::tokenize(p.reference);
    if (hyp.empty() || ref.empty()) continue;
    std::vector<int> align(hyp.size(), -1);
    std::vector<bool> used(ref.size(), false);
    auto stage = [&](auto&& key) {
      for (std::size_t i = 0; i < hyp.size(); ++i) {
        if (align[i] >= 0) continue;
        auto kh = key(hyp[i]);
        for (std::size_t j = 0; j < ref.size(); ++j) {
          if (!used[j] && key(ref[j]) == kh) {
            align[i] = static_cast<int>(j);
            used[j] = true;
            break;
          }
        }
      }
    };
    stage([](const std::string& w) { return w; });
    stage([](const std::string& w) { return text::porter_stem(w); });

    double m = 0.0, chunks = 0.0;
    int prev_ref = -2;
    bool prev_aligned = false;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (align[i] < 0) {
        prev_aligned = false;
        continue;
      }
      m += 1.0;
      if (!prev_aligned || align[i] != prev_ref + 1) chunks += 1.0;
      prev_ref = align[i];
      prev_aligned = true;
    }
    if (m == 0.0) continue;
    double precision = m / double(hyp.size());
    double recall = m / double(ref.size());
    double fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    double penalty = 0.5 * std::pow(chunks / m, 3.0);
    total += fmean * (1.0 - penalty);
  }
  return 100.0 * total / double(pairs.size());
}

double rouge(const std::vector<EvalPair>& pairs, RougeVariant variant) {
  require_pairs(pairs, variant == RougeVariant::kRouge1 ? kRouge1 : kRougeL);
  double total = 0.0;
  for (const auto& p : pairs) {
    auto hyp = text::tokenize(p.prediction);
    auto ref = text::tokenize(p.reference);
    if (hyp.empty() || ref.empty()) continue;
    double overlap = 0.0;
    if (variant == RougeVariant::kRouge1) {
      auto h = ngrams(hyp, 1);
      auto r = ngrams(ref, 1);
      for (const auto& [g, c] : h) {
        if (auto it = r.find(g); it != r.end()) overlap += std::min(c, it->second);
      }
    } else {
      overlap = double(lcs_length(hyp, ref));
    }
    total += f1(overlap / double(hyp.size()), overlap / double(ref.size()));
  }
  return 100.0 * total / double(pairs.size());
}

double StubJudge::rate(std::string_view reference, std::string_view prediction) {
  EvalPair p;
  p.reference = std::string(reference);
  p.prediction = std::string(prediction);
  return rouge({p}, RougeVariant::kRougeL);
}

HttpJudgeClient::HttpJudgeClient(generation::EndpointConfig config) : config_(std::move(config)) {
  if (config_.url.rfind("http://", 0) != 0) {
    throw ValidationError("judge URL must start with http:// (got '" + config_.url + "')");
  }
}

double HttpJudgeClient::rate(std::string_view reference, std::string_view prediction) {
  nlohmann::json reply;
  try {
    reply = generation::post_json(config_, {{"reference", reference}, {"prediction", prediction}});
  } catch (const generation::EndpointError& e) {
    throw JudgeError(e.what());
  }
  if (!reply.contains("score") || !reply["score"].is_number()) {
    throw JudgeError("judge reply lacks a numeric 'score'");
  }
  double s = reply["score"].get<double>();
  if (!(s >= 0.0 && s <= 100.0)) throw JudgeError(fmt::format("judge score {} outside [0, 100]", s));
  return s;
}

JudgeResult judge_score(const std::vector<EvalPair>& pairs, JudgeClient& judge) {
  require_pairs(pairs, kJudge);
  JudgeResult out;
  out.total = pairs.size();
  double sum = 0.0;
  for (const auto& p : pairs) {
    try {
      sum += judge.rate(p.reference, p.prediction);
      ++out.scored;
    } catch (const JudgeError&) {
      // Unscored pairs lower coverage, not the score.
    }
  }
  out.score = out.scored ? sum / double(out.scored) : 0.0;
  return out;
}

}  // namespace surgqa::metrics
