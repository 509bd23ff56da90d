#include "surgqa/enrichment.hpp"

#include <cstdlib>
#include <regex>

#include <fmt/format.h>

#include "httplib.h"
#include "surgqa/corpus_io.hpp"
#include "surgqa/util.hpp"

namespace surgqa::generation {

namespace {

std::string without_article(std::string_view phrase) {
  auto s = trim(phrase);
  auto lower = to_lower(s);
  for (std::string_view art : {"the ", "a ", "an "}) {
    if (lower.rfind(art, 0) == 0) return s.substr(art.size());
  }
  return s;
}

}  // namespace

std::string StubEnricher::rewrite(std::string_view, const InstructionRecord& payload) {
  const Turn* answer = payload.last_answer();
  if (!answer) throw EnrichmentError(payload.record_id + ": nothing to rewrite");
  if (payload.paradigm == ConversationParadigm::kDetailedDescription) return answer->text;

  const std::string a = trim(answer->text);
  const std::string lower = to_lower(a);
  const SubTask subtask = payload.subtask.value_or(SubTask::kDescription);
  switch (subtask) {
    case SubTask::kInstrumentNumber:
      if (lower == "one" || lower == "1") {
        return fmt::format("There is {} instrument visible in the surgical scene.", a);
      }
      return fmt::format("There are {} instruments visible in the surgical scene.", a);
    case SubTask::kInstrumentCategory:
      return fmt::format("The instrument in question is the {}.", without_article(a));
    case SubTask::kObjectPosition:
      return fmt::format("It is located at the {} of the image.", a);
    case SubTask::kInstrumentMotion:
      return fmt::format("The instrument is currently {}.", a);
    case SubTask::kTargetTissue:
      return fmt::format("The target tissue in this scene is the {}.", without_article(a));
    case SubTask::kMotionDirection:
      return fmt::format("The motion direction of the instrument is {}.", a);
    case SubTask::kDescription:
      break;
  }
  return fmt::format("The answer is {}.", a);
}

EndpointConfig endpoint_from_env(std::string_view prefix) {
  EndpointConfig cfg;
  auto get = [](const std::string& name) -> std::string {
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
  };
  cfg.url = get(std::string(prefix) + "_URL");
  cfg.token = get(std::string(prefix) + "_TOKEN");
  return cfg;
}

HttpEnrichmentClient::HttpEnrichmentClient(EndpointConfig config) : config_(std::move(config)) {
  if (config_.url.rfind("http://", 0) != 0) {
    throw ValidationError("endpoint URL must start with http:// (got '" + config_.url + "')");
  }
}

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ValidationError("malformed endpoint URL '" + url + "'");
  return {m[1], m[2].matched ? m[2].str() : "/"};
}

}  // namespace

nlohmann::json post_json(const EndpointConfig& config, const nlohmann::json& body) {
  auto [origin, path] = split_url(config.url);
  httplib::Client client(origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  httplib::Headers headers;
  if (!config.token.empty()) headers.emplace("Authorization", "Bearer " + config.token);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw EndpointError(fmt::format("{}: transport error: {}", config.url, httplib::to_string(res.error())));
  }
  if (res->status != 200) throw EndpointError(fmt::format("{} returned HTTP {}", config.url, res->status));
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw EndpointError(config.url + " returned malformed JSON");
  return reply;
}

std::string HttpEnrichmentClient::rewrite(std::string_view instruction,
                                          const InstructionRecord& payload) {
  nlohmann::json reply;
  try {
    reply = post_json(config_, {{"instruction", instruction}, {"record", record_to_json(payload)}});
  } catch (const EndpointError& e) {
    throw EnrichmentError(e.what());
  }
  if (!reply.contains("text") || !reply["text"].is_string()) {
    throw EnrichmentError("enricher reply lacks a 'text' string");
  }
  return reply["text"].get<std::string>();
}

}  // namespace surgqa::generation
