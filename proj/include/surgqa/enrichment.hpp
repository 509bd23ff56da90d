#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include "json.hpp"
#include "surgqa/generation.hpp"

namespace surgqa::generation {

class EnrichmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rewrites a draft answer. Implementations must tolerate concurrent calls
/// from several generation workers.
class EnrichmentClient {
 public:
  virtual ~EnrichmentClient() = default;
  virtual std::string rewrite(std::string_view instruction, const InstructionRecord& payload) = 0;
};

/// Deterministic sentence templates keyed by (sub-task, answer). Detailed
/// descriptions pass through unchanged.
class StubEnricher final : public EnrichmentClient {
 public:
  std::string rewrite(std::string_view instruction, const InstructionRecord& payload) override;
};

struct EndpointConfig {
  std::string url;  // e.g. http://127.0.0.1:8080/v1/rewrite
  std::string token;
  std::chrono::seconds timeout{30};
};

class EndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// POSTs `body` as JSON to the configured endpoint (bearer token when set) and
/// returns the parsed JSON reply. Throws EndpointError on transport failure,
/// a non-200 status or an unparseable reply.
nlohmann::json post_json(const EndpointConfig& config, const nlohmann::json& body);

/// Reads `<prefix>_URL` and `<prefix>_TOKEN` from the environment.
EndpointConfig endpoint_from_env(std::string_view prefix);

/// POSTs {"instruction", "record"} as JSON and expects {"text": ...} back.
/// Only plain http endpoints are supported.
class HttpEnrichmentClient final : public EnrichmentClient {
 public:
  explicit HttpEnrichmentClient(EndpointConfig config);
  std::string rewrite(std::string_view instruction, const InstructionRecord& payload) override;

 private:
  EndpointConfig config_;
};

}  // namespace surgqa::generation
