#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "surgqa/cleaning.hpp"

namespace httplib {
class Server;
}

namespace surgqa::cleaning {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks an ephemeral port
  std::string token;  // empty disables the shared-token check
  std::filesystem::path images_dir;
  std::filesystem::path static_dir;  // optional UI bundle served at /
  std::filesystem::path output_dir;  // finalize writes cleaned corpus, rules and change log here
  std::size_t rule_threshold = 2;
};

nlohmann::json review_item_json(const ReviewSession& session, std::size_t index);
nlohmann::json session_summary_json(const ReviewSession& session, std::size_t corpus_size);

/// HTTP+JSON front end over one review session. Decision writes and finalize
/// are serialized by a single writer lock; reads share a reader lock.
class ReviewServer {
 public:
  ReviewServer(ServerConfig config, std::vector<InstructionRecord> corpus, ReviewSession session,
               DecisionLog log);
  ~ReviewServer();

  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds the socket and returns the bound port. Throws IoError on failure.
  int bind();
  /// Blocks serving requests until stop().
  void serve();
  /// bind() then serve() on a background thread; returns the port.
  int start_background();
  void stop();

  ReviewSession session_snapshot() const;
  /// compile_rules + apply_rules over the current session; writes outputs when output_dir is set.
  nlohmann::json finalize();

 private:
  void install_routes();
  std::filesystem::path image_for(const std::string& frame_id) const;

  ServerConfig config_;
  std::vector<InstructionRecord> corpus_;
  ReviewSession session_;
  DecisionLog log_;
  mutable std::shared_mutex state_mutex_;
  std::mutex writer_mutex_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace surgqa::cleaning
