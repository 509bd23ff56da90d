#include "surgqa/review_server.hpp"

#include <map>

#include <fmt/format.h>

#include "httplib.h"
#include "surgqa/corpus_io.hpp"
#include "surgqa/util.hpp"

namespace surgqa::cleaning {

using nlohmann::json;

namespace {

json boxes_json(const std::vector<generation::GroundedBox>& boxes) {
  json out = json::array();
  for (const auto& b : boxes) {
    out.push_back({{"label", b.label}, {"box", {b.box.x1, b.box.y1, b.box.x2, b.box.y2}}});
  }
  return out;
}

std::string url_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = to_lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

}  // namespace

json review_item_json(const ReviewSession& session, std::size_t index) {
  const auto& id = session.sample.at(index);
  const auto& r = session.sampled_records.at(id);
  json turns = json::array();
  std::vector<generation::GroundedBox> all_boxes;
  for (const auto& t : r.turns) {
    turns.push_back({{"role", generation::to_string(t.role)}, {"text", t.text}, {"boxes", boxes_json(t.boxes)}});
    all_boxes.insert(all_boxes.end(), t.boxes.begin(), t.boxes.end());
  }
  json item{{"record_id", r.record_id},
            {"frame_id", r.frame_id},
            {"paradigm", generation::to_string(r.paradigm)},
            {"subtask", r.subtask ? json(generation::to_string(*r.subtask)) : json(nullptr)},
            {"template_id", r.template_id},
            {"image_url", "/api/images/" + url_encode(r.frame_id)},
            {"turns", turns},
            {"boxes", boxes_json(all_boxes)},
            {"index", index},
            {"progress", {{"decided", session.decisions.size()}, {"total", session.sample.size()}}}};
  auto d = session.decisions.find(id);
  item["decision"] = d == session.decisions.end() ? json(nullptr) : to_json(d->second);
  return item;
}

json session_summary_json(const ReviewSession& session, std::size_t corpus_size) {
  std::map<std::string, std::size_t> counts{{"accept", 0}, {"edit", 0}, {"flag", 0}};
  for (const auto& [_, d] : session.decisions) ++counts[std::string(to_string(d.verdict))];
  return {{"corpus_digest", session.corpus_digest},
          {"corpus_size", corpus_size},
          {"ratio", session.ratio},
          {"seed", session.seed},
          {"sample_size", session.sample.size()},
          {"decided", session.decisions.size()},
          {"remaining", session.sample.size() - session.decisions.size()},
          {"cursor", session.cursor},
          {"counts", counts},
          {"done", session.decisions.size() == session.sample.size()}};
}

ReviewServer::ReviewServer(ServerConfig config, std::vector<InstructionRecord> corpus,
                           ReviewSession session, DecisionLog log)
    : config_(std::move(config)),
      corpus_(std::move(corpus)),
      session_(std::move(session)),
      log_(std::move(log)),
      server_(std::make_unique<httplib::Server>()) {
  // httplib's default also sets SO_REUSEPORT, which lets a second server
  // silently share the port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  install_routes();
}

ReviewServer::~ReviewServer() { stop(); }

ReviewSession ReviewServer::session_snapshot() const {
  std::shared_lock lock(state_mutex_);
  return session_;
}

std::filesystem::path ReviewServer::image_for(const std::string& frame_id) const {
  for (const auto& [_, r] : session_.sampled_records) {
    if (r.frame_id != frame_id) continue;
    std::filesystem::path p = r.image_path;
    if (p.empty()) return {};
    return p.is_absolute() || config_.images_dir.empty() ? p : config_.images_dir / p;
  }
  return {};
}

json ReviewServer::finalize() {
  std::lock_guard writer(writer_mutex_);
  ReviewSession snapshot = session_snapshot();
  auto rules = compile_rules(snapshot, config_.rule_threshold);
  auto result = apply_rules(corpus_, rules, snapshot);
  json rules_json = json::array();
  for (const auto& r : rules) rules_json.push_back(to_json(r));
  json out = to_json(result.log);
  out["rules"] = rules_json;
  out["corpus_size"] = result.corpus.size();
  if (!config_.output_dir.empty()) {
    std::filesystem::create_directories(config_.output_dir);
    write_file_atomic(config_.output_dir / "cleaned.jsonl", corpus_to_jsonl(result.corpus));
    write_file_atomic(config_.output_dir / "rules.json", rules_json.dump(2) + "\n");
    write_file_atomic(config_.output_dir / "changelog.json", to_json(result.log).dump(2) + "\n");
  }
  return out;
}

void ReviewServer::install_routes() {
  auto& srv = *server_;

  srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (config_.token.empty() || req.path.rfind("/api/", 0) != 0) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    auto bearer = req.get_header_value("Authorization");
    auto plain = req.get_header_value("X-Review-Token");
    if (bearer == "Bearer " + config_.token || plain == config_.token) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send_error(res, 401, "missing or invalid review token");
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });

  srv.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(state_mutex_);
    send_json(res, 200, session_summary_json(session_, corpus_.size()));
  });

  srv.Get("/api/items/next", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_lock lock(state_mutex_);
    auto next = session_.next_undecided();
    if (!next) {
      res.status = 204;
      return;
    }
    send_json(res, 200, review_item_json(session_, *next));
  });

  srv.Post(R"(/api/items/(.+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return send_error(res, 400, "request body is not valid JSON");
    ReviewDecision d;
    try {
      if (body.is_object() && !body.contains("record_id")) body["record_id"] = id;
      d = decision_from_json(body);
      if (d.record_id != id) return send_error(res, 400, "record_id in body does not match the URL");
      if (d.timestamp.empty()) d.timestamp = utc_timestamp_now();
      validate(d);
    } catch (const ValidationError& e) {
      return send_error(res, 400, e.what());
    }
    std::lock_guard writer(writer_mutex_);
    {
      std::shared_lock lock(state_mutex_);
      if (!session_.is_sampled(id)) return send_error(res, 404, "record '" + id + "' is not in the review sample");
    }
    // Persist before acknowledging; the in-memory update follows the durable append.
    log_.append(d);
    std::unique_lock lock(state_mutex_);
    record_decision(session_, d, nullptr);
    res.status = 204;
  });

  srv.Get(R"(/api/items/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    std::shared_lock lock(state_mutex_);
    for (std::size_t i = 0; i < session_.sample.size(); ++i) {
      if (session_.sample[i] == id) return send_json(res, 200, review_item_json(session_, i));
    }
    send_error(res, 404, "record '" + id + "' is not in the review sample");
  });

  srv.Get(R"(/api/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::filesystem::path path;
    {
      std::shared_lock lock(state_mutex_);
      path = image_for(req.matches[1]);
    }
    if (path.empty() || !std::filesystem::is_regular_file(path)) {
      return send_error(res, 404, "no image for frame '" + std::string(req.matches[1]) + "'");
    }
    try {
      res.set_content(read_file(path), content_type_for(path));
    } catch (const IoError& e) {
      send_error(res, 404, e.what());
    }
  });

  srv.Post("/api/finalize", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, finalize());
  });

  if (!config_.static_dir.empty() && std::filesystem::is_directory(config_.static_dir)) {
    srv.set_mount_point("/", config_.static_dir.string());
  }
}

int ReviewServer::bind() {
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) throw IoError(fmt::format("cannot bind {}:{}", config_.host, config_.port));
  return port_;
}

void ReviewServer::serve() {
  if (port_ < 0) bind();
  server_->listen_after_bind();
}

int ReviewServer::start_background() {
  int port = bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void ReviewServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace surgqa::cleaning
