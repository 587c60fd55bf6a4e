#pragma once

#include <sys/socket.h>

#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmgeval/annotsvc.hpp"

namespace cmgeval::annot {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw UsageError("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed JSON body: ") + ex.what());
  }
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const UnknownSession& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const EventRejected& e) {
      send_json(res, 409, {{"error", e.what()}, {"first_bad_index", e.first_bad_index}});
    } catch (const ReplayMismatch& e) {
      send_json(res, 409, {{"error", e.what()}, {"position", e.position}});
    } catch (const UsageError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const DataError& e) {
      send_json(res, 422, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace detail

inline nlohmann::json to_json(const Session& s) {
  return {{"session_id", s.session_id},
          {"annotator_id", s.annotator_id},
          {"seed", s.seed},
          {"task_order", s.task_order},
          {"cursor", s.cursor}};
}

inline nlohmann::json to_json(const Submission& s) {
  return {{"session_id", s.session_id},
          {"commit_id", s.commit_id},
          {"node_id", s.node.node_id},
          {"zero_edit", s.zero_edit},
          {"suspicious_events", s.suspicious_events}};
}

/// JSON-over-HTTP front for a Service. The browser editor talks to these routes.
class HttpServer {
 public:
  explicit HttpServer(Service& svc) : svc_(svc) {
    // No SO_REUSEPORT: a second server on a busy port must fail to bind.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    using detail::guarded;
    using detail::parse_body;
    using detail::send_json;

    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto annotator = body.value("annotator_id", std::string{});
      if (annotator.empty()) throw UsageError("annotator_id is required");
      std::optional<std::uint64_t> seed;
      if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
      send_json(res, 201, to_json(svc_.create_session(annotator, seed)));
    }));

    server_.Get("/sessions/:id/task", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto task = svc_.next_task(req.path_params.at("id"));
      if (!task) {
        send_json(res, 200, {{"done", true}});
        return;
      }
      nlohmann::json j{{"done", false},
                       {"commit_id", task->commit_id},
                       {"message_id", task->message_id},
                       {"diff", task->diff},
                       {"generated_message", task->generated_message},
                       {"help", task->help}};
      j["summary"] = task->summary ? nlohmann::json(*task->summary) : nlohmann::json(nullptr);
      send_json(res, 200, j);
    }));

    server_.Post("/sessions/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      std::vector<EditEvent> events;
      for (const auto& e : body.at("events")) events.push_back(event_from_json(e));
      const auto ack = svc_.record_events(req.path_params.at("id"), body.at("message_id").get<std::string>(), events);
      send_json(res, 200, {{"accepted_through", ack.accepted_through}});
    }));

    server_.Post("/sessions/:id/submit", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      const auto sub = svc_.submit_edit(req.path_params.at("id"), body.at("message_id").get<std::string>(),
                                        body.at("final_text").get<std::string>());
      send_json(res, 200, to_json(sub));
    }));

    server_.Post("/sessions/:id/skip", guarded([this](const httplib::Request& req, httplib::Response& res) {
      svc_.skip(req.path_params.at("id"));
      send_json(res, 200, {{"skipped", true}});
    }));

    server_.Get("/export", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto bundle = svc_.export_data();
      send_json(res, 200,
                {{"corpus_jsonl", bundle.corpus_jsonl},
                 {"events_jsonl", bundle.events_jsonl},
                 {"skips_jsonl", bundle.skips_jsonl}});
    }));
  }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;
  ~HttpServer() { stop(); }

  /// Binds without serving. Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
      if (bound < 0) throw UsageError("cannot bind " + host + " to any port");
    } else if (!server_.bind_to_port(host, port)) {
      throw UsageError("cannot bind " + host + ":" + std::to_string(port) + " (address in use or not available)");
    }
    port_ = bound;
    return bound;
  }

  /// Serves on the calling thread until stop().
  void serve() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { serve(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  Service& svc_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace cmgeval::annot
