#include <httplib.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"
#include "markerlab/service.hpp"

namespace markerlab {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorKind kind, const std::string& message) {
  send_json(res, http_status(kind), {{"error", {{"kind", to_string(kind)}, {"message", message}}}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kUsage, fmt::format("request body is not valid JSON: {}", ex.what()));
  }
}

int parse_index(const std::string& text) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size() && v >= 0) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kNotFound, fmt::format("'{}' is not an index", text));
}

// Wraps a handler so library errors become JSON error bodies.
httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, e.kind(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, ErrorKind::kUsage, e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"error", {{"kind", "internal"}, {"message", e.what()}}}});
    }
  };
}

}  // namespace

HttpServer::HttpServer(Service& service, std::string token)
    : service_(service), token_(std::move(token)), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (token_.empty() || req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") != "Bearer " + token_) {
      send_json(res, 401, {{"error", {{"kind", "unauthorized"}, {"message", "missing or invalid bearer token"}}}});
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });

  s.Get("/health", guarded([this](const auto&, auto& res) { send_json(res, 200, service_.health()); }));
  s.Get("/experiments", guarded([this](const auto&, auto& res) { send_json(res, 200, service_.list()); }));
  s.Post("/experiments", guarded([this](const auto& req, auto& res) {
           const auto id = service_.create(parse_body(req));
           send_json(res, 201, service_.get(id));
         }));
  s.Get(R"(/experiments/([^/]+))",
        guarded([this](const auto& req, auto& res) { send_json(res, 200, service_.get(req.matches[1])); }));
  s.Post(R"(/experiments/([^/]+)/iterations)", guarded([this](const auto& req, auto& res) {
           const int index = service_.start_iteration(req.matches[1]);
           send_json(res, 202, {{"id", req.matches[1]}, {"index", index}, {"status", "running"}});
         }));
  s.Get(R"(/experiments/([^/]+)/iterations/(\d+))", guarded([this](const auto& req, auto& res) {
          send_json(res, 200, service_.iteration(req.matches[1], parse_index(req.matches[2])));
        }));
  s.Get(R"(/experiments/([^/]+)/iterations/(\d+)/attribution)", guarded([this](const auto& req, auto& res) {
          std::size_t k = 0;
          if (req.has_param("k")) {
            const int v = parse_index(req.get_param_value("k"));
            if (v <= 0) fail(ErrorKind::kUsage, "k must be positive");
            k = static_cast<std::size_t>(v);
          }
          send_json(res, 200, service_.attribution(req.matches[1], parse_index(req.matches[2]), k));
        }));
  s.Post(R"(/experiments/([^/]+)/iterations/(\d+)/decisions)", guarded([this](const auto& req, auto& res) {
           send_json(res, 200, service_.post_decisions(req.matches[1], parse_index(req.matches[2]), parse_body(req)));
         }));
  s.Get(R"(/experiments/([^/]+)/iterations/(\d+)/metrics)", guarded([this](const auto& req, auto& res) {
          send_json(res, 200, service_.metrics(req.matches[1], parse_index(req.matches[2])));
        }));
  s.Get(R"(/experiments/([^/]+)/iterations/(\d+)/roc)", guarded([this](const auto& req, auto& res) {
          const auto doc = service_.roc(req.matches[1], parse_index(req.matches[2]));
          if (req.get_param_value("format") == "csv") {
            res.set_content(roc_csv(roc_from_json(doc)), "text/csv");
          } else {
            send_json(res, 200, doc);
          }
        }));
  s.Get(R"(/experiments/([^/]+)/compare)",
        guarded([this](const auto& req, auto& res) { send_json(res, 200, service_.compare(req.matches[1])); }));
  s.Post(R"(/experiments/([^/]+)/ablations)", guarded([this](const auto& req, auto& res) {
           const auto body = parse_body(req);
           if (!body.contains("marker") || !body.at("marker").is_string()) fail(ErrorKind::kUsage, "body needs a 'marker' string");
           const int index = service_.start_ablation(req.matches[1], body.at("marker"));
           send_json(res, 202, {{"id", req.matches[1]}, {"index", index}, {"status", "running"}});
         }));
  s.Get(R"(/experiments/([^/]+)/ablations/(\d+))", guarded([this](const auto& req, auto& res) {
          send_json(res, 200, service_.ablation(req.matches[1], parse_index(req.matches[2])));
        }));
  s.Get(R"(/experiments/([^/]+)/manifest)",
        guarded([this](const auto& req, auto& res) { send_json(res, 200, service_.manifest(req.matches[1])); }));
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      send_error(res, ErrorKind::kNotFound, fmt::format("no route for {} {}", req.method, req.path));
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) fail(ErrorKind::kUsage, fmt::format("cannot bind {}", host));
    return bound;
  }
  if (!server_->bind_to_port(host, port)) fail(ErrorKind::kUsage, fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace markerlab
