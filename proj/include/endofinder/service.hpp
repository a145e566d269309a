#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <thread>

// The vendored default backlog of 5 drops connections under concurrent load.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#endif
#include <httplib.h>
#include <json.hpp>

#include "endofinder/classifier.hpp"
#include "endofinder/hash_index.hpp"

namespace endofinder {

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Request handling independent of the transport, so it can be tested
/// without sockets. Holds one immutable index; handle() is const and safe to
/// call from many threads at once.
class QueryService {
 public:
  QueryService(std::shared_ptr<const BallTreeIndex> index, std::size_t default_k)
      : index_(std::move(index)), default_k_(default_k) {
    ENDF_THROW_IF_NOT(index_ && index_->size() > 0, Errc::EmptyDatabase, "service needs a non-empty index");
  }

  const BallTreeIndex& index() const { return *index_; }

  HttpReply health() const {
    return {200, nlohmann::json{{"status", "ok"}}.dump()};
  }

  HttpReply query(const std::string& body) const {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return error(400, "request body must be a JSON object");
    const bool has_emb = req.contains("embedding"), has_hex = req.contains("hash_hex");
    if (has_emb == has_hex) return error(400, "exactly one of 'embedding' or 'hash_hex' is required");

    std::size_t k = default_k_;
    if (req.contains("k")) {
      if (!req["k"].is_number_integer()) return error(400, "'k' must be an integer");
      const auto kk = req["k"].get<long long>();
      if (kk < 1 || static_cast<unsigned long long>(kk) > index_->size())
        return error(422, "k must be in [1, " + std::to_string(index_->size()) + "]");
      k = static_cast<std::size_t>(kk);
    }
    std::string query_id;
    if (req.contains("query_id")) {
      if (!req["query_id"].is_string()) return error(400, "'query_id' must be a string");
      query_id = req["query_id"].get<std::string>();
    }

    HashCode code;
    if (has_emb) {
      const auto& e = req["embedding"];
      if (!e.is_array()) return error(400, "'embedding' must be an array of numbers");
      std::vector<double> v;
      v.reserve(e.size());
      for (const auto& x : e) {
        if (!x.is_number()) return error(400, "'embedding' must contain only numbers");
        v.push_back(x.get<double>());
      }
      if (v.size() != index_->code_bits())
        return error(422, "embedding has dimension " + std::to_string(v.size()) + ", index expects " +
                              std::to_string(index_->code_bits()));
      code = quantize(std::span<const double>(v));
    } else {
      if (!req["hash_hex"].is_string()) return error(400, "'hash_hex' must be a string");
      const auto hex = req["hash_hex"].get<std::string>();
      if (hex.size() != 2 * ((index_->code_bits() + 7) / 8))
        return error(422, "hash_hex has " + std::to_string(hex.size()) + " hex digits, index expects " +
                              std::to_string(2 * ((index_->code_bits() + 7) / 8)));
      try {
        code = HashCode::from_hex(hex, index_->code_bits());
      } catch (const Error& err) {
        return error(400, err.what());
      }
    }
    const auto result = classify(*index_, code, k);
    return {200, to_json(explain(result, *index_, query_id)).dump()};
  }

 private:
  static HttpReply error(int status, const std::string& msg) { return {status, nlohmann::json{{"error", msg}}.dump()}; }

  std::shared_ptr<const BallTreeIndex> index_;
  std::size_t default_k_;
};

/// httplib front end. start() binds and serves on a background thread;
/// run() blocks the caller.
class HttpService {
 public:
  HttpService(std::shared_ptr<const QueryService> svc, int threads) : svc_(std::move(svc)) {
    const auto n = static_cast<std::size_t>(std::max(1, threads));
    server_.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { send(res, svc_->health()); });
    server_.Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, svc_->query(req.body));
    });
  }

  ~HttpService() { stop(); }
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds (port 0 = any free port) and serves in the background; returns the port.
  int start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
    } else if (!server_.bind_to_port(host, port)) {
      bound = -1;
    }
    ENDF_THROW_IF_NOT(bound > 0, Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Blocks until stop() is called from another thread or a signal handler.
  bool run(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void send(httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  }

  std::shared_ptr<const QueryService> svc_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace endofinder
