#pragma once

#include "dlf/checkpoint.hpp"

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace dlf {

std::string base64_encode(const std::vector<unsigned char>& bytes);
/// Accepts an optional "data:...;base64," prefix. Throws FormatError on
/// invalid input.
std::vector<unsigned char> base64_decode(const std::string& text);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  Index max_side = 2048;
  std::size_t max_sessions = 64;
};

/// State behind the tuning API. The model is shared read-only; every session
/// owns its input, its activation caches and a lock that serializes its
/// requests.
///
///   GET    /api/operators
///   POST   /api/session              {"image": base64 PNG}
///   POST   /api/session/{id}/apply   {"operator", "gamma": [raw...], "mode": "full"|"cheap"}
///   DELETE /api/session/{id}
///   GET    /healthz
class Service {
 public:
  /// Without a model every /api endpoint answers 503.
  explicit Service(std::optional<Checkpoint> model, ServiceOptions options = {});

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  bool has_model() const { return model_.has_value(); }
  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex lock;
    Image input;
    Tensor<float> image;
    Tensor<float> edge;
    std::map<std::string, ActivationCache<float>> caches;  // cheap mode, per operator
    std::vector<unsigned char> last_output;
  };

  HttpResponse list_operators() const;
  HttpResponse create_session(const std::string& body);
  HttpResponse apply(const std::string& id, const std::string& body);
  HttpResponse delete_session(const std::string& id);
  std::shared_ptr<Session> find_session(const std::string& id) const;

  std::optional<Checkpoint> model_;
  ServiceOptions options_;
  mutable std::shared_mutex sessions_lock_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> next_id_{0};
  std::uint64_t id_salt_ = 0;
};

/// HTTP binding of a Service. Files under `static_dir`, when given, are
/// served from "/".
class HttpServer {
 public:
  explicit HttpServer(Service& service, const std::string& static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port; throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  void listen();
  void stop();

 private:
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace dlf
