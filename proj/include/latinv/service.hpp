#pragma once

// JSON-over-HTTP front end. Requests run against one immutable model set;
// the session cache is the only shared mutable state.

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "latinv/models.hpp"
#include "latinv/pipeline.hpp"

namespace latinv {

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;
  std::string directions;  // empty means no catalog
  int max_image_size = 256;
  int request_timeout_s = 30;
  int session_capacity = 32;

  /// Limits must be positive; with `check_paths`, files must exist.
  void validate(bool check_paths) const;
};

ServiceConfig service_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ServiceConfig& cfg);
/// Applies LATINV_BIND ("host" or "host:port") and LATINV_CHECKPOINT.
ServiceConfig apply_env_overrides(ServiceConfig cfg);

/// Bounded LRU map from session id to inversion. Entries are shared so an
/// evicted session stays valid for requests already holding it.
class SessionCache {
 public:
  explicit SessionCache(std::size_t capacity);

  std::string insert(std::shared_ptr<const InversionResult> inv);
  std::shared_ptr<const InversionResult> find(const std::string& id);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

 private:
  using Entry = std::pair<std::string, std::shared_ptr<const InversionResult>>;

  mutable std::mutex mu_;
  std::size_t capacity_;
  std::list<Entry> order_;  // most recent first
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  Service(std::shared_ptr<const Models> models, std::vector<EditDirection> catalog, ServiceConfig config);
  /// Loads the checkpoint and direction catalog named in `config`.
  static std::unique_ptr<Service> from_config(const ServiceConfig& config);

  /// Transport-free dispatch, used by the HTTP server and by tests.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks serving HTTP until stop() is called. Returns false when the
  /// socket could not be bound.
  bool run();
  void stop();
  /// Port the running server listens on, or 0 when it is not serving.
  int bound_port() const;

  const ServiceConfig& config() const { return config_; }
  SessionCache& sessions() { return sessions_; }

 private:
  HttpResponse health() const;
  HttpResponse directions() const;
  HttpResponse invert(const nlohmann::json& req);
  HttpResponse edit(const nlohmann::json& req);
  HttpResponse mix(const nlohmann::json& req);

  Image decode_request_image(const nlohmann::json& req) const;
  std::shared_ptr<const InversionResult> session(const nlohmann::json& req, const char* key);

  std::shared_ptr<const Models> models_;
  std::vector<EditDirection> catalog_;
  ServiceConfig config_;
  SessionCache sessions_;
  struct Server;
  std::shared_ptr<Server> server_;
};

}  // namespace latinv
