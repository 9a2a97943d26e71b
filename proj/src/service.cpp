#include "latinv/service.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "latinv/checkpoint.hpp"
#include "latinv/errors.hpp"
#include "latinv/image.hpp"

namespace latinv {

namespace {

// A request-level failure with its HTTP status and stable error code.
struct HttpFailure {
  int status;
  std::string code;
  std::string detail;
};

[[noreturn]] void bad_request(const std::string& detail) { throw HttpFailure{400, "malformed_request", detail}; }

double number_field(const nlohmann::json& req, const char* key, std::optional<double> fallback) {
  if (!req.contains(key)) {
    if (fallback) return *fallback;
    bad_request(std::string("missing field '") + key + "'");
  }
  const auto& v = req.at(key);
  if (!v.is_number()) bad_request(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad_request(std::string("field '") + key + "' must be finite");
  return d;
}

std::string string_field(const nlohmann::json& req, const char* key) {
  if (!req.contains(key) || !req.at(key).is_string())
    bad_request(std::string("field '") + key + "' must be a string");
  return req.at(key).get<std::string>();
}

BetaWeights beta_fields(const nlohmann::json& req) {
  return {number_field(req, "beta1", 1.0), number_field(req, "beta2", 1.0)};
}

std::string png_base64(const Image& image) { return base64_encode(encode_png(image)); }

nlohmann::json error_body(const std::string& code, const std::string& detail) {
  nlohmann::json j{{"error", code}};
  if (!detail.empty()) j["detail"] = detail;
  return j;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int positive_int(const nlohmann::json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) throw ConfigError(std::string("service config: '") + key + "' must be an integer");
  return j.at(key).get<int>();
}

std::string string_or(const nlohmann::json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(std::string("service config: '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace

void ServiceConfig::validate(bool check_paths) const {
  if (bind.empty()) throw ConfigError("service config: bind address is empty");
  if (port < 0 || port > 65535) throw ConfigError("service config: port out of range");
  if (max_image_size <= 0 || request_timeout_s <= 0 || session_capacity <= 0)
    throw ConfigError("service config: limits must be positive");
  if (!check_paths) return;
  if (checkpoint.empty() || !std::filesystem::exists(checkpoint))
    throw ConfigError("service config: checkpoint '" + checkpoint + "' does not exist");
  if (!directions.empty() && !std::filesystem::exists(directions))
    throw ConfigError("service config: direction catalog '" + directions + "' does not exist");
}

ServiceConfig service_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("service config must be a JSON object");
  ServiceConfig c;
  c.bind = string_or(j, "bind", c.bind);
  c.port = positive_int(j, "port", c.port);
  c.checkpoint = string_or(j, "checkpoint", c.checkpoint);
  c.directions = string_or(j, "directions", c.directions);
  c.max_image_size = positive_int(j, "max_image_size", c.max_image_size);
  c.request_timeout_s = positive_int(j, "request_timeout_s", c.request_timeout_s);
  c.session_capacity = positive_int(j, "session_capacity", c.session_capacity);
  return c;
}

nlohmann::json to_json(const ServiceConfig& c) {
  return {{"bind", c.bind},
          {"port", c.port},
          {"checkpoint", c.checkpoint},
          {"directions", c.directions},
          {"max_image_size", c.max_image_size},
          {"request_timeout_s", c.request_timeout_s},
          {"session_capacity", c.session_capacity}};
}

ServiceConfig apply_env_overrides(ServiceConfig cfg) {
  if (const char* bind = std::getenv("LATINV_BIND"); bind && *bind) {
    std::string b = bind;
    const auto colon = b.rfind(':');
    if (colon != std::string::npos && b.find(':') == colon) {
      try {
        std::size_t used = 0;
        const int port = std::stoi(b.substr(colon + 1), &used);
        if (used != b.size() - colon - 1) throw std::invalid_argument("port");
        cfg.port = port;
      } catch (const std::exception&) {
        throw ConfigError("LATINV_BIND: cannot parse port in '" + b + "'");
      }
      b = b.substr(0, colon);
    }
    cfg.bind = b;
  }
  if (const char* ckpt = std::getenv("LATINV_CHECKPOINT"); ckpt && *ckpt) cfg.checkpoint = ckpt;
  return cfg;
}

SessionCache::SessionCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("session cache capacity must be positive");
  salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::string SessionCache::insert(std::shared_ptr<const InversionResult> inv) {
  std::lock_guard lock(mu_);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(splitmix64(salt_ ^ ++counter_)));
  std::string id = buf;
  order_.emplace_front(id, std::move(inv));
  index_[id] = order_.begin();
  while (order_.size() > capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
  }
  return id;
}

std::shared_ptr<const InversionResult> SessionCache::find(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = index_.find(id);
  if (it == index_.end()) return nullptr;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

std::size_t SessionCache::size() const {
  std::lock_guard lock(mu_);
  return order_.size();
}

struct Service::Server {
  httplib::Server http;
  std::atomic<int> port{0};
};

Service::Service(std::shared_ptr<const Models> models, std::vector<EditDirection> catalog, ServiceConfig config)
    : models_(std::move(models)),
      catalog_(std::move(catalog)),
      config_(std::move(config)),
      sessions_(static_cast<std::size_t>(config_.session_capacity)),
      server_(std::make_shared<Server>()) {
  config_.validate(false);
  const auto& g = models_->config.generator;
  for (const auto& d : catalog_)
    if (d.delta.layers() != g.style_count() || d.delta.channels() != g.w_dim)
      throw ConfigError("direction '" + d.name + "' does not match the model latent shape");
}

std::unique_ptr<Service> Service::from_config(const ServiceConfig& config) {
  config.validate(true);
  auto models = std::make_shared<const Models>(models_from_bundle(load_checkpoint(config.checkpoint)));
  std::vector<EditDirection> catalog;
  if (!config.directions.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(config.directions));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("direction catalog is not valid JSON: " + std::string(e.what()));
    }
    catalog = directions_from_json(j, models->config.generator.style_count());
  }
  return std::make_unique<Service>(std::move(models), std::move(catalog), config);
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (path == "/api/health" || path == "/api/directions") {
      if (method != "GET") return {405, error_body("method_not_allowed", method + " " + path)};
      return path == "/api/health" ? health() : directions();
    }
    if (path == "/api/invert" || path == "/api/edit" || path == "/api/mix") {
      if (method != "POST") return {405, error_body("method_not_allowed", method + " " + path)};
      nlohmann::json req;
      try {
        req = nlohmann::json::parse(body);
      } catch (const nlohmann::json::exception& e) {
        bad_request(std::string("body is not valid JSON: ") + e.what());
      }
      if (!req.is_object()) bad_request("body must be a JSON object");
      if (path == "/api/invert") return invert(req);
      if (path == "/api/edit") return edit(req);
      return mix(req);
    }
    return {404, error_body("not_found", path)};
  } catch (const HttpFailure& f) {
    return {f.status, error_body(f.code, f.detail)};
  } catch (const ArgumentError& e) {
    return {400, error_body("malformed_request", e.what())};
  } catch (const std::exception& e) {
    return {500, error_body("internal", e.what())};
  }
}

HttpResponse Service::health() const {
  const auto& g = models_->config.generator;
  return {200,
          {{"status", "ok"},
           {"checkpoint", config_.checkpoint},
           {"image_size", models_->config.encoder.image_size},
           {"layers", g.style_count()},
           {"w_dim", g.w_dim},
           {"sessions", sessions_.size()}}};
}

HttpResponse Service::directions() const { return {200, {{"directions", directions_to_json(catalog_)}}}; }

Image Service::decode_request_image(const nlohmann::json& req) const {
  const std::string b64 = string_field(req, "image");
  // Cheap bound before decoding: base64 of an 8-bit RGB image cannot exceed
  // this by much even uncompressed.
  const std::size_t max_side = static_cast<std::size_t>(config_.max_image_size);
  if (b64.size() > 4 * (max_side * max_side * 4 + 65536) / 3)
    throw HttpFailure{413, "image_too_large", "payload exceeds the configured image limit"};
  std::vector<std::uint8_t> png;
  try {
    png = base64_decode(b64);
  } catch (const ArgumentError& e) {
    bad_request(std::string("image is not base64: ") + e.what());
  }
  std::pair<int, int> hw;
  try {
    hw = png_dimensions(png);
  } catch (const ArgumentError& e) {
    bad_request(std::string("image is not a PNG: ") + e.what());
  }
  if (hw.first > config_.max_image_size || hw.second > config_.max_image_size)
    throw HttpFailure{413, "image_too_large",
                      std::to_string(hw.second) + "x" + std::to_string(hw.first) + " exceeds " +
                          std::to_string(config_.max_image_size)};
  const int side = models_->config.encoder.image_size;
  if (hw.first != side || hw.second != side)
    throw HttpFailure{400, "wrong_image_size",
                      "expected " + std::to_string(side) + "x" + std::to_string(side) + ", got " +
                          std::to_string(hw.second) + "x" + std::to_string(hw.first)};
  try {
    return decode_png(png);
  } catch (const ArgumentError& e) {
    bad_request(std::string("image is not a PNG: ") + e.what());
  }
}

std::shared_ptr<const InversionResult> Service::session(const nlohmann::json& req, const char* key) {
  const std::string id = string_field(req, key);
  auto inv = sessions_.find(id);
  if (!inv) throw HttpFailure{404, "unknown_session", id};
  return inv;
}

HttpResponse Service::invert(const nlohmann::json& req) {
  const Image image = decode_request_image(req);
  const BetaWeights beta = beta_fields(req);
  auto inv = std::make_shared<const InversionResult>(latinv::invert(image, *models_, beta));
  nlohmann::json out{{"latents", to_json(inv->w_inv)},
                     {"image_baseline", png_base64(inv->image_baseline)},
                     {"image_refined", png_base64(inv->image_refined)}};
  out["session_id"] = sessions_.insert(std::move(inv));
  return {200, std::move(out)};
}

HttpResponse Service::edit(const nlohmann::json& req) {
  auto inv = session(req, "session_id");
  const std::string name = string_field(req, "direction");
  const EditDirection* dir = nullptr;
  for (const auto& d : catalog_)
    if (d.name == name) dir = &d;
  if (!dir) throw HttpFailure{404, "unknown_direction", name};
  const double alpha = number_field(req, "alpha", 0.0);
  const Image img = latinv::edit(*inv, *dir, alpha, beta_fields(req), *models_);
  return {200, {{"image", png_base64(img)}}};
}

HttpResponse Service::mix(const nlohmann::json& req) {
  auto a = session(req, "session_a");
  auto b = session(req, "session_b");
  const MixMode mode = mix_mode_from_string(string_field(req, "mode"));
  const double param = number_field(req, "param", std::nullopt);
  bool use_smart = true;
  if (req.contains("use_smart")) {
    if (!req.at("use_smart").is_boolean()) bad_request("field 'use_smart' must be a boolean");
    use_smart = req.at("use_smart").get<bool>();
  }
  const Image img = latinv::mix(*a, *b, mode, param, *models_, use_smart);
  return {200, {{"image", png_base64(img)}}};
}

bool Service::run() {
  auto& svr = server_->http;
  svr.set_read_timeout(config_.request_timeout_s, 0);
  svr.set_write_timeout(config_.request_timeout_s, 0);
  const std::size_t side = static_cast<std::size_t>(config_.max_image_size);
  svr.set_payload_max_length(2 * (side * side * 4 + 65536));
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  svr.Get(R"(/api/.*)", forward);
  svr.Post(R"(/api/.*)", forward);
  svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const char* code = res.status == 413 ? "image_too_large" : res.status == 404 ? "not_found" : "http_error";
    res.set_content(error_body(code, "").dump(), "application/json");
  });
  // Port 0 asks the OS for a free port, reported through bound_port().
  int port = config_.port;
  if (port == 0) {
    port = svr.bind_to_any_port(config_.bind);
    if (port < 0) return false;
  } else if (!svr.bind_to_port(config_.bind, port)) {
    return false;
  }
  server_->port.store(port);
  const bool ok = svr.listen_after_bind();
  server_->port.store(0);
  return ok;
}

int Service::bound_port() const { return server_->http.is_running() ? server_->port.load() : 0; }

void Service::stop() { server_->http.stop(); }

}  // namespace latinv
