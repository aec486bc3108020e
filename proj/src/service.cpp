#include "dlf/service.hpp"

#include "dlf/errors.hpp"

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <regex>

namespace dlf {

using nlohmann::json;

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::string s = text;
  if (s.rfind("data:", 0) == 0) {
    const auto comma = s.find(',');
    if (comma == std::string::npos || s.substr(0, comma).find(";base64") == std::string::npos) {
      throw FormatError("data URL is not base64 encoded");
    }
    s.erase(0, comma + 1);
  }
  std::erase_if(s, [](char c) { return c == '\n' || c == '\r' || c == ' ' || c == '\t'; });
  if (s.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::vector<unsigned char> out(s.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(s.data()),
                                static_cast<int>(s.size()));
  if (n < 0) throw FormatError("invalid base64 data");
  std::size_t padding = 0;
  if (!s.empty() && s.back() == '=') padding = s.size() >= 2 && s[s.size() - 2] == '=' ? 2 : 1;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

namespace {

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& code, const std::string& message, json extra = {}) {
  json body = extra.is_object() ? extra : json::object();
  body["error"] = code;
  body["message"] = message;
  return json_response(status, body);
}

json operator_json(const OperatorSpec& op) {
  json params = json::array();
  for (const ParamRange& p : op.params) {
    params.push_back({{"name", p.name},
                      {"lo", p.lo},
                      {"hi", p.hi},
                      {"space", p.space == SamplingSpace::log ? "log" : "linear"}});
  }
  return {{"name", op.name},
          {"operator_id", op.operator_id},
          {"kind", op.kind == OperatorKind::filter ? "filter" : "restoration"},
          {"params", params}};
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ContractViolation("request body is not a JSON object");
  return j;
}

}  // namespace

Service::Service(std::optional<Checkpoint> model, ServiceOptions options)
    : model_(std::move(model)), options_(options), id_salt_(std::random_device{}()) {}

std::size_t Service::session_count() const {
  std::shared_lock guard(sessions_lock_);
  return sessions_.size();
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex apply_path("^/api/session/([0-9a-f]+)/apply$");
  static const std::regex session_path("^/api/session/([0-9a-f]+)$");
  try {
    if (path == "/healthz") {
      if (method != "GET") return error_response(405, "method_not_allowed", method + " " + path);
      return {200, "text/plain", "ok"};
    }
    if (path.rfind("/api/", 0) != 0) return error_response(404, "not_found", path);
    if (!model_) return error_response(503, "model_not_loaded", "no model is loaded");

    std::smatch m;
    if (path == "/api/operators") {
      if (method != "GET") return error_response(405, "method_not_allowed", method + " " + path);
      return list_operators();
    }
    if (path == "/api/session") {
      if (method != "POST") return error_response(405, "method_not_allowed", method + " " + path);
      return create_session(body);
    }
    if (std::regex_match(path, m, apply_path)) {
      if (method != "POST") return error_response(405, "method_not_allowed", method + " " + path);
      return apply(m[1], body);
    }
    if (std::regex_match(path, m, session_path)) {
      if (method != "DELETE") return error_response(405, "method_not_allowed", method + " " + path);
      return delete_session(m[1]);
    }
    return error_response(404, "not_found", path);
  } catch (const NumericError& e) {
    return error_response(500, "numeric_error", e.what());
  } catch (const Error& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal_error", e.what());
  }
}

HttpResponse Service::list_operators() const {
  json ops = json::array();
  for (const OperatorSpec& op : model_->operators) ops.push_back(operator_json(op));
  return json_response(200, ops);
}

HttpResponse Service::create_session(const std::string& body) {
  const json j = parse_body(body);
  if (!j.contains("image") || !j["image"].is_string()) {
    return error_response(400, "bad_request", "\"image\" must be a base64 PNG string");
  }
  Image input;
  try {
    input = decode_png(base64_decode(j["image"].get<std::string>()));
  } catch (const IoError& e) {
    return error_response(400, "bad_image", e.what());
  }
  if (input.height() > options_.max_side || input.width() > options_.max_side) {
    return error_response(400, "image_too_large",
                          std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                              " exceeds " + std::to_string(options_.max_side) + " pixels per side");
  }
  if (input.height() % 2 != 0 || input.width() % 2 != 0) {
    return error_response(400, "bad_image", "image height and width must be even");
  }

  auto session = std::make_shared<Session>();
  auto [image, edge] = network_tensors<float>(input);
  session->input = std::move(input);
  session->image = std::move(image);
  session->edge = std::move(edge);

  char id[17];
  std::snprintf(id, sizeof id, "%016llx",
                static_cast<unsigned long long>(fingerprint_bytes(&id_salt_, sizeof id_salt_, ++next_id_)));
  {
    std::unique_lock guard(sessions_lock_);
    if (sessions_.size() >= options_.max_sessions) {
      return error_response(503, "too_many_sessions", "session limit reached");
    }
    sessions_.emplace(id, std::move(session));
  }
  return json_response(200, {{"session_id", id}});
}

std::shared_ptr<Service::Session> Service::find_session(const std::string& id) const {
  std::shared_lock guard(sessions_lock_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse Service::apply(const std::string& id, const std::string& body) {
  const std::shared_ptr<Session> session = find_session(id);
  if (!session) return error_response(404, "unknown_session", "no session " + id);

  const json j = parse_body(body);
  if (!j.contains("operator") || !j["operator"].is_string()) {
    return error_response(400, "bad_request", "\"operator\" must be a string");
  }
  if (!j.contains("gamma") || !j["gamma"].is_array()) {
    return error_response(400, "bad_request", "\"gamma\" must be an array of numbers");
  }
  const std::string mode = j.value("mode", std::string("full"));
  if (mode != "full" && mode != "cheap") {
    return error_response(400, "bad_request", "\"mode\" must be \"full\" or \"cheap\"");
  }
  const std::string name = j["operator"].get<std::string>();
  const OperatorSpec* op = nullptr;
  for (const OperatorSpec& o : model_->operators) {
    if (o.name == name) op = &o;
  }
  if (!op) return error_response(400, "unknown_operator", "model was not trained on " + name);

  std::vector<double> gamma;
  for (const json& v : j["gamma"]) {
    if (!v.is_number()) return error_response(400, "bad_request", "\"gamma\" must be an array of numbers");
    gamma.push_back(v.get<double>());
  }
  if (gamma.size() != op->arity()) {
    return error_response(400, "gamma_arity",
                          name + " takes " + std::to_string(op->arity()) + " parameters, got " +
                              std::to_string(gamma.size()));
  }
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const ParamRange& p = op->params[i];
    if (!std::isfinite(gamma[i]) || gamma[i] < p.lo || gamma[i] > p.hi) {
      return error_response(400, "gamma_out_of_range",
                            p.name + " = " + std::to_string(gamma[i]) + " is outside [" + std::to_string(p.lo) +
                                ", " + std::to_string(p.hi) + "]",
                            {{"param", p.name}, {"value", gamma[i]}, {"lo", p.lo}, {"hi", p.hi}});
    }
  }

  const WeightLearningNet<float>& net = model_->net;
  const Tensor<float> g = network_gamma(*op, gamma, model_->joint()).tensor<float>();

  std::lock_guard guard(session->lock);
  const auto start = std::chrono::steady_clock::now();
  Tensor<float> out;
  int recomputed = 0;
  if (mode == "cheap") {
    ActivationCache<float>& cache = session->caches[name];
    if (!cache.valid()) cache = build_cache(net, session->image, session->edge);
    std::tie(out, recomputed) = cached_forward(net, cache, g);
  } else {
    RunStats stats;
    out = run_layers(net.base_config(), net.predict_weights(g),
                     network_input(net.base_config(), session->image, session->edge), ResumePoint{}, &stats);
    recomputed = stats.layers_run;
  }
  if (!out.values().isFinite().all()) throw NumericError("model output contains non-finite values");
  session->last_output = encode_png(image_from_tensor(out));
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  return json_response(200, {{"image", base64_encode(session->last_output)},
                              {"latency_ms", latency},
                              {"layers_recomputed", recomputed},
                              {"mode", mode}});
}

HttpResponse Service::delete_session(const std::string& id) {
  std::unique_lock guard(sessions_lock_);
  if (sessions_.erase(id) == 0) return error_response(404, "unknown_session", "no session " + id);
  return {204, "", ""};
}

HttpServer::HttpServer(Service& service, const std::string& static_dir)
    : server_(std::make_unique<httplib::Server>()) {
  if (!static_dir.empty() && !server_->set_mount_point("/", static_dir)) {
    throw IoError("static directory not found: " + static_dir);
  }
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body, r.content_type);
  };
  const std::string any = R"(/(api/.*|healthz))";
  server_->Get(any, forward);
  server_->Post(any, forward);
  server_->Delete(any, forward);
  server_->Put(any, forward);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

}  // namespace dlf
