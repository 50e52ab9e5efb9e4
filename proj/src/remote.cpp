#include "gatescope/remote.hpp"

#include <cmath>
#include <vector>

#include <httplib.h>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {

struct RemoteBackend::Pool {
  std::mutex mu;
  std::vector<std::unique_ptr<httplib::Client>> idle;
};

RemoteBackend::RemoteBackend(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds), pool_(std::make_unique<Pool>()) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  if (base_url_.find("://") == std::string::npos) throw Error("remote backend URL must start with http:// or https://");
}

RemoteBackend::~RemoteBackend() = default;

json RemoteBackend::post(const std::string& path, const json& body, std::string* raw_body) const {
  std::unique_ptr<httplib::Client> cli;
  {
    std::lock_guard lock(pool_->mu);
    if (!pool_->idle.empty()) {
      cli = std::move(pool_->idle.back());
      pool_->idle.pop_back();
    }
  }
  if (!cli) {
    cli = std::make_unique<httplib::Client>(base_url_);
    cli->set_keep_alive(true);
    cli->set_connection_timeout(timeout_seconds_, 0);
    cli->set_read_timeout(timeout_seconds_, 0);
  }
  auto res = cli->Post(path, body.dump(), "application/json");
  if (!res) throw Error("backend unreachable at " + base_url_ + ": " + httplib::to_string(res.error()));
  {
    std::lock_guard lock(pool_->mu);
    pool_->idle.push_back(std::move(cli));
  }
  if (res->status != 200) {
    const auto err = json::parse(res->body, nullptr, false);
    std::string code = "http_" + std::to_string(res->status), message = res->body;
    if (err.is_object()) {
      code = err.value("code", code);
      message = err.value("message", message);
    }
    throw Error("remote backend " + path + ": " + code + ": " + message);
  }
  if (raw_body) {
    *raw_body = std::move(res->body);
    return json();
  }
  return detail::parse_json(res->body, "remote backend " + path);
}

void RemoteBackend::ensure_described() const {
  std::call_once(described_, [this] {
    const json j = post("/v1/describe", json::object());
    descriptor_ = backend_descriptor_from_json(j);
    descriptor_.kind = BackendKind::remote;
    const auto caps = j.value("capabilities", json::object());
    caps_.generate = caps.value("generate", true);
    caps_.capture = caps.value("capture", false);
  });
}

BackendDescriptor RemoteBackend::describe() const {
  ensure_described();
  return descriptor_;
}

Capabilities RemoteBackend::capabilities() const {
  ensure_described();
  return caps_;
}

json generate_request_json(const GenerationRequest& req) {
  json j;
  j["prompt"] = req.prompt;
  j["steering"] = req.steering ? json(req.steering->values) : json(nullptr);
  j["temperature"] = req.config.temperature;
  j["top_p"] = req.config.top_p;
  j["max_new_tokens"] = req.config.max_new_tokens;
  j["seed"] = req.seed;
  return j;
}

GenerationResult RemoteBackend::generate(const GenerationRequest& req) const {
  ensure_described();
  if (!caps_.generate) throw Error("remote backend does not support generation");
  validate_request(req, descriptor_.d_model);
  const json j = post("/v1/generate", generate_request_json(req));
  GenerationResult r;
  r.text = detail::get<std::string>(j, "text", "generate response");
  r.token_ids = detail::get<std::vector<std::uint32_t>>(j, "token_ids", "generate response");
  r.backend = descriptor_;
  r.steering_norm = req.steering ? req.steering->norm : 0.0;
  return r;
}

TensorMatrix RemoteBackend::capture_activations(const std::vector<std::string>& prompts) const {
  ensure_described();
  if (!caps_.capture) throw Error("remote backend does not support activation capture");
  if (prompts.empty()) throw Error("capture_activations: no prompts");
  std::string bytes;
  post("/v1/activations", json{{"prompts", prompts}}, &bytes);
  auto m = parse_tensor(bytes, TensorRole::activations);
  if (m.rows() != prompts.size() || m.cols() != descriptor_.d_sae)
    throw Error("remote backend returned an activation matrix of the wrong shape");
  return m;
}

namespace {

void reply_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
}

GenerationRequest request_from_json(const json& j, std::size_t d_model) {
  using namespace detail;
  constexpr std::string_view ctx = "generate request";
  require_only(j, {"prompt", "steering", "temperature", "top_p", "max_new_tokens", "seed"}, ctx);
  GenerationRequest req;
  req.prompt = get<std::string>(j, "prompt", ctx);
  req.seed = get<std::int64_t>(j, "seed", ctx);
  req.config.temperature = get<double>(j, "temperature", ctx);
  req.config.top_p = get<double>(j, "top_p", ctx);
  req.config.max_new_tokens = get<int>(j, "max_new_tokens", ctx);
  req.config.seeds = {req.seed};
  req.config.allow_any_length = true;
  const json& s = field(j, "steering", ctx);
  if (!s.is_null()) {
    SteeringVector sv;
    sv.values = get<std::vector<double>>(j, "steering", ctx);
    if (sv.values.size() != d_model) throw Error("steering vector length does not match d_model");
    double sq = 0.0;
    for (double v : sv.values) sq += v * v;
    sv.norm = std::sqrt(sq);
    req.steering = std::move(sv);
  }
  return req;
}

template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const nlohmann::json::exception& e) {
    reply_error(res, 400, "bad_request", e.what());
  } catch (const Error& e) {
    reply_error(res, 422, "backend_error", e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, "internal", e.what());
  }
}

}  // namespace

ProtocolServer::ProtocolServer(BackendPtr backend)
    : backend_(std::move(backend)), server_(std::make_unique<httplib::Server>()) {
  if (!backend_) throw Error("protocol server needs a backend");
  install_routes();
}

ProtocolServer::~ProtocolServer() { stop(); }

void ProtocolServer::install_routes() {
  server_->Post("/v1/describe", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json j = to_json(backend_->describe());
      const auto caps = backend_->capabilities();
      j["capabilities"] = {{"generate", caps.generate}, {"capture", caps.capture}};
      res.set_content(j.dump(), "application/json");
    });
  });
  server_->Post("/v1/generate", [this](const httplib::Request& rq, httplib::Response& res) {
    guarded(res, [&] {
      if (!backend_->capabilities().generate) return reply_error(res, 501, "unsupported", "generation not supported");
      const auto req = request_from_json(json::parse(rq.body), backend_->describe().d_model);
      const auto out = backend_->generate(req);
      res.set_content(json{{"text", out.text}, {"token_ids", out.token_ids}}.dump(), "application/json");
    });
  });
  server_->Post("/v1/activations", [this](const httplib::Request& rq, httplib::Response& res) {
    guarded(res, [&] {
      if (!backend_->capabilities().capture) return reply_error(res, 501, "unsupported", "capture not supported");
      const json j = json::parse(rq.body);
      detail::require_only(j, {"prompts"}, "activations request");
      const auto prompts = detail::get<std::vector<std::string>>(j, "prompts", "activations request");
      res.set_content(serialize_tensor(backend_->capture_activations(prompts)), "application/octet-stream");
    });
  });
}

int ProtocolServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void ProtocolServer::listen(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void ProtocolServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace gatescope
