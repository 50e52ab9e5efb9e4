#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "gatescope/backend.hpp"

namespace httplib {
class Server;
}

namespace gatescope {

// Client for the backend wire protocol:
//   POST /v1/describe    -> descriptor + capabilities
//   POST /v1/generate    {prompt, steering, temperature, top_p, max_new_tokens, seed} -> {text, token_ids}
//   POST /v1/activations {prompts} -> tensor container bytes
// Errors come back as {code, message} with a 4xx/5xx status.
class RemoteBackend : public Backend {
 public:
  // base_url like http://127.0.0.1:8600
  explicit RemoteBackend(std::string base_url, int timeout_seconds = 120);
  ~RemoteBackend() override;

  BackendDescriptor describe() const override;
  Capabilities capabilities() const override;
  GenerationResult generate(const GenerationRequest& req) const override;
  TensorMatrix capture_activations(const std::vector<std::string>& prompts) const override;

 private:
  struct Pool;
  json post(const std::string& path, const json& body, std::string* raw_body = nullptr) const;
  void ensure_described() const;

  std::string base_url_;
  int timeout_seconds_;
  std::unique_ptr<Pool> pool_;
  mutable std::once_flag described_;
  mutable BackendDescriptor descriptor_;
  mutable Capabilities caps_;
};

json generate_request_json(const GenerationRequest& req);

// Serves any Backend over the wire protocol. Used by `gatescope serve` and
// as the echo fixture in protocol tests.
class ProtocolServer {
 public:
  explicit ProtocolServer(BackendPtr backend);
  ~ProtocolServer();

  // Binds and serves on a background thread; returns the bound port
  // (port 0 picks a free one).
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  BackendPtr backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace gatescope
