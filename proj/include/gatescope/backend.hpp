#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gatescope/steer.hpp"
#include "gatescope/tensor.hpp"
#include "gatescope/types.hpp"

namespace gatescope {

enum class BackendKind { toy, remote };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendDescriptor {
  std::string model_id;
  int layer = 0;
  std::size_t d_model = 0;
  std::size_t d_sae = 0;
  std::size_t vocab_size = 0;
  BackendKind kind = BackendKind::toy;

  bool operator==(const BackendDescriptor&) const = default;
};

json to_json(const BackendDescriptor& d);
BackendDescriptor backend_descriptor_from_json(const json& j);

// Throws when the decoder width or d_sae disagrees with the backend.
void check_dims(const BackendDescriptor& d, const TensorMatrix& decoder);

struct Capabilities {
  bool generate = true;
  bool capture = false;
};

struct GenerationRequest {
  std::string prompt;
  std::optional<SteeringVector> steering;
  GenerationConfig config;
  std::int64_t seed = 101;
};

struct GenerationResult {
  std::string text;
  std::vector<std::uint32_t> token_ids;
  BackendDescriptor backend;
  double steering_norm = 0.0;
};

// Shared handle; generate and capture_activations may be called
// concurrently and must not depend on call interleaving.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendDescriptor describe() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual GenerationResult generate(const GenerationRequest& req) const = 0;
  // Mean-pooled SAE activations at the hook layer, one row per prompt.
  virtual TensorMatrix capture_activations(const std::vector<std::string>& prompts) const = 0;
};

using BackendPtr = std::shared_ptr<const Backend>;

// Common request checks: seed in the seed list and steering width.
void validate_request(const GenerationRequest& req, std::size_t d_model);

}  // namespace gatescope
