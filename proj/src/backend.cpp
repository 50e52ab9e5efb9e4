#include "gatescope/backend.hpp"

#include <algorithm>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {

std::string_view to_string(BackendKind k) { return k == BackendKind::toy ? "toy" : "remote"; }

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "toy") return BackendKind::toy;
  if (s == "remote") return BackendKind::remote;
  throw Error("unknown backend kind '" + std::string(s) + "'");
}

json to_json(const BackendDescriptor& d) {
  json j;
  j["model_id"] = d.model_id;
  j["layer"] = d.layer;
  j["d_model"] = d.d_model;
  j["d_sae"] = d.d_sae;
  j["vocab_size"] = d.vocab_size;
  j["kind"] = to_string(d.kind);
  return j;
}

BackendDescriptor backend_descriptor_from_json(const json& j) {
  using namespace detail;
  constexpr std::string_view ctx = "backend descriptor";
  require_object(j, ctx);
  BackendDescriptor d;
  d.model_id = get<std::string>(j, "model_id", ctx);
  d.layer = get<int>(j, "layer", ctx);
  d.d_model = get<std::size_t>(j, "d_model", ctx);
  d.d_sae = get<std::size_t>(j, "d_sae", ctx);
  d.vocab_size = get<std::size_t>(j, "vocab_size", ctx);
  d.kind = backend_kind_from_string(get<std::string>(j, "kind", ctx));
  return d;
}

void check_dims(const BackendDescriptor& d, const TensorMatrix& decoder) {
  if (decoder.d_model() != d.d_model)
    throw Error("decoder width " + std::to_string(decoder.d_model()) + " != backend d_model " +
                std::to_string(d.d_model));
  if (decoder.d_sae() != d.d_sae)
    throw Error("decoder has " + std::to_string(decoder.d_sae()) + " features, backend declares " +
                std::to_string(d.d_sae));
}

void validate_request(const GenerationRequest& req, std::size_t d_model) {
  req.config.validate();
  const auto& seeds = req.config.seeds;
  if (std::find(seeds.begin(), seeds.end(), req.seed) == seeds.end())
    throw Error("seed " + std::to_string(req.seed) + " is not in the configured seed list");
  if (req.steering && req.steering->values.size() != d_model)
    throw Error("steering vector has length " + std::to_string(req.steering->values.size()) + ", backend d_model is " +
                std::to_string(d_model));
}

}  // namespace gatescope
