#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "gatescope/backend.hpp"
#include "gatescope/lens.hpp"

namespace gatescope {

inline constexpr std::size_t kToyVocab = 64;
inline constexpr std::size_t kToyDModel = 16;
inline constexpr std::size_t kToyDSae = 64;
inline constexpr int kToyLayer = 1;

// A feature whose decoder row points at the unembedding rows of `tokens`.
// `dark` mixes in a direction no token reads, which weakens the plant
// without changing its top token.
struct PlantedGate {
  std::uint32_t feature = 0;
  std::string emotion;
  std::vector<std::string> tokens;
  double strength = 1.0;
  double dark = 0.0;
  double norm = 1.0;
};

// Promotes `tokens` but leaks more strongly into `drift_tokens`.
struct PlantedConfounder {
  std::uint32_t feature = 0;
  std::string emotion;
  std::vector<std::string> tokens;
  std::string drift_emotion;
  std::vector<std::string> drift_tokens;
  double drift_share = 0.8;  // weight of the drift direction; the target gets sqrt(1 - share^2)
  double norm = 1.0;
};

// A feature aligned with the hook-layer difference between two prompt sets.
struct PlantedRegister {
  std::uint32_t feature = 0;
  std::vector<std::string> prompts_a;
  std::vector<std::string> prompts_b;
  double norm = 1.0;
};

// Every feature not planted is noise.
struct ToyPlan {
  std::uint64_t seed = 7;
  std::vector<PlantedGate> gates;
  std::vector<PlantedConfounder> confounders;
  std::vector<PlantedRegister> registers;

  std::vector<std::uint32_t> noise_features() const;
};

json to_json(const ToyPlan& p);
ToyPlan toy_plan_from_json(const json& j);

// 5 gates (horror is the weak one), 1 sadness->boredom confounder.
ToyPlan default_toy_plan();
// Admiration and nostalgia sub-features whose sum reads as joy.
ToyPlan compositional_toy_plan();

struct ToyBlock {
  std::vector<double> g_attn, wq, wk, wv, wo;  // d x d
  std::vector<double> g_mlp, w1, b1, w2;       // w1: h x d, w2: d x h
};

struct ToyWeights {
  std::size_t d_model = kToyDModel;
  std::size_t d_mlp = 32;
  std::size_t n_heads = 2;
  std::size_t max_positions = 512;
  std::vector<double> embed;  // V x d
  std::vector<double> pos;    // max_positions x d
  std::array<ToyBlock, 2> blocks;
  std::vector<double> unembed;  // V x d, equal to the float unembedding matrix
  std::vector<double> bias;     // V
};

struct ToyFixture {
  ToyPlan plan;
  TokenTable vocab;
  ToyWeights weights;
  TensorMatrix decoder;
  TensorMatrix unembedding;
};

// Deterministic in plan (including its seed). Throws when the plan names a
// feature >= 64, an unknown token, or a plant whose top lens token is not
// one of its targets.
ToyFixture build_toy_fixture(const ToyPlan& plan);

// Directory layout: plan.json, vocab.json, decoder.gsten, unembedding.gsten.
void save_toy_fixture(const ToyFixture& fx, const std::filesystem::path& dir);
// Rebuilds from plan.json and checks the stored matrices match.
ToyFixture load_toy_fixture(const std::filesystem::path& dir);

// The in-process toy transformer: 2 pre-norm blocks, hook after block 0.
class ToyBackend : public Backend {
 public:
  explicit ToyBackend(std::shared_ptr<const ToyFixture> fx);

  BackendDescriptor describe() const override;
  Capabilities capabilities() const override { return {true, true}; }
  GenerationResult generate(const GenerationRequest& req) const override;
  TensorMatrix capture_activations(const std::vector<std::string>& prompts) const override;

  std::vector<std::uint32_t> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<std::uint32_t>& ids) const;
  // Residual stream at the hook layer for every prompt position.
  std::vector<std::vector<double>> hook_states(std::string_view prompt) const;

 private:
  std::shared_ptr<const ToyFixture> fx_;
};

}  // namespace gatescope
