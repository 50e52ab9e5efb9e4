#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

#include "gatescope/rng.hpp"
#include "gatescope/tensor.hpp"
#include "gatescope/toy.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("gatescope-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline gatescope::TensorMatrix matrix(gatescope::TensorRole role, std::size_t rows, std::size_t cols,
                                      std::vector<float> data) {
  return gatescope::TensorMatrix(role, rows, cols, std::move(data));
}

// Shared default fixture; building it once keeps the suite fast.
inline std::shared_ptr<const gatescope::ToyFixture> default_fixture() {
  static const auto fx = std::make_shared<const gatescope::ToyFixture>(
      gatescope::build_toy_fixture(gatescope::default_toy_plan()));
  return fx;
}

struct Family {
  const char* emotion;
  std::vector<std::string> tokens;
};

inline const std::vector<Family>& toy_families() {
  static const std::vector<Family> f{{"calmness", {"calm", "serene", "tranquil"}},
                                     {"sadness", {"sad", "grief", "sorrow"}},
                                     {"anger", {"angry", "rage", "fury"}},
                                     {"awe", {"awe", "wonder", "marvel"}},
                                     {"horror", {"dread", "terror", "horror"}},
                                     {"boredom", {"bored", "tedious", "dull"}},
                                     {"admiration", {"admire", "esteem", "respect"}},
                                     {"nostalgia", {"nostalgic", "memories", "longing"}}};
  return f;
}

// A random planting plan: 1-6 gates on distinct families and features,
// sometimes a confounder, random geometry seed.
inline gatescope::ToyPlan random_toy_plan(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  gatescope::ToyPlan p;
  p.seed = rng();
  std::vector<std::uint32_t> feats(gatescope::kToyDSae);
  for (std::uint32_t i = 0; i < feats.size(); ++i) feats[i] = i;
  std::shuffle(feats.begin(), feats.end(), rng);
  std::vector<std::size_t> fam{0, 1, 2, 3, 4, 5, 6, 7};
  std::shuffle(fam.begin(), fam.end(), rng);
  std::uniform_real_distribution<double> norm(0.5, 3.0), unit(0.0, 1.0);
  const std::size_t n_gates = 1 + rng() % 6;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n_gates; ++i) {
    const auto& f = toy_families()[fam[i]];
    gatescope::PlantedGate g;
    g.feature = feats[next++];
    g.emotion = f.emotion;
    g.tokens = f.tokens;
    g.norm = norm(rng);
    g.dark = unit(rng) < 0.3 ? 1.5 * unit(rng) : 0.0;
    g.strength = 0.8 + 0.2 * unit(rng);
    p.gates.push_back(g);
  }
  if (unit(rng) < 0.5 && n_gates < 7) {
    const auto& target = toy_families()[fam[0]];
    const auto& drift = toy_families()[fam[7]];
    p.confounders.push_back({feats[next++], target.emotion, target.tokens, drift.emotion, drift.tokens,
                             0.5 + 0.4 * unit(rng), norm(rng)});
  }
  return p;
}

}  // namespace testutil
