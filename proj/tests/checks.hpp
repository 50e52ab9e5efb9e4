#pragma once

// Oracle sweeps shared by the unit tests and the acceptance binary. Each
// returns the number of disagreements and appends a short description of
// the first few to `log`.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gatescope/error.hpp"
#include "gatescope/judge.hpp"
#include "gatescope/lens.hpp"
#include "gatescope/lexeme.hpp"
#include "gatescope/toy.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

namespace checks {

using namespace gatescope;

struct Tally {
  std::size_t compared = 0;
  std::size_t mismatches = 0;
  std::vector<std::string> log;

  void fail(const std::string& what) {
    ++mismatches;
    if (log.size() < 5) log.push_back(what);
  }
};

inline bool close(double a, double b, double rel = 1e-12) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

inline void lens_plan(const ToyFixture& fx, std::uint64_t seed, Tally& t) {
  const auto& dec = fx.decoder;
  const auto& U = fx.unembedding;
  const auto& vocab = fx.vocab;
  const std::string tag = "plan " + std::to_string(seed);

  for (std::uint32_t f = 0; f < dec.rows(); ++f) {
    for (std::size_t k : {std::size_t{1}, std::size_t{25}, std::size_t{100}}) {
      ++t.compared;
      const auto got = top_k(dec, U, FeatureId{f}, k, vocab);
      const auto want = oracle::top_k(dec, U, f, k);
      bool same = got.entries.size() == want.size();
      for (std::size_t i = 0; same && i < want.size(); ++i)
        same = got.entries[i].token == want[i] && got.entries[i].text == vocab.at(want[i]);
      if (!same) t.fail(tag + ": top_k f" + std::to_string(f) + " K=" + std::to_string(k));
    }
  }

  std::mt19937_64 rng(seed ^ 0x5eedULL);
  for (const auto& g : fx.plan.gates) {
    const auto* lex = find_word_forms(g.emotion);
    if (!lex) continue;
    for (std::uint32_t f = 0; f < dec.rows(); ++f) {
      ++t.compared;
      const auto got = rank_emit(dec, U, FeatureId{f}, *lex, 25, vocab).position;
      const auto want = oracle::rank_emit(dec, U, f, lex->forms, vocab, 25);
      if (got != want) t.fail(tag + ": rank_emit f" + std::to_string(f) + " " + g.emotion);
    }

    // Drift: the plan's confounder drift for this emotion, else another family.
    const WordFormList* drift = nullptr;
    for (const auto& c : fx.plan.confounders)
      if (c.emotion == g.emotion) drift = find_word_forms(c.drift_emotion);
    if (!drift) drift = find_word_forms(testutil::toy_families()[rng() % testutil::toy_families().size()].emotion);

    for (bool use_drift : {false, true}) {
      ScanOptions opt;
      opt.top_n = 1 + rng() % dec.rows();
      opt.drift_lambda = use_drift ? 0.5 + static_cast<double>(rng() % 100) / 100.0 : 1.0;
      if (use_drift) opt.drift = *drift;
      opt.threads = 1 + rng() % 4;
      opt.block = 1 + rng() % 40;
      ++t.compared;
      const auto got = scan(dec, U, *lex, vocab, opt);
      const auto want =
          oracle::scan(dec, U, lex->forms, use_drift ? &drift->forms : nullptr, opt.drift_lambda, vocab, opt.top_n);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < want.size(); ++i) {
        same = got[i].feature.index == want[i].feature && close(got[i].mean_logit, want[i].mean) &&
               close(got[i].drift_penalty, want[i].penalty) && close(got[i].final_score, want[i].score) &&
               got[i].rank_emit == oracle::rank_emit(dec, U, want[i].feature, lex->forms, vocab, 25);
      }
      if (!same) t.fail(tag + ": scan " + g.emotion + (use_drift ? " with drift" : ""));
    }
  }

  // Contrastive ranking on activations captured from the toy model: scenes
  // full of the first gate's tokens against neutral scenes.
  ToyBackend backend(std::make_shared<const ToyFixture>(fx));
  const auto& toks = fx.plan.gates.front().tokens;
  std::vector<std::string> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back("the " + toks[i % 3] + " room felt " + toks[(i + 1) % 3] + " and " + toks[(i + 2) % 3]);
    b.push_back(i % 2 ? "the table by the window in the evening" : "she looked across the room at the door");
  }
  const auto acts_a = backend.capture_activations(a);
  const auto acts_b = backend.capture_activations(b);
  for (int swap = 0; swap < 2; ++swap) {
    const auto& x = swap ? acts_b : acts_a;
    const auto& y = swap ? acts_a : acts_b;
    ++t.compared;
    const auto got = contrastive_rank(x, y);
    const auto want = oracle::contrastive(x, y);
    // Mathematically tied z values may differ in the last bits, so a swap
    // inside a tie is allowed: position by position the z values must agree,
    // and each feature must carry its own oracle z and flag.
    std::map<std::uint32_t, oracle::Contrast> by_feature;
    for (const auto& w : want) by_feature[w.feature] = w;
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i) {
      const auto& mine = by_feature.at(got[i].feature.index);
      same = close(got[i].z, want[i].z, 1e-9) && close(got[i].z, mine.z, 1e-9) &&
             static_cast<int>(got[i].flag) == mine.kind;
    }
    if (!same) t.fail(tag + ": contrastive_rank" + (swap ? " (swapped)" : ""));
  }
}

// Builds `n_plans` random planting plans (skipping any the builder refuses)
// and compares every lens operation with its oracle.
inline Tally lens_equivalence(std::size_t n_plans) {
  Tally t;
  std::size_t built = 0;
  for (std::uint64_t seed = 1; built < n_plans && seed < 20 * n_plans; ++seed) {
    std::optional<ToyFixture> fx;
    try {
      fx = build_toy_fixture(testutil::random_toy_plan(seed));
    } catch (const Error&) {
      continue;  // the builder refuses plans whose planting guarantee fails
    }
    lens_plan(*fx, seed, t);
    ++built;
  }
  if (built < n_plans) t.fail("only " + std::to_string(built) + " plans built");
  return t;
}

inline JudgeVerdict verdict(int i, const std::string& v) {
  JudgeVerdict out;
  out.judge_id = "j" + std::to_string(i);
  out.raw = v.empty() ? "banana" : v;
  if (!v.empty()) out.parsed = v;
  return out;
}

inline bool panel_matches(const std::vector<std::string>& votes, const std::string& target, std::size_t threshold,
                          JudgePanelResult* out = nullptr) {
  std::vector<JudgeVerdict> vs;
  for (std::size_t i = 0; i < votes.size(); ++i) vs.push_back(verdict(static_cast<int>(i), votes[i]));
  const auto got = aggregate_panel(vs, target, threshold);
  const auto want = oracle::panel(votes, target, threshold);
  if (out) *out = got;
  return got.majority == want.majority && got.is_hit == want.hit && got.target_votes == want.target_votes;
}

// Every 5-judge forced12 assignment (12^5), each against a rotating target.
// With invalid = true the invalid verdict is a 13th symbol (13^5).
inline Tally vote_enumeration(bool invalid) {
  Tally t;
  const int symbols = invalid ? 13 : 12;
  std::vector<std::string> votes(5);
  std::size_t total = 1;
  for (int i = 0; i < 5; ++i) total *= static_cast<std::size_t>(symbols);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (int j = 0; j < 5; ++j) {
      const int s = static_cast<int>(c % static_cast<std::size_t>(symbols));
      c /= static_cast<std::size_t>(symbols);
      votes[static_cast<std::size_t>(j)] = s == 12 ? std::string() : std::to_string(s + 1);
    }
    const std::string target = std::to_string(code % 12 + 1);
    ++t.compared;
    if (!panel_matches(votes, target, 3)) t.fail("panel code " + std::to_string(code));
  }
  return t;
}

// Random 7-seed profiles: panels drawn with a random lean towards the target
// and towards one rival, some invalid votes.
inline Tally seed_profiles(std::size_t n, std::uint64_t seed) {
  Tally t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t p = 0; p < n; ++p) {
    const std::string target = std::to_string(1 + rng() % 12);
    const std::string rival = std::to_string(1 + rng() % 12);
    const double lean = u(rng), rival_lean = u(rng) * (1 - lean), bad = 0.1 * u(rng);
    std::vector<JudgePanelResult> panels;
    std::vector<std::optional<std::string>> majorities;
    bool panels_ok = true;
    for (int s = 0; s < 7; ++s) {
      std::vector<std::string> votes;
      for (int j = 0; j < 5; ++j) {
        const double r = u(rng);
        if (r < bad)
          votes.push_back("");
        else if (r < bad + lean)
          votes.push_back(target);
        else if (r < bad + lean + rival_lean)
          votes.push_back(rival);
        else
          votes.push_back(std::to_string(1 + rng() % 12));
      }
      JudgePanelResult res;
      panels_ok = panels_ok && panel_matches(votes, target, 3, &res);
      panels.push_back(res);
      majorities.push_back(oracle::panel(votes, target, 3).majority);
    }
    ++t.compared;
    const auto spec = specificity(panels);
    std::size_t hits = 0;
    for (const auto& pr : panels) hits += pr.is_hit;
    std::size_t want_hits = 0;
    for (const auto& m : majorities) want_hits += m == target;
    if (!panels_ok || spec.confirmed != oracle::specificity(majorities, target) || hits != want_hits ||
        spec.seeds != 7)
      t.fail("profile " + std::to_string(p));
  }
  return t;
}

}  // namespace checks
