#include "gatescope/toy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "gatescope/error.hpp"
#include "gatescope/rng.hpp"
#include "json_util.hpp"

namespace gatescope {
namespace {

// Vocabulary layout: 31 filler tokens, 9 emotion families of 3, 3 suffixes, 3 junk.
const std::vector<std::string> kFiller{".",     ",",     "the",    "a",      "she",    "he",     "they",  "walked",
                                       "said",  "looked", "room",  "window", "door",   "street", "light", "rain",
                                       "table", "hand",  "evening", "morning", "slowly", "quietly", "gently", "again",
                                       "and",   "then",  "into",   "across", "old",    "small",  "dinner"};

struct Family {
  const char* name;
  std::array<const char*, 3> tokens;
};

// The first eight own a basis direction; joy reads admiration + nostalgia.
const std::array<Family, 9> kFamilies{{{"calmness", {"calm", "serene", "tranquil"}},
                                       {"sadness", {"sad", "grief", "sorrow"}},
                                       {"anger", {"angry", "rage", "fury"}},
                                       {"awe", {"awe", "wonder", "marvel"}},
                                       {"horror", {"dread", "terror", "horror"}},
                                       {"boredom", {"bored", "tedious", "dull"}},
                                       {"admiration", {"admire", "esteem", "respect"}},
                                       {"nostalgia", {"nostalgic", "memories", "longing"}},
                                       {"joy", {"joy", "glad", "delight"}}}};

const std::vector<std::string> kSuffixTokens{"-fully", "-lessly", "-ness"};
const std::vector<std::string> kJunkTokens{"<unused0>", "<unused1>", "<unused2>"};

constexpr std::size_t kFillerDims = 6;
constexpr std::size_t kFamilyDims = 8;
constexpr std::size_t kDarkDim = kFamilyDims + kFillerDims;  // first of two
constexpr double kEmotionBias = -6.0;
constexpr double kRareBias = -8.0;
constexpr std::array<double, 3> kFamilyScale{1.0, 0.92, 0.85};

// RNG streams.
constexpr std::uint64_t kStreamBasis = 1, kStreamUnembed = 2, kStreamEmbed = 3, kStreamPos = 4,
                        kStreamBlocks = 10, kStreamDecoder = 1000;

using Vec = std::vector<double>;

std::vector<std::string> toy_vocab_strings() {
  std::vector<std::string> v = kFiller;
  for (const auto& f : kFamilies)
    for (const char* t : f.tokens) v.emplace_back(t);
  v.insert(v.end(), kSuffixTokens.begin(), kSuffixTokens.end());
  v.insert(v.end(), kJunkTokens.begin(), kJunkTokens.end());
  return v;
}

double norm(const Vec& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

Vec normalized(Vec v) {
  const double n = norm(v);
  if (n == 0.0) throw Error("toy fixture: zero direction");
  for (auto& x : v) x /= n;
  return v;
}

void axpy(double a, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

class Gauss {
 public:
  Gauss(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}
  double operator()() { return rng_.normal(counter_++); }
  double uniform() { return rng_.uniform(counter_++); }
  Vec vec(std::size_t n, double scale) {
    Vec v(n);
    for (auto& x : v) x = scale * (*this)();
    return v;
  }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

// Columns of a random orthonormal basis, by Gram-Schmidt.
std::vector<Vec> random_basis(std::uint64_t seed) {
  Gauss g(seed, kStreamBasis);
  std::vector<Vec> basis;
  while (basis.size() < kToyDModel) {
    Vec v = g.vec(kToyDModel, 1.0);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) axpy(-std::inner_product(v.begin(), v.end(), b.begin(), 0.0), b, v);
    if (norm(v) > 1e-6) basis.push_back(normalized(std::move(v)));
  }
  return basis;
}

Vec in_span(Gauss& g, const std::vector<Vec>& basis, std::size_t first, std::size_t count) {
  Vec v(kToyDModel, 0.0);
  for (std::size_t i = 0; i < count; ++i) axpy(g(), basis[first + i], v);
  return v;
}

struct Geometry {
  std::vector<Vec> basis;
  std::vector<Vec> family_dir;  // per family, unit
};

Geometry geometry(std::uint64_t seed) {
  Geometry geo;
  geo.basis = random_basis(seed);
  for (std::size_t f = 0; f < kFamilyDims; ++f) geo.family_dir.push_back(geo.basis[f]);
  Vec joy = geo.basis[6];
  axpy(1.0, geo.basis[7], joy);
  geo.family_dir.push_back(normalized(joy));
  return geo;
}

void build_unembedding(const Geometry& geo, std::uint64_t seed, const TokenTable& vocab, ToyWeights& w) {
  Gauss g(seed, kStreamUnembed);
  const std::size_t V = vocab.size(), d = kToyDModel;
  w.unembed.assign(V * d, 0.0);
  w.bias.assign(V, 0.0);
  auto set_row = [&](std::size_t id, const Vec& row, double bias) {
    for (std::size_t c = 0; c < d; ++c) w.unembed[id * d + c] = static_cast<float>(row[c]);
    w.bias[id] = bias;
  };
  // Filler rows share the first filler direction, so a feature leaning on it
  // promotes every filler above the emotion families.
  for (std::size_t i = 0; i < kFiller.size(); ++i) {
    Vec row = normalized(in_span(g, geo.basis, kFamilyDims + 1, kFillerDims - 1));
    for (auto& x : row) x *= 0.6;
    axpy(0.8, geo.basis[kFamilyDims], row);
    const double scale = 0.8 + 0.4 * g.uniform();
    for (auto& x : row) x *= scale;
    set_row(i, row, 0.3 * g());
  }
  std::size_t id = kFiller.size();
  for (std::size_t f = 0; f < kFamilies.size(); ++f) {
    for (std::size_t j = 0; j < 3; ++j, ++id) {
      Vec row = g.vec(d, 0.04);
      axpy(kFamilyScale[j], geo.family_dir[f], row);
      set_row(id, row, kEmotionBias);
    }
  }
  for (; id < V; ++id) {
    Vec row = normalized(in_span(g, geo.basis, kFamilyDims, kFillerDims));
    for (auto& x : row) x *= 0.3;
    set_row(id, row, kRareBias);
  }
}

void build_model(std::uint64_t seed, ToyWeights& w) {
  const std::size_t d = w.d_model, h = w.d_mlp;
  {
    Gauss g(seed, kStreamEmbed);
    w.embed = g.vec(kToyVocab * d, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  {
    Gauss g(seed, kStreamPos);
    w.pos = g.vec(w.max_positions * d, 0.3 / std::sqrt(static_cast<double>(d)));
  }
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    Gauss g(seed, kStreamBlocks + b);
    auto& blk = w.blocks[b];
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    blk.g_attn.assign(d, 1.0);
    blk.g_mlp.assign(d, 1.0);
    blk.wq = g.vec(d * d, sd);
    blk.wk = g.vec(d * d, sd);
    blk.wv = g.vec(d * d, sd);
    blk.wo = g.vec(d * d, 0.5 * sd);
    blk.w1 = g.vec(h * d, sd);
    blk.b1 = g.vec(h, 0.1);
    blk.w2 = g.vec(d * h, 0.5 / std::sqrt(static_cast<double>(h)));
  }
}

void matvec(const Vec& m, const double* x, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * x[c];
    out[r] = s;
  }
}

// Incremental forward pass with a per-block KV cache.
class Forward {
 public:
  explicit Forward(const ToyWeights& w) : w_(w), d_(w.d_model) {}

  // Feeds one token; returns the hook-layer residual (before steering) and
  // writes logits when requested.
  Vec step(std::uint32_t token, const std::vector<double>* steer, Vec* logits) {
    const std::size_t t = len_++;
    if (t >= w_.max_positions) throw Error("toy model: sequence longer than " + std::to_string(w_.max_positions));
    Vec x(d_);
    for (std::size_t c = 0; c < d_; ++c) x[c] = w_.embed[token * d_ + c] + w_.pos[t * d_ + c];
    Vec hook;
    for (std::size_t b = 0; b < w_.blocks.size(); ++b) {
      if (b == 1) {
        hook = x;
        if (steer) axpy(1.0, *steer, x);
      }
      block(b, x);
    }
    if (logits) {
      const std::size_t V = w_.bias.size();
      logits->assign(V, 0.0);
      matvec(w_.unembed, x.data(), V, d_, logits->data());
      for (std::size_t v = 0; v < V; ++v) (*logits)[v] += w_.bias[v];
    }
    return hook;
  }

 private:
  Vec rmsnorm(const Vec& x, const Vec& g) const {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.size()) + 1e-6);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * g[i];
    return out;
  }

  void block(std::size_t b, Vec& x) {
    const auto& blk = w_.blocks[b];
    const std::size_t heads = w_.n_heads, dh = d_ / heads;
    const Vec n = rmsnorm(x, blk.g_attn);
    Vec q(d_), k(d_), v(d_);
    matvec(blk.wq, n.data(), d_, d_, q.data());
    matvec(blk.wk, n.data(), d_, d_, k.data());
    matvec(blk.wv, n.data(), d_, d_, v.data());
    keys_[b].insert(keys_[b].end(), k.begin(), k.end());
    values_[b].insert(values_[b].end(), v.begin(), v.end());
    const std::size_t T = keys_[b].size() / d_;
    Vec attn(d_, 0.0), scores(T);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      double mx = -INFINITY;
      for (std::size_t s = 0; s < T; ++s) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[hd * dh + c] * keys_[b][s * d_ + hd * dh + c];
        scores[s] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[s]);
      }
      double z = 0.0;
      for (auto& sc : scores) z += (sc = std::exp(sc - mx));
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t c = 0; c < dh; ++c) attn[hd * dh + c] += scores[s] / z * values_[b][s * d_ + hd * dh + c];
    }
    Vec o(d_);
    matvec(blk.wo, attn.data(), d_, d_, o.data());
    axpy(1.0, o, x);

    const Vec n2 = rmsnorm(x, blk.g_mlp);
    Vec hidden(w_.d_mlp);
    matvec(blk.w1, n2.data(), w_.d_mlp, d_, hidden.data());
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::max(0.0, hidden[i] + blk.b1[i]);
    Vec m(d_);
    matvec(blk.w2, hidden.data(), d_, w_.d_mlp, m.data());
    axpy(1.0, m, x);
  }

  const ToyWeights& w_;
  std::size_t d_;
  std::size_t len_ = 0;
  std::array<Vec, 2> keys_, values_;
};

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) h = (h ^ c) * 16777619u;
  return h;
}

std::vector<std::uint32_t> tokenize_with(const TokenTable& vocab, std::string_view text) {
  std::vector<std::uint32_t> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (auto id = vocab.find(word)) {
      ids.push_back(*id);
    } else {
      // Unknown words land on a content filler token (not "." or ",").
      ids.push_back(2 + fnv1a(word) % static_cast<std::uint32_t>(kFiller.size() - 2));
    }
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (ch == '.' || ch == ',') {
      flush();
      word = std::string(1, ch);
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return ids;
}

std::vector<Vec> hook_states_with(const ToyWeights& w, const TokenTable& vocab, std::string_view prompt) {
  const auto ids = tokenize_with(vocab, prompt);
  if (ids.empty()) throw Error("toy model: prompt has no tokens");
  Forward fw(w);
  std::vector<Vec> states;
  for (auto id : ids) states.push_back(fw.step(id, nullptr, nullptr));
  return states;
}

Vec pooled_hook(const ToyWeights& w, const TokenTable& vocab, std::string_view prompt) {
  const auto states = hook_states_with(w, vocab, prompt);
  Vec mean(w.d_model, 0.0);
  for (const auto& s : states) axpy(1.0 / static_cast<double>(states.size()), s, mean);
  return mean;
}

Vec token_direction(const TokenTable& vocab, const ToyWeights& w, const std::vector<std::string>& tokens,
                    std::string_view ctx) {
  if (tokens.empty()) throw Error(std::string(ctx) + ": no target tokens");
  Vec dir(kToyDModel, 0.0);
  for (const auto& t : tokens) {
    auto id = vocab.find(t);
    if (!id) throw Error(std::string(ctx) + ": token '" + t + "' is not in the toy vocabulary");
    for (std::size_t c = 0; c < kToyDModel; ++c) dir[c] += w.unembed[*id * kToyDModel + c];
  }
  return normalized(std::move(dir));
}

void check_feature_id(std::uint32_t f, std::set<std::uint32_t>& used) {
  if (f >= kToyDSae) throw Error("toy plan: feature " + std::to_string(f) + " exceeds d_sae " + std::to_string(kToyDSae));
  if (!used.insert(f).second) throw Error("toy plan: feature " + std::to_string(f) + " planted twice");
}

}  // namespace

std::vector<std::uint32_t> ToyPlan::noise_features() const {
  std::set<std::uint32_t> planted;
  for (const auto& g : gates) planted.insert(g.feature);
  for (const auto& c : confounders) planted.insert(c.feature);
  for (const auto& r : registers) planted.insert(r.feature);
  std::vector<std::uint32_t> out;
  for (std::uint32_t f = 0; f < kToyDSae; ++f)
    if (!planted.count(f)) out.push_back(f);
  return out;
}

json to_json(const ToyPlan& p) {
  json j;
  j["seed"] = p.seed;
  j["gates"] = json::array();
  for (const auto& g : p.gates)
    j["gates"].push_back({{"feature", g.feature},
                          {"emotion", g.emotion},
                          {"tokens", g.tokens},
                          {"strength", g.strength},
                          {"dark", g.dark},
                          {"norm", g.norm}});
  j["confounders"] = json::array();
  for (const auto& c : p.confounders)
    j["confounders"].push_back({{"feature", c.feature},
                                {"emotion", c.emotion},
                                {"tokens", c.tokens},
                                {"drift_emotion", c.drift_emotion},
                                {"drift_tokens", c.drift_tokens},
                                {"drift_share", c.drift_share},
                                {"norm", c.norm}});
  j["registers"] = json::array();
  for (const auto& r : p.registers)
    j["registers"].push_back(
        {{"feature", r.feature}, {"prompts_a", r.prompts_a}, {"prompts_b", r.prompts_b}, {"norm", r.norm}});
  return j;
}

ToyPlan toy_plan_from_json(const json& j) {
  using namespace detail;
  require_only(j, {"seed", "gates", "confounders", "registers"}, "toy plan");
  ToyPlan p;
  p.seed = get<std::uint64_t>(j, "seed", "toy plan");
  for (const auto& g : j.value("gates", json::array())) {
    require_only(g, {"feature", "emotion", "tokens", "strength", "dark", "norm"}, "toy gate");
    p.gates.push_back({get<std::uint32_t>(g, "feature", "toy gate"), get<std::string>(g, "emotion", "toy gate"),
                       get<std::vector<std::string>>(g, "tokens", "toy gate"),
                       get_or<double>(g, "strength", 1.0, "toy gate"), get_or<double>(g, "dark", 0.0, "toy gate"),
                       get_or<double>(g, "norm", 1.0, "toy gate")});
  }
  for (const auto& c : j.value("confounders", json::array())) {
    require_only(c, {"feature", "emotion", "tokens", "drift_emotion", "drift_tokens", "drift_share", "norm"},
                 "toy confounder");
    p.confounders.push_back({get<std::uint32_t>(c, "feature", "toy confounder"),
                             get<std::string>(c, "emotion", "toy confounder"),
                             get<std::vector<std::string>>(c, "tokens", "toy confounder"),
                             get<std::string>(c, "drift_emotion", "toy confounder"),
                             get<std::vector<std::string>>(c, "drift_tokens", "toy confounder"),
                             get_or<double>(c, "drift_share", 0.8, "toy confounder"),
                             get_or<double>(c, "norm", 1.0, "toy confounder")});
  }
  for (const auto& r : j.value("registers", json::array())) {
    require_only(r, {"feature", "prompts_a", "prompts_b", "norm"}, "toy register");
    p.registers.push_back({get<std::uint32_t>(r, "feature", "toy register"),
                           get<std::vector<std::string>>(r, "prompts_a", "toy register"),
                           get<std::vector<std::string>>(r, "prompts_b", "toy register"),
                           get_or<double>(r, "norm", 1.0, "toy register")});
  }
  return p;
}

ToyPlan default_toy_plan() {
  ToyPlan p;
  p.seed = 7;
  p.gates = {
      {5, "calmness", {"calm", "serene", "tranquil"}, 1.0, 0.0, 1.31},
      {12, "sadness", {"sad", "grief", "sorrow"}, 1.0, 0.0, 1.20},
      {19, "anger", {"angry", "rage", "fury"}, 1.0, 0.0, 2.14},
      {27, "awe", {"awe", "wonder", "marvel"}, 1.0, 0.0, 0.87},
      {41, "horror", {"dread", "terror", "horror"}, 1.0, 2.3, 1.62},
  };
  p.confounders = {{33, "sadness", {"sad", "grief", "sorrow"}, "boredom", {"bored", "tedious", "dull"}, 0.8, 2.6}};
  return p;
}

ToyPlan compositional_toy_plan() {
  ToyPlan p = default_toy_plan();
  p.gates.push_back({45, "admiration", {"admire", "esteem", "respect"}, 1.0, 0.0, 1.10});
  p.gates.push_back({52, "nostalgia", {"nostalgic", "memories", "longing"}, 1.0, 0.0, 0.95});
  return p;
}

ToyFixture build_toy_fixture(const ToyPlan& plan) {
  std::set<std::uint32_t> used;
  for (const auto& g : plan.gates) {
    check_feature_id(g.feature, used);
    if (!(g.norm > 0.0) || !std::isfinite(g.norm)) throw Error("toy plan: gate norm must be positive");
    if (g.strength < 0.0 || g.dark < 0.0) throw Error("toy plan: strength and dark must be >= 0");
  }
  for (const auto& c : plan.confounders) {
    check_feature_id(c.feature, used);
    if (!(c.drift_share > 0.0 && c.drift_share < 1.0)) throw Error("toy plan: drift_share must be in (0, 1)");
    if (!(c.norm > 0.0)) throw Error("toy plan: confounder norm must be positive");
  }
  for (const auto& r : plan.registers) {
    check_feature_id(r.feature, used);
    if (r.prompts_a.empty() || r.prompts_b.empty()) throw Error("toy plan: register needs two prompt sets");
  }

  const TokenTable vocab(toy_vocab_strings());
  ToyWeights weights;
  const Geometry geo = geometry(plan.seed);
  build_unembedding(geo, plan.seed, vocab, weights);
  build_model(plan.seed, weights);

  const std::size_t d = kToyDModel;
  std::vector<Vec> rows(kToyDSae);
  auto noise_row = [&](std::uint32_t f) {
    Gauss g(plan.seed, kStreamDecoder + f);
    Vec v = normalized(in_span(g, geo.basis, kFamilyDims + 1, kFillerDims + 1));
    for (auto& x : v) x *= 0.5;
    axpy(1.0, geo.basis[kFamilyDims], v);
    axpy(0.1, g.vec(d, 1.0 / std::sqrt(static_cast<double>(d))), v);
    v = normalized(std::move(v));
    const double n = 0.8 + 0.8 * g.uniform();
    for (auto& x : v) x *= n;
    return v;
  };
  for (std::uint32_t f = 0; f < kToyDSae; ++f) rows[f] = noise_row(f);

  for (const auto& gate : plan.gates) {
    if (gate.strength == 0.0) continue;
    Gauss g(plan.seed, kStreamDecoder + kToyDSae + gate.feature);
    Vec v = g.vec(d, 0.03);
    axpy(gate.strength, token_direction(vocab, weights, gate.tokens, "toy gate"), v);
    axpy(gate.dark, geo.basis[kDarkDim], v);
    v = normalized(std::move(v));
    for (auto& x : v) x *= gate.norm;
    rows[gate.feature] = std::move(v);
  }
  for (const auto& c : plan.confounders) {
    Gauss g(plan.seed, kStreamDecoder + kToyDSae + c.feature);
    Vec v = g.vec(d, 0.03);
    axpy(std::sqrt(1.0 - c.drift_share * c.drift_share), token_direction(vocab, weights, c.tokens, "toy confounder"), v);
    axpy(c.drift_share, token_direction(vocab, weights, c.drift_tokens, "toy confounder"), v);
    v = normalized(std::move(v));
    for (auto& x : v) x *= c.norm;
    rows[c.feature] = std::move(v);
  }
  for (const auto& r : plan.registers) {
    Vec diff(d, 0.0);
    for (const auto& p : r.prompts_a) axpy(1.0 / static_cast<double>(r.prompts_a.size()), pooled_hook(weights, vocab, p), diff);
    for (const auto& p : r.prompts_b) axpy(-1.0 / static_cast<double>(r.prompts_b.size()), pooled_hook(weights, vocab, p), diff);
    Vec v = normalized(std::move(diff));
    for (auto& x : v) x *= r.norm;
    rows[r.feature] = std::move(v);
  }

  std::vector<float> dec(kToyDSae * d), un(kToyVocab * d);
  for (std::size_t f = 0; f < kToyDSae; ++f)
    for (std::size_t c = 0; c < d; ++c) dec[f * d + c] = static_cast<float>(rows[f][c]);
  for (std::size_t i = 0; i < un.size(); ++i) {
    un[i] = static_cast<float>(weights.unembed[i]);
    weights.unembed[i] = un[i];
  }
  ToyFixture fx{plan, vocab, std::move(weights), TensorMatrix(TensorRole::decoder, kToyDSae, d, std::move(dec)),
                TensorMatrix(TensorRole::unembedding, kToyVocab, d, std::move(un))};

  for (const auto& gate : plan.gates) {
    if (gate.strength == 0.0) continue;
    const auto tk = top_k(fx.decoder, fx.unembedding, FeatureId{gate.feature}, 1, fx.vocab);
    const auto& top = tk.entries.front().text;
    if (std::find(gate.tokens.begin(), gate.tokens.end(), top) == gate.tokens.end())
      throw Error("toy plan: gate " + std::to_string(gate.feature) + " top token is '" + top + "', not a target");
  }
  return fx;
}

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("cannot write " + p.string());
}

}  // namespace

void save_toy_fixture(const ToyFixture& fx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "plan.json", to_json(fx.plan).dump(2) + "\n");
  write_file(dir / "vocab.json", fx.vocab.to_json().dump() + "\n");
  save_tensor(fx.decoder, dir / "decoder.gsten");
  save_tensor(fx.unembedding, dir / "unembedding.gsten");
}

ToyFixture load_toy_fixture(const std::filesystem::path& dir) {
  const auto plan = toy_plan_from_json(detail::parse_json(read_file(dir / "plan.json"), "plan.json"));
  ToyFixture fx = build_toy_fixture(plan);
  const auto dec = load_tensor(dir / "decoder.gsten", TensorRole::decoder);
  const auto un = load_tensor(dir / "unembedding.gsten", TensorRole::unembedding);
  if (serialize_tensor(dec) != serialize_tensor(fx.decoder) || serialize_tensor(un) != serialize_tensor(fx.unembedding))
    throw Error("toy fixture in " + dir.string() + " does not match its plan.json");
  return fx;
}

ToyBackend::ToyBackend(std::shared_ptr<const ToyFixture> fx) : fx_(std::move(fx)) {
  if (!fx_) throw Error("toy backend needs a fixture");
}

BackendDescriptor ToyBackend::describe() const {
  return {"gatescope-toy-2L", kToyLayer, kToyDModel, kToyDSae, kToyVocab, BackendKind::toy};
}

std::vector<std::uint32_t> ToyBackend::tokenize(std::string_view text) const { return tokenize_with(fx_->vocab, text); }

std::string ToyBackend::detokenize(const std::vector<std::uint32_t>& ids) const {
  std::string out;
  for (auto id : ids) {
    const auto& t = fx_->vocab.at(id);
    if (!out.empty() && t != "." && t != ",") out.push_back(' ');
    out += t;
  }
  return out;
}

std::vector<std::vector<double>> ToyBackend::hook_states(std::string_view prompt) const {
  return hook_states_with(fx_->weights, fx_->vocab, prompt);
}

GenerationResult ToyBackend::generate(const GenerationRequest& req) const {
  validate_request(req, kToyDModel);
  const auto prompt = tokenize(req.prompt);
  if (prompt.empty()) throw Error("toy model: prompt has no tokens");
  const std::vector<double>* steer = req.steering ? &req.steering->values : nullptr;

  Forward fw(fx_->weights);
  Vec logits;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const bool last = i + 1 == prompt.size();
    fw.step(prompt[i], last ? steer : nullptr, last ? &logits : nullptr);
  }

  const CounterRng rng(static_cast<std::uint64_t>(req.seed));
  const double T = req.config.temperature, top_p = req.config.top_p;
  const std::size_t V = logits.size();
  std::vector<std::uint32_t> out;
  std::vector<std::uint32_t> order(V);
  Vec probs(V);
  for (int step = 0; step < req.config.max_new_tokens; ++step) {
    // Nucleus at temperature 1, then a temperature-scaled draw inside it.
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += (probs[v] = std::exp(logits[v] - mx));
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](auto a, auto b) { return probs[a] != probs[b] ? probs[a] > probs[b] : a < b; });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < V && (keep == 0 || mass < top_p * z)) mass += probs[order[keep++]];

    double wsum = 0.0;
    Vec weights(keep);
    for (std::size_t i = 0; i < keep; ++i) wsum += (weights[i] = std::exp((logits[order[i]] - mx) / T));
    const double u = rng.uniform(static_cast<std::uint64_t>(step)) * wsum;
    std::size_t pick = keep - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
      acc += weights[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    const std::uint32_t tok = order[pick];
    out.push_back(tok);
    if (step + 1 < req.config.max_new_tokens) fw.step(tok, steer, &logits);
  }

  GenerationResult r;
  r.text = detokenize(out);
  r.token_ids = std::move(out);
  r.backend = describe();
  r.steering_norm = req.steering ? req.steering->norm : 0.0;
  return r;
}

TensorMatrix ToyBackend::capture_activations(const std::vector<std::string>& prompts) const {
  if (prompts.empty()) throw Error("capture_activations: no prompts");
  std::vector<Vec> enc(kToyDSae, Vec(kToyDModel));
  for (std::size_t f = 0; f < kToyDSae; ++f) {
    const auto row = fx_->decoder.row(f);
    Vec v(row.begin(), row.end());
    enc[f] = normalized(std::move(v));
  }
  std::vector<float> data(prompts.size() * kToyDSae);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto states = hook_states(prompts[p]);
    for (std::size_t f = 0; f < kToyDSae; ++f) {
      double acc = 0.0;
      for (const auto& h : states)
        acc += std::max(0.0, std::inner_product(h.begin(), h.end(), enc[f].begin(), 0.0));
      data[p * kToyDSae + f] = static_cast<float>(acc / static_cast<double>(states.size()));
    }
  }
  return TensorMatrix(TensorRole::activations, prompts.size(), kToyDSae, std::move(data));
}

}  // namespace gatescope
