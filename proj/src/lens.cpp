#include "gatescope/lens.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "gatescope/assets.hpp"
#include "gatescope/parallel.hpp"
#include "json_util.hpp"

namespace gatescope {
namespace {

void check_pair(const TensorMatrix& dec, const TensorMatrix& unembed) {
  if (dec.role() != TensorRole::decoder) throw Error("logit lens: first matrix must be a decoder");
  if (unembed.role() != TensorRole::unembedding) throw Error("logit lens: second matrix must be an unembedding");
  if (dec.d_model() != unembed.cols())
    throw Error("logit lens: d_model mismatch (decoder " + std::to_string(dec.d_model()) + ", unembedding " +
                std::to_string(unembed.cols()) + ")");
}

bool ranks_before(double la, TokenId a, double lb, TokenId b) { return la > lb || (la == lb && a < b); }

// Order of token ids by descending logit, ascending id on ties; first k only.
std::vector<TokenId> order_top(const std::vector<double>& logits, std::size_t k) {
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) { return ranks_before(logits[a], a, logits[b], b); });
  ids.resize(k);
  return ids;
}

double mean_form_logit(const ResolvedLexemes& lex, const std::vector<double>& token_logit,
                       const std::vector<std::size_t>& slot) {
  double sum = 0.0;
  for (const auto& variants : lex.variants) {
    double best = -std::numeric_limits<double>::infinity();
    for (TokenId t : variants) best = std::max(best, token_logit[slot[t]]);
    sum += best;
  }
  return sum / static_cast<double>(lex.variants.size());
}

bool is_alphabetic_word(std::string_view s) {
  if (s.size() < 2) return false;
  std::int32_t i = 0;
  const auto len = static_cast<std::int32_t>(s.size());
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  while (i < len) {
    UChar32 c;
    U8_NEXT(p, i, len, c);
    if (c < 0 || !u_isalpha(c)) return false;
  }
  return true;
}

}  // namespace

TokenTable::TokenTable(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
}

TokenTable TokenTable::from_json(const json& j) {
  if (!j.is_array()) throw Error("token table: expected a JSON list of strings");
  std::vector<std::string> tokens;
  tokens.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_string()) throw Error("token table: every entry must be a string");
    tokens.push_back(t.get<std::string>());
  }
  return TokenTable(std::move(tokens));
}

TokenTable TokenTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open token table " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(detail::parse_json(text, path.string()));
}

json TokenTable::to_json() const { return json(tokens_); }

std::optional<TokenId> TokenTable::find(std::string_view s) const {
  auto it = index_.find(std::string(s));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

LexemeResolutionError::LexemeResolutionError(const std::string& emotion, std::vector<std::string> skipped)
    : Error("lexeme set '" + emotion + "': no form maps to a single token (" + std::to_string(skipped.size()) +
            " skipped)"),
      skipped_(std::move(skipped)) {}

ResolvedLexemes resolve_lexemes(const LexemeSet& lex, const TokenTable& vocab) {
  lex.validate();
  ResolvedLexemes out;
  for (const auto& form : lex.forms) {
    std::vector<TokenId> ids;
    if (auto id = vocab.find(form)) ids.push_back(*id);
    if (auto id = vocab.find(" " + form)) ids.push_back(*id);
    if (ids.empty()) {
      out.skipped.push_back(form);
      continue;
    }
    out.forms.push_back(form);
    out.variants.push_back(std::move(ids));
  }
  if (out.forms.empty()) throw LexemeResolutionError(lex.emotion, out.skipped);
  return out;
}

std::vector<double> lens_logits(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f) {
  check_pair(dec, unembed);
  check_feature(dec, f);
  const auto d = dec.row(f.index);
  std::vector<double> logits(unembed.rows());
  for (std::size_t v = 0; v < unembed.rows(); ++v) logits[v] = dot(d, unembed.row(v));
  return logits;
}

TopKResult top_k(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f, std::size_t k,
                 const TokenTable& vocab) {
  if (k == 0) throw Error("top_k: K must be >= 1");
  if (vocab.size() != unembed.rows())
    throw Error("top_k: token table has " + std::to_string(vocab.size()) + " entries but |V| = " +
                std::to_string(unembed.rows()));
  const auto logits = lens_logits(dec, unembed, f);
  TopKResult out{f, {}};
  for (TokenId t : order_top(logits, k)) out.entries.push_back({t, vocab.at(t), logits[t]});
  return out;
}

RankEmit rank_emit(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f, const LexemeSet& lex,
                   std::size_t k, const TokenTable& vocab) {
  if (k == 0) throw Error("rank_emit: K must be >= 1");
  const auto resolved = resolve_lexemes(lex, vocab);
  const auto logits = lens_logits(dec, unembed, f);
  RankEmit out;
  out.skipped = resolved.skipped;
  bool have = false;
  for (const auto& variants : resolved.variants) {
    for (TokenId t : variants) {
      if (!have || ranks_before(logits[t], t, logits[out.best_token], out.best_token)) {
        out.best_token = t;
        have = true;
      }
    }
  }
  const auto top = order_top(logits, k);
  for (std::size_t i = 0; i < top.size(); ++i) {
    if (top[i] == out.best_token) {
      out.position = i;
      break;
    }
  }
  return out;
}

json to_json(const CandidateScore& c) {
  json j;
  j["feature"] = c.feature.index;
  j["mean_logit"] = c.mean_logit;
  j["rank_emit"] = c.rank_emit ? json(*c.rank_emit) : json(nullptr);
  j["drift_penalty"] = c.drift_penalty;
  j["final_score"] = c.final_score;
  return j;
}

std::vector<CandidateScore> score_all_features(const TensorMatrix& dec, const TensorMatrix& unembed,
                                               const LexemeSet& lex, const TokenTable& vocab,
                                               const ScanOptions& opts) {
  check_pair(dec, unembed);
  if (vocab.size() != unembed.rows()) throw Error("scan: token table size does not match |V|");
  const auto target = resolve_lexemes(lex, vocab);
  std::optional<ResolvedLexemes> drift;
  if (opts.drift) drift = resolve_lexemes(*opts.drift, vocab);

  // Only the lexeme tokens are needed; gather them once.
  std::vector<TokenId> needed;
  for (const auto& v : target.variants) needed.insert(needed.end(), v.begin(), v.end());
  if (drift)
    for (const auto& v : drift->variants) needed.insert(needed.end(), v.begin(), v.end());
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::vector<std::size_t> slot(unembed.rows(), 0);
  for (std::size_t i = 0; i < needed.size(); ++i) slot[needed[i]] = i;

  const std::size_t n = dec.rows();
  const std::size_t block = std::max<std::size_t>(opts.block, 1);
  const std::size_t n_blocks = (n + block - 1) / block;
  std::vector<CandidateScore> out(n);
  parallel_for(n_blocks, opts.threads, [&](std::size_t b) {
    std::vector<double> token_logit(needed.size());
    const std::size_t end = std::min(n, (b + 1) * block);
    for (std::size_t f = b * block; f < end; ++f) {
      const auto row = dec.row(f);
      for (std::size_t i = 0; i < needed.size(); ++i) token_logit[i] = dot(row, unembed.row(needed[i]));
      CandidateScore c;
      c.feature = FeatureId{static_cast<std::uint32_t>(f)};
      c.mean_logit = mean_form_logit(target, token_logit, slot);
      if (drift) c.drift_penalty = opts.drift_lambda * std::max(0.0, mean_form_logit(*drift, token_logit, slot));
      c.final_score = c.mean_logit - c.drift_penalty;
      out[f] = c;
    }
  });
  return out;
}

std::vector<CandidateScore> scan(const TensorMatrix& dec, const TensorMatrix& unembed, const LexemeSet& lex,
                                 const TokenTable& vocab, const ScanOptions& opts) {
  if (opts.top_n == 0) throw Error("scan: top_n must be >= 1");
  auto all = score_all_features(dec, unembed, lex, vocab, opts);
  const std::size_t n = std::min(opts.top_n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const CandidateScore& a, const CandidateScore& b) {
                      return a.final_score > b.final_score ||
                             (a.final_score == b.final_score && a.feature < b.feature);
                    });
  all.resize(n);
  for (auto& c : all) c.rank_emit = rank_emit(dec, unembed, c.feature, lex, opts.k, vocab).position;
  return all;
}

std::vector<ContrastEntry> contrastive_rank(const TensorMatrix& acts_a, const TensorMatrix& acts_b) {
  if (acts_a.cols() != acts_b.cols())
    throw Error("contrastive_rank: d_sae mismatch (" + std::to_string(acts_a.cols()) + " vs " +
                std::to_string(acts_b.cols()) + ")");
  if (acts_a.rows() < 2 || acts_b.rows() < 2) throw Error("contrastive_rank: need at least 2 samples per side");
  const std::size_t d = acts_a.cols();
  const auto na = static_cast<double>(acts_a.rows());
  const auto nb = static_cast<double>(acts_b.rows());

  auto moments = [d](const TensorMatrix& m, std::vector<double>& mean, std::vector<double>& ss) {
    mean.assign(d, 0.0);
    ss.assign(d, 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += m.at(r, c);
    for (auto& v : mean) v /= static_cast<double>(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double dev = m.at(r, c) - mean[c];
        ss[c] += dev * dev;
      }
  };
  std::vector<double> mean_a, ss_a, mean_b, ss_b;
  moments(acts_a, mean_a, ss_a);
  moments(acts_b, mean_b, ss_b);

  std::vector<ContrastEntry> ranked, degenerate;
  for (std::size_t c = 0; c < d; ++c) {
    ContrastEntry e;
    e.feature = FeatureId{static_cast<std::uint32_t>(c)};
    e.mean_gap = mean_a[c] - mean_b[c];
    const double pooled_var = (ss_a[c] + ss_b[c]) / (na + nb - 2.0);
    if (pooled_var > 0.0) {
      e.z = e.mean_gap / (std::sqrt(pooled_var) * std::sqrt(1.0 / na + 1.0 / nb));
    } else if (e.mean_gap != 0.0) {
      e.z = e.mean_gap > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      e.flag = ContrastFlag::infinite;
    } else {
      e.flag = ContrastFlag::degenerate;
      degenerate.push_back(e);
      continue;
    }
    ranked.push_back(e);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ContrastEntry& a, const ContrastEntry& b) { return a.z > b.z; });
  ranked.insert(ranked.end(), degenerate.begin(), degenerate.end());
  return ranked;
}

const std::vector<std::string>& default_suffixes() {
  static const std::vector<std::string> suffixes = [] {
    const json j = asset_json("suffixes.json");
    return j.at("suffixes").get<std::vector<std::string>>();
  }();
  return suffixes;
}

std::string normalize_token(std::string_view token) {
  for (;;) {
    if (token.starts_with(" ")) token.remove_prefix(1);
    else if (token.starts_with("\xC4\xA0")) token.remove_prefix(2);       // Ġ
    else if (token.starts_with("\xE2\x96\x81")) token.remove_prefix(3);   // ▁
    else break;
  }
  std::string out(token);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

MechanismTag mechanism_tag(const TopKResult& tk, const LexemeSet& lex, const std::vector<std::string>& suffixes) {
  const std::size_t n = std::min<std::size_t>(10, tk.entries.size());
  if (n == 0) return MechanismTag::unknown;
  std::set<std::string> forms, suffix_set;
  for (const auto& f : lex.forms) forms.insert(normalize_token(f));
  for (const auto& s : suffixes) suffix_set.insert(normalize_token(s));

  std::size_t lexical = 0, suffix = 0, alphabetic = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string t = normalize_token(tk.entries[i].text);
    if (forms.count(t)) ++lexical;
    if ((t.size() > 1 && t.front() == '-') || suffix_set.count(t)) ++suffix;
    if (is_alphabetic_word(t)) ++alphabetic;
  }
  if (lexical >= 3) return MechanismTag::lexical;
  if (suffix >= 3) return MechanismTag::suffix;
  // Seven of ten alphabetic words (scaled when fewer than ten entries).
  if (alphabetic * 10 >= 7 * n) return MechanismTag::atmospheric;
  return MechanismTag::unknown;
}

}  // namespace gatescope
