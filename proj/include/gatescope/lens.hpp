#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gatescope/catalog.hpp"
#include "gatescope/error.hpp"
#include "gatescope/tensor.hpp"
#include "gatescope/types.hpp"

namespace gatescope {

using TokenId = std::uint32_t;

// Vocabulary strings indexed by token id. On disk: a JSON list of strings.
class TokenTable {
 public:
  TokenTable() = default;
  explicit TokenTable(std::vector<std::string> tokens);

  static TokenTable load(const std::filesystem::path& path);
  static TokenTable from_json(const json& j);
  json to_json() const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& at(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Exact single-token lookup; the first id wins on duplicate strings.
  std::optional<TokenId> find(std::string_view s) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TopKEntry {
  TokenId token = 0;
  std::string text;
  double logit = 0.0;
};

struct TopKResult {
  FeatureId feature;
  std::vector<TopKEntry> entries;  // descending logit, ascending id on ties
};

// Lexeme forms mapped to token ids. Each form keeps every variant id that
// exists ("calm" and " calm"); the form's logit is the max over variants.
struct ResolvedLexemes {
  std::vector<std::string> forms;
  std::vector<std::vector<TokenId>> variants;
  std::vector<std::string> skipped;  // forms with no single-token id
};

// Raised when no lexeme form maps to a single token.
class LexemeResolutionError : public Error {
 public:
  LexemeResolutionError(const std::string& emotion, std::vector<std::string> skipped);
  const std::vector<std::string>& skipped() const { return skipped_; }

 private:
  std::vector<std::string> skipped_;
};

ResolvedLexemes resolve_lexemes(const LexemeSet& lex, const TokenTable& vocab);

// Full logit-lens row: <W_dec[f], W_U[v]> for every v.
std::vector<double> lens_logits(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f);

// K is clamped to |V|.
TopKResult top_k(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f, std::size_t k,
                 const TokenTable& vocab);

struct RankEmit {
  std::optional<std::size_t> position;  // 0-based within top-K, none if absent
  TokenId best_token = 0;
  std::vector<std::string> skipped;
};

RankEmit rank_emit(const TensorMatrix& dec, const TensorMatrix& unembed, FeatureId f, const LexemeSet& lex,
                   std::size_t k, const TokenTable& vocab);

struct CandidateScore {
  FeatureId feature;
  double mean_logit = 0.0;
  std::optional<std::size_t> rank_emit;
  double drift_penalty = 0.0;
  double final_score = 0.0;  // mean_logit - drift_penalty
};

json to_json(const CandidateScore& c);

struct ScanOptions {
  std::size_t top_n = 15;
  std::optional<LexemeSet> drift;
  double drift_lambda = 1.0;
  std::size_t k = 25;  // top-K used for the rank_emit column
  std::size_t block = 4096;
  std::size_t threads = 1;
};

// Every feature scored; index i holds feature i.
std::vector<CandidateScore> score_all_features(const TensorMatrix& dec, const TensorMatrix& unembed,
                                               const LexemeSet& lex, const TokenTable& vocab,
                                               const ScanOptions& opts);

// Top-n features by final_score, descending, ties by ascending feature id.
std::vector<CandidateScore> scan(const TensorMatrix& dec, const TensorMatrix& unembed, const LexemeSet& lex,
                                 const TokenTable& vocab, const ScanOptions& opts);

enum class ContrastFlag { normal, infinite, degenerate };

struct ContrastEntry {
  FeatureId feature;
  double z = 0.0;
  double mean_gap = 0.0;
  ContrastFlag flag = ContrastFlag::normal;
};

// Pooled two-sample z of mean(a) - mean(b) per feature. Zero pooled variance
// with a nonzero gap yields +/-inf flagged `infinite`; zero variance and zero
// gap yields z = 0 flagged `degenerate`, appended after all other features.
std::vector<ContrastEntry> contrastive_rank(const TensorMatrix& acts_a, const TensorMatrix& acts_b);

// Suffix tokens treated as morpheme markers by mechanism_tag.
const std::vector<std::string>& default_suffixes();

MechanismTag mechanism_tag(const TopKResult& tk, const LexemeSet& lex,
                           const std::vector<std::string>& suffixes = default_suffixes());

// Strips tokenizer space markers (" ", "Ġ", "▁") and lowercases ASCII.
std::string normalize_token(std::string_view token);

}  // namespace gatescope
