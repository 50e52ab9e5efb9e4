#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatescope/types.hpp"

namespace gatescope {

// Explicit surface forms for one emotion (bored, boredom, boring, bore).
using WordFormList = LexemeSet;

struct LemmaCount {
  std::size_t count = 0;
  std::map<std::string, std::size_t> per_form;
};

// Lowercased words from Unicode word segmentation. Elisions are split at the
// apostrophe, so "l'ennui" yields "l" and "ennui".
std::vector<std::string> split_words(std::string_view text);

// Case-insensitive whole-word matches of the exact forms. A bare prefix is
// never a match.
LemmaCount count_lemmas(std::string_view text, const WordFormList& wf);

// count_lemmas with the form list prepared once, for text already split by
// split_words.
class LemmaMatcher {
 public:
  explicit LemmaMatcher(const WordFormList& wf);
  LemmaCount count(std::span<const std::string> words) const;

 private:
  std::map<std::string, std::string, std::less<>> canonical_;  // lowercased -> form as listed
};

// Languages with shipped function-word marker lists.
const std::vector<std::string>& marker_languages();
const std::vector<std::string>& markers(std::string_view lang);

// prompt-language markers / (prompt-language + English markers). 1.0 when no
// English markers occur, nullopt when there are no markers at all. For "en"
// the ratio is 1.0 whenever an English marker occurs.
std::optional<double> lang_purity(std::string_view text, std::string_view lang);

// Shipped EN word-form lists: the 12 base emotions and the 15 extension emotions.
const std::vector<WordFormList>& base12_word_forms();
const std::vector<WordFormList>& ck15_word_forms();
const WordFormList* find_word_forms(std::string_view emotion);

}  // namespace gatescope
