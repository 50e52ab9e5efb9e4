#include "gatescope/lexeme.hpp"

#include <memory>
#include <set>

#include <unicode/brkiter.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include "gatescope/assets.hpp"
#include "gatescope/error.hpp"

namespace gatescope {
namespace {

bool is_apostrophe(UChar32 c) { return c == 0x27 || c == 0x2019 || c == 0x02BC; }

std::vector<WordFormList> load_sets(std::string_view name) {
  auto sets = lexeme_sets_from_json(asset_json(name));
  return sets;
}

struct MarkerTable {
  std::vector<std::string> languages;
  std::map<std::string, std::vector<std::string>, std::less<>> lists;
  std::map<std::string, std::set<std::string>, std::less<>> sets;
};

const MarkerTable& marker_table() {
  static const MarkerTable table = [] {
    MarkerTable t;
    for (const char* lang : {"en", "fr", "es", "de"}) {
      const json j = asset_json(std::string("markers/") + lang + ".json");
      auto words = j.at("markers").get<std::vector<std::string>>();
      t.languages.emplace_back(lang);
      t.sets[lang] = std::set<std::string>(words.begin(), words.end());
      t.lists[lang] = std::move(words);
    }
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  if (text.empty()) return words;
  const icu::UnicodeString ustr = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  UErrorCode status = U_ZERO_ERROR;
  std::unique_ptr<icu::BreakIterator> it(icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
  if (U_FAILURE(status)) throw Error("word segmentation unavailable: " + std::string(u_errorName(status)));
  it->setText(ustr);

  auto emit = [&](const icu::UnicodeString& piece) {
    if (piece.isEmpty()) return;
    icu::UnicodeString lower(piece);
    lower.toLower(icu::Locale::getRoot());
    std::string out;
    lower.toUTF8String(out);
    words.push_back(std::move(out));
  };

  int32_t start = it->first();
  for (int32_t end = it->next(); end != icu::BreakIterator::DONE; start = end, end = it->next()) {
    const int32_t rule = it->getRuleStatus();
    // Letters, numbers, kana and ideographs; skip spaces and punctuation.
    if (rule < UBRK_WORD_NONE_LIMIT) continue;
    icu::UnicodeString seg = ustr.tempSubStringBetween(start, end);
    int32_t piece_start = 0;
    for (int32_t i = 0; i < seg.length();) {
      const UChar32 c = seg.char32At(i);
      const int32_t next = seg.moveIndex32(i, 1);
      if (is_apostrophe(c)) {
        emit(seg.tempSubStringBetween(piece_start, i));
        piece_start = next;
      }
      i = next;
    }
    emit(seg.tempSubStringBetween(piece_start, seg.length()));
  }
  return words;
}

LemmaMatcher::LemmaMatcher(const WordFormList& wf) {
  for (const auto& f : wf.forms) {
    auto lowered = split_words(f);
    if (lowered.size() == 1) canonical_.emplace(lowered.front(), f);
  }
}

LemmaCount LemmaMatcher::count(std::span<const std::string> words) const {
  LemmaCount out;
  for (const auto& w : words) {
    auto it = canonical_.find(w);
    if (it == canonical_.end()) continue;
    ++out.count;
    ++out.per_form[it->second];
  }
  return out;
}

LemmaCount count_lemmas(std::string_view text, const WordFormList& wf) {
  return LemmaMatcher(wf).count(split_words(text));
}

const std::vector<std::string>& marker_languages() { return marker_table().languages; }

const std::vector<std::string>& markers(std::string_view lang) {
  const auto& t = marker_table();
  auto it = t.lists.find(lang);
  if (it == t.lists.end()) throw Error("unsupported language code '" + std::string(lang) + "'");
  return it->second;
}

std::optional<double> lang_purity(std::string_view text, std::string_view lang) {
  const auto& t = marker_table();
  auto it = t.sets.find(lang);
  if (it == t.sets.end()) throw Error("unsupported language code '" + std::string(lang) + "'");
  const auto& native = it->second;
  const auto& english = t.sets.find("en")->second;
  std::size_t native_hits = 0, english_hits = 0;
  for (const auto& w : split_words(text)) {
    if (native.count(w)) ++native_hits;
    if (english.count(w)) ++english_hits;
  }
  if (lang == "en") return english_hits > 0 ? std::optional<double>(1.0) : std::nullopt;
  if (native_hits + english_hits == 0) return std::nullopt;
  return static_cast<double>(native_hits) / static_cast<double>(native_hits + english_hits);
}

const std::vector<WordFormList>& base12_word_forms() {
  static const auto sets = load_sets("lexemes/en_base12.json");
  return sets;
}

const std::vector<WordFormList>& ck15_word_forms() {
  static const auto sets = load_sets("lexemes/en_ck15.json");
  return sets;
}

const WordFormList* find_word_forms(std::string_view emotion) {
  for (const auto* group : {&base12_word_forms(), &ck15_word_forms()})
    for (const auto& wf : *group)
      if (wf.emotion == emotion) return &wf;
  return nullptr;
}

}  // namespace gatescope
