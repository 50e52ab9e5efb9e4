#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatescope/catalog.hpp"
#include "gatescope/types.hpp"

namespace gatescope {

// Judge prompt with {scene}, {emotion} and {definition} slots.
struct JudgeTemplate {
  JudgeProtocol kind = JudgeProtocol::forced12;
  std::string text;
  std::vector<std::string> answer_space;   // "1".."12", "1".."15", or {"yes","no"}
  std::vector<std::string> option_labels;  // forced kinds: label of answer i+1

  // The shipped English templates.
  static JudgeTemplate builtin(JudgeProtocol kind);
  // A translated or edited template; must hold exactly one {scene} slot.
  static JudgeTemplate custom(JudgeProtocol kind, std::string text);

  bool forced() const { return kind == JudgeProtocol::forced12 || kind == JudgeProtocol::forced15; }
  // Answer that counts as the emotion: its option number for forced kinds,
  // "yes" for yes/no kinds. nullopt when the emotion is not an option.
  std::optional<std::string> answer_for(std::string_view emotion) const;
  // Human label of an answer ("7" -> "Sadness").
  std::string label_of(std::string_view answer) const;
};

// Byte-exact instantiation. Yes/no kinds need emotion and definition;
// forced kinds carry their definitions inline and ignore both.
std::string render(const JudgeTemplate& t, std::string_view scene, std::string_view emotion = {},
                   std::string_view definition = {});

enum class QueryPurpose { classify, rate };

struct JudgeQuery {
  QueryPurpose purpose = QueryPurpose::classify;
  JudgeProtocol protocol = JudgeProtocol::forced12;
  std::string template_text;  // unrendered, part of the cache key
  std::string prompt;         // what a live judge receives
  std::string scene;
  std::string emotion;
  std::string definition;
  std::string drift;                // rate: drift-aware variant when non-empty
  std::vector<std::string> tokens;  // rate: the candidate's top tokens
  std::string language = "en";
};

struct JudgeReply {
  std::string raw;
  std::optional<std::string> error;  // transport failure
};

// Judge clients must tolerate concurrent ask() calls.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string id() const = 0;
  virtual JudgeReply ask(const JudgeQuery& q) const = 0;
};

using JudgePtr = std::shared_ptr<const JudgeClient>;

struct JudgeVerdict {
  std::string judge_id;
  std::string raw;
  std::optional<std::string> parsed;  // invalid when empty
  std::optional<std::string> error;
};

// Exact match after trimming whitespace. Nothing else is coerced.
std::optional<std::string> parse_answer(std::string_view raw, std::span<const std::string> answer_space);

struct PanelConfig {
  std::size_t hit_threshold = 3;  // of panel size, default 3 of 5
  std::size_t parallelism = 5;
};

struct JudgePanelResult {
  std::vector<JudgeVerdict> verdicts;
  std::optional<std::string> majority;
  std::string target;
  bool is_hit = false;
  std::size_t target_votes = 0;
  std::size_t valid_votes = 0;
};

// Majority: the unique most-voted answer with at least hit_threshold votes.
// Invalid verdicts count for nobody.
JudgePanelResult aggregate_panel(std::vector<JudgeVerdict> verdicts, const std::string& target,
                                 std::size_t hit_threshold);

JudgePanelResult ask_panel(const JudgeQuery& base, std::span<const std::string> answer_space,
                           const std::string& target, std::span<const JudgePtr> judges, const PanelConfig& cfg);

// Convenience: render the template for the scene and ask the panel.
JudgePanelResult ask_panel(std::string_view scene, const JudgeTemplate& t, std::string_view emotion,
                           std::string_view definition, std::span<const JudgePtr> judges, const PanelConfig& cfg);

// Target needs target_num/den of the seeds; a competing answer reaching
// other_num/den of the seeds breaks the gate. At S=7: >= 4 and < 2.
struct SpecificityRule {
  int target_num = 4;
  int other_num = 2;
  int den = 7;

  std::size_t target_needed(std::size_t seeds) const;
  // Smallest competing count that breaks specificity.
  std::size_t other_breaking(std::size_t seeds) const;
};

struct SpecificityResult {
  bool confirmed = false;
  std::size_t target_majorities = 0;
  std::size_t max_other = 0;
  std::string max_other_answer;
  std::size_t seeds = 0;
};

// non_competing answers (e.g. "no") never count as a rival emotion.
SpecificityResult specificity(std::span<const JudgePanelResult> per_seed, const SpecificityRule& rule = {},
                              std::span<const std::string> non_competing = {});

// One control-feature panel (missing when generation or every judge failed).
struct ControlObservation {
  FeatureId feature;
  double alpha = 0.0;
  std::int64_t seed = 0;
  std::optional<JudgePanelResult> panel;
};

struct ControlProfile {
  FeatureId feature;
  double alpha = 0.0;
  std::size_t cells = 0;
  std::size_t missing = 0;
  std::map<std::string, std::size_t> majority_counts;
};

struct ControlReport {
  std::vector<ControlProfile> profiles;  // one per (feature, alpha)
  // Answers some control reached at the specificity target threshold, e.g.
  // incoherent output judged "confusion".
  std::vector<std::string> attractors;

  // Fraction of control cells at alpha whose majority is `answer`.
  double rate(std::string_view answer, double alpha) const;
};

ControlReport summarize_controls(std::span<const ControlObservation> obs, const SpecificityRule& rule = {},
                                 std::span<const std::string> non_competing = {});

// Stage-2 purity rating prompt and its strict 1-10 parser.
std::string render_purity(std::string_view emotion, std::string_view definition,
                          std::span<const std::string> tokens, std::string_view drift = {});
std::optional<int> parse_rating(std::string_view raw);

json to_json(const JudgeVerdict& v);
json to_json(const JudgePanelResult& r);
json to_json(const SpecificityResult& s);
json to_json(const ControlReport& r);

}  // namespace gatescope
