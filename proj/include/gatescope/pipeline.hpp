#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gatescope/backend.hpp"
#include "gatescope/catalog.hpp"
#include "gatescope/judge.hpp"
#include "gatescope/lens.hpp"
#include "gatescope/stats.hpp"

namespace gatescope {

struct RunPlan {
  std::vector<LexemeSet> lexemes;
  // emotion -> drift emotion, consulted when drift_aware is set.
  std::map<std::string, std::string> drift;
  std::vector<double> alphas{4, 8, 12, 16};
  double reference_alpha = 12;
  GenerationConfig generation;
  PanelConfig panel;
  SpecificityRule specificity;
  JudgeProtocol protocol = JudgeProtocol::forced12;
  std::string scene_prompt = "she walked into the room in the evening and looked across the table";
  std::size_t stage2_cutoff = 15;  // scan candidates that get rated
  std::size_t causal_top = 2;      // rated candidates that get steered
  int min_rating = 6;
  std::size_t rating_tokens = 10;
  bool drift_aware = false;
  double drift_lambda = 1.0;
  std::vector<FeatureId> controls;
  // Features sent to Stage 3 even without surviving Stage 2 (audits).
  std::vector<FeatureId> bypass;
  std::size_t parallelism = 4;
  std::size_t scan_threads = 1;
  std::uint64_t seed = 0;  // bootstrap resampling
  std::optional<double> coherence_threshold;

  void validate() const;
};

json to_json(const RunPlan& p);
RunPlan run_plan_from_json(const json& j);

enum class CellOutcome { hit, partial, fail, missing };
std::string_view to_string(CellOutcome o);

enum class CellRole { candidate, control };

struct Cell {
  CellRole role = CellRole::candidate;
  std::string emotion;
  FeatureId feature;
  double alpha = 0.0;
  std::int64_t seed = 0;
  CellOutcome outcome = CellOutcome::missing;
  std::string text;
  double steering_norm = 0.0;
  std::optional<JudgePanelResult> panel;
  std::optional<std::string> error;
};

json to_json(const Cell& c);

struct Rating {
  FeatureId feature;
  std::vector<std::string> tokens;
  std::vector<std::string> raw;  // one per judge
  std::optional<int> rating;     // lower median of the valid ratings
};

struct AlphaSummary {
  double alpha = 0.0;
  HitCount hits;
  SpecificityResult specificity;
  double control_rate = 0.0;
  bool controls_pass = true;
};

struct CandidateReport {
  std::string emotion;
  FeatureId feature;
  CandidateScore scan;
  std::optional<int> rating;
  bool survived_stage2 = false;
  bool bypassed = false;
  MechanismTag mechanism = MechanismTag::unknown;
  std::vector<AlphaSummary> alphas;
  GateStatus status = GateStatus::failed;
  std::optional<double> chosen_alpha;
  std::string note;
  double p_value = 1.0;
  bool fdr_reject = false;
  Interval hit_rate_ci;
};

struct EmotionReport {
  std::string emotion;
  std::string target_answer;
  std::optional<std::string> drift;
  std::vector<CandidateScore> scan;
  std::vector<Rating> ratings;
  std::vector<FeatureId> stage3;
  std::string note;
};

struct Budget {
  std::size_t generations = 0;
  std::size_t judge_calls = 0;
  std::size_t rating_calls = 0;
  std::size_t missing_cells = 0;
};

struct RunReport {
  RunPlan plan;
  BackendDescriptor backend;
  std::vector<EmotionReport> emotions;
  std::vector<CandidateReport> candidates;
  std::vector<Cell> cells;  // candidate and control cells, each exactly once
  std::map<std::string, ControlReport> controls;  // per emotion
  std::vector<GateRecord> confirmed;
  Budget budget;
  json stats;
};

json to_json(const RunReport& r);

// Stage 1 scan, Stage 2 purity rating, Stage 3 steering with controls.
RunReport discover(const RunPlan& plan, const TensorMatrix& dec, const TensorMatrix& unembed, const TokenTable& vocab,
                   const Backend& backend, std::span<const JudgePtr> judges);

// Catalog of the confirmed and rescued gates of a report.
CatalogFile catalog_from_report(const RunReport& r, std::string sae_id);

struct RecipeReport {
  SteeringRecipe recipe;
  std::string emotion;
  std::string target_answer;
  double joint_norm = 0.0;
  std::vector<Cell> cells;
  std::size_t target_votes = 0;
  std::size_t total_votes = 0;
  std::size_t needed_votes = 0;
  std::map<std::string, std::size_t> crosstalk;  // label -> votes
  std::size_t control_target_votes = 0;          // best control
  std::vector<Cell> control_cells;
  bool confirmed = false;
  std::optional<std::string> coherence_warning;
};

json to_json(const RecipeReport& r);

struct RecipeThreshold {
  int num = 11;
  int den = 15;
};

// Joint-steered generations judged against the target; individual votes
// are counted, so 3 seeds x 5 judges gives 15.
RecipeReport validate_recipe(const SteeringRecipe& recipe, const LexemeSet& target, const RunPlan& plan,
                             const TensorMatrix& dec, const Backend& backend, std::span<const JudgePtr> judges,
                             RecipeThreshold threshold = {});

// Control cells only, for every emotion and alpha of the plan.
std::map<std::string, ControlReport> run_controls(const RunPlan& plan, const TensorMatrix& dec, const Backend& backend,
                                                  std::span<const JudgePtr> judges, std::vector<Cell>* cells = nullptr);

struct LanguageAssets {
  std::string scene_prompt;
  std::string template_text;  // empty -> the shipped EN template of the plan's protocol
};

struct CrossLingualCell {
  std::string emotion;
  std::string label;
  std::string language;
  HitCount hits;
  std::optional<double> purity;  // mean over seeds with markers
  bool missing = false;
  bool purity_flag = false;      // judged a hit while the surface language leaked
  std::vector<std::string> texts;
  std::string note;
};

enum class CrossLingualMode { universal, partial, en_anchored, none };
std::string_view to_string(CrossLingualMode m);

struct CrossLingualRow {
  std::string emotion;
  std::string label;
  CrossLingualMode mode = CrossLingualMode::none;
};

struct CrossLingualReport {
  std::vector<CrossLingualCell> cells;
  std::vector<CrossLingualRow> rows;
};

json to_json(const CrossLingualReport& r);

// Per-language hit counts over a list of {language -> hits, total}.
CrossLingualMode classify_mode(const std::vector<std::pair<std::string, HitCount>>& per_language);

CrossLingualReport crosslingual_eval(const CatalogFile& catalog, const std::vector<std::string>& languages,
                                     const std::map<std::string, LanguageAssets>& assets, const RunPlan& plan,
                                     const TensorMatrix& dec, const Backend& backend,
                                     std::span<const JudgePtr> judges, double purity_floor = 0.5);

}  // namespace gatescope
