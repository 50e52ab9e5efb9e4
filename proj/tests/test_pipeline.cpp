#include <doctest.h>

#include <set>
#include <tuple>

#include "gatescope/config.hpp"
#include "gatescope/judge_clients.hpp"
#include "gatescope/pipeline.hpp"
#include "gatescope/report.hpp"
#include "gatescope/toy.hpp"
#include "helpers.hpp"

using namespace gatescope;

namespace {

struct Run {
  RunReport report;
  std::string bytes;
};

Run discover_default(const std::function<void(RunPlan&)>& tweak = {}) {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  if (tweak) tweak(plan);
  const auto judges = scripted_panel();
  Run r;
  r.report = discover(plan, fx->decoder, fx->unembedding, fx->vocab, backend, judges);
  r.bytes = to_json(r.report).dump();
  return r;
}

const Run& baseline() {
  static const Run r = discover_default();
  return r;
}

const CandidateReport* candidate(const RunReport& r, const std::string& emotion, std::uint32_t f) {
  for (const auto& c : r.candidates)
    if (c.emotion == emotion && c.feature.index == f) return &c;
  return nullptr;
}

std::set<std::pair<std::string, std::uint32_t>> confirmed_set(const RunReport& r) {
  std::set<std::pair<std::string, std::uint32_t>> s;
  for (const auto& g : r.confirmed) s.insert({g.emotion, g.recipe.components.front().feature.index});
  return s;
}

const std::set<std::pair<std::string, std::uint32_t>> kPlanted{
    {"calmness", 5}, {"sadness", 12}, {"anger", 19}, {"awe", 27}, {"horror", 41}};

JudgePtr judge_fn(const std::string& id, ScriptedJudge::Script s) { return std::make_shared<ScriptedJudge>(id, s); }

std::vector<JudgePtr> panel_of(const std::string& id, const ScriptedJudge::Script& s) {
  std::vector<JudgePtr> p;
  for (int i = 0; i < 5; ++i) p.push_back(judge_fn(id + std::to_string(i), s));
  return p;
}

std::string without_parallelism(const std::string& bytes) {
  json j = json::parse(bytes);
  j["plan"].erase("parallelism");
  j["plan"]["panel"].erase("parallelism");
  return j.dump();
}

}  // namespace

TEST_CASE("discover confirms exactly the planted gates") {
  const auto& r = baseline().report;
  CHECK(confirmed_set(r) == kPlanted);
  for (const auto& g : r.confirmed) {
    CHECK(g.hits.total == 3);
    CHECK(g.decoder_norms.size() == 1);
    CHECK(g.mechanism_tag == MechanismTag::lexical);
    CHECK(g.alpha_trajectory.size() == 4);
  }
  CHECK_FALSE(r.controls.empty());
  CHECK(r.budget.generations > 0);
  CHECK(r.budget.missing_cells == 0);
  CHECK(r.stats.contains("null_model"));
}

TEST_CASE("discover: the weak horror plant fails at alpha 8 and is rescued at 16") {
  const auto& r = baseline().report;
  const auto* c = candidate(r, "horror", 41);
  REQUIRE(c);
  CHECK(c->status == GateStatus::rescued);
  CHECK(c->chosen_alpha == 16.0);
  REQUIRE(c->alphas.size() == 4);
  CHECK(c->alphas[1].alpha == 8.0);
  CHECK_FALSE(c->alphas[1].specificity.confirmed);
  CHECK(c->alphas[3].alpha == 16.0);
  CHECK(c->alphas[3].specificity.confirmed);
  for (const auto& g : r.confirmed) {
    if (g.emotion != "horror") continue;
    CHECK(g.status == GateStatus::rescued);
    bool has8 = false, has16 = false;
    for (const auto& p : g.alpha_trajectory) {
      has8 = has8 || (p.alpha == 8.0 && p.hits.passed == 0);
      has16 = has16 || (p.alpha == 16.0 && p.hits.passed == 3);
    }
    CHECK(has8);
    CHECK(has16);
  }
}

TEST_CASE("discover: the drift confounder is rejected only with drift-aware rating") {
  const auto& plain = baseline().report;
  const auto* conf = candidate(plain, "sadness", 33);
  REQUIRE(conf);
  CHECK(conf->survived_stage2);
  CHECK(conf->status == GateStatus::failed);

  const auto drift = discover_default([](RunPlan& p) { p.drift_aware = true; });
  CHECK(confirmed_set(drift.report) == kPlanted);
  const auto* c = candidate(drift.report, "sadness", 33);
  CHECK((c == nullptr || !c->survived_stage2));
  for (const auto& e : drift.report.emotions)
    if (e.emotion == "sadness") {
      CHECK(e.drift == "boredom");
      for (auto f : e.stage3) CHECK(f.index != 33);
    }
}

TEST_CASE("discover: audited noise features are never confirmed") {
  const auto fx = testutil::default_fixture();
  const auto noise = fx->plan.noise_features();
  const auto run = discover_default([&](RunPlan& p) {
    p.drift_aware = true;
    p.lexemes.resize(2);
    for (std::size_t i = 0; i < noise.size(); i += 4) p.bypass.push_back(FeatureId{noise[i]});
  });
  CHECK(confirmed_set(run.report).size() == 2);
  std::size_t bypassed = 0;
  for (const auto& c : run.report.candidates) {
    if (!c.bypassed) continue;
    ++bypassed;
    CHECK(c.status != GateStatus::confirmed);
    CHECK(c.status != GateStatus::rescued);
  }
  CHECK(bypassed >= 2 * 14);
}

TEST_CASE("discover is deterministic and independent of parallelism") {
  const auto& a = baseline();
  CHECK(discover_default().bytes == a.bytes);
  const auto want = without_parallelism(a.bytes);
  CHECK(without_parallelism(discover_default([](RunPlan& p) {
          p.parallelism = 1;
          p.panel.parallelism = 1;
        }).bytes) == want);
  CHECK(without_parallelism(discover_default([](RunPlan& p) { p.parallelism = 9; }).bytes) == want);
}

TEST_CASE("discover: every cell appears exactly once") {
  const auto& r = baseline().report;
  std::set<std::tuple<int, std::string, std::uint32_t, double, std::int64_t>> keys;
  for (const auto& c : r.cells) {
    CHECK(keys.insert({static_cast<int>(c.role), c.emotion, c.feature.index, c.alpha, c.seed}).second);
    CHECK(c.outcome != CellOutcome::missing);
  }
  CHECK(keys.size() == r.cells.size());
  CHECK(r.cells.size() == r.budget.generations);
  std::size_t controls = 0;
  for (const auto& c : r.cells) controls += c.role == CellRole::control;
  const auto& plan = r.plan;
  CHECK(controls == plan.lexemes.size() * plan.controls.size() * plan.alphas.size() * plan.generation.seeds.size());
}

TEST_CASE("discover: no Stage-2 survivors means no Stage-3 cost") {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  const auto judges = panel_of("low", [](const JudgeQuery& q) {
    return q.purpose == QueryPurpose::rate ? "2" : "6";
  });
  const auto r = discover(plan, fx->decoder, fx->unembedding, fx->vocab, backend, judges);
  CHECK(r.confirmed.empty());
  for (const auto& e : r.emotions) {
    CHECK(e.stage3.empty());
    CHECK_FALSE(e.note.empty());
  }
  for (const auto& c : r.cells) CHECK(c.role == CellRole::control);
  CHECK(r.budget.rating_calls > 0);
}

TEST_CASE("discover: a gate the controls match is demoted") {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  plan.lexemes.resize(1);
  const auto t = JudgeTemplate::builtin(JudgeProtocol::forced12);
  const auto judges = panel_of("yes-man", [t](const JudgeQuery& q) {
    return q.purpose == QueryPurpose::rate ? std::string("10") : *t.answer_for(q.emotion);
  });
  const auto r = discover(plan, fx->decoder, fx->unembedding, fx->vocab, backend, judges);
  CHECK(r.confirmed.empty());
  REQUIRE_FALSE(r.candidates.empty());
  for (const auto& c : r.candidates) CHECK(c.status == GateStatus::demoted);
}

TEST_CASE("discover: judge outages become missing cells, never dropped ones") {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  plan.lexemes.resize(1);
  auto panel = scripted_panel();
  const auto judges = panel_of("down", [panel](const JudgeQuery& q) -> std::string {
    if (q.purpose == QueryPurpose::rate) return panel[0]->ask(q).raw;
    throw std::runtime_error("503");
  });
  const auto r = discover(plan, fx->decoder, fx->unembedding, fx->vocab, backend, judges);
  CHECK(r.confirmed.empty());
  CHECK_FALSE(r.cells.empty());
  for (const auto& c : r.cells) CHECK(c.outcome == CellOutcome::missing);
  CHECK(r.budget.missing_cells == r.cells.size());
}

TEST_CASE("catalog and markdown summary from a report") {
  const auto& r = baseline().report;
  const auto cat = catalog_from_report(r, "toy-sae");
  CHECK(cat.records.size() == 5);
  CHECK(parse_catalog(serialize_catalog(cat)) == cat);
  CHECK_NOTHROW(cat.validate_features(kToyDSae));

  const json j = json::parse(baseline().bytes);
  const auto md = render_markdown(j);
  for (const char* s : {"Stage 3", "horror", "RESCUED", "Controls", "Budget"})
    CHECK_MESSAGE(md.find(s) != std::string::npos, s);
  const auto svg = plot_hit_rate_svg(j);
  CHECK(svg.starts_with("<svg"));
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(plot_norm_histogram_svg(testutil::default_fixture()->decoder).find("rect") != std::string::npos);
}

TEST_CASE("validate_recipe: the compositional joy recipe passes, its parts do not") {
  const auto fx = std::make_shared<const ToyFixture>(build_toy_fixture(compositional_toy_plan()));
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  plan.protocol = JudgeProtocol::forced15;
  const auto judges = scripted_panel();
  const auto* joy = find_word_forms("joy");
  REQUIRE(joy);

  const SteeringRecipe joint{{{FeatureId{45}, 8.0}, {FeatureId{52}, 8.0}}, "joy_mix"};
  const auto rep = validate_recipe(joint, *joy, plan, fx->decoder, backend, judges);
  CHECK(rep.confirmed);
  CHECK(rep.total_votes == 15);
  CHECK(rep.needed_votes == 11);
  CHECK(rep.target_votes >= 11);
  CHECK(rep.control_cells.size() == plan.controls.size() * 3);

  for (std::uint32_t f : {45u, 52u}) {
    const SteeringRecipe one{{{FeatureId{f}, rep.joint_norm}}, "part"};
    const auto single = validate_recipe(one, *joy, plan, fx->decoder, backend, judges);
    CHECK_FALSE(single.confirmed);
    CHECK(single.target_votes < 11);
  }
}

TEST_CASE("validate_recipe: 12 of 15 with 3 crosstalk votes is confirmed") {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  // Judges read the text: calm words mean calmness. One judge always says sadness.
  std::vector<JudgePtr> judges;
  for (int i = 0; i < 4; ++i)
    judges.push_back(judge_fn("j" + std::to_string(i), [](const JudgeQuery& q) {
      return count_lemmas(q.scene, *find_word_forms("calmness")).count > 0 ? "10" : "6";
    }));
  judges.push_back(judge_fn("contrarian", [](const JudgeQuery&) { return "7"; }));
  const SteeringRecipe r{{{FeatureId{5}, 12.0}}, "calm"};
  const auto rep = validate_recipe(r, *find_word_forms("calmness"), plan, fx->decoder, backend, judges);
  CHECK(rep.target_votes == 12);
  CHECK(rep.total_votes == 15);
  CHECK(rep.crosstalk.at("Sadness") == 3);
  CHECK(rep.confirmed);
  CHECK(rep.coherence_warning == std::nullopt);

  plan.coherence_threshold = 10.0;
  const auto warned = validate_recipe(r, *find_word_forms("calmness"), plan, fx->decoder, backend, judges);
  CHECK(warned.coherence_warning.has_value());
  const auto strict = validate_recipe(r, *find_word_forms("calmness"), plan, fx->decoder, backend, judges, {13, 15});
  CHECK_FALSE(strict.confirmed);
}

TEST_CASE("cross-lingual taxonomy") {
  using V = std::vector<std::pair<std::string, HitCount>>;
  CHECK(classify_mode(V{{"en", {2, 2}}, {"fr", {0, 2}}, {"es", {0, 2}}, {"de", {0, 2}}}) ==
        CrossLingualMode::en_anchored);
  CHECK(classify_mode(V{{"en", {2, 2}}, {"fr", {2, 2}}, {"es", {2, 2}}, {"de", {2, 2}}}) ==
        CrossLingualMode::universal);
  CHECK(classify_mode(V{{"en", {2, 2}}, {"fr", {1, 2}}, {"es", {2, 2}}, {"de", {2, 2}}}) ==
        CrossLingualMode::universal);
  CHECK(classify_mode(V{{"en", {2, 2}}, {"fr", {0, 2}}, {"es", {2, 2}}, {"de", {1, 2}}}) ==
        CrossLingualMode::partial);
  CHECK(classify_mode(V{{"en", {0, 2}}, {"fr", {0, 2}}}) == CrossLingualMode::none);
}

TEST_CASE("crosslingual_eval: EN-anchored gates, purity flags and missing assets") {
  const auto fx = testutil::default_fixture();
  ToyBackend backend(fx);
  RunPlan plan = toy_run_plan(fx->plan);
  plan.generation.seeds = kTwoSeeds;
  CatalogFile cat;
  cat.model_id = "toy";
  cat.sae_id = "toy-sae";
  cat.created = "2026-10-18T00:00:00Z";
  GateRecord rec;
  rec.emotion = "horror";
  rec.recipe = {{{FeatureId{41}, 16.0}}, "f41"};
  rec.decoder_norms = {1.0};
  rec.hits = {3, 3};
  cat.records.push_back(rec);

  const std::map<std::string, LanguageAssets> assets{
      {"en", {"she walked into the room in the evening", ""}},
      {"fr", {"elle est entr\xc3\xa9" "e dans la pi\xc3\xa8" "ce le soir", "Sc\xc3\xa8" "ne : {scene}\nR\xc3\xa9ponse :"}},
      {"de", {"sie ging am Abend in das Zimmer", "Szene: {scene}\nAntwort:"}}};
  const auto judges = panel_of("en-reader", [](const JudgeQuery& q) {
    return q.template_text.starts_with("Read the scene") ? "4" : "6";
  });
  const auto rep =
      crosslingual_eval(cat, {"en", "fr", "de", "es"}, assets, plan, fx->decoder, backend, judges);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].mode == CrossLingualMode::en_anchored);
  REQUIRE(rep.cells.size() == 4);
  CHECK(rep.cells[0].hits == HitCount{2, 2});
  CHECK(rep.cells[1].hits == HitCount{0, 2});
  CHECK(rep.cells[3].missing);
  CHECK_FALSE(rep.cells[3].note.empty());

  // Every judge hits, but the toy model answers in English: hit and purity flag.
  const auto yes = panel_of("all", [](const JudgeQuery&) { return "4"; });
  const auto leak = crosslingual_eval(cat, {"en", "de"}, assets, plan, fx->decoder, backend, yes);
  REQUIRE(leak.cells.size() == 2);
  CHECK(leak.rows[0].mode == CrossLingualMode::universal);
  CHECK(leak.cells[1].hits.passed == 2);
  CHECK(leak.cells[1].purity_flag);
  CHECK(leak.cells[1].purity.value_or(0.0) < 0.5);
  CHECK_FALSE(leak.cells[0].purity_flag);
}

TEST_CASE("run plan JSON round trip and validation") {
  const auto fx = testutil::default_fixture();
  const RunPlan plan = toy_run_plan(fx->plan, 3);
  CHECK(plan.controls.size() == 2);
  CHECK(plan.drift.at("sadness") == "boredom");
  const auto back = run_plan_from_json(to_json(plan));
  CHECK(to_json(back) == to_json(plan));
  CHECK(toy_run_plan(fx->plan, 3).controls == plan.controls);

  RunPlan bad = plan;
  bad.controls.resize(1);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = plan;
  bad.alphas = {8, 4};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = plan;
  bad.generation.seeds = {101, 999};
  CHECK_THROWS_AS(bad.validate(), Error);

  const auto over = overlay_plan(plan, json{{"alphas", {8, 16}}, {"drift_aware", true}});
  CHECK(over.alphas == std::vector<double>{8, 16});
  CHECK(over.drift_aware);
  CHECK(over.lexemes.size() == plan.lexemes.size());
  CHECK_THROWS_AS(overlay_plan(plan, json{{"alphaz", 1}}), Error);
}
