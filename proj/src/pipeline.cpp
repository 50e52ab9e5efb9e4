#include "gatescope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gatescope/assets.hpp"
#include "gatescope/error.hpp"
#include "gatescope/lexeme.hpp"
#include "gatescope/parallel.hpp"
#include "gatescope/steer.hpp"
#include "json_util.hpp"

namespace gatescope {

void RunPlan::validate() const {
  if (lexemes.empty()) throw Error("run plan: no lexeme sets");
  for (const auto& l : lexemes) l.validate();
  if (alphas.empty()) throw Error("run plan: alphas must not be empty");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!std::isfinite(alphas[i])) throw Error("run plan: non-finite alpha");
    if (i > 0 && !(alphas[i] > alphas[i - 1])) throw Error("run plan: alphas must be strictly increasing");
  }
  if (!std::isfinite(reference_alpha)) throw Error("run plan: non-finite reference alpha");
  generation.validate();
  for (auto s : generation.seeds)
    if (std::find(kSevenSeeds.begin(), kSevenSeeds.end(), s) == kSevenSeeds.end())
      throw Error("run plan: seed " + std::to_string(s) + " is not in the seed pool {101, 202, ..., 707}");
  if (panel.hit_threshold == 0) throw Error("run plan: hit threshold must be >= 1");
  if (causal_top == 0) throw Error("run plan: causal_top must be >= 1");
  if (stage2_cutoff == 0) throw Error("run plan: stage2_cutoff must be >= 1");
  if (controls.size() < 2) throw Error("run plan: at least 2 control features are required");
  if (rating_tokens == 0) throw Error("run plan: rating_tokens must be >= 1");
  if (min_rating < 1 || min_rating > 10) throw Error("run plan: min_rating must be in 1..10");
  if (parallelism == 0 || panel.parallelism == 0) throw Error("run plan: parallelism must be >= 1");
  if (specificity.den <= 0 || specificity.target_num <= 0 || specificity.other_num <= 0)
    throw Error("run plan: specificity fractions must be positive");
}

namespace {

std::vector<std::uint32_t> ids_of(const std::vector<FeatureId>& v) {
  std::vector<std::uint32_t> out;
  for (auto f : v) out.push_back(f.index);
  return out;
}

std::vector<FeatureId> features_of(const std::vector<std::uint32_t>& v) {
  std::vector<FeatureId> out;
  for (auto i : v) out.push_back(FeatureId{i});
  return out;
}

}  // namespace

json to_json(const RunPlan& p) {
  json j;
  j["lexemes"] = json::array();
  for (const auto& l : p.lexemes) j["lexemes"].push_back(to_json(l));
  j["drift"] = json::object();
  for (const auto& [e, d] : p.drift) j["drift"][e] = d;
  j["alphas"] = p.alphas;
  j["reference_alpha"] = p.reference_alpha;
  j["generation"] = to_json(p.generation);
  j["panel"] = {{"hit_threshold", p.panel.hit_threshold}, {"parallelism", p.panel.parallelism}};
  j["specificity"] = {{"target_num", p.specificity.target_num},
                      {"other_num", p.specificity.other_num},
                      {"den", p.specificity.den}};
  j["protocol"] = std::string(to_string(p.protocol));
  j["scene_prompt"] = p.scene_prompt;
  j["stage2_cutoff"] = p.stage2_cutoff;
  j["causal_top"] = p.causal_top;
  j["min_rating"] = p.min_rating;
  j["rating_tokens"] = p.rating_tokens;
  j["drift_aware"] = p.drift_aware;
  j["drift_lambda"] = p.drift_lambda;
  j["controls"] = ids_of(p.controls);
  j["bypass"] = ids_of(p.bypass);
  j["parallelism"] = p.parallelism;
  j["scan_threads"] = p.scan_threads;
  j["seed"] = p.seed;
  j["coherence_threshold"] = p.coherence_threshold ? json(*p.coherence_threshold) : json(nullptr);
  return j;
}

RunPlan run_plan_from_json(const json& j) {
  using namespace detail;
  constexpr std::string_view ctx = "run plan";
  require_only(j,
               {"lexemes", "emotions", "drift", "alphas", "reference_alpha", "generation", "panel", "specificity",
                "protocol", "scene_prompt", "stage2_cutoff", "causal_top", "min_rating", "rating_tokens", "drift_aware",
                "drift_lambda", "controls", "bypass", "parallelism", "scan_threads", "seed", "coherence_threshold"},
               ctx);
  RunPlan p;
  if (j.contains("lexemes")) p.lexemes = lexeme_sets_from_json(j["lexemes"]);
  // "emotions": names resolved against the shipped EN lists.
  for (const auto& name : get_or<std::vector<std::string>>(j, "emotions", {}, ctx)) {
    const auto* wf = find_word_forms(name);
    if (!wf) throw Error("run plan: no shipped word-form list for emotion '" + name + "'");
    p.lexemes.push_back(*wf);
  }
  if (j.contains("drift")) {
    require_object(j["drift"], "run plan drift");
    for (const auto& [k, v] : j["drift"].items()) p.drift[k] = v.get<std::string>();
  }
  p.alphas = get_or<std::vector<double>>(j, "alphas", p.alphas, ctx);
  p.reference_alpha = get_or<double>(j, "reference_alpha", p.reference_alpha, ctx);
  if (j.contains("generation")) p.generation = generation_config_from_json(j["generation"]);
  if (j.contains("panel")) {
    const auto& pj = j["panel"];
    require_only(pj, {"hit_threshold", "parallelism"}, "run plan panel");
    p.panel.hit_threshold = get_or<std::size_t>(pj, "hit_threshold", p.panel.hit_threshold, "run plan panel");
    p.panel.parallelism = get_or<std::size_t>(pj, "parallelism", p.panel.parallelism, "run plan panel");
  }
  if (j.contains("specificity")) {
    const auto& sj = j["specificity"];
    require_only(sj, {"target_num", "other_num", "den"}, "run plan specificity");
    p.specificity.target_num = get_or<int>(sj, "target_num", p.specificity.target_num, "run plan specificity");
    p.specificity.other_num = get_or<int>(sj, "other_num", p.specificity.other_num, "run plan specificity");
    p.specificity.den = get_or<int>(sj, "den", p.specificity.den, "run plan specificity");
  }
  if (j.contains("protocol")) p.protocol = judge_protocol_from_string(get<std::string>(j, "protocol", ctx));
  p.scene_prompt = get_or<std::string>(j, "scene_prompt", p.scene_prompt, ctx);
  p.stage2_cutoff = get_or<std::size_t>(j, "stage2_cutoff", p.stage2_cutoff, ctx);
  p.causal_top = get_or<std::size_t>(j, "causal_top", p.causal_top, ctx);
  p.min_rating = get_or<int>(j, "min_rating", p.min_rating, ctx);
  p.rating_tokens = get_or<std::size_t>(j, "rating_tokens", p.rating_tokens, ctx);
  p.drift_aware = get_or<bool>(j, "drift_aware", p.drift_aware, ctx);
  p.drift_lambda = get_or<double>(j, "drift_lambda", p.drift_lambda, ctx);
  p.controls = features_of(get_or<std::vector<std::uint32_t>>(j, "controls", {}, ctx));
  p.bypass = features_of(get_or<std::vector<std::uint32_t>>(j, "bypass", {}, ctx));
  p.parallelism = get_or<std::size_t>(j, "parallelism", p.parallelism, ctx);
  p.scan_threads = get_or<std::size_t>(j, "scan_threads", p.scan_threads, ctx);
  p.seed = get_or<std::uint64_t>(j, "seed", p.seed, ctx);
  if (j.contains("coherence_threshold") && !j["coherence_threshold"].is_null())
    p.coherence_threshold = get<double>(j, "coherence_threshold", ctx);
  return p;
}

std::string_view to_string(CellOutcome o) {
  switch (o) {
    case CellOutcome::hit: return "hit";
    case CellOutcome::partial: return "partial";
    case CellOutcome::fail: return "fail";
    case CellOutcome::missing: return "missing";
  }
  return "missing";
}

json to_json(const Cell& c) {
  json j;
  j["role"] = c.role == CellRole::candidate ? "candidate" : "control";
  j["emotion"] = c.emotion;
  j["feature"] = c.feature.index;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["outcome"] = std::string(to_string(c.outcome));
  j["steering_norm"] = c.steering_norm;
  j["text"] = c.text;
  j["panel"] = c.panel ? to_json(*c.panel) : json(nullptr);
  if (c.error) j["error"] = *c.error;
  return j;
}

namespace {

const LexemeSet* lexeme_for(const RunPlan& plan, std::string_view emotion) {
  for (const auto& l : plan.lexemes)
    if (l.emotion == emotion) return &l;
  return find_word_forms(emotion);
}

std::vector<std::string> non_competing(JudgeProtocol p) {
  if (p == JudgeProtocol::yes_strict || p == JudgeProtocol::yes_soft) return {"no"};
  return {};
}

struct Job {
  CellRole role = CellRole::candidate;
  std::string emotion;
  std::string definition;
  std::string target;
  FeatureId feature;
  double alpha = 0.0;
  std::int64_t seed = 0;
  SteeringVector sv;
};

Cell run_job(const Job& job, const RunPlan& plan, const JudgeTemplate& t, const Backend& backend,
             std::span<const JudgePtr> judges) {
  Cell c;
  c.role = job.role;
  c.emotion = job.emotion;
  c.feature = job.feature;
  c.alpha = job.alpha;
  c.seed = job.seed;
  c.steering_norm = job.sv.norm;
  try {
    GenerationRequest req{plan.scene_prompt, job.sv, plan.generation, job.seed};
    c.text = backend.generate(req).text;
  } catch (const std::exception& e) {
    c.error = std::string("generation: ") + e.what();
    c.outcome = CellOutcome::missing;
    return c;
  }
  JudgeQuery q;
  q.purpose = QueryPurpose::classify;
  q.protocol = t.kind;
  q.template_text = t.text;
  q.prompt = render(t, c.text, job.emotion, job.definition);
  q.scene = c.text;
  q.emotion = job.emotion;
  q.definition = job.definition;
  c.panel = ask_panel(q, t.answer_space, job.target, judges, plan.panel);
  const bool all_errored = std::all_of(c.panel->verdicts.begin(), c.panel->verdicts.end(),
                                       [](const JudgeVerdict& v) { return v.error.has_value(); });
  if (all_errored) {
    c.outcome = CellOutcome::missing;
    c.error = "every judge failed";
  } else if (c.panel->is_hit) {
    c.outcome = CellOutcome::hit;
  } else {
    c.outcome = c.panel->target_votes > 0 ? CellOutcome::partial : CellOutcome::fail;
  }
  return c;
}

std::vector<Cell> run_jobs(const std::vector<Job>& jobs, const RunPlan& plan, const JudgeTemplate& t,
                           const Backend& backend, std::span<const JudgePtr> judges) {
  std::vector<Cell> cells(jobs.size());
  parallel_for(jobs.size(), plan.parallelism,
               [&](std::size_t i) { cells[i] = run_job(jobs[i], plan, t, backend, judges); });
  return cells;
}

SteeringVector single(FeatureId f, double alpha, const TensorMatrix& dec) {
  return compile(SteeringRecipe{{{f, alpha}}, "f" + std::to_string(f.index)}, dec);
}

std::vector<Job> control_jobs(const RunPlan& plan, const std::string& emotion, const std::string& definition,
                              const std::string& target, const TensorMatrix& dec) {
  std::vector<Job> jobs;
  for (auto f : plan.controls)
    for (double a : plan.alphas) {
      const auto sv = single(f, a, dec);
      for (auto seed : plan.generation.seeds)
        jobs.push_back({CellRole::control, emotion, definition, target, f, a, seed, sv});
    }
  return jobs;
}

ControlReport control_report(const std::vector<Cell>& cells, const std::string& emotion, const RunPlan& plan) {
  std::vector<ControlObservation> obs;
  for (const auto& c : cells)
    if (c.role == CellRole::control && c.emotion == emotion) {
      obs.push_back({c.feature, c.alpha, c.seed,
                     c.outcome == CellOutcome::missing ? std::nullopt : c.panel});
    }
  const auto nc = non_competing(plan.protocol);
  return summarize_controls(obs, plan.specificity, nc);
}

Rating rate_candidate(FeatureId f, const LexemeSet& lex, const std::string& drift, const RunPlan& plan,
                      const TensorMatrix& dec, const TensorMatrix& unembed, const TokenTable& vocab,
                      std::span<const JudgePtr> judges) {
  Rating r;
  r.feature = f;
  for (const auto& e : top_k(dec, unembed, f, plan.rating_tokens, vocab).entries) r.tokens.push_back(e.text);
  JudgeQuery q;
  q.purpose = QueryPurpose::rate;
  q.protocol = plan.protocol;
  q.template_text = std::string(asset(drift.empty() ? "templates/purity.txt" : "templates/purity_drift.txt"));
  q.prompt = render_purity(lex.emotion, lex.definition, r.tokens, drift);
  q.emotion = lex.emotion;
  q.definition = lex.definition;
  q.drift = drift;
  q.tokens = r.tokens;
  q.language = lex.language;
  std::vector<int> valid;
  for (const auto& j : judges) {
    std::string raw;
    try {
      auto reply = j->ask(q);
      raw = reply.error ? "" : reply.raw;
    } catch (const std::exception&) {
    }
    r.raw.push_back(raw);
    if (auto v = parse_rating(raw)) valid.push_back(*v);
  }
  if (!valid.empty()) {
    std::sort(valid.begin(), valid.end());
    r.rating = valid[(valid.size() - 1) / 2];
  }
  return r;
}

std::pair<std::int64_t, std::int64_t> parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  try {
    return {std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1))};
  } catch (const std::exception&) {
    throw Error("null model fraction " + s + " does not fit 64-bit arithmetic");
  }
}

}  // namespace

RunReport discover(const RunPlan& plan, const TensorMatrix& dec, const TensorMatrix& unembed, const TokenTable& vocab,
                   const Backend& backend, std::span<const JudgePtr> judges) {
  plan.validate();
  if (judges.empty()) throw Error("discover: no judges configured");
  const auto desc = backend.describe();
  check_dims(desc, dec);
  if (unembed.cols() != dec.cols()) throw Error("discover: decoder and unembedding widths differ");
  if (vocab.size() != unembed.rows()) throw Error("discover: token table size differs from the unembedding rows");
  for (auto f : plan.controls) check_feature(dec, f);
  for (auto f : plan.bypass) check_feature(dec, f);

  const JudgeTemplate t = JudgeTemplate::builtin(plan.protocol);
  RunReport report;
  report.plan = plan;
  report.backend = desc;

  std::vector<Job> jobs;
  struct Pending {
    std::size_t emotion_index;
    FeatureId feature;
    CandidateScore scan;
    std::optional<int> rating;
    bool survived;
    bool bypassed;
  };
  std::vector<Pending> pending;

  for (const auto& lex : plan.lexemes) {
    EmotionReport er;
    er.emotion = lex.emotion;
    const auto target = t.answer_for(lex.emotion);
    if (!target) throw Error("discover: emotion '" + lex.emotion + "' is not an option of the " +
                             std::string(to_string(plan.protocol)) + " template");
    er.target_answer = *target;

    ScanOptions so;
    so.top_n = plan.stage2_cutoff;
    so.threads = plan.scan_threads;
    so.drift_lambda = plan.drift_lambda;
    std::string drift_name;
    if (plan.drift_aware) {
      if (auto it = plan.drift.find(lex.emotion); it != plan.drift.end()) {
        const auto* dl = lexeme_for(plan, it->second);
        if (!dl) throw Error("discover: no word-form list for drift emotion '" + it->second + "'");
        so.drift = *dl;
        drift_name = it->second;
        er.drift = drift_name;
      }
    }

    std::vector<CandidateScore> all;
    try {
      er.scan = scan(dec, unembed, lex, vocab, so);
      all = score_all_features(dec, unembed, lex, vocab, so);
    } catch (const LexemeResolutionError& e) {
      er.note = e.what();
      report.emotions.push_back(std::move(er));
      continue;
    }

    // Stage 2.
    er.ratings.resize(er.scan.size());
    parallel_for(er.scan.size(), plan.parallelism, [&](std::size_t i) {
      er.ratings[i] = rate_candidate(er.scan[i].feature, lex, drift_name, plan, dec, unembed, vocab, judges);
    });
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < er.ratings.size(); ++i)
      if (er.ratings[i].rating && *er.ratings[i].rating >= plan.min_rating) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return *er.ratings[a].rating > *er.ratings[b].rating; });
    if (order.size() > plan.causal_top) order.resize(plan.causal_top);

    const std::size_t ei = report.emotions.size();
    std::set<std::uint32_t> chosen;
    for (auto i : order) {
      chosen.insert(er.scan[i].feature.index);
      er.stage3.push_back(er.scan[i].feature);
      pending.push_back({ei, er.scan[i].feature, er.scan[i], er.ratings[i].rating, true, false});
    }
    for (auto f : plan.bypass) {
      if (!chosen.insert(f.index).second) continue;
      er.stage3.push_back(f);
      CandidateScore cs = all[f.index];
      const auto re = rank_emit(dec, unembed, f, lex, so.k, vocab);
      cs.rank_emit = re.position;
      std::optional<int> rating;
      for (std::size_t i = 0; i < er.scan.size(); ++i)
        if (er.scan[i].feature == f) rating = er.ratings[i].rating;
      pending.push_back({ei, f, cs, rating, false, true});
    }
    if (order.empty()) {
      er.note = "no candidate reached rating " + std::to_string(plan.min_rating) + " in Stage 2";
      if (plan.bypass.empty()) er.note += "; Stage 3 skipped";
    }

    for (std::size_t pi = 0; pi < pending.size(); ++pi) {
      if (pending[pi].emotion_index != ei) continue;
      for (double a : plan.alphas) {
        const auto sv = single(pending[pi].feature, a, dec);
        for (auto seed : plan.generation.seeds)
          jobs.push_back({CellRole::candidate, lex.emotion, lex.definition, *target, pending[pi].feature, a, seed, sv});
      }
    }
    if (!er.stage3.empty()) {
      auto cj = control_jobs(plan, lex.emotion, lex.definition, *target, dec);
      jobs.insert(jobs.end(), cj.begin(), cj.end());
    }
    report.emotions.push_back(std::move(er));
  }

  // Stage 3: every cell is an independent work item.
  report.cells = run_jobs(jobs, plan, t, backend, judges);

  for (const auto& er : report.emotions)
    if (!er.stage3.empty()) report.controls[er.emotion] = control_report(report.cells, er.emotion, plan);

  const auto nc = non_competing(plan.protocol);
  const std::size_t S = plan.generation.seeds.size();
  for (const auto& p : pending) {
    const auto& er = report.emotions[p.emotion_index];
    const auto* lex = lexeme_for(plan, er.emotion);
    CandidateReport cr;
    cr.emotion = er.emotion;
    cr.feature = p.feature;
    cr.scan = p.scan;
    cr.rating = p.rating;
    cr.survived_stage2 = p.survived;
    cr.bypassed = p.bypassed;
    cr.mechanism = mechanism_tag(top_k(dec, unembed, p.feature, 10, vocab), *lex);
    const auto& controls = report.controls.at(er.emotion);

    bool any_hit = false, any_confirmed = false;
    for (double a : plan.alphas) {
      AlphaSummary as;
      as.alpha = a;
      std::vector<JudgePanelResult> per_seed;
      for (const auto& c : report.cells) {
        if (c.role != CellRole::candidate || c.emotion != er.emotion || c.feature != p.feature || c.alpha != a) continue;
        ++as.hits.total;
        if (c.outcome == CellOutcome::hit) ++as.hits.passed;
        if (c.panel && c.outcome != CellOutcome::missing) {
          per_seed.push_back(*c.panel);
        } else {
          JudgePanelResult empty;
          empty.target = er.target_answer;
          per_seed.push_back(std::move(empty));
        }
      }
      as.specificity = specificity(per_seed, plan.specificity, nc);
      const double gate_rate = static_cast<double>(as.specificity.target_majorities) / static_cast<double>(S);
      as.control_rate = controls.rate(er.target_answer, a);
      as.controls_pass = as.control_rate < gate_rate;
      any_hit = any_hit || as.hits.passed > 0;
      any_confirmed = any_confirmed || as.specificity.confirmed;
      if (as.specificity.confirmed && as.controls_pass && !cr.chosen_alpha) cr.chosen_alpha = a;
      cr.alphas.push_back(as);
    }

    const auto at_reference = std::find_if(cr.alphas.begin(), cr.alphas.end(),
                                           [&](const AlphaSummary& s) { return s.alpha == plan.reference_alpha; });
    if (cr.chosen_alpha) {
      const bool failed_reference = at_reference != cr.alphas.end() && !(at_reference->specificity.confirmed &&
                                                                         at_reference->controls_pass);
      if (*cr.chosen_alpha > plan.reference_alpha && failed_reference) {
        cr.status = GateStatus::rescued;
        cr.note = "failed at alpha " + json(plan.reference_alpha).dump() + ", confirmed at alpha " +
                  json(*cr.chosen_alpha).dump();
      } else {
        cr.status = GateStatus::confirmed;
      }
    } else if (any_confirmed) {
      cr.status = GateStatus::demoted;
      cr.note = "random controls matched the gate's target rate";
    } else if (any_hit) {
      cr.status = GateStatus::partial;
    } else {
      cr.status = GateStatus::failed;
    }
    report.candidates.push_back(std::move(cr));
  }

  for (const auto& cr : report.candidates) {
    if (cr.status != GateStatus::confirmed && cr.status != GateStatus::rescued) continue;
    GateRecord g;
    g.emotion = cr.emotion;
    g.recipe = SteeringRecipe{{{cr.feature, *cr.chosen_alpha}}, "f" + std::to_string(cr.feature.index)};
    g.decoder_norms = {decoder_norm(dec, cr.feature)};
    for (const auto& as : cr.alphas) {
      g.alpha_trajectory.push_back({as.alpha, as.hits});
      if (as.alpha == *cr.chosen_alpha) g.hits = as.hits;
    }
    g.judge_protocol = plan.protocol;
    g.mechanism_tag = cr.mechanism;
    g.status = cr.status;
    g.validate();
    report.confirmed.push_back(std::move(g));
  }

  // Budget.
  for (const auto& c : report.cells) {
    if (!c.error || c.panel) ++report.budget.generations;
    if (c.panel) report.budget.judge_calls += c.panel->verdicts.size();
    if (c.outcome == CellOutcome::missing) ++report.budget.missing_cells;
  }
  for (const auto& er : report.emotions) report.budget.rating_calls += er.ratings.size() * judges.size();

  // Statistics.
  NullModel nm;
  nm.options = static_cast<int>(t.answer_space.size());
  nm.panel = static_cast<int>(judges.size());
  nm.threshold = static_cast<int>(plan.panel.hit_threshold);
  json stats;
  if (nm.threshold <= nm.panel) {
    const auto frac = cell_pass_prob_fraction(nm);
    const auto [num, den] = parse_fraction(frac);
    stats["null_model"] = {{"options", nm.options},
                           {"panel", nm.panel},
                           {"threshold", nm.threshold},
                           {"cell_pass_prob", cell_pass_prob(nm)},
                           {"fraction", frac}};
    const int needed = static_cast<int>(plan.specificity.target_needed(S));
    std::size_t n_alpha_cells = report.candidates.size() * plan.alphas.size();
    stats["expected_false_alpha_cells"] =
        expected_false_cells(nm, needed, static_cast<int>(n_alpha_cells));
    std::vector<double> pvals;
    for (auto& cr : report.candidates) {
      std::vector<int> hits;
      for (const auto& c : report.cells)
        if (c.role == CellRole::candidate && c.emotion == cr.emotion && c.feature == cr.feature)
          hits.push_back(c.outcome == CellOutcome::hit ? 1 : 0);
      const int k = static_cast<int>(std::count(hits.begin(), hits.end(), 1));
      cr.p_value = binomial_upper_tail(static_cast<int>(hits.size()), k, num, den);
      cr.hit_rate_ci = bootstrap_ci(hits, 1000, 0.95, plan.seed, 1);
      pvals.push_back(cr.p_value);
    }
    const auto rejected = bh_fdr(pvals, 0.05);
    for (std::size_t i = 0; i < rejected.size(); ++i) report.candidates[i].fdr_reject = rejected[i];
  } else {
    stats["null_model"] = nullptr;
  }

  std::vector<std::vector<int>> table;
  for (const auto& c : report.cells) {
    if (!c.panel || c.panel->verdicts.size() != judges.size()) continue;
    std::vector<int> row(t.answer_space.size(), 0);
    bool complete = true;
    for (const auto& v : c.panel->verdicts) {
      if (!v.parsed) {
        complete = false;
        break;
      }
      const auto it = std::find(t.answer_space.begin(), t.answer_space.end(), *v.parsed);
      ++row[static_cast<std::size_t>(it - t.answer_space.begin())];
    }
    if (complete) table.push_back(std::move(row));
  }
  stats["kappa_subjects"] = table.size();
  if (!table.empty() && judges.size() >= 2) {
    try {
      stats["fleiss_kappa"] = fleiss_kappa(table);
    } catch (const Error&) {
      stats["fleiss_kappa"] = nullptr;
    }
  } else {
    stats["fleiss_kappa"] = nullptr;
  }
  report.stats = std::move(stats);
  return report;
}

CatalogFile catalog_from_report(const RunReport& r, std::string sae_id) {
  CatalogFile c;
  c.model_id = r.backend.model_id;
  c.sae_id = std::move(sae_id);
  c.layer = r.backend.layer;
  c.records = r.confirmed;
  c.created = utc_timestamp_now();
  return c;
}

namespace {

json alpha_summary_json(const AlphaSummary& a) {
  json j;
  j["alpha"] = a.alpha;
  j["hits"] = to_json(a.hits);
  j["specificity"] = to_json(a.specificity);
  j["control_rate"] = a.control_rate;
  j["controls_pass"] = a.controls_pass;
  return j;
}

}  // namespace

json to_json(const RunReport& r) {
  json j;
  j["schema_version"] = 1;
  j["plan"] = to_json(r.plan);
  j["backend"] = to_json(r.backend);
  j["emotions"] = json::array();
  for (const auto& e : r.emotions) {
    json ej;
    ej["emotion"] = e.emotion;
    ej["target_answer"] = e.target_answer;
    ej["drift"] = e.drift ? json(*e.drift) : json(nullptr);
    ej["scan"] = json::array();
    for (const auto& s : e.scan) ej["scan"].push_back(to_json(s));
    ej["ratings"] = json::array();
    for (const auto& rt : e.ratings)
      ej["ratings"].push_back({{"feature", rt.feature.index},
                               {"tokens", rt.tokens},
                               {"raw", rt.raw},
                               {"rating", rt.rating ? json(*rt.rating) : json(nullptr)}});
    ej["stage3"] = ids_of(e.stage3);
    ej["note"] = e.note;
    j["emotions"].push_back(std::move(ej));
  }
  j["candidates"] = json::array();
  for (const auto& c : r.candidates) {
    json cj;
    cj["emotion"] = c.emotion;
    cj["feature"] = c.feature.index;
    cj["scan"] = to_json(c.scan);
    cj["rating"] = c.rating ? json(*c.rating) : json(nullptr);
    cj["survived_stage2"] = c.survived_stage2;
    cj["bypassed"] = c.bypassed;
    cj["mechanism_tag"] = std::string(to_string(c.mechanism));
    cj["alphas"] = json::array();
    for (const auto& a : c.alphas) cj["alphas"].push_back(alpha_summary_json(a));
    cj["status"] = std::string(to_string(c.status));
    cj["chosen_alpha"] = c.chosen_alpha ? json(*c.chosen_alpha) : json(nullptr);
    cj["note"] = c.note;
    cj["p_value"] = c.p_value;
    cj["fdr_reject"] = c.fdr_reject;
    cj["hit_rate_ci"] = {c.hit_rate_ci.lo, c.hit_rate_ci.hi};
    j["candidates"].push_back(std::move(cj));
  }
  j["controls"] = json::object();
  for (const auto& [e, c] : r.controls) j["controls"][e] = to_json(c);
  j["confirmed"] = json::array();
  for (const auto& g : r.confirmed) j["confirmed"].push_back(to_json(g));
  j["budget"] = {{"generations", r.budget.generations},
                 {"judge_calls", r.budget.judge_calls},
                 {"rating_calls", r.budget.rating_calls},
                 {"missing_cells", r.budget.missing_cells}};
  j["stats"] = r.stats;
  j["cells"] = json::array();
  for (const auto& c : r.cells) j["cells"].push_back(to_json(c));
  return j;
}

std::map<std::string, ControlReport> run_controls(const RunPlan& plan, const TensorMatrix& dec, const Backend& backend,
                                                  std::span<const JudgePtr> judges, std::vector<Cell>* cells_out) {
  plan.validate();
  if (judges.empty()) throw Error("controls: no judges configured");
  check_dims(backend.describe(), dec);
  for (auto f : plan.controls) check_feature(dec, f);
  const JudgeTemplate t = JudgeTemplate::builtin(plan.protocol);
  std::vector<Job> jobs;
  for (const auto& lex : plan.lexemes) {
    const auto target = t.answer_for(lex.emotion);
    if (!target) throw Error("controls: emotion '" + lex.emotion + "' is not an option of the template");
    auto cj = control_jobs(plan, lex.emotion, lex.definition, *target, dec);
    jobs.insert(jobs.end(), cj.begin(), cj.end());
  }
  auto cells = run_jobs(jobs, plan, t, backend, judges);
  std::map<std::string, ControlReport> out;
  for (const auto& lex : plan.lexemes) out[lex.emotion] = control_report(cells, lex.emotion, plan);
  if (cells_out) *cells_out = std::move(cells);
  return out;
}

json to_json(const RecipeReport& r) {
  json j;
  j["recipe"] = to_json(r.recipe);
  j["emotion"] = r.emotion;
  j["target_answer"] = r.target_answer;
  j["joint_norm"] = r.joint_norm;
  j["target_votes"] = r.target_votes;
  j["total_votes"] = r.total_votes;
  j["needed_votes"] = r.needed_votes;
  j["crosstalk"] = json::object();
  for (const auto& [label, n] : r.crosstalk) j["crosstalk"][label] = n;
  j["control_target_votes"] = r.control_target_votes;
  j["confirmed"] = r.confirmed;
  j["coherence_warning"] = r.coherence_warning ? json(*r.coherence_warning) : json(nullptr);
  j["cells"] = json::array();
  for (const auto& c : r.cells) j["cells"].push_back(to_json(c));
  j["control_cells"] = json::array();
  for (const auto& c : r.control_cells) j["control_cells"].push_back(to_json(c));
  return j;
}

RecipeReport validate_recipe(const SteeringRecipe& recipe, const LexemeSet& target, const RunPlan& plan,
                             const TensorMatrix& dec, const Backend& backend, std::span<const JudgePtr> judges,
                             RecipeThreshold threshold) {
  recipe.validate();
  target.validate();
  if (judges.empty()) throw Error("validate-recipe: no judges configured");
  if (threshold.den <= 0 || threshold.num <= 0 || threshold.num > threshold.den)
    throw Error("validate-recipe: threshold must be a fraction in (0, 1]");
  check_dims(backend.describe(), dec);
  const JudgeTemplate t = JudgeTemplate::builtin(plan.protocol);
  const auto answer = t.answer_for(target.emotion);
  if (!answer) throw Error("validate-recipe: emotion '" + target.emotion + "' is not an option of the template");

  RecipeReport rep;
  rep.recipe = recipe;
  rep.emotion = target.emotion;
  rep.target_answer = *answer;
  const auto sv = compile(recipe, dec);
  rep.joint_norm = sv.norm;
  rep.coherence_warning = coherence_warning(sv, plan.coherence_threshold);

  const FeatureId head = recipe.components.front().feature;
  std::vector<Job> jobs;
  for (auto seed : plan.generation.seeds)
    jobs.push_back({CellRole::candidate, target.emotion, target.definition, *answer, head, sv.norm, seed, sv});
  rep.cells = run_jobs(jobs, plan, t, backend, judges);

  for (const auto& c : rep.cells) {
    rep.total_votes += judges.size();
    if (!c.panel) continue;
    for (const auto& v : c.panel->verdicts) {
      if (!v.parsed) continue;
      if (*v.parsed == *answer) {
        ++rep.target_votes;
      } else {
        ++rep.crosstalk[t.label_of(*v.parsed)];
      }
    }
  }
  const std::size_t num = static_cast<std::size_t>(threshold.num) * rep.total_votes;
  rep.needed_votes = (num + static_cast<std::size_t>(threshold.den) - 1) / static_cast<std::size_t>(threshold.den);

  std::vector<Job> cjobs;
  for (auto f : plan.controls) {
    check_feature(dec, f);
    const auto csv = single(f, sv.norm, dec);
    for (auto seed : plan.generation.seeds)
      cjobs.push_back({CellRole::control, target.emotion, target.definition, *answer, f, sv.norm, seed, csv});
  }
  rep.control_cells = run_jobs(cjobs, plan, t, backend, judges);
  std::map<std::uint32_t, std::size_t> per_control;
  for (const auto& c : rep.control_cells)
    if (c.panel) per_control[c.feature.index] += c.panel->target_votes;
  for (const auto& [f, n] : per_control) rep.control_target_votes = std::max(rep.control_target_votes, n);

  rep.confirmed = rep.target_votes >= rep.needed_votes && rep.control_target_votes < rep.target_votes;
  return rep;
}

std::string_view to_string(CrossLingualMode m) {
  switch (m) {
    case CrossLingualMode::universal: return "UNIVERSAL";
    case CrossLingualMode::partial: return "PARTIAL";
    case CrossLingualMode::en_anchored: return "EN-ANCHORED";
    case CrossLingualMode::none: return "NONE";
  }
  return "NONE";
}

CrossLingualMode classify_mode(const std::vector<std::pair<std::string, HitCount>>& per_language) {
  std::size_t zero = 0, below_full = 0, total_hits = 0;
  bool en_hits = false, others_zero = true, has_others = false;
  for (const auto& [lang, h] : per_language) {
    total_hits += h.passed;
    if (h.passed == 0) ++zero;
    if (h.passed < h.total) ++below_full;
    if (lang == "en") {
      en_hits = h.passed > 0;
    } else {
      has_others = true;
      others_zero = others_zero && h.passed == 0;
    }
  }
  if (total_hits == 0) return CrossLingualMode::none;
  if (en_hits && has_others && others_zero) return CrossLingualMode::en_anchored;
  if (zero == 0 && below_full <= 1) return CrossLingualMode::universal;
  return CrossLingualMode::partial;
}

json to_json(const CrossLingualReport& r) {
  json j;
  j["cells"] = json::array();
  for (const auto& c : r.cells) {
    j["cells"].push_back({{"emotion", c.emotion},
                          {"label", c.label},
                          {"language", c.language},
                          {"hits", to_json(c.hits)},
                          {"purity", c.purity ? json(*c.purity) : json(nullptr)},
                          {"missing", c.missing},
                          {"purity_flag", c.purity_flag},
                          {"note", c.note},
                          {"texts", c.texts}});
  }
  j["rows"] = json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back({{"emotion", row.emotion}, {"label", row.label}, {"mode", std::string(to_string(row.mode))}});
  return j;
}

CrossLingualReport crosslingual_eval(const CatalogFile& catalog, const std::vector<std::string>& languages,
                                     const std::map<std::string, LanguageAssets>& assets, const RunPlan& plan,
                                     const TensorMatrix& dec, const Backend& backend,
                                     std::span<const JudgePtr> judges, double purity_floor) {
  if (languages.empty()) throw Error("crosslingual: no languages requested");
  if (judges.empty()) throw Error("crosslingual: no judges configured");
  catalog.validate_features(dec.d_sae());
  check_dims(backend.describe(), dec);
  plan.generation.validate();

  CrossLingualReport rep;
  for (const auto& rec : catalog.records) {
    const auto* lex = lexeme_for(plan, rec.emotion);
    const std::string definition = lex ? lex->definition : std::string();
    const auto sv = compile(rec.recipe, dec);
    std::vector<std::pair<std::string, HitCount>> per_language;
    for (const auto& lang : languages) {
      CrossLingualCell cell;
      cell.emotion = rec.emotion;
      cell.label = rec.recipe.label;
      cell.language = lang;
      const auto it = assets.find(lang);
      if (it == assets.end() || it->second.scene_prompt.empty() ||
          (it->second.template_text.empty() && lang != "en")) {
        cell.missing = true;
        cell.note = "no scene prompt or judge template for language '" + lang + "'";
        rep.cells.push_back(std::move(cell));
        continue;
      }
      try {
        (void)markers(lang);
      } catch (const Error& e) {
        cell.missing = true;
        cell.note = e.what();
        rep.cells.push_back(std::move(cell));
        continue;
      }
      const JudgeTemplate t = it->second.template_text.empty()
                                  ? JudgeTemplate::builtin(rec.judge_protocol)
                                  : JudgeTemplate::custom(rec.judge_protocol, it->second.template_text);
      const auto answer = t.answer_for(rec.emotion);
      if (!answer) throw Error("crosslingual: emotion '" + rec.emotion + "' is not an option of the template");

      std::vector<Job> jobs;
      for (auto seed : plan.generation.seeds)
        jobs.push_back({CellRole::candidate, rec.emotion, definition, *answer, rec.recipe.components.front().feature,
                        sv.norm, seed, sv});
      RunPlan lang_plan = plan;
      lang_plan.scene_prompt = it->second.scene_prompt;
      const auto cells = run_jobs(jobs, lang_plan, t, backend, judges);

      double purity_sum = 0.0;
      std::size_t purity_n = 0;
      for (const auto& c : cells) {
        ++cell.hits.total;
        if (c.outcome == CellOutcome::hit) ++cell.hits.passed;
        cell.texts.push_back(c.text);
        if (auto p = lang_purity(c.text, lang)) {
          purity_sum += *p;
          ++purity_n;
        }
      }
      if (purity_n > 0) cell.purity = purity_sum / static_cast<double>(purity_n);
      cell.purity_flag = lang != "en" && cell.hits.passed > 0 && cell.purity && *cell.purity < purity_floor;
      per_language.emplace_back(lang, cell.hits);
      rep.cells.push_back(std::move(cell));
    }
    rep.rows.push_back({rec.emotion, rec.recipe.label, classify_mode(per_language)});
  }
  return rep;
}

}  // namespace gatescope
