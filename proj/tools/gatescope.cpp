#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gatescope/assets.hpp"
#include "gatescope/config.hpp"
#include "gatescope/error.hpp"
#include "gatescope/judge.hpp"
#include "gatescope/judge_clients.hpp"
#include "gatescope/lens.hpp"
#include "gatescope/lexeme.hpp"
#include "gatescope/pipeline.hpp"
#include "gatescope/remote.hpp"
#include "gatescope/report.hpp"
#include "gatescope/stats.hpp"
#include "gatescope/steer.hpp"
#include "gatescope/toy.hpp"

namespace fs = std::filesystem;
using namespace gatescope;

namespace {

struct Common {
  bool json_out = false;
  std::uint64_t seed = 0;
  std::string config;
  std::string fixture;
  std::string backend;
  std::string backend_url;
  std::string judges = "scripted";
  std::string decoder;
  std::string unembedding;
  std::string vocab;
};

void add_output(CLI::App* sub, Common& c) {
  sub->add_flag("--json", c.json_out, "Machine-readable JSON on stdout");
  sub->add_option("--config", c.config, "Config file (JSON)");
}

void add_seed(CLI::App* sub, Common& c) { sub->add_option("--seed", c.seed, "Random seed"); }

void add_model(CLI::App* sub, Common& c) {
  sub->add_option("--fixture", c.fixture, "Toy fixture directory");
  sub->add_option("--decoder", c.decoder, "Decoder tensor file");
  sub->add_option("--unembedding", c.unembedding, "Unembedding tensor file");
  sub->add_option("--vocab", c.vocab, "Vocabulary JSON");
}

void add_backend(CLI::App* sub, Common& c) {
  add_model(sub, c);
  sub->add_option("--backend", c.backend, "toy or remote")->check(CLI::IsMember({"toy", "remote"}));
  sub->add_option("--backend-url", c.backend_url, "Remote backend base URL");
  sub->add_option("--judges", c.judges, "scripted or http")->check(CLI::IsMember({"scripted", "http"}));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << bytes;
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(p.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Everything a subcommand may need, loaded on first use.
class Session {
 public:
  explicit Session(const Common& c) : c_(c) {
    cfg_ = load_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config));
    if (!c.fixture.empty()) cfg_.fixture_dir = c.fixture;
    if (!c.backend.empty()) cfg_.backend = c.backend;
    if (!c.backend_url.empty()) cfg_.backend_url = c.backend_url;
  }

  const Config& config() const { return cfg_; }
  bool toy() const { return cfg_.backend == "toy"; }

  const ToyFixture& fixture() {
    if (!fixture_) {
      if (!fs::exists(cfg_.fixture_dir / "plan.json"))
        throw Error("no toy fixture at " + cfg_.fixture_dir.string() + "; run `gatescope fixture build` first");
      fixture_ = std::make_shared<ToyFixture>(load_toy_fixture(cfg_.fixture_dir));
    }
    return *fixture_;
  }

  const TensorMatrix& decoder() {
    if (!decoder_) {
      if (!c_.decoder.empty())
        decoder_ = load_tensor(c_.decoder, TensorRole::decoder);
      else
        decoder_ = fixture().decoder;
    }
    return *decoder_;
  }

  const TensorMatrix& unembedding() {
    if (!unembedding_) {
      if (!c_.unembedding.empty())
        unembedding_ = load_tensor(c_.unembedding, TensorRole::unembedding);
      else
        unembedding_ = fixture().unembedding;
    }
    return *unembedding_;
  }

  const TokenTable& vocab() {
    if (!vocab_) {
      if (!c_.vocab.empty())
        vocab_ = TokenTable::load(c_.vocab);
      else
        vocab_ = fixture().vocab;
    }
    return *vocab_;
  }

  const Backend& backend() {
    if (!backend_) {
      if (toy()) {
        fixture();
        backend_ = std::make_shared<ToyBackend>(fixture_);
      } else {
        if (cfg_.backend_url.empty()) throw Error("remote backend needs --backend-url or GATESCOPE_BACKEND_URL");
        backend_ = std::make_shared<RemoteBackend>(cfg_.backend_url);
      }
      check_dims(backend_->describe(), decoder());
    }
    return *backend_;
  }

  std::vector<JudgePtr> judges() {
    std::vector<JudgePtr> out;
    if (c_.judges == "scripted") {
      out = scripted_panel();
    } else {
      if (cfg_.judges.empty()) throw Error("http judges requested but the config lists none");
      for (const auto& jc : cfg_.judges) {
        if (jc.api_key.empty()) std::cerr << "warning: no API key for judge " << jc.id << "\n";
        out.push_back(std::make_shared<HttpChatJudge>(jc));
      }
    }
    if (!cfg_.cache_dir.empty())
      for (auto& j : out) j = std::make_shared<CachedJudge>(j, cfg_.cache_dir, cfg_.replay_only);
    return out;
  }

  // Toy default (or bare defaults for a remote model), config plan, plan file.
  RunPlan plan(const std::string& plan_file, std::uint64_t seed) {
    RunPlan base = toy() ? toy_run_plan(fixture().plan, seed) : RunPlan{};
    base.seed = seed;
    RunPlan p = overlay_plan(base, cfg_.plan);
    if (!plan_file.empty()) p = overlay_plan(p, read_json(plan_file));
    return p;
  }

 private:
  Common c_;
  Config cfg_;
  std::shared_ptr<const ToyFixture> fixture_;
  std::optional<TensorMatrix> decoder_;
  std::optional<TensorMatrix> unembedding_;
  std::optional<TokenTable> vocab_;
  BackendPtr backend_;
};

const LexemeSet& shipped_lexeme(const std::string& emotion) {
  const auto* wf = find_word_forms(emotion);
  if (!wf) throw Error("no shipped word-form list for emotion '" + emotion + "'");
  return *wf;
}

// "45:8,52:-4" -> two components.
SteeringRecipe parse_recipe(const std::string& spec, const std::string& label) {
  SteeringRecipe r;
  r.label = label;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw Error("recipe component '" + part + "' is not feature:alpha");
    try {
      std::size_t used = 0;
      const auto f = std::stoul(part.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("feature");
      const std::string a = part.substr(colon + 1);
      const double alpha = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument("alpha");
      r.components.push_back({FeatureId{static_cast<std::uint32_t>(f)}, alpha});
    } catch (const std::logic_error&) {
      throw Error("recipe component '" + part + "' is not feature:alpha");
    }
  }
  if (r.label.empty()) r.label = spec;
  r.validate();
  return r;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>)
        out.push_back(std::stoi(part, &used));
      else
        out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(what);
    } catch (const std::logic_error&) {
      throw Error(std::string("bad ") + what + " value '" + part + "'");
    }
  }
  return out;
}

// ---- subcommands ----

int cmd_fixture_build(const Common& c, const std::string& out_dir, const std::string& kind, const std::string& plan_file,
                      bool seed_given) {
  ToyPlan plan = !plan_file.empty()     ? toy_plan_from_json(read_json(plan_file))
                 : kind == "compositional" ? compositional_toy_plan()
                                           : default_toy_plan();
  if (seed_given) plan.seed = c.seed;
  const auto fx = build_toy_fixture(plan);
  save_toy_fixture(fx, out_dir);
  json j = {{"dir", out_dir},
            {"seed", plan.seed},
            {"gates", plan.gates.size()},
            {"confounders", plan.confounders.size()},
            {"registers", plan.registers.size()},
            {"noise_features", plan.noise_features().size()},
            {"d_sae", fx.decoder.d_sae()},
            {"d_model", fx.decoder.d_model()},
            {"vocab", fx.vocab.size()}};
  if (c.json_out) {
    emit(j);
  } else {
    std::cout << "fixture written to " << out_dir << ": " << plan.gates.size() << " planted gates, "
              << plan.confounders.size() << " confounders, " << plan.noise_features().size() << " noise features ("
              << fx.decoder.d_sae() << "x" << fx.decoder.d_model() << ", vocab " << fx.vocab.size() << ")\n";
  }
  return 0;
}

int cmd_topk(const Common& c, std::uint32_t feature, std::size_t k) {
  Session s(c);
  const auto tk = top_k(s.decoder(), s.unembedding(), FeatureId{feature}, k, s.vocab());
  if (c.json_out) {
    json j = {{"feature", feature}, {"entries", json::array()}};
    for (const auto& e : tk.entries) j["entries"].push_back({{"token", e.token}, {"text", e.text}, {"logit", e.logit}});
    emit(j);
  } else {
    std::cout << "f" << feature << " (norm " << num(decoder_norm(s.decoder(), FeatureId{feature})) << ")\n";
    for (std::size_t i = 0; i < tk.entries.size(); ++i)
      std::cout << "  " << i + 1 << ". " << tk.entries[i].text << "  " << num(tk.entries[i].logit) << "\n";
  }
  return 0;
}

int cmd_scan(const Common& c, const std::string& emotion, const std::string& drift, std::size_t top, double lambda,
             std::size_t threads) {
  Session s(c);
  ScanOptions opt;
  opt.top_n = top;
  opt.drift_lambda = lambda;
  opt.threads = threads;
  if (!drift.empty()) opt.drift = shipped_lexeme(drift);
  const auto res = scan(s.decoder(), s.unembedding(), shipped_lexeme(emotion), s.vocab(), opt);
  if (c.json_out) {
    json j = json::array();
    for (const auto& r : res) j.push_back(to_json(r));
    emit(j);
  } else {
    std::cout << "feature  score   mean_logit  drift_penalty  rank_emit\n";
    for (const auto& r : res)
      std::cout << "f" << r.feature.index << "  " << num(r.final_score) << "  " << num(r.mean_logit) << "  "
                << num(r.drift_penalty) << "  " << (r.rank_emit ? std::to_string(*r.rank_emit + 1) : "-") << "\n";
  }
  return 0;
}

int cmd_steer_preview(const Common& c, const std::string& recipe_spec, std::optional<double> coherence) {
  Session s(c);
  const auto recipe = parse_recipe(recipe_spec, "");
  const auto sv = compile(recipe, s.decoder());
  const auto mult = effective_multipliers(recipe, s.decoder());
  const auto warn = coherence_warning(sv, coherence);
  if (c.json_out) {
    json j = {{"recipe", to_json(recipe)}, {"norm", sv.norm}, {"components", json::array()}};
    for (std::size_t i = 0; i < recipe.components.size(); ++i) {
      const auto& comp = recipe.components[i];
      j["components"].push_back({{"f", comp.feature.index},
                                 {"alpha", comp.alpha_abs},
                                 {"decoder_norm", decoder_norm(s.decoder(), comp.feature)},
                                 {"multiplier", mult[i]}});
    }
    j["coherence_warning"] = warn ? json(*warn) : json(nullptr);
    emit(j);
  } else {
    for (std::size_t i = 0; i < recipe.components.size(); ++i) {
      const auto& comp = recipe.components[i];
      std::cout << "f" << comp.feature.index << "  alpha " << comp.alpha_abs << "  ||W_dec|| "
                << num(decoder_norm(s.decoder(), comp.feature), 4) << "  multiplier " << num(mult[i], 4) << "\n";
    }
    std::cout << "||sv|| " << num(sv.norm, 4) << "\n";
    if (warn) std::cout << "warning: " << *warn << "\n";
  }
  return 0;
}

void print_discover(const RunReport& r) {
  for (const auto& e : r.emotions) {
    std::cout << e.emotion << ": " << e.stage3.size() << " to stage 3";
    if (!e.note.empty()) std::cout << " (" << e.note << ")";
    std::cout << "\n";
  }
  for (const auto& cand : r.candidates) {
    if (cand.bypassed && cand.status == GateStatus::failed) continue;
    std::cout << "  " << cand.emotion << " f" << cand.feature.index << " " << to_string(cand.status);
    if (cand.chosen_alpha) std::cout << " at alpha " << *cand.chosen_alpha;
    std::cout << "  [";
    for (std::size_t i = 0; i < cand.alphas.size(); ++i)
      std::cout << (i ? ", " : "") << cand.alphas[i].alpha << ": " << cand.alphas[i].hits.passed << "/"
                << cand.alphas[i].hits.total;
    std::cout << "]";
    if (!cand.note.empty()) std::cout << "  " << cand.note;
    std::cout << "\n";
  }
  std::size_t audited = 0;
  for (const auto& cand : r.candidates) audited += cand.bypassed;
  if (audited) std::cout << audited << " bypassed audit candidates\n";
  for (const auto& [emotion, ctl] : r.controls)
    for (const auto& a : ctl.attractors) std::cout << "control attractor for " << emotion << ": answer " << a << "\n";
  std::cout << r.confirmed.size() << " confirmed gates; " << r.budget.generations << " generations, "
            << r.budget.judge_calls << " judge calls\n";
}

int cmd_discover(const Common& c, const std::string& plan_file, bool drift_aware, bool audit_noise,
                 const std::string& out, const std::string& catalog_out, const std::string& report_dir) {
  Session s(c);
  RunPlan plan = s.plan(plan_file, c.seed);
  if (drift_aware) plan.drift_aware = true;
  if (audit_noise) {
    if (!s.toy()) throw Error("--audit-noise needs the toy backend");
    for (auto f : s.fixture().plan.noise_features()) plan.bypass.push_back(FeatureId{f});
  }
  plan.validate();
  const auto judges = s.judges();
  const auto report = discover(plan, s.decoder(), s.unembedding(), s.vocab(), s.backend(), judges);
  const json j = to_json(report);
  if (!out.empty()) write_file(out, j.dump(2) + "\n");
  if (!catalog_out.empty()) {
    auto cat = catalog_from_report(report, s.toy() ? "gatescope-toy-sae" : "external");
    cat.created = utc_timestamp_now();
    write_file(catalog_out, serialize_catalog(cat));
  }
  if (!report_dir.empty()) {
    write_file(fs::path(report_dir) / "summary.md", render_markdown(j));
    write_file(fs::path(report_dir) / "hit_rate.svg", plot_hit_rate_svg(j));
    write_file(fs::path(report_dir) / "decoder_norms.svg", plot_norm_histogram_svg(s.decoder()));
  }
  if (c.json_out)
    emit(j);
  else
    print_discover(report);
  return 0;
}

int cmd_validate_recipe(const Common& c, const std::string& recipe_spec, const std::string& label,
                        const std::string& emotion, const std::string& plan_file) {
  Session s(c);
  const RunPlan plan = s.plan(plan_file, c.seed);
  const auto judges = s.judges();
  const auto rep = validate_recipe(parse_recipe(recipe_spec, label), shipped_lexeme(emotion), plan, s.decoder(),
                                   s.backend(), judges);
  if (c.json_out) {
    emit(to_json(rep));
  } else {
    std::cout << rep.recipe.label << " -> " << emotion << ": " << rep.target_votes << "/" << rep.total_votes
              << " votes (need " << rep.needed_votes << "), joint norm " << num(rep.joint_norm) << ", best control "
              << rep.control_target_votes << " -> " << (rep.confirmed ? "CONFIRMED" : "not confirmed") << "\n";
    for (const auto& [lab, n] : rep.crosstalk) std::cout << "  crosstalk " << lab << ": " << n << "\n";
    if (rep.coherence_warning) std::cout << "warning: " << *rep.coherence_warning << "\n";
  }
  return 0;
}

int cmd_controls(const Common& c, const std::string& plan_file) {
  Session s(c);
  const RunPlan plan = s.plan(plan_file, c.seed);
  const auto judges = s.judges();
  const auto reports = run_controls(plan, s.decoder(), s.backend(), judges);
  if (c.json_out) {
    json j = json::object();
    for (const auto& [e, r] : reports) j[e] = to_json(r);
    emit(j);
  } else {
    for (const auto& [e, r] : reports) {
      std::cout << e << ":";
      if (r.attractors.empty()) std::cout << " no attractor";
      for (const auto& a : r.attractors) std::cout << " attractor " << a;
      std::cout << "\n";
    }
  }
  return 0;
}

// {"de": {"scene_prompt": "...", "template": "..."} or {"template_file": "..."}}
std::map<std::string, LanguageAssets> load_language_assets(const std::string& path) {
  std::map<std::string, LanguageAssets> out;
  if (path.empty()) return out;
  const json j = read_json(path);
  if (!j.is_object()) throw Error(path + ": expected an object keyed by language");
  for (const auto& [lang, v] : j.items()) {
    LanguageAssets a;
    a.scene_prompt = v.at("scene_prompt").get<std::string>();
    if (v.contains("template")) a.template_text = v["template"].get<std::string>();
    if (v.contains("template_file"))
      a.template_text = read_file(fs::path(path).parent_path() / v["template_file"].get<std::string>());
    out[lang] = a;
  }
  return out;
}

int cmd_crosslingual(const Common& c, const std::string& catalog_path, const std::string& languages,
                     const std::string& assets_path, const std::string& plan_file, double purity_floor) {
  Session s(c);
  const auto catalog = parse_catalog(read_file(catalog_path));
  std::vector<std::string> langs;
  std::stringstream ss(languages);
  for (std::string l; std::getline(ss, l, ',');) langs.push_back(l);
  const RunPlan plan = s.plan(plan_file, c.seed);
  const auto judges = s.judges();
  const auto rep = crosslingual_eval(catalog, langs, load_language_assets(assets_path), plan, s.decoder(), s.backend(),
                                     judges, purity_floor);
  if (c.json_out) {
    emit(to_json(rep));
  } else {
    for (const auto& cell : rep.cells) {
      std::cout << cell.emotion << " " << cell.label << " [" << cell.language << "] ";
      if (cell.missing)
        std::cout << "missing";
      else
        std::cout << cell.hits.passed << "/" << cell.hits.total;
      if (cell.purity) std::cout << " purity " << num(*cell.purity, 2);
      if (cell.purity_flag) std::cout << " (language leak)";
      std::cout << "\n";
    }
    for (const auto& row : rep.rows) std::cout << row.emotion << " " << row.label << ": " << to_string(row.mode) << "\n";
  }
  return 0;
}

int cmd_stats_null(const Common& c, const NullModel& nm, int seeds_required, int cells) {
  const double p = cell_pass_prob(nm);
  const double per_cell = std::pow(p, seeds_required);
  const double expected = expected_false_cells(nm, seeds_required, cells);
  if (c.json_out) {
    emit({{"options", nm.options},
          {"panel", nm.panel},
          {"threshold", nm.threshold},
          {"cell_pass_prob", p},
          {"fraction", cell_pass_prob_fraction(nm)},
          {"seeds_required", seeds_required},
          {"per_cell_prob", per_cell},
          {"cells", cells},
          {"expected_false_cells", expected}});
  } else {
    std::cout << num(p, 6) << "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "exact %s; %d-seed cell %.3g; expected false cells over %d: %.3g\n",
                  cell_pass_prob_fraction(nm).c_str(), seeds_required, per_cell, cells, expected);
    std::cout << buf;
  }
  return 0;
}

int cmd_stats_kappa(const Common& c, const std::string& table_path) {
  const json j = read_json(table_path);
  std::vector<std::vector<int>> table;
  try {
    table = j.get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception&) {
    throw Error(table_path + ": expected an array of integer rows");
  }
  const double k = fleiss_kappa(table);
  if (c.json_out)
    emit({{"subjects", table.size()}, {"fleiss_kappa", k}});
  else
    std::cout << num(k, 6) << "\n";
  return 0;
}

int cmd_stats_ci(const Common& c, const std::string& hits, int resamples, double level) {
  const auto v = parse_list<int>(hits, "hit");
  const auto ci = bootstrap_ci(v, resamples, level, c.seed);
  double mean = 0.0;
  for (int h : v) mean += h;
  mean /= static_cast<double>(v.size());
  if (c.json_out)
    emit({{"n", v.size()}, {"mean", mean}, {"lo", ci.lo}, {"hi", ci.hi}, {"level", level}, {"seed", c.seed}});
  else
    std::cout << num(mean, 4) << " [" << num(ci.lo, 4) << ", " << num(ci.hi, 4) << "]\n";
  return 0;
}

int cmd_stats_fdr(const Common& c, const std::string& pvals, double q) {
  const auto p = parse_list<double>(pvals, "p");
  const auto rej = bh_fdr(p, q);
  if (c.json_out) {
    json j = {{"q", q}, {"results", json::array()}};
    for (std::size_t i = 0; i < p.size(); ++i) j["results"].push_back({{"p", p[i]}, {"reject", static_cast<bool>(rej[i])}});
    emit(j);
  } else {
    for (std::size_t i = 0; i < p.size(); ++i) std::cout << p[i] << " " << (rej[i] ? "reject" : "keep") << "\n";
  }
  return 0;
}

int cmd_report_render(const Common& c, const std::string& in, const std::string& out_dir) {
  const json report = read_json(in);
  const std::string md = render_markdown(report);
  std::vector<std::string> written;
  if (out_dir.empty()) {
    if (!c.json_out) std::cout << md;
  } else {
    write_file(fs::path(out_dir) / "summary.md", md);
    write_file(fs::path(out_dir) / "hit_rate.svg", plot_hit_rate_svg(report));
    written = {"summary.md", "hit_rate.svg"};
    Session s(c);
    if (!c.decoder.empty() || fs::exists(s.config().fixture_dir / "decoder.gsten")) {
      write_file(fs::path(out_dir) / "decoder_norms.svg", plot_norm_histogram_svg(s.decoder()));
      written.push_back("decoder_norms.svg");
    }
    if (!c.json_out)
      for (const auto& w : written) std::cout << (fs::path(out_dir) / w).string() << "\n";
  }
  if (c.json_out) emit({{"markdown", md}, {"written", written}});
  return 0;
}

int cmd_judge_render(const Common& c, const std::string& protocol, const std::string& scene, const std::string& emotion,
                     const std::string& definition) {
  const auto t = JudgeTemplate::builtin(judge_protocol_from_string(protocol));
  const std::string text = render(t, scene, emotion, definition);
  if (c.json_out)
    emit({{"protocol", protocol}, {"prompt", text}, {"answer_space", t.answer_space}});
  else
    std::cout << text;
  return 0;
}

int cmd_serve(const Common& c, const std::string& host, int port) {
  Session s(c);
  if (!s.toy()) throw Error("serve exposes the toy backend only");
  s.fixture();
  auto fx = std::make_shared<ToyFixture>(s.fixture());
  ProtocolServer server(std::make_shared<ToyBackend>(fx));
  std::cerr << "serving " << fx->plan.gates.size() << "-gate toy backend on " << host << ":" << port << "\n";
  server.listen(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Naming-gate discovery and causal validation for SAE features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gatescope 0.1.0");
  Common c;

  auto* fixture = app.add_subcommand("fixture", "Toy fixture tools");
  fixture->require_subcommand(1);
  auto* fbuild = fixture->add_subcommand("build", "Build and save the planted-gate toy fixture");
  std::string fx_out = "fixture", fx_kind = "default", fx_plan;
  fbuild->add_option("--out", fx_out, "Output directory");
  fbuild->add_option("--kind", fx_kind, "default or compositional")->check(CLI::IsMember({"default", "compositional"}));
  fbuild->add_option("--plan", fx_plan, "Planting plan JSON");
  add_output(fbuild, c);
  auto* fx_seed = fbuild->add_option("--seed", c.seed, "Geometry seed (overrides the plan's)");

  auto* topk = app.add_subcommand("topk", "Logit-lens top-K tokens of one feature");
  std::uint32_t tk_feature = 0;
  std::size_t tk_k = 25;
  topk->add_option("--feature,-f", tk_feature, "Feature index")->required();
  topk->add_option("--k", tk_k, "Tokens to list");
  add_output(topk, c);
  add_model(topk, c);
  add_seed(topk, c);

  auto* scan_cmd = app.add_subcommand("scan", "Stage-1 logit-lens scan for one emotion");
  std::string sc_emotion, sc_drift;
  std::size_t sc_top = 15, sc_threads = 1;
  double sc_lambda = 1.0;
  scan_cmd->add_option("--emotion,-e", sc_emotion, "Emotion (shipped EN word forms)")->required();
  scan_cmd->add_option("--drift", sc_drift, "Drift emotion to penalize");
  scan_cmd->add_option("--top", sc_top, "Candidates to keep");
  scan_cmd->add_option("--lambda", sc_lambda, "Drift penalty weight");
  scan_cmd->add_option("--threads", sc_threads, "Scan threads");
  add_output(scan_cmd, c);
  add_model(scan_cmd, c);
  add_seed(scan_cmd, c);

  auto* steer = app.add_subcommand("steer-preview", "Compile a recipe and print multipliers and norm");
  std::string sp_recipe;
  std::optional<double> sp_coherence;
  steer->add_option("--recipe,-r", sp_recipe, "feature:alpha[,feature:alpha...]")->required();
  steer->add_option("--coherence-threshold", sp_coherence, "Warn above this steering norm");
  add_output(steer, c);
  add_model(steer, c);
  add_seed(steer, c);

  auto* disc = app.add_subcommand("discover", "Three-stage discovery run");
  std::string d_plan, d_out, d_catalog, d_report;
  bool d_drift = false, d_audit = false;
  disc->add_option("--plan", d_plan, "Run plan JSON (overrides defaults)");
  disc->add_flag("--drift-aware", d_drift, "Drift-aware purity rating");
  disc->add_flag("--audit-noise", d_audit, "Send every unplanted toy feature to Stage 3");
  disc->add_option("--out,-o", d_out, "Write the RunReport JSON here");
  disc->add_option("--catalog", d_catalog, "Write the catalog of confirmed gates here");
  disc->add_option("--report-dir", d_report, "Write summary.md and plots here");
  add_output(disc, c);
  add_backend(disc, c);
  add_seed(disc, c);

  auto* vr = app.add_subcommand("validate-recipe", "Validate a compositional steering recipe");
  std::string vr_recipe, vr_label, vr_emotion, vr_plan;
  vr->add_option("--recipe,-r", vr_recipe, "feature:alpha[,feature:alpha...]")->required();
  vr->add_option("--label", vr_label, "Recipe label");
  vr->add_option("--emotion,-e", vr_emotion, "Target emotion")->required();
  vr->add_option("--plan", vr_plan, "Run plan JSON");
  add_output(vr, c);
  add_backend(vr, c);
  add_seed(vr, c);

  auto* xl = app.add_subcommand("crosslingual", "Re-test catalog gates under other prompt languages");
  std::string xl_catalog, xl_langs = "en", xl_assets, xl_plan;
  double xl_floor = 0.5;
  xl->add_option("--catalog", xl_catalog, "Catalog file")->required();
  xl->add_option("--languages", xl_langs, "Comma-separated language codes");
  xl->add_option("--assets", xl_assets, "Per-language scene prompts and templates (JSON)");
  xl->add_option("--plan", xl_plan, "Run plan JSON");
  xl->add_option("--purity-floor", xl_floor, "Flag hits whose language purity falls below this");
  add_output(xl, c);
  add_backend(xl, c);
  add_seed(xl, c);

  auto* ctl = app.add_subcommand("controls", "Random-feature control runs");
  std::string ctl_plan;
  ctl->add_option("--plan", ctl_plan, "Run plan JSON");
  add_output(ctl, c);
  add_backend(ctl, c);
  add_seed(ctl, c);

  auto* stats = app.add_subcommand("stats", "Statistics");
  stats->require_subcommand(1);
  auto* snull = stats->add_subcommand("null", "Forced-choice binomial null model");
  NullModel nm;
  int sn_seeds = 2, sn_cells = 15;
  snull->add_option("--options", nm.options, "Answer options")->check(CLI::PositiveNumber);
  snull->add_option("--panel", nm.panel, "Judges per panel")->check(CLI::PositiveNumber);
  snull->add_option("--threshold", nm.threshold, "Votes needed for a hit")->check(CLI::PositiveNumber);
  snull->add_option("--seeds-required", sn_seeds, "Seeds that must all pass");
  snull->add_option("--cells", sn_cells, "Cells tested");
  add_output(snull, c);
  add_seed(snull, c);
  auto* skappa = stats->add_subcommand("kappa", "Fleiss kappa of a subjects x categories count table");
  std::string sk_table;
  skappa->add_option("--table", sk_table, "JSON array of count rows")->required();
  add_output(skappa, c);
  add_seed(skappa, c);
  auto* sci = stats->add_subcommand("ci", "Bootstrap CI of a hit rate");
  std::string ci_hits;
  int ci_resamples = 1000;
  double ci_level = 0.95;
  sci->add_option("--hits", ci_hits, "Comma-separated 0/1 outcomes")->required();
  sci->add_option("--resamples", ci_resamples, "Bootstrap resamples");
  sci->add_option("--level", ci_level, "Confidence level");
  add_output(sci, c);
  add_seed(sci, c);
  auto* sfdr = stats->add_subcommand("fdr", "Benjamini-Hochberg FDR");
  std::string fdr_p;
  double fdr_q = 0.05;
  sfdr->add_option("--p", fdr_p, "Comma-separated p-values")->required();
  sfdr->add_option("--q", fdr_q, "FDR level");
  add_output(sfdr, c);
  add_seed(sfdr, c);

  auto* report = app.add_subcommand("report", "Report rendering");
  report->require_subcommand(1);
  auto* rrender = report->add_subcommand("render", "Markdown summary and SVG plots of a RunReport");
  std::string rr_in, rr_out;
  rrender->add_option("--in,-i", rr_in, "RunReport JSON")->required();
  rrender->add_option("--out-dir", rr_out, "Write summary.md and plots here (default: markdown to stdout)");
  add_output(rrender, c);
  add_model(rrender, c);
  add_seed(rrender, c);

  auto* judge = app.add_subcommand("judge", "Judge tools");
  judge->require_subcommand(1);
  auto* jrender = judge->add_subcommand("render", "Render a judge prompt");
  std::string jr_protocol = "forced12", jr_scene, jr_emotion, jr_def;
  jrender->add_option("--protocol", jr_protocol, "forced12, forced15, yes_strict or yes_soft");
  jrender->add_option("--scene", jr_scene, "Scene text")->required();
  jrender->add_option("--emotion", jr_emotion, "Emotion (yes/no protocols)");
  jrender->add_option("--definition", jr_def, "Emotion definition (yes/no protocols)");
  add_output(jrender, c);
  add_seed(jrender, c);

  auto* serve = app.add_subcommand("serve", "Serve the toy backend over the backend wire protocol");
  std::string sv_host = "127.0.0.1";
  int sv_port = 8765;
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port");
  add_output(serve, c);
  add_model(serve, c);
  add_seed(serve, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fbuild->parsed()) return cmd_fixture_build(c, fx_out, fx_kind, fx_plan, fx_seed->count() > 0);
    if (topk->parsed()) return cmd_topk(c, tk_feature, tk_k);
    if (scan_cmd->parsed()) return cmd_scan(c, sc_emotion, sc_drift, sc_top, sc_lambda, sc_threads);
    if (steer->parsed()) return cmd_steer_preview(c, sp_recipe, sp_coherence);
    if (disc->parsed()) return cmd_discover(c, d_plan, d_drift, d_audit, d_out, d_catalog, d_report);
    if (vr->parsed()) return cmd_validate_recipe(c, vr_recipe, vr_label, vr_emotion, vr_plan);
    if (xl->parsed()) return cmd_crosslingual(c, xl_catalog, xl_langs, xl_assets, xl_plan, xl_floor);
    if (ctl->parsed()) return cmd_controls(c, ctl_plan);
    if (snull->parsed()) return cmd_stats_null(c, nm, sn_seeds, sn_cells);
    if (skappa->parsed()) return cmd_stats_kappa(c, sk_table);
    if (sci->parsed()) return cmd_stats_ci(c, ci_hits, ci_resamples, ci_level);
    if (sfdr->parsed()) return cmd_stats_fdr(c, fdr_p, fdr_q);
    if (rrender->parsed()) return cmd_report_render(c, rr_in, rr_out);
    if (jrender->parsed()) return cmd_judge_render(c, jr_protocol, jr_scene, jr_emotion, jr_def);
    if (serve->parsed()) return cmd_serve(c, sv_host, sv_port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
