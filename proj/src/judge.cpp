#include "gatescope/judge.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "gatescope/assets.hpp"
#include "gatescope/error.hpp"
#include "gatescope/parallel.hpp"

namespace gatescope {
namespace {

const std::vector<std::string> kForced12Labels{
    "Excitement", "Amusement", "Awe",     "Horror",      "Anger",        "Confusion",
    "Sadness",    "Boredom",   "Awkwardness", "Calmness", "Satisfaction", "Aesthetic Appreciation"};

const std::vector<std::string> kForced15Labels{
    "Admiration", "Adoration", "Anxiety",  "Craving", "Disgust",  "Empathic Pain", "Entrancement", "Envy",
    "Fear",       "Interest",  "Joy",      "Nostalgia", "Romance", "Sexual Desire", "Surprise"};

// Catalog labels that differ from the option names.
const std::map<std::string, std::string, std::less<>> kAliases{
    {"embarrassment", "awkwardness"}, {"aesthetic", "aesthetic appreciation"}, {"calm", "calmness"},
    {"sad", "sadness"},               {"bored", "boredom"},                    {"angry", "anger"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= n; ++i) out.push_back(std::to_string(i));
  return out;
}

std::size_t count_slot(std::string_view text, std::string_view slot) {
  std::size_t n = 0;
  for (auto pos = text.find(slot); pos != std::string_view::npos; pos = text.find(slot, pos + slot.size())) ++n;
  return n;
}

// Single pass so slot-like text inside a value is never expanded.
std::string substitute(std::string_view text, const std::vector<std::pair<std::string_view, std::string_view>>& slots) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    if (text[i] == '{') {
      for (const auto& [name, value] : slots) {
        if (text.substr(i, name.size()) == name) {
          out.append(value);
          i += name.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out.push_back(text[i++]);
  }
  return out;
}

}  // namespace

JudgeTemplate JudgeTemplate::builtin(JudgeProtocol kind) {
  switch (kind) {
    case JudgeProtocol::forced12: return custom(kind, std::string(asset("templates/forced12.txt")));
    case JudgeProtocol::forced15: return custom(kind, std::string(asset("templates/forced15.txt")));
    case JudgeProtocol::yes_strict: return custom(kind, std::string(asset("templates/yes_strict.txt")));
    case JudgeProtocol::yes_soft: return custom(kind, std::string(asset("templates/yes_soft.txt")));
  }
  throw Error("unknown judge protocol");
}

JudgeTemplate JudgeTemplate::custom(JudgeProtocol kind, std::string text) {
  if (count_slot(text, "{scene}") != 1) throw Error("judge template must contain exactly one {scene} slot");
  JudgeTemplate t;
  t.kind = kind;
  t.text = std::move(text);
  switch (kind) {
    case JudgeProtocol::forced12:
      t.answer_space = numbered(12);
      t.option_labels = kForced12Labels;
      break;
    case JudgeProtocol::forced15:
      t.answer_space = numbered(15);
      t.option_labels = kForced15Labels;
      break;
    case JudgeProtocol::yes_strict:
    case JudgeProtocol::yes_soft:
      t.answer_space = {"yes", "no"};
      break;
  }
  return t;
}

std::optional<std::string> JudgeTemplate::answer_for(std::string_view emotion) const {
  if (!forced()) return std::string("yes");
  std::string key = lower(emotion);
  if (auto it = kAliases.find(key); it != kAliases.end()) key = it->second;
  for (std::size_t i = 0; i < option_labels.size(); ++i)
    if (lower(option_labels[i]) == key) return answer_space[i];
  return std::nullopt;
}

std::string JudgeTemplate::label_of(std::string_view answer) const {
  if (forced()) {
    for (std::size_t i = 0; i < answer_space.size(); ++i)
      if (answer_space[i] == answer) return option_labels[i];
  }
  return std::string(answer);
}

std::string render(const JudgeTemplate& t, std::string_view scene, std::string_view emotion,
                   std::string_view definition) {
  if (!t.forced()) {
    if (emotion.empty()) throw Error("render: template needs an emotion");
    if (definition.empty()) throw Error("render: template needs a definition for '" + std::string(emotion) + "'");
  }
  return substitute(t.text, {{"{scene}", scene}, {"{emotion}", emotion}, {"{definition}", definition}});
}

std::optional<std::string> parse_answer(std::string_view raw, std::span<const std::string> answer_space) {
  const auto t = trim(raw);
  for (const auto& a : answer_space)
    if (t == a) return a;
  return std::nullopt;
}

JudgePanelResult aggregate_panel(std::vector<JudgeVerdict> verdicts, const std::string& target,
                                 std::size_t hit_threshold) {
  JudgePanelResult r;
  r.target = target;
  std::map<std::string, std::size_t> counts;
  for (const auto& v : verdicts) {
    if (!v.parsed) continue;
    ++counts[*v.parsed];
    ++r.valid_votes;
  }
  r.verdicts = std::move(verdicts);
  if (auto it = counts.find(target); it != counts.end()) r.target_votes = it->second;
  r.is_hit = r.target_votes >= hit_threshold;

  std::size_t best = 0, runner_up = 0;
  const std::string* best_answer = nullptr;
  for (const auto& [answer, n] : counts) {
    if (n > best) {
      runner_up = best;
      best = n;
      best_answer = &answer;
    } else if (n > runner_up) {
      runner_up = n;
    }
  }
  if (best_answer && best >= hit_threshold && best > runner_up) r.majority = *best_answer;
  return r;
}

JudgePanelResult ask_panel(const JudgeQuery& base, std::span<const std::string> answer_space,
                           const std::string& target, std::span<const JudgePtr> judges, const PanelConfig& cfg) {
  if (judges.empty()) throw Error("judge panel: no judges configured");
  std::vector<JudgeVerdict> verdicts(judges.size());
  parallel_for(judges.size(), cfg.parallelism, [&](std::size_t i) {
    JudgeVerdict v;
    v.judge_id = judges[i]->id();
    try {
      JudgeReply reply = judges[i]->ask(base);
      v.raw = std::move(reply.raw);
      v.error = std::move(reply.error);
    } catch (const std::exception& e) {
      v.error = e.what();
    }
    if (!v.error) v.parsed = parse_answer(v.raw, answer_space);
    verdicts[i] = std::move(v);
  });
  return aggregate_panel(std::move(verdicts), target, cfg.hit_threshold);
}

JudgePanelResult ask_panel(std::string_view scene, const JudgeTemplate& t, std::string_view emotion,
                           std::string_view definition, std::span<const JudgePtr> judges, const PanelConfig& cfg) {
  auto target = t.answer_for(emotion);
  if (!target) throw Error("emotion '" + std::string(emotion) + "' is not an option of this template");
  JudgeQuery q;
  q.purpose = QueryPurpose::classify;
  q.protocol = t.kind;
  q.template_text = t.text;
  q.prompt = render(t, scene, emotion, definition);
  q.scene = std::string(scene);
  q.emotion = std::string(emotion);
  q.definition = std::string(definition);
  return ask_panel(q, t.answer_space, *target, judges, cfg);
}

std::size_t SpecificityRule::target_needed(std::size_t seeds) const {
  // smallest c with den*c >= target_num*seeds
  const std::size_t num = static_cast<std::size_t>(target_num) * seeds;
  const auto d = static_cast<std::size_t>(den);
  return (num + d - 1) / d;
}

std::size_t SpecificityRule::other_breaking(std::size_t seeds) const {
  const std::size_t num = static_cast<std::size_t>(other_num) * seeds;
  const auto d = static_cast<std::size_t>(den);
  return std::max<std::size_t>(1, (num + d - 1) / d);
}

SpecificityResult specificity(std::span<const JudgePanelResult> per_seed, const SpecificityRule& rule,
                              std::span<const std::string> non_competing) {
  SpecificityResult s;
  s.seeds = per_seed.size();
  if (per_seed.empty()) return s;
  const std::string& target = per_seed.front().target;
  std::map<std::string, std::size_t> majorities;
  for (const auto& r : per_seed) {
    if (r.target != target) throw Error("specificity: panels disagree on the target answer");
    if (r.majority) ++majorities[*r.majority];
  }
  for (const auto& [answer, n] : majorities) {
    if (answer == target) {
      s.target_majorities = n;
      continue;
    }
    if (std::find(non_competing.begin(), non_competing.end(), answer) != non_competing.end()) continue;
    if (n > s.max_other) {
      s.max_other = n;
      s.max_other_answer = answer;
    }
  }
  s.confirmed = s.target_majorities >= rule.target_needed(s.seeds) && s.max_other < rule.other_breaking(s.seeds);
  return s;
}

double ControlReport::rate(std::string_view answer, double alpha) const {
  std::size_t cells = 0, hits = 0;
  for (const auto& p : profiles) {
    if (p.alpha != alpha) continue;
    cells += p.cells;
    if (auto it = p.majority_counts.find(std::string(answer)); it != p.majority_counts.end()) hits += it->second;
  }
  return cells == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(cells);
}

ControlReport summarize_controls(std::span<const ControlObservation> obs, const SpecificityRule& rule,
                                 std::span<const std::string> non_competing) {
  ControlReport rep;
  std::map<std::pair<std::uint32_t, double>, ControlProfile> by_key;
  for (const auto& o : obs) {
    auto& p = by_key[{o.feature.index, o.alpha}];
    p.feature = o.feature;
    p.alpha = o.alpha;
    ++p.cells;
    if (!o.panel) {
      ++p.missing;
      continue;
    }
    if (o.panel->majority) ++p.majority_counts[*o.panel->majority];
  }
  std::set<std::string> attractors;
  for (auto& [key, p] : by_key) {
    for (const auto& [answer, n] : p.majority_counts) {
      if (std::find(non_competing.begin(), non_competing.end(), answer) != non_competing.end()) continue;
      if (n >= rule.target_needed(p.cells)) attractors.insert(answer);
    }
    rep.profiles.push_back(std::move(p));
  }
  rep.attractors.assign(attractors.begin(), attractors.end());
  return rep;
}

std::string render_purity(std::string_view emotion, std::string_view definition,
                          std::span<const std::string> tokens, std::string_view drift) {
  std::string joined;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) joined += ", ";
    joined += tokens[i];
  }
  const std::string_view text = drift.empty() ? asset("templates/purity.txt") : asset("templates/purity_drift.txt");
  return substitute(text, {{"{emotion}", emotion}, {"{definition}", definition}, {"{tokens}", joined}, {"{drift}", drift}});
}

std::optional<int> parse_rating(std::string_view raw) {
  static const std::vector<std::string> space = numbered(10);
  auto a = parse_answer(raw, space);
  if (!a) return std::nullopt;
  return std::stoi(*a);
}

json to_json(const JudgeVerdict& v) {
  json j;
  j["judge"] = v.judge_id;
  j["raw"] = v.raw;
  j["parsed"] = v.parsed ? json(*v.parsed) : json(nullptr);
  if (v.error) j["error"] = *v.error;
  return j;
}

json to_json(const JudgePanelResult& r) {
  json j;
  j["target"] = r.target;
  j["majority"] = r.majority ? json(*r.majority) : json(nullptr);
  j["is_hit"] = r.is_hit;
  j["target_votes"] = r.target_votes;
  j["valid_votes"] = r.valid_votes;
  json vs = json::array();
  for (const auto& v : r.verdicts) vs.push_back(to_json(v));
  j["verdicts"] = std::move(vs);
  return j;
}

json to_json(const SpecificityResult& s) {
  json j;
  j["confirmed"] = s.confirmed;
  j["target_majorities"] = s.target_majorities;
  j["max_other"] = s.max_other;
  j["max_other_answer"] = s.max_other_answer;
  j["seeds"] = s.seeds;
  return j;
}

json to_json(const ControlReport& r) {
  json profiles = json::array();
  for (const auto& p : r.profiles) {
    json pj;
    pj["feature"] = p.feature.index;
    pj["alpha"] = p.alpha;
    pj["cells"] = p.cells;
    pj["missing"] = p.missing;
    json counts = json::object();
    for (const auto& [a, n] : p.majority_counts) counts[a] = n;
    pj["majority_counts"] = std::move(counts);
    profiles.push_back(std::move(pj));
  }
  json j;
  j["profiles"] = std::move(profiles);
  j["attractors"] = r.attractors;
  return j;
}

}  // namespace gatescope
