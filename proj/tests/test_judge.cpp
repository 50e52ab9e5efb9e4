#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "checks.hpp"
#include "gatescope/judge.hpp"
#include "gatescope/judge_clients.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace gatescope;

namespace {

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(GATESCOPE_GOLDEN_DIR) + "/" + name, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kScene = "The kettle whistled while the rain kept falling on the tin roof.";

JudgePanelResult panel_of(const std::vector<std::string>& votes, const std::string& target) {
  std::vector<JudgeVerdict> vs;
  for (std::size_t i = 0; i < votes.size(); ++i) vs.push_back(checks::verdict(static_cast<int>(i), votes[i]));
  return aggregate_panel(vs, target, 3);
}

JudgePanelResult with_majority(const std::optional<std::string>& m, const std::string& target) {
  JudgePanelResult r;
  r.target = target;
  r.majority = m;
  return r;
}

std::vector<JudgePanelResult> seeds(const std::string& target, std::vector<std::optional<std::string>> ms) {
  std::vector<JudgePanelResult> out;
  for (const auto& m : ms) out.push_back(with_majority(m, target));
  return out;
}

}  // namespace

TEST_CASE("shipped templates render byte-identically to the golden texts") {
  CHECK(render(JudgeTemplate::builtin(JudgeProtocol::forced12), kScene) == read_golden("forced12.txt"));
  CHECK(render(JudgeTemplate::builtin(JudgeProtocol::forced15), kScene) == read_golden("forced15.txt"));
  const char* def = "resentful longing for what someone else has";
  CHECK(render(JudgeTemplate::builtin(JudgeProtocol::yes_strict), kScene, "envy", def) ==
        read_golden("yes_strict.txt"));
  CHECK(render(JudgeTemplate::builtin(JudgeProtocol::yes_soft), kScene, "envy", def) == read_golden("yes_soft.txt"));
}

TEST_CASE("template rendering examples and slot rules") {
  const auto f12 = render(JudgeTemplate::builtin(JudgeProtocol::forced12), "X");
  CHECK(f12.find("Reply with ONLY the number (1-12)") != std::string::npos);
  CHECK(f12.find("Scene:\nX\n") != std::string::npos);
  const auto f15 = render(JudgeTemplate::builtin(JudgeProtocol::forced15), "X");
  CHECK(f15.find("Reply with ONLY the number (1-15)") != std::string::npos);

  const auto strict = render(JudgeTemplate::builtin(JudgeProtocol::yes_strict), "X", "envy",
                             "resentful longing for what someone else has");
  CHECK(strict.find("envy") != std::string::npos);
  CHECK(strict.find("resentful longing for what someone else has") != std::string::npos);
  CHECK(strict.find("does it primarily express the emotion") != std::string::npos);
  const auto soft = render(JudgeTemplate::builtin(JudgeProtocol::yes_soft), "X", "envy", "d");
  CHECK(soft.find("plausibly evoke the feeling") != std::string::npos);

  CHECK_THROWS_AS(render(JudgeTemplate::builtin(JudgeProtocol::yes_strict), "X", "envy"), Error);
  CHECK_THROWS_AS(render(JudgeTemplate::builtin(JudgeProtocol::yes_soft), "X"), Error);

  // A scene containing slot text is inserted literally.
  CHECK(render(JudgeTemplate::builtin(JudgeProtocol::forced12), "{emotion}").find("Scene:\n{emotion}\n") !=
        std::string::npos);

  CHECK_THROWS_AS(JudgeTemplate::custom(JudgeProtocol::forced12, "no slot"), Error);
  CHECK_THROWS_AS(JudgeTemplate::custom(JudgeProtocol::forced12, "{scene} {scene}"), Error);
  CHECK_NOTHROW(JudgeTemplate::custom(JudgeProtocol::forced12, "Szene: {scene}"));
}

TEST_CASE("answer spaces and option labels") {
  const auto f12 = JudgeTemplate::builtin(JudgeProtocol::forced12);
  const auto f15 = JudgeTemplate::builtin(JudgeProtocol::forced15);
  CHECK(f12.answer_space.size() == 12);
  CHECK(f12.answer_space.front() == "1");
  CHECK(f12.answer_space.back() == "12");
  CHECK(f15.answer_space.size() == 15);
  CHECK(JudgeTemplate::builtin(JudgeProtocol::yes_soft).answer_space == std::vector<std::string>{"yes", "no"});
  CHECK(f12.answer_for("calmness") == "10");
  CHECK(f12.answer_for("Horror") == "4");
  CHECK(f12.answer_for("confusion") == "6");
  CHECK(f12.answer_for("embarrassment") == "9");
  CHECK_FALSE(f12.answer_for("joy"));
  CHECK(f15.answer_for("joy") == "11");
  CHECK(f15.answer_for("nostalgia") == "12");
  CHECK(f12.label_of("7") == "Sadness");
  CHECK(JudgeTemplate::builtin(JudgeProtocol::yes_strict).answer_for("envy") == "yes");
}

TEST_CASE("parsing is exact after trimming, never coerced") {
  const auto space = JudgeTemplate::builtin(JudgeProtocol::forced12).answer_space;
  CHECK(parse_answer("7", space) == "7");
  CHECK(parse_answer("  7\n", space) == "7");
  for (const char* bad : {"7.", "07", "seven", "7)", "Answer: 7", "7 8", "13", "0", "", "yes", "1-12"})
    CHECK_MESSAGE(!parse_answer(bad, space), bad);
  const auto yn = JudgeTemplate::builtin(JudgeProtocol::yes_strict).answer_space;
  CHECK(parse_answer(" yes ", yn) == "yes");
  CHECK_FALSE(parse_answer("Yes", yn));
  CHECK_FALSE(parse_answer("yes.", yn));
}

TEST_CASE("property: fuzzed raw strings only parse when they trim to an answer") {
  const auto space = JudgeTemplate::builtin(JudgeProtocol::forced15).answer_space;
  const std::string alphabet = "0123456789 \t\n.-yesnoYN)";
  std::mt19937_64 rng(1234);
  std::size_t parsed = 0;
  for (int i = 0; i < 20000; ++i) {
    std::string raw;
    const std::size_t len = rng() % 6;
    for (std::size_t k = 0; k < len; ++k) raw.push_back(alphabet[rng() % alphabet.size()]);
    const auto got = parse_answer(raw, space);
    const auto b = raw.find_first_not_of(" \t\n");
    const std::string trimmed = b == std::string::npos ? "" : raw.substr(b, raw.find_last_not_of(" \t\n") - b + 1);
    const bool valid = std::find(space.begin(), space.end(), trimmed) != space.end();
    CHECK(got.has_value() == valid);
    if (got) {
      CHECK(*got == trimmed);
      ++parsed;
    }
  }
  CHECK(parsed > 0);
}

TEST_CASE("panel examples") {
  auto r = panel_of({"4", "4", "4", "7", "9"}, "4");
  CHECK(r.is_hit);
  CHECK(r.majority == "4");
  CHECK(r.target_votes == 3);

  r = panel_of({"4", "4", "7", "7", ""}, "4");
  CHECK_FALSE(r.majority);
  CHECK_FALSE(r.is_hit);
  CHECK(r.valid_votes == 4);

  r = panel_of({"7", "7", "7", "4", "4"}, "4");
  CHECK(r.majority == "7");
  CHECK_FALSE(r.is_hit);
}

TEST_CASE("panel aggregation matches the oracle on every 13^5 vote assignment") {
  const auto t = checks::vote_enumeration(true);
  CHECK(t.compared == 371293);
  CHECK(t.mismatches == 0);
}

TEST_CASE("property: aggregation is order-invariant and hit is monotone") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<std::string> votes;
    const std::size_t n = 1 + rng() % 7;
    for (std::size_t i = 0; i < n; ++i) votes.push_back(rng() % 8 == 0 ? "" : std::to_string(1 + rng() % 4));
    const std::string target = std::to_string(1 + rng() % 4);
    const auto base = panel_of(votes, target);
    auto shuffled = votes;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto again = panel_of(shuffled, target);
    CHECK(again.majority == base.majority);
    CHECK(again.is_hit == base.is_hit);
    CHECK(again.target_votes == base.target_votes);

    for (std::size_t i = 0; i < votes.size(); ++i) {
      if (votes[i] == target) continue;
      auto more = votes;
      more[i] = target;
      if (base.is_hit) CHECK(panel_of(more, target).is_hit);
    }
    auto extra = votes;
    extra.push_back(target);
    if (base.is_hit) CHECK(panel_of(extra, target).is_hit);
  }
}

TEST_CASE("specificity thresholds by seed count") {
  const SpecificityRule rule;
  // seeds: target needed, smallest breaking rival count
  const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> table{
      {1, 1, 1}, {2, 2, 1}, {3, 2, 1}, {4, 3, 2}, {5, 3, 2}, {7, 4, 2}, {14, 8, 4}};
  for (const auto& [s, need, brk] : table) {
    CHECK_MESSAGE(rule.target_needed(s) == need, "S=" << s);
    CHECK_MESSAGE(rule.other_breaking(s) == brk, "S=" << s);
  }

  CHECK(specificity(seeds("4", {"4", "4", "4", "4", "7", std::nullopt, std::nullopt})).confirmed);
  CHECK_FALSE(specificity(seeds("4", {"4", "4", "4", "7", std::nullopt, std::nullopt, std::nullopt})).confirmed);
  const auto broken = specificity(seeds("4", {"4", "4", "4", "4", "4", "4", "6"}));
  CHECK(broken.confirmed);
  const auto rival = specificity(seeds("4", {"4", "4", "4", "4", "4", "6", "6"}));
  CHECK_FALSE(rival.confirmed);
  CHECK(rival.target_majorities == 5);
  CHECK(rival.max_other == 2);
  CHECK(rival.max_other_answer == "6");

  // S = 3: all target passes, two of three passes, one rival majority breaks.
  CHECK(specificity(seeds("4", {"4", "4", "4"})).confirmed);
  CHECK(specificity(seeds("4", {"4", "4", std::nullopt})).confirmed);
  CHECK_FALSE(specificity(seeds("4", {"4", "4", "6"})).confirmed);
  CHECK_FALSE(specificity(seeds("4", {"4", std::nullopt, std::nullopt})).confirmed);

  // "no" is not a rival emotion for yes/no protocols.
  const std::vector<std::string> no{"no"};
  CHECK(specificity(seeds("yes", {"yes", "yes", "no"}), rule, no).confirmed);
  CHECK_FALSE(specificity(seeds("yes", {"yes", "yes", "no"})).confirmed);
}

TEST_CASE("specificity matches the oracle on random 7-seed profiles") {
  const auto t = checks::seed_profiles(2000, 42);
  CHECK(t.compared == 2000);
  CHECK(t.mismatches == 0);
}

TEST_CASE("controls: a 6/7 confusion profile is an attractor, misses are not") {
  std::vector<ControlObservation> obs;
  for (int s = 0; s < 7; ++s) {
    ControlObservation o{FeatureId{9}, 12.0, kSevenSeeds[static_cast<std::size_t>(s)], {}};
    o.panel = with_majority(s < 6 ? std::optional<std::string>("6") : std::nullopt, "10");
    obs.push_back(o);
  }
  const auto rep = summarize_controls(obs);
  CHECK(rep.attractors == std::vector<std::string>{"6"});
  CHECK(rep.rate("6", 12.0) == doctest::Approx(6.0 / 7.0));
  CHECK(rep.rate("6", 8.0) == 0.0);

  for (auto& o : obs) o.panel = with_majority(std::nullopt, "10");
  obs.back().panel.reset();
  const auto quiet = summarize_controls(obs);
  CHECK(quiet.attractors.empty());
  REQUIRE(quiet.profiles.size() == 1);
  CHECK(quiet.profiles[0].missing == 1);
  CHECK(quiet.profiles[0].cells == 7);
}

TEST_CASE("ask_panel: unanimous scripted judges over three seeds give 3/3") {
  std::vector<JudgePtr> judges;
  for (int i = 0; i < 5; ++i)
    judges.push_back(std::make_shared<ScriptedJudge>("s" + std::to_string(i), [](const JudgeQuery&) { return "4"; }));
  const auto t = JudgeTemplate::builtin(JudgeProtocol::forced12);
  std::vector<JudgePanelResult> per_seed;
  for (int seed = 0; seed < 3; ++seed) per_seed.push_back(ask_panel(kScene, t, "horror", "", judges, {}));
  std::size_t hits = 0;
  for (const auto& r : per_seed) hits += r.is_hit;
  CHECK(hits == 3);
  CHECK(specificity(per_seed).confirmed);
  CHECK_THROWS_AS(ask_panel(kScene, t, "joy", "", judges, {}), Error);
  CHECK_THROWS_AS(ask_panel(kScene, t, "horror", "", std::span<const JudgePtr>{}, {}), Error);
}

TEST_CASE("ask_panel: transport failures are invalid verdicts and the panel proceeds") {
  std::vector<JudgePtr> judges;
  for (int i = 0; i < 3; ++i)
    judges.push_back(std::make_shared<ScriptedJudge>("ok" + std::to_string(i), [](const JudgeQuery&) { return "10"; }));
  judges.push_back(std::make_shared<ScriptedJudge>(
      "down", [](const JudgeQuery&) -> std::string { throw std::runtime_error("connection refused"); }));
  judges.push_back(std::make_shared<ScriptedJudge>("chatty", [](const JudgeQuery&) { return "Calmness (10)"; }));
  const auto r = ask_panel(kScene, JudgeTemplate::builtin(JudgeProtocol::forced12), "calmness", "", judges, {});
  CHECK(r.is_hit);
  CHECK(r.valid_votes == 3);
  REQUIRE(r.verdicts.size() == 5);
  CHECK(r.verdicts[3].error.has_value());
  CHECK_FALSE(r.verdicts[3].parsed);
  CHECK_FALSE(r.verdicts[4].parsed);
  CHECK_FALSE(r.verdicts[4].error);
}

TEST_CASE("purity prompt and strict rating parser") {
  const std::vector<std::string> toks{"calm", "serene", "tranquil"};
  const auto p = render_purity("calmness", "peaceful ease", toks);
  CHECK(p.find("calmness") != std::string::npos);
  CHECK(p.find("calm, serene, tranquil") != std::string::npos);
  const auto d = render_purity("sadness", "sorrow", toks, "boredom");
  CHECK(d.find("boredom") != std::string::npos);
  CHECK(parse_rating("7") == 7);
  CHECK(parse_rating(" 10\n") == 10);
  for (const char* bad : {"0", "11", "7/10", "seven", "7.5", ""}) CHECK_MESSAGE(!parse_rating(bad), bad);
}

TEST_CASE("response cache: hits skip the inner judge, replay-only misses are errors") {
  testutil::TempDir dir("cache");
  auto calls = std::make_shared<std::atomic<int>>(0);
  auto inner = std::make_shared<ScriptedJudge>("counting", [calls](const JudgeQuery& q) {
    ++*calls;
    return q.scene == "a" ? "3" : "5";
  });
  CachedJudge cached(inner, dir.path);
  JudgeQuery q;
  q.template_text = "T {scene}";
  q.scene = "a";
  CHECK(cached.ask(q).raw == "3");
  CHECK(cached.ask(q).raw == "3");
  CHECK(*calls == 1);
  CHECK(cached.id() == "counting");

  JudgeQuery other = q;
  other.scene = "b";
  CHECK(cached.key(other) != cached.key(q));
  other = q;
  other.template_text = "U {scene}";
  CHECK(cached.key(other) != cached.key(q));
  other = q;
  other.purpose = QueryPurpose::rate;
  CHECK(cached.key(other) != cached.key(q));
  auto twin = std::make_shared<ScriptedJudge>("twin", [](const JudgeQuery&) { return "3"; });
  CHECK(CachedJudge(twin, dir.path).key(q) != cached.key(q));

  CachedJudge replay(inner, dir.path, true);
  CHECK(replay.ask(q).raw == "3");
  q.scene = "never seen";
  const auto miss = replay.ask(q);
  CHECK(miss.error.has_value());
  CHECK(*calls == 1);

  // Concurrent writers on the same key leave one readable entry.
  std::vector<std::thread> ts;
  JudgeQuery shared = q;
  shared.scene = "b";
  for (int i = 0; i < 8; ++i) ts.emplace_back([&] { CHECK(cached.ask(shared).raw == "5"); });
  for (auto& t : ts) t.join();
  CHECK(replay.ask(shared).raw == "5");
}

TEST_CASE("chat-completions client: request body, response parsing and retries") {
  HttpJudgeConfig cfg;
  cfg.id = "judge-a";
  cfg.model = "vendor/model-x";
  cfg.api_key = "sk-test";
  cfg.backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::seconds(5);

  httplib::Server srv;
  std::atomic<int> hits{0};
  std::string seen_auth;
  json seen_body;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":" 10 "}}]})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  HttpChatJudge judge(cfg);
  const json body = judge.request_body("hello");
  CHECK(body["model"] == "vendor/model-x");
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "hello");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["max_tokens"] == 10);

  JudgeQuery q;
  q.prompt = "Reply with ONLY the number (1-12).";
  const auto reply = judge.ask(q);
  CHECK_FALSE(reply.error);
  CHECK(reply.raw == " 10 ");
  CHECK(hits == 2);
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(seen_body["messages"][0]["content"] == q.prompt);

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/missing";
  cfg.retries = 1;
  const auto lost = HttpChatJudge(cfg).ask(q);
  CHECK(lost.error.has_value());
  srv.stop();
  th.join();

  CHECK(HttpChatJudge::parse_response(R"({"choices":[{"message":{"content":"yes"}}]})") == "yes");
  CHECK_THROWS_AS(HttpChatJudge::parse_response("not json"), Error);
  CHECK_THROWS_AS(HttpChatJudge::parse_response(R"({"choices":[]})"), Error);
  CHECK_THROWS_AS(HttpChatJudge::parse_response(R"({"choices":[{"message":{"content":null}}]})"), Error);
  cfg.endpoint = "localhost:9";
  CHECK_THROWS_AS(HttpChatJudge{cfg}, Error);
}
