#include "gatescope/judge_clients.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "gatescope/error.hpp"
#include "gatescope/lens.hpp"

namespace gatescope {

ScriptedJudge::ScriptedJudge(std::string id, Script script) : id_(std::move(id)), script_(std::move(script)) {
  if (!script_) throw Error("scripted judge needs a script");
}

JudgeReply ScriptedJudge::ask(const JudgeQuery& q) const { return {script_(q), std::nullopt}; }

namespace {

struct OptionForms {
  std::string answer;
  LemmaMatcher matcher;
};

const std::vector<OptionForms>& options_for(JudgeProtocol kind) {
  static const auto build = [](JudgeProtocol k) {
    const auto t = JudgeTemplate::builtin(k);
    const auto& lists = k == JudgeProtocol::forced15 ? ck15_word_forms() : base12_word_forms();
    std::vector<OptionForms> out;
    for (const auto& wf : lists) {
      if (auto a = t.answer_for(wf.emotion)) out.push_back({*a, LemmaMatcher(wf)});
    }
    return out;
  };
  static const auto forced12 = build(JudgeProtocol::forced12);
  static const auto forced15 = build(JudgeProtocol::forced15);
  return kind == JudgeProtocol::forced15 ? forced15 : forced12;
}

std::size_t distinct_words(const std::vector<std::string>& words) {
  std::vector<std::string> w = words;
  std::sort(w.begin(), w.end());
  return static_cast<std::size_t>(std::unique(w.begin(), w.end()) - w.begin());
}

}  // namespace

LexiconJudge::LexiconJudge(std::string id, LexiconJudgeParams p) : id_(std::move(id)), p_(std::move(p)) {}

JudgeReply LexiconJudge::ask(const JudgeQuery& q) const {
  return {q.purpose == QueryPurpose::rate ? rate(q) : classify(q), std::nullopt};
}

std::string LexiconJudge::classify(const JudgeQuery& q) const {
  const auto words = split_words(q.scene);
  const bool repetitive =
      !words.empty() && static_cast<double>(distinct_words(words)) < p_.confusion_distinct * words.size();

  if (q.protocol == JudgeProtocol::yes_strict || q.protocol == JudgeProtocol::yes_soft) {
    const WordFormList* target = find_word_forms(q.emotion);
    if (!target) return "no";
    const std::size_t n = LemmaMatcher(*target).count(words).count;
    std::size_t rival = 0;
    for (const auto* lists : {&base12_word_forms(), &ck15_word_forms()})
      for (const auto& wf : *lists)
        if (wf.emotion != target->emotion) rival = std::max(rival, LemmaMatcher(wf).count(words).count);
    if (q.protocol == JudgeProtocol::yes_soft) return n >= 1 ? "yes" : "no";
    return n >= p_.min_count && static_cast<double>(n) >= p_.dominance * static_cast<double>(rival) ? "yes" : "no";
  }

  std::size_t best = 0, runner_up = 0;
  std::string best_answer;
  for (const auto& o : options_for(q.protocol)) {
    const std::size_t n = o.matcher.count(words).count;
    if (n > best) {
      runner_up = best;
      best = n;
      best_answer = o.answer;
    } else if (n > runner_up) {
      runner_up = n;
    }
  }
  if (best >= p_.min_count && static_cast<double>(best) >= p_.dominance * static_cast<double>(runner_up))
    return best_answer;
  if (repetitive) {
    // forced15 has no confusion option; the judge answers off-format.
    return q.protocol == JudgeProtocol::forced12 ? "6" : "Confusion";
  }
  return q.protocol == JudgeProtocol::forced15 ? p_.fallback_forced15 : p_.fallback_forced12;
}

std::string LexiconJudge::rate(const JudgeQuery& q) const {
  const WordFormList* target = find_word_forms(q.emotion);
  const WordFormList* drift = q.drift.empty() ? nullptr : find_word_forms(q.drift);
  auto in = [](const WordFormList* wf, const std::string& tok) {
    return wf && std::find(wf->forms.begin(), wf->forms.end(), tok) != wf->forms.end();
  };
  int score = 1 + p_.rating_bias;
  const std::size_t n = std::min(q.tokens.size(), p_.skim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tok = normalize_token(q.tokens[i]);
    if (in(target, tok)) score += 3;
    if (in(drift, tok)) score -= 3;
  }
  return std::to_string(std::clamp(score, 1, 10));
}

std::vector<JudgePtr> scripted_panel() {
  const std::vector<std::pair<std::string, std::string>> fallbacks{
      {"11", "10"}, {"1", "3"}, {"2", "15"}, {"9", "5"}, {"12", "13"}};
  std::vector<JudgePtr> panel;
  for (std::size_t i = 0; i < fallbacks.size(); ++i) {
    LexiconJudgeParams p;
    p.min_count = i < 3 ? 2 : 3;
    p.dominance = 1.4 + 0.1 * static_cast<double>(i % 3);
    p.confusion_distinct = 0.15 + 0.01 * static_cast<double>(i);
    p.fallback_forced12 = fallbacks[i].first;
    p.fallback_forced15 = fallbacks[i].second;
    p.rating_bias = i == 4 ? -1 : 0;
    panel.push_back(std::make_shared<LexiconJudge>("lexicon-" + std::to_string(i + 1), p));
  }
  return panel;
}

namespace {

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::atomic<std::uint64_t> g_tmp_counter{0};

}  // namespace

CachedJudge::CachedJudge(JudgePtr inner, std::filesystem::path dir, bool replay_only)
    : inner_(std::move(inner)), dir_(std::move(dir)), replay_only_(replay_only) {
  if (!inner_) throw Error("cached judge needs an inner judge");
  std::filesystem::create_directories(dir_);
}

std::string CachedJudge::id() const { return inner_->id(); }

std::string CachedJudge::key(const JudgeQuery& q) const {
  // A JSON array keeps field boundaries unambiguous.
  json parts = json::array({q.purpose == QueryPurpose::rate ? "rate" : "classify", q.template_text, q.emotion,
                            q.definition, q.tokens, q.drift, q.scene, inner_->id()});
  return sha256_hex(parts.dump());
}

JudgeReply CachedJudge::ask(const JudgeQuery& q) const {
  const auto path = dir_ / (key(q) + ".json");
  if (std::ifstream in{path, std::ios::binary}) {
    std::stringstream ss;
    ss << in.rdbuf();
    const auto j = json::parse(ss.str(), nullptr, false);
    if (!j.is_discarded() && j.contains("raw") && j["raw"].is_string()) return {j["raw"].get<std::string>(), std::nullopt};
  }
  if (replay_only_) return {"", "cache miss in replay-only mode"};
  JudgeReply reply = inner_->ask(q);
  if (reply.error) return reply;

  json entry;
  entry["judge"] = inner_->id();
  entry["raw"] = reply.raw;
  std::ostringstream tmp_name;
  tmp_name << path.filename().string() << ".tmp." << std::this_thread::get_id() << "." << g_tmp_counter++;
  const auto tmp = dir_ / tmp_name.str();
  {
    std::ofstream out{tmp, std::ios::binary};
    out << entry.dump() << "\n";
    if (!out) throw Error("cannot write cache entry " + tmp.string());
  }
  // Same content for the same key, so a concurrent rename is harmless.
  std::filesystem::rename(tmp, path);
  return reply;
}

HttpChatJudge::HttpChatJudge(HttpJudgeConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.find("://") == std::string::npos) throw Error("judge endpoint must be an http(s) URL");
  if (cfg_.model.empty()) throw Error("judge model is empty");
  if (cfg_.id.empty()) cfg_.id = cfg_.model;
}

json HttpChatJudge::request_body(const std::string& prompt) const {
  json body;
  body["model"] = cfg_.model;
  body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = cfg_.temperature;
  body["max_tokens"] = cfg_.max_tokens;
  return body;
}

std::string HttpChatJudge::parse_response(std::string_view body) {
  const auto j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error("judge response is not JSON");
  const auto& choices = j.value("choices", json::array());
  if (!choices.is_array() || choices.empty()) throw Error("judge response has no choices");
  const auto& content = choices[0].value("message", json::object()).value("content", json());
  if (!content.is_string()) throw Error("judge response has no message content");
  return content.get<std::string>();
}

JudgeReply HttpChatJudge::ask(const JudgeQuery& q) const {
  const auto scheme_end = cfg_.endpoint.find("://") + 3;
  const auto path_start = cfg_.endpoint.find('/', scheme_end);
  const std::string origin = cfg_.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);

  httplib::Client cli(origin);
  cli.set_connection_timeout(cfg_.timeout);
  cli.set_read_timeout(cfg_.timeout);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  const std::string body = request_body(q.prompt).dump();

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 1)));
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "http " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) return {"", "http " + std::to_string(res->status)};
    try {
      return {parse_response(res->body), std::nullopt};
    } catch (const Error& e) {
      return {"", e.what()};
    }
  }
  return {"", last_error};
}

}  // namespace gatescope
