#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gatescope/judge.hpp"
#include "gatescope/lexeme.hpp"

namespace gatescope {

// Answers through a callback. Used by tests and replay fixtures.
class ScriptedJudge : public JudgeClient {
 public:
  using Script = std::function<std::string(const JudgeQuery&)>;
  ScriptedJudge(std::string id, Script script);
  std::string id() const override { return id_; }
  JudgeReply ask(const JudgeQuery& q) const override;

 private:
  std::string id_;
  Script script_;
};

// Deterministic keyword judge for the toy fixture. Counts emotion word forms
// in the scene; a clear winner is the answer, repetitive text reads as
// confusion, anything else gets the judge's fallback answer.
struct LexiconJudgeParams {
  std::size_t min_count = 2;
  double dominance = 1.5;             // winner / runner-up
  double confusion_distinct = 0.35;   // distinct-word ratio below this
  std::string fallback_forced12 = "11";
  std::string fallback_forced15 = "10";
  std::size_t skim = 5;  // rating reads only the leading tokens
  int rating_bias = 0;
};

class LexiconJudge : public JudgeClient {
 public:
  LexiconJudge(std::string id, LexiconJudgeParams p = {});
  std::string id() const override { return id_; }
  JudgeReply ask(const JudgeQuery& q) const override;

 private:
  std::string classify(const JudgeQuery& q) const;
  std::string rate(const JudgeQuery& q) const;

  std::string id_;
  LexiconJudgeParams p_;
};

// The five-judge scripted panel used by the toy quickstart and the tests.
std::vector<JudgePtr> scripted_panel();

// Content-addressed response cache in front of another judge. Keys are
// SHA-256 over (template, emotion, definition, tokens, drift, scene, judge id).
// With replay_only set, a miss is reported as a transport error.
class CachedJudge : public JudgeClient {
 public:
  CachedJudge(JudgePtr inner, std::filesystem::path dir, bool replay_only = false);
  std::string id() const override;
  JudgeReply ask(const JudgeQuery& q) const override;

  std::string key(const JudgeQuery& q) const;

 private:
  JudgePtr inner_;
  std::filesystem::path dir_;
  bool replay_only_;
};

struct HttpJudgeConfig {
  std::string id;
  std::string endpoint;  // e.g. https://openrouter.ai/api/v1/chat/completions
  std::string model;
  std::string api_key;   // never serialized
  double temperature = 0.0;
  int max_tokens = 10;
  int retries = 3;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{60};
};

// OpenAI-style chat-completions client.
class HttpChatJudge : public JudgeClient {
 public:
  explicit HttpChatJudge(HttpJudgeConfig cfg);
  std::string id() const override { return cfg_.id; }
  JudgeReply ask(const JudgeQuery& q) const override;

  // Request body for a prompt; exposed for protocol tests.
  json request_body(const std::string& prompt) const;
  // Extracts choices[0].message.content.
  static std::string parse_response(std::string_view body);

 private:
  HttpJudgeConfig cfg_;
};

}  // namespace gatescope
