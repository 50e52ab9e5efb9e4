#include <doctest.h>

#include "gatescope/lens.hpp"
#include "gatescope/lexeme.hpp"
#include "gatescope/remote.hpp"
#include "gatescope/steer.hpp"
#include "gatescope/toy.hpp"
#include "helpers.hpp"

using namespace gatescope;

namespace {

const char* kPrompt = "she walked into the room in the evening and looked across the table";

GenerationRequest request(std::int64_t seed, std::optional<SteeringVector> sv = std::nullopt) {
  GenerationRequest r;
  r.prompt = kPrompt;
  r.seed = seed;
  r.config.seeds = kSevenSeeds;
  r.steering = std::move(sv);
  return r;
}

std::uint32_t gate(const ToyFixture& fx, const std::string& emotion) {
  for (const auto& g : fx.plan.gates)
    if (g.emotion == emotion) return g.feature;
  return 0;
}

std::size_t calm_count(const Backend& b, const ToyFixture& fx, double alpha) {
  std::size_t n = 0;
  for (auto seed : kSevenSeeds) {
    std::optional<SteeringVector> sv;
    if (alpha != 0.0) sv = compile({{{FeatureId{gate(fx, "calmness")}, alpha}}, "calm"}, fx.decoder);
    n += count_lemmas(b.generate(request(seed, sv)).text, *find_word_forms("calmness")).count;
  }
  return n;
}

}  // namespace

TEST_CASE("toy backend: description and determinism") {
  const auto fx = testutil::default_fixture();
  ToyBackend b(fx);
  const auto d = b.describe();
  CHECK(d.d_model == kToyDModel);
  CHECK(d.d_sae == kToyDSae);
  CHECK(d.vocab_size == kToyVocab);
  CHECK(d.layer == kToyLayer);
  CHECK(d.kind == BackendKind::toy);
  CHECK_NOTHROW(check_dims(d, fx->decoder));
  CHECK(b.capabilities().capture);

  const auto a = b.generate(request(101));
  const auto again = b.generate(request(101));
  CHECK(a.text == again.text);
  CHECK(a.token_ids == again.token_ids);
  CHECK(a.token_ids.size() == 80);
  CHECK(a.text != b.generate(request(202)).text);
  const auto ids = b.tokenize(kPrompt);
  CHECK(ids.size() == 13);
  CHECK(b.tokenize(b.detokenize(ids)) == ids);
}

TEST_CASE("toy backend: zero steering is a no-op") {
  const auto fx = testutil::default_fixture();
  ToyBackend b(fx);
  for (auto seed : kThreeSeeds) {
    const auto plain = b.generate(request(seed));
    const auto zero = b.generate(request(seed, zero_steering(kToyDModel)));
    CHECK(plain.text == zero.text);
    CHECK(zero.steering_norm == 0.0);
  }
}

TEST_CASE("toy backend: steering the calm gate raises calm words monotonically") {
  const auto fx = testutil::default_fixture();
  ToyBackend b(fx);
  std::size_t prev = 0;
  for (double alpha : {0.0, 2.0, 4.0, 8.0}) {
    const auto n = calm_count(b, *fx, alpha);
    CHECK_MESSAGE(n >= prev, "alpha " << alpha);
    prev = n;
  }
  CHECK(calm_count(b, *fx, 8.0) > calm_count(b, *fx, 0.0));
  const auto steered = b.generate(request(101, compile({{{FeatureId{5}, 8.0}}, "calm"}, fx->decoder)));
  CHECK(steered.steering_norm == doctest::Approx(8.0).epsilon(1e-6));
}

TEST_CASE("toy backend: request validation and capture errors") {
  const auto fx = testutil::default_fixture();
  ToyBackend b(fx);
  auto r = request(999);
  CHECK_THROWS_AS(b.generate(r), Error);
  r = request(101, SteeringVector{std::vector<double>(3, 1.0), 1.0, {}});
  CHECK_THROWS_AS(b.generate(r), Error);
  r = request(101);
  r.prompt.clear();
  CHECK_THROWS_AS(b.generate(r), Error);
  CHECK_THROWS_AS(b.capture_activations({}), Error);

  const auto acts = b.capture_activations({kPrompt, kPrompt, "the calm sea"});
  CHECK(acts.rows() == 3);
  CHECK(acts.cols() == kToyDSae);
  CHECK(acts.role() == TensorRole::activations);
  for (std::size_t c = 0; c < acts.cols(); ++c) CHECK(acts.at(0, c) == acts.at(1, c));

  auto narrow = testutil::matrix(TensorRole::decoder, 64, 8, std::vector<float>(64 * 8, 1.0f));
  CHECK_THROWS_AS(check_dims(b.describe(), narrow), Error);
}

TEST_CASE("toy fixture: a planted register feature leads the contrastive ranking") {
  ToyPlan plan = default_toy_plan();
  PlantedRegister reg;
  reg.feature = 60;
  reg.prompts_a = {"the calm sea was quiet and serene in the evening", "she felt calm and tranquil by the window",
                   "a serene evening by the calm water", "the tranquil room was calm and quiet"};
  reg.prompts_b = {"the angry crowd shouted with rage in the street", "he felt fury and rage at the door",
                   "an angry voice full of fury", "the rage in the room was angry and loud"};
  plan.registers.push_back(reg);
  auto fx = std::make_shared<const ToyFixture>(build_toy_fixture(plan));
  ToyBackend b(fx);
  const auto ranked = contrastive_rank(b.capture_activations(reg.prompts_a), b.capture_activations(reg.prompts_b));
  REQUIRE_FALSE(ranked.empty());
  CHECK(ranked.front().feature.index == 60);
  CHECK(ranked.front().mean_gap > 0.0);
  for (const auto& e : ranked) CHECK(e.mean_gap <= ranked.front().mean_gap);
}

TEST_CASE("toy fixture: plan errors, save and load") {
  ToyPlan plan = default_toy_plan();
  plan.gates.front().feature = 64;
  CHECK_THROWS_AS(build_toy_fixture(plan), Error);
  plan = default_toy_plan();
  plan.gates[1].feature = plan.gates[0].feature;
  CHECK_THROWS_AS(build_toy_fixture(plan), Error);
  plan = default_toy_plan();
  plan.gates[0].tokens = {"zyzzyva"};
  CHECK_THROWS_AS(build_toy_fixture(plan), Error);
  plan = default_toy_plan();
  plan.gates[0].dark = 50.0;  // the plant no longer reads as its own tokens
  CHECK_THROWS_AS(build_toy_fixture(plan), Error);

  const auto fx = testutil::default_fixture();
  CHECK(toy_plan_from_json(to_json(fx->plan)).gates.size() == fx->plan.gates.size());
  CHECK(to_json(toy_plan_from_json(to_json(fx->plan))) == to_json(fx->plan));
  const auto rebuilt = build_toy_fixture(fx->plan);
  CHECK(rebuilt.decoder == fx->decoder);
  CHECK(rebuilt.unembedding == fx->unembedding);

  testutil::TempDir dir("fixture");
  save_toy_fixture(*fx, dir.path);
  for (const char* f : {"plan.json", "vocab.json", "decoder.gsten", "unembedding.gsten"})
    CHECK(std::filesystem::exists(dir.path / f));
  const auto loaded = load_toy_fixture(dir.path);
  CHECK(loaded.decoder == fx->decoder);
  CHECK(loaded.vocab.tokens() == fx->vocab.tokens());

  // A tampered matrix no longer matches its plan.
  auto other = default_toy_plan();
  other.seed = 99;
  save_tensor(build_toy_fixture(other).decoder, dir.path / "decoder.gsten");
  CHECK_THROWS_AS(load_toy_fixture(dir.path), Error);

  CHECK(fx->plan.noise_features().size() == 58);
  CHECK(default_toy_plan().gates.size() == 5);
}

TEST_CASE("remote backend round trip over the wire protocol") {
  const auto fx = testutil::default_fixture();
  auto local = std::make_shared<ToyBackend>(fx);
  ProtocolServer server(local);
  const int port = server.start();
  RemoteBackend remote("http://127.0.0.1:" + std::to_string(port), 30);

  const auto d = remote.describe();
  CHECK(d.kind == BackendKind::remote);
  CHECK(d.d_model == kToyDModel);
  CHECK(d.d_sae == kToyDSae);
  CHECK(d.vocab_size == kToyVocab);
  CHECK(remote.capabilities().capture);

  const auto sv = compile({{{FeatureId{5}, 8.0}}, "calm"}, fx->decoder);
  for (auto seed : kThreeSeeds) {
    const auto want = local->generate(request(seed, sv));
    const auto got = remote.generate(request(seed, sv));
    CHECK(got.text == want.text);
    CHECK(got.token_ids == want.token_ids);
    CHECK(remote.generate(request(seed, zero_steering(kToyDModel))).text == local->generate(request(seed)).text);
  }

  const std::vector<std::string> prompts{kPrompt, "the calm sea at night"};
  CHECK(remote.capture_activations(prompts) == local->capture_activations(prompts));

  const json body = generate_request_json(request(202, sv));
  for (const char* k : {"prompt", "steering", "temperature", "top_p", "max_new_tokens", "seed"})
    CHECK_MESSAGE(body.contains(k), k);
  CHECK(body["steering"].size() == kToyDModel);

  // Server-side errors surface with their code.
  auto empty = request(202);
  empty.prompt.clear();
  try {
    remote.generate(empty);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("backend_error") != std::string::npos);
  }
  CHECK_THROWS_AS(remote.generate(request(999, sv)), Error);
  server.stop();

  RemoteBackend gone("http://127.0.0.1:" + std::to_string(port), 2);
  CHECK_THROWS_AS(gone.describe(), Error);
  CHECK_THROWS_AS(RemoteBackend("localhost:1"), Error);
}
