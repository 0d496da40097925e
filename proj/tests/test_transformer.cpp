#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <json.hpp>

#include "speclab/explorer.hpp"
#include "speclab/rng.hpp"
#include "speclab/transformer.hpp"

using namespace speclab;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.model_dim = 32;
  c.ffn_dim = 64;
  c.vocab_size = 256;
  c.max_positions = 64;
  c.weight_seed = 7;
  return c;
}

TokenSeq random_tokens(int n, int vocab, std::uint64_t seed) {
  SplitMix64 rng(seed);
  TokenSeq out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.next_u64() % vocab);
  return out;
}

}  // namespace

TEST_CASE("config validation rejects indivisible widths") {
  ModelConfig c = tiny_config();
  c.model_dim = 64;
  c.num_heads = 5;
  CHECK_THROWS_AS(Model{c}, ValidationError);
}

TEST_CASE("identical configs give bit-identical logits") {
  const ModelConfig c = tiny_config();
  const Model a(c), b(c);
  auto [la, ca] = prefill(a, TokenSeq{1, 2, 3});
  auto [lb, cb] = prefill(b, TokenSeq{1, 2, 3});
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("different seeds give different weights") {
  ModelConfig c = tiny_config();
  const Model a(c);
  c.weight_seed = 8;
  const Model b(c);
  auto [la, ca] = prefill(a, TokenSeq{1});
  auto [lb, cb] = prefill(b, TokenSeq{1});
  bool any_diff = false;
  for (std::size_t i = 0; i < la.size(); ++i) any_diff |= la[i] != lb[i];
  CHECK(any_diff);
}

TEST_CASE("allocated parameters match the analytic count") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  CHECK(m.total_parameter_floats() == count_params(c));
}

TEST_CASE("prefill equals sequential decode at every length") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int len = 1 + static_cast<int>(seed * 6 % 32);
    const TokenSeq tokens = random_tokens(len, c.vocab_size, seed);
    auto [via_prefill, cache1] = prefill(m, tokens);
    KVCache cache2 = m.new_cache();
    LogitVector via_steps;
    for (TokenId t : tokens) via_steps = m.decode_step(cache2, t);
    REQUIRE(cache1.length() == tokens.size());
    REQUIRE(cache2.length() == tokens.size());
    for (std::size_t i = 0; i < via_prefill.size(); ++i) {
      const float denom = std::max(1e-6f, std::abs(via_steps[i]));
      CHECK(std::abs(via_prefill[i] - via_steps[i]) / denom <= 1e-6f);
    }
  }
}

TEST_CASE("prefill then decode_step equals longer prefill") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  auto [l1, cache] = prefill(m, TokenSeq{5});
  const LogitVector incremental = m.decode_step(cache, 9);
  auto [joint, cache2] = prefill(m, TokenSeq{5, 9});
  for (std::size_t i = 0; i < joint.size(); ++i) CHECK(incremental[i] == joint[i]);
}

TEST_CASE("prefill rejects overlong prompts and out-of-vocab ids") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  CHECK_THROWS(prefill(m, random_tokens(c.max_positions + 1, c.vocab_size, 1)));
  CHECK_THROWS_AS(prefill(m, TokenSeq{static_cast<TokenId>(c.vocab_size)}), ValidationError);
  CHECK_THROWS(prefill(m, TokenSeq{}));
}

TEST_CASE("decode on a full cache fails") {
  ModelConfig c = tiny_config();
  c.max_positions = 4;
  const Model m(c);
  auto [logits, cache] = prefill(m, TokenSeq{1, 2, 3, 4});
  CHECK_THROWS_AS(m.decode_step(cache, 1), std::runtime_error);
}

TEST_CASE("decode extends the cache by exactly one position") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  KVCache cache = m.new_cache();
  for (int i = 0; i < 10; ++i) {
    m.decode_step(cache, static_cast<TokenId>(i));
    CHECK(cache.length() == static_cast<std::size_t>(i + 1));
  }
}

TEST_CASE("truncate rolls back to a reusable state") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  KVCache cache = m.new_cache();
  m.decode_step(cache, 10);
  m.decode_step(cache, 11);
  const LogitVector first = m.decode_step(cache, 12);

  cache.truncate(2);
  const LogitVector again = m.decode_step(cache, 12);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == again[i]);
  CHECK_THROWS_AS(cache.truncate(5), ValidationError);
}

TEST_CASE("forward_span returns per-position logits matching single steps") {
  const ModelConfig c = tiny_config();
  const Model m(c);
  const TokenSeq tokens = random_tokens(8, c.vocab_size, 3);

  KVCache span_cache = m.new_cache();
  const auto span_logits = m.forward_span(span_cache, tokens);

  KVCache step_cache = m.new_cache();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const LogitVector step = m.decode_step(step_cache, tokens[i]);
    for (std::size_t j = 0; j < step.size(); ++j) CHECK(span_logits[i][j] == step[j]);
  }
}

TEST_CASE("config serializes with the documented field names") {
  const ModelConfig c = tiny_config();
  const nlohmann::json j = c;
  CHECK(j.at("num_layers") == 2);
  CHECK(j.at("num_heads") == 2);
  CHECK(j.at("model_dim") == 32);
  CHECK(j.at("ffn_dim") == 64);
  CHECK(j.at("vocab_size") == 256);
  CHECK(j.at("max_positions") == 64);
  CHECK(j.at("weight_seed") == 7);
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(back == c);
}
