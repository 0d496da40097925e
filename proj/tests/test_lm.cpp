#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "speclab/language_model.hpp"
#include "speclab/ngram.hpp"
#include "speclab/tokenizer.hpp"
#include "speclab/transformer_lm.hpp"
#include "test_support.hpp"

using namespace speclab;

namespace {

/// Held-in perplexity oracle, computed only through the public
/// next_distribution query.
double perplexity(const NGramModel& model, const TokenSeq& corpus) {
  double log_sum = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Dist d = model.next_distribution(std::span(corpus.data(), i));
    log_sum += std::log(d[static_cast<std::size_t>(corpus[i])]);
  }
  return std::exp(-log_sum / static_cast<double>(corpus.size()));
}

}  // namespace

TEST_CASE("degenerate single-token corpus matches the closed form") {
  // Ten repetitions of token 2 with V=4, discount 0.5:
  // P(t) = (10 - 0.5)/10 + (0.5 * 1/10) * (1/4), everything else gets the
  // leaked uniform share.
  const TokenSeq seq(10, 2);
  const std::vector<TokenSeq> corpus{seq};
  const auto model = fit_ngram(corpus, 1, 0.5, 4);
  const Dist d = model->next_distribution({});
  CHECK(d[2] == doctest::Approx(0.9625).epsilon(1e-12));
  CHECK(d[0] == doctest::Approx(0.0125).epsilon(1e-12));
  CHECK(argmax(std::span<const double>(d)) == 2);
  CHECK(sum_of(d) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fitting twice gives identical models") {
  const TokenSeq tokens = test::synthetic_corpus_tokens(4000, 11);
  const std::vector<TokenSeq> corpus{tokens};
  const auto a = fit_ngram(corpus, 3, 0.5, kByteVocabSize);
  const auto b = fit_ngram(corpus, 3, 0.5, kByteVocabSize);
  CHECK(a->to_json().dump() == b->to_json().dump());
  for (std::size_t off = 0; off + 3 < tokens.size(); off += 997) {
    const auto ctx = std::span(tokens.data() + off, 3);
    const Dist da = a->next_distribution(ctx);
    const Dist db = b->next_distribution(ctx);
    for (std::size_t i = 0; i < da.size(); ++i) CHECK(da[i] == db[i]);
  }
}

TEST_CASE("higher order fits held-in text at least as well") {
  const TokenSeq tokens = test::synthetic_corpus_tokens(20000, 3);
  const std::vector<TokenSeq> corpus{tokens};
  const auto order4 = fit_ngram(corpus, 4, 0.5, kByteVocabSize);
  const auto order1 = fit_ngram(corpus, 1, 0.5, kByteVocabSize);
  CHECK(perplexity(*order4, tokens) <= perplexity(*order1, tokens));
}

TEST_CASE("conditional distributions normalize with full support") {
  const TokenSeq tokens = test::synthetic_corpus_tokens(8000, 5);
  const std::vector<TokenSeq> corpus{tokens};
  const auto model = fit_ngram(corpus, 4, 0.5, kByteVocabSize);

  // Observed contexts, an unobserved context, and the empty context.
  std::vector<TokenSeq> contexts = {{}, {1, 2, 3}, {255, 255, 255}};
  for (std::size_t off = 0; off + 3 < tokens.size(); off += 501) {
    contexts.emplace_back(tokens.begin() + off, tokens.begin() + off + 3);
  }
  for (const auto& ctx : contexts) {
    const Dist d = model->next_distribution(ctx);
    CHECK(std::abs(sum_of(d) - 1.0) <= 1e-9);
    for (double p : d) CHECK(p > 0.0);
  }
}

TEST_CASE("n-gram JSON round trip preserves distributions") {
  const TokenSeq tokens = test::synthetic_corpus_tokens(3000, 9);
  const std::vector<TokenSeq> corpus{tokens};
  const auto model = fit_ngram(corpus, 2, 0.4, kByteVocabSize);
  const NGramModel restored = NGramModel::from_json(model->to_json());
  for (TokenId c = 0; c < 32; ++c) {
    const TokenSeq ctx{c};
    const Dist a = model->next_distribution(ctx);
    const Dist b = restored.next_distribution(ctx);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
  }
}

TEST_CASE("fit validation") {
  const std::vector<TokenSeq> empty;
  CHECK_THROWS_AS(fit_ngram(empty, 2, 0.5, 16), ValidationError);
  const std::vector<TokenSeq> empty_seqs{TokenSeq{}, TokenSeq{}};
  CHECK_THROWS_AS(fit_ngram(empty_seqs, 2, 0.5, 16), ValidationError);
  const std::vector<TokenSeq> corpus{TokenSeq{1, 2, 3}};
  CHECK_THROWS_AS(fit_ngram(corpus, 0, 0.5, 16), ValidationError);
  CHECK_THROWS_AS(fit_ngram(corpus, 9, 0.5, 16), ValidationError);
  CHECK_THROWS_AS(fit_ngram(corpus, 2, 1.5, 16), ValidationError);
  const std::vector<TokenSeq> oov{TokenSeq{40}};
  CHECK_THROWS_AS(fit_ngram(oov, 1, 0.5, 16), ValidationError);
}

TEST_CASE("n-gram session supports rollback") {
  const TokenSeq tokens = test::synthetic_corpus_tokens(3000, 2);
  const std::vector<TokenSeq> corpus{tokens};
  const auto model = fit_ngram(corpus, 3, 0.5, kByteVocabSize);
  auto session = model->make_session();
  session->prefill(TokenSeq{10, 20});
  const Dist first = session->decode_step(30);
  session->truncate(2);
  const Dist again = session->decode_step(30);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == again[i]);
}

TEST_CASE("replay model plays its script by generated position") {
  const auto model = replay_model({Dist{1.0, 0.0}, Dist{0.0, 1.0}});
  auto session = model->make_session();
  Dist d = session->prefill(TokenSeq{0, 1, 0});
  CHECK(argmax(std::span<const double>(d)) == 0);
  d = session->decode_step(0);
  CHECK(argmax(std::span<const double>(d)) == 1);
}

TEST_CASE("replay rejects unnormalized script vectors") {
  CHECK_THROWS_AS(ReplayModel({Dist{0.5, 0.2}}), ValidationError);
  CHECK_THROWS_AS(ReplayModel({Dist{0.5, 0.5}, Dist{1.0}}), ValidationError);
  CHECK_THROWS_AS(ReplayModel({}), ValidationError);
}

TEST_CASE("replay errors past the end of the script") {
  const auto model = replay_model({one_hot(4, 0), one_hot(4, 1), one_hot(4, 2)});
  auto session = model->make_session();
  session->prefill(TokenSeq{0});
  session->decode_step(0);
  session->decode_step(1);
  CHECK_THROWS_AS(session->decode_step(2), std::runtime_error);
}

TEST_CASE("transformer distributions equal the softmax of its logits") {
  ModelConfig config;
  config.num_layers = 1;
  config.num_heads = 2;
  config.model_dim = 16;
  config.ffn_dim = 32;
  config.vocab_size = 64;
  config.max_positions = 16;
  config.weight_seed = 3;
  const TransformerLm lm(config);

  auto session = lm.make_session();
  const Dist dist = session->prefill(TokenSeq{1, 2});
  CHECK(std::abs(sum_of(dist) - 1.0) <= 1e-9);

  auto [logits, cache] = prefill(lm.model(), TokenSeq{1, 2});
  const Dist direct = softmax(logits);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    CHECK(std::abs(dist[i] - direct[i]) <= 1e-9);
  }
}
