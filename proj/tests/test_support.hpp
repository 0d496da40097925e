#pragma once

// Shared fixtures for the unit and acceptance suites: a deterministic
// synthetic text corpus, a call-counting LanguageModel wrapper, and a
// chi-square tail probability for the sampling tests.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "speclab/language_model.hpp"
#include "speclab/rng.hpp"
#include "speclab/tokenizer.hpp"
#include "speclab/types.hpp"

namespace speclab::test {

/// Deterministic English-like word salad. Word-to-word transitions follow a
/// seeded Markov table, so the text has enough local structure for n-gram
/// models to disagree by order.
inline std::string synthetic_text(std::size_t approx_bytes, std::uint64_t seed) {
  static const std::vector<std::string> words = {
      "the",     "of",      "and",    "to",      "in",     "model",  "token",   "draft",
      "target",  "decode",  "speed",  "cache",   "layer",  "width",  "depth",   "latency",
      "through", "accept",  "verify", "sample",  "batch",  "memory", "compute", "bound",
      "serve",   "system",  "design", "scale",   "small",  "large",  "fast",    "slow",
      "runs",    "measure", "tokens", "second",  "output", "input",  "prompt",  "budget",
      "count",   "trade",   "narrow", "wide",    "deep",   "shallow", "step",   "phase",
      "time",    "cost",    "gain",   "rate",    "bonus",  "reject",  "profile", "bench"};
  SplitMix64 rng(seed);
  // A fixed successor table per word makes transitions predictable for
  // higher-order models without being degenerate.
  std::vector<std::vector<std::size_t>> successors(words.size());
  for (auto& s : successors) {
    for (int k = 0; k < 4; ++k) s.push_back(rng.next_u64() % words.size());
  }
  std::string out;
  out.reserve(approx_bytes + 64);
  std::size_t word = rng.next_u64() % words.size();
  int sentence_len = 0;
  bool start_of_sentence = true;
  while (out.size() < approx_bytes) {
    std::string w = words[word];
    if (start_of_sentence) {
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      start_of_sentence = false;
    }
    out += w;
    ++sentence_len;
    if (sentence_len >= 6 && rng.next_unit() < 0.25) {
      out += ". ";
      sentence_len = 0;
      start_of_sentence = true;
    } else {
      out += ' ';
    }
    // Mostly follow the table; occasionally jump anywhere.
    if (rng.next_unit() < 0.85) {
      const auto& s = successors[word];
      word = s[rng.next_u64() % s.size()];
    } else {
      word = rng.next_u64() % words.size();
    }
  }
  return out;
}

inline TokenSeq synthetic_corpus_tokens(std::size_t approx_bytes, std::uint64_t seed) {
  return tokenize_bytes(synthetic_text(approx_bytes, seed));
}

/// Wraps a LanguageModel and counts session calls, so tests can assert the
/// engine's call pattern (e.g. exactly one verification pass per iteration).
class CountingLm final : public LanguageModel {
 public:
  struct Counters {
    std::size_t prefill_calls = 0;
    std::size_t decode_calls = 0;
    std::size_t span_calls = 0;
    std::size_t span_tokens = 0;
    std::size_t truncate_calls = 0;
  };

  explicit CountingLm(std::shared_ptr<const LanguageModel> inner) : inner_(std::move(inner)) {}

  int vocab_size() const override { return inner_->vocab_size(); }
  std::size_t max_context() const override { return inner_->max_context(); }
  std::unique_ptr<LmSession> make_session() const override;

  Counters& counters() const { return counters_; }

 private:
  class Session final : public LmSession {
   public:
    Session(std::unique_ptr<LmSession> inner, Counters& counters)
        : inner_(std::move(inner)), counters_(counters) {}

    Dist prefill(std::span<const TokenId> tokens) override {
      ++counters_.prefill_calls;
      return inner_->prefill(tokens);
    }
    Dist decode_step(TokenId token) override {
      ++counters_.decode_calls;
      return inner_->decode_step(token);
    }
    std::vector<Dist> forward_span(std::span<const TokenId> tokens) override {
      ++counters_.span_calls;
      counters_.span_tokens += tokens.size();
      return inner_->forward_span(tokens);
    }
    void truncate(std::size_t n) override {
      ++counters_.truncate_calls;
      inner_->truncate(n);
    }
    std::size_t length() const override { return inner_->length(); }

   private:
    std::unique_ptr<LmSession> inner_;
    Counters& counters_;
  };

  std::shared_ptr<const LanguageModel> inner_;
  mutable Counters counters_;
};

inline std::unique_ptr<LmSession> CountingLm::make_session() const {
  return std::make_unique<Session>(inner_->make_session(), counters_);
}

// ---- chi-square tail probability via the regularized incomplete gamma ----

namespace detail {

inline double gamma_series(double a, double x) {
  double sum = 1.0 / a, term = sum, ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_cont_fraction(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

/// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw ValidationError("gamma_q domain error");
  if (x == 0.0) return 1.0;
  return x < a + 1.0 ? 1.0 - gamma_series(a, x) : gamma_cont_fraction(a, x);
}

}  // namespace detail

/// P(X >= stat) for a chi-square distribution with df degrees of freedom.
inline double chi_square_p_value(double stat, int df) {
  return detail::gamma_q(0.5 * df, 0.5 * stat);
}

/// Pearson statistic of observed counts against expected probabilities.
inline double chi_square_stat(std::span<const std::size_t> observed, const Dist& expected,
                              std::size_t n_samples) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double exp_count = expected[i] * static_cast<double>(n_samples);
    if (exp_count <= 0.0) continue;
    const double diff = static_cast<double>(observed[i]) - exp_count;
    stat += diff * diff / exp_count;
  }
  return stat;
}

}  // namespace speclab::test
