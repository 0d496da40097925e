#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "speclab/rng.hpp"
#include "speclab/transformer.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// Serializes timed experiments within the process. Untimed work may run
/// concurrently; anything whose wall-clock numbers are reported must hold
/// this lock.
inline std::mutex& timing_lock() {
  static std::mutex m;
  return m;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of empty sample set");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline double median_abs_deviation(const std::vector<double>& v, double med) {
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::abs(x - med));
  return median(std::move(dev));
}

struct TimingOptions {
  int repetitions = 30;
  int warmup = 3;
  int prefix_len = 32;  // cache position at which decode steps are timed
  std::uint64_t seed = 0;

  void validate() const {
    if (repetitions < 1) throw ValidationError("repetitions must be >= 1");
    if (warmup < 0) throw ValidationError("warmup must be >= 0");
    if (prefix_len < 1) throw ValidationError("prefix_len must be >= 1");
  }
};

struct LatencySample {
  double median_seconds = 0.0;
  double mad_seconds = 0.0;
  std::vector<double> samples;  // post-warmup repetitions, seconds
};

namespace detail {

inline TokenSeq random_prompt(int length, int vocab_size, std::uint64_t seed) {
  SplitMix64 rng(split_seed(seed, "bench-prompt"));
  TokenSeq prompt(length);
  for (auto& t : prompt) t = static_cast<TokenId>(rng.next_u64() % vocab_size);
  return prompt;
}

}  // namespace detail

/// Median decode-step latency at a fixed cache position. Each repetition
/// rolls the cache back to the prefix and times one step, so depth series
/// are comparable across models.
inline LatencySample measure_decode_step_latency(const Model& model, const TimingOptions& opts) {
  opts.validate();
  if (opts.prefix_len + 1 > model.config().max_positions) {
    throw ValidationError("prefix_len + 1 exceeds max_positions");
  }
  const TokenSeq prompt =
      detail::random_prompt(opts.prefix_len, model.config().vocab_size, opts.seed);
  auto [logits, cache] = prefill(model, prompt);
  const TokenId probe = static_cast<TokenId>(argmax(logits));

  LatencySample out;
  for (int rep = 0; rep < opts.warmup + opts.repetitions; ++rep) {
    cache.truncate(static_cast<std::size_t>(opts.prefix_len));
    const auto t0 = std::chrono::steady_clock::now();
    volatile float sink = model.decode_step(cache, probe)[0];
    (void)sink;
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rep >= opts.warmup) out.samples.push_back(dt);
  }
  out.median_seconds = median(out.samples);
  out.mad_seconds = median_abs_deviation(out.samples, out.median_seconds);
  return out;
}

/// Decode-step latency for several models measured in interleaved rounds:
/// each round times one step per model, so transient system load spreads
/// across all models instead of biasing whichever was measured when the
/// burst hit. This is the measurement used for depth/width series.
inline std::vector<LatencySample> measure_decode_step_latencies(
    std::span<const Model* const> models, const TimingOptions& opts) {
  opts.validate();
  if (models.empty()) throw ValidationError("no models to measure");
  struct State {
    KVCache cache;
    TokenId probe;
  };
  std::vector<State> states;
  states.reserve(models.size());
  for (const Model* model : models) {
    if (opts.prefix_len + 1 > model->config().max_positions) {
      throw ValidationError("prefix_len + 1 exceeds max_positions");
    }
    const TokenSeq prompt =
        detail::random_prompt(opts.prefix_len, model->config().vocab_size, opts.seed);
    auto [logits, cache] = prefill(*model, prompt);
    states.push_back({std::move(cache), static_cast<TokenId>(argmax(logits))});
  }

  std::vector<LatencySample> out(models.size());
  for (int round = 0; round < opts.warmup + opts.repetitions; ++round) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      states[i].cache.truncate(static_cast<std::size_t>(opts.prefix_len));
      const auto t0 = std::chrono::steady_clock::now();
      volatile float sink = models[i]->decode_step(states[i].cache, states[i].probe)[0];
      (void)sink;
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (round >= opts.warmup) out[i].samples.push_back(dt);
    }
  }
  for (auto& sample : out) {
    sample.median_seconds = median(sample.samples);
    sample.mad_seconds = median_abs_deviation(sample.samples, sample.median_seconds);
  }
  return out;
}

/// Median latency of generating n_tokens autoregressively from a fixed
/// prefix (the draft-phase cost of one speculative iteration).
inline LatencySample measure_generate_latency(const Model& model, int n_tokens,
                                              const TimingOptions& opts) {
  opts.validate();
  if (n_tokens < 1) throw ValidationError("n_tokens must be >= 1");
  if (opts.prefix_len + n_tokens > model.config().max_positions) {
    throw ValidationError("prefix_len + n_tokens exceeds max_positions");
  }
  const TokenSeq prompt =
      detail::random_prompt(opts.prefix_len, model.config().vocab_size, opts.seed);
  auto [logits, cache] = prefill(model, prompt);
  TokenId probe = static_cast<TokenId>(argmax(logits));

  LatencySample out;
  for (int rep = 0; rep < opts.warmup + opts.repetitions; ++rep) {
    cache.truncate(static_cast<std::size_t>(opts.prefix_len));
    TokenId token = probe;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n_tokens; ++i) {
      token = static_cast<TokenId>(argmax(model.decode_step(cache, token)));
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rep >= opts.warmup) out.samples.push_back(dt);
  }
  out.median_seconds = median(out.samples);
  out.mad_seconds = median_abs_deviation(out.samples, out.median_seconds);
  return out;
}

}  // namespace speclab
