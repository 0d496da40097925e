#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speclab/language_model.hpp"
#include "speclab/rng.hpp"
#include "speclab/types.hpp"

namespace speclab {

enum class SamplingPolicy { Greedy, Temperature };

struct SpecRunConfig {
  int lookahead = 6;  // draft tokens proposed per iteration
  SamplingPolicy policy = SamplingPolicy::Greedy;
  double temperature = 1.0;  // used when policy == Temperature
  int max_new_tokens = 128;
  std::optional<TokenId> eos_token;
  std::uint64_t rng_seed = 0;
  int warmup_iterations = 3;  // leading iterations excluded from timed aggregates

  void validate() const {
    if (lookahead < 1) throw ValidationError("lookahead must be >= 1");
    if (max_new_tokens < 0) throw ValidationError("max_new_tokens must be >= 0");
    if (policy == SamplingPolicy::Temperature && !(temperature > 0.0)) {
      throw ValidationError("temperature must be > 0");
    }
    if (warmup_iterations < 0) throw ValidationError("warmup_iterations must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const SpecRunConfig& c) {
  j = nlohmann::json{{"lookahead", c.lookahead},
                     {"policy", c.policy == SamplingPolicy::Greedy ? "greedy" : "temperature"},
                     {"temperature", c.temperature},
                     {"max_new_tokens", c.max_new_tokens},
                     {"rng_seed", c.rng_seed},
                     {"warmup_iterations", c.warmup_iterations}};
  if (c.eos_token) j["eos_token"] = *c.eos_token;
}

inline void from_json(const nlohmann::json& j, SpecRunConfig& c) {
  c.lookahead = j.value("lookahead", 6);
  const std::string policy = j.value("policy", "greedy");
  if (policy == "greedy") {
    c.policy = SamplingPolicy::Greedy;
  } else if (policy == "temperature") {
    c.policy = SamplingPolicy::Temperature;
  } else {
    throw ValidationError("unknown sampling policy: " + policy);
  }
  c.temperature = j.value("temperature", 1.0);
  c.max_new_tokens = j.value("max_new_tokens", 128);
  if (j.contains("eos_token")) c.eos_token = j.at("eos_token").get<TokenId>();
  c.rng_seed = j.value("rng_seed", std::uint64_t{0});
  c.warmup_iterations = j.value("warmup_iterations", 3);
}

/// One draft/verify cycle. emitted is accepted + 1 (bonus token) unless
/// generation ended mid-iteration, in which case emitted == accepted.
struct IterationTrace {
  int proposed = 0;
  int accepted = 0;
  int emitted = 0;
  double draft_time = 0.0;   // seconds
  double verify_time = 0.0;  // seconds
  double wall_time = 0.0;    // whole-iteration wall clock, seconds
};

struct RunStats {
  double tar = 0.0;         // mean tokens emitted per iteration, bonus included
  double throughput = 0.0;  // tokens/second over timed iterations
  double total_draft_time = 0.0;
  double total_verify_time = 0.0;
  double total_wall_time = 0.0;
  std::size_t iterations = 0;
  std::size_t timed_iterations = 0;
  std::size_t timed_emitted = 0;
  TokenSeq output;
};

struct SpecRunResult {
  RunStats stats;
  std::vector<IterationTrace> traces;
};

struct Breakdown {
  double draft_fraction = 0.0;
  double verify_fraction = 0.0;
};

/// Phase-time split across iterations; fractions sum to 1.
inline Breakdown measure_breakdown(std::span<const IterationTrace> traces) {
  if (traces.empty()) throw ValidationError("measure_breakdown requires at least one trace");
  double draft = 0.0, verify = 0.0;
  for (const auto& t : traces) {
    draft += t.draft_time;
    verify += t.verify_time;
  }
  const double total = draft + verify;
  if (!(total > 0.0)) throw ValidationError("traces carry no recorded phase time");
  return {draft / total, verify / total};
}

// ---- verification primitives (pure; shared by the engine and its oracles) ----

/// Stochastic-acceptance probability for a proposal x: min(1, p(x)/q(x)).
inline double acceptance_probability(const Dist& p, const Dist& q, TokenId x) {
  const double qx = q.at(static_cast<std::size_t>(x));
  if (!(qx > 0.0)) {
    throw std::runtime_error("proposal has zero draft probability; it could not have been sampled");
  }
  return std::min(1.0, p[static_cast<std::size_t>(x)] / qx);
}

/// Rejection fallback: normalize max(0, p - q). Empty when p == q, in which
/// case the caller accepts the position instead (a genuine rejection with
/// p == q is impossible, so this only covers floating-point edge cases).
inline std::optional<Dist> residual_distribution(const Dist& p, const Dist& q) {
  Dist r(p.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = std::max(0.0, p[i] - q[i]);
    norm += r[i];
  }
  if (!(norm > 0.0)) return std::nullopt;
  for (double& v : r) v /= norm;
  return r;
}

namespace detail {

using EngineClock = std::chrono::steady_clock;

inline double seconds_since(EngineClock::time_point start) {
  return std::chrono::duration<double>(EngineClock::now() - start).count();
}

inline RunStats aggregate_stats(const std::vector<IterationTrace>& traces, TokenSeq output,
                                int warmup) {
  RunStats s;
  s.iterations = traces.size();
  s.output = std::move(output);
  if (traces.empty()) return s;
  std::size_t total_emitted = 0;
  for (const auto& t : traces) total_emitted += static_cast<std::size_t>(t.emitted);
  s.tar = static_cast<double>(total_emitted) / static_cast<double>(traces.size());

  // Keep at least one iteration in the timed window so short runs still
  // report a throughput.
  const std::size_t skip =
      std::min(static_cast<std::size_t>(std::max(warmup, 0)), traces.size() - 1);
  for (std::size_t i = skip; i < traces.size(); ++i) {
    s.total_draft_time += traces[i].draft_time;
    s.total_verify_time += traces[i].verify_time;
    s.total_wall_time += traces[i].wall_time;
    s.timed_emitted += static_cast<std::size_t>(traces[i].emitted);
    ++s.timed_iterations;
  }
  if (s.total_wall_time > 0.0) {
    s.throughput = static_cast<double>(s.timed_emitted) / s.total_wall_time;
  }
  return s;
}

inline void check_pair(const LanguageModel& draft, const LanguageModel& target) {
  if (draft.vocab_size() != target.vocab_size()) {
    throw ValidationError("draft and target vocabulary sizes differ (" +
                          std::to_string(draft.vocab_size()) + " vs " +
                          std::to_string(target.vocab_size()) + ")");
  }
}

}  // namespace detail

/// Baseline: plain autoregressive generation on the target, one decode per
/// emitted token.
inline RunStats generate_autoregressive(const LanguageModel& target,
                                        std::span<const TokenId> prompt,
                                        const SpecRunConfig& config) {
  config.validate();
  std::vector<IterationTrace> traces;
  TokenSeq output;
  if (config.max_new_tokens == 0) return detail::aggregate_stats(traces, output, 0);

  auto session = target.make_session();
  SplitMix64 rng(split_seed(config.rng_seed, "target"));
  Dist dist = session->prefill(prompt);
  while (static_cast<int>(output.size()) < config.max_new_tokens) {
    const auto iter_start = detail::EngineClock::now();
    TokenId token;
    if (config.policy == SamplingPolicy::Greedy) {
      token = argmax(dist);
    } else {
      token = sample_from(apply_temperature(dist, config.temperature), rng.next_unit());
    }
    output.push_back(token);
    const bool done = (config.eos_token && token == *config.eos_token) ||
                      static_cast<int>(output.size()) >= config.max_new_tokens;
    double decode_time = 0.0;
    if (!done) {
      const auto t0 = detail::EngineClock::now();
      dist = session->decode_step(token);
      decode_time = detail::seconds_since(t0);
    }
    IterationTrace tr;
    tr.proposed = 0;
    tr.accepted = 0;
    tr.emitted = 1;
    tr.verify_time = decode_time;
    tr.wall_time = detail::seconds_since(iter_start);
    traces.push_back(tr);
    if (done) break;
  }
  return detail::aggregate_stats(traces, std::move(output), config.warmup_iterations);
}

/// Draft-then-verify loop: the draft proposes lookahead tokens, the target
/// verifies them in one pass over the whole span, and the accepted prefix
/// plus one target-contributed token are emitted. Greedy verification keeps
/// the output token-identical to target-only decoding; temperature
/// verification keeps the target distribution via the accept/residual rule.
inline SpecRunResult generate_speculative(const LanguageModel& draft, const LanguageModel& target,
                                          std::span<const TokenId> prompt,
                                          const SpecRunConfig& config) {
  config.validate();
  detail::check_pair(draft, target);
  const int gamma = config.lookahead;
  const bool greedy = config.policy == SamplingPolicy::Greedy;

  SpecRunResult result;
  if (config.max_new_tokens == 0) return result;

  auto ds = draft.make_session();
  auto ts = target.make_session();
  SplitMix64 draft_rng(split_seed(config.rng_seed, "draft"));
  SplitMix64 target_rng(split_seed(config.rng_seed, "target"));

  Dist q_pending = ds->prefill(prompt);
  Dist p_pending = ts->prefill(prompt);

  TokenSeq output;
  // Tokens already confirmed in the output but not yet processed by the
  // respective session. Folding them into the next pass keeps verification
  // at exactly one target pass per iteration.
  TokenSeq draft_carry, target_carry;

  bool done = false;
  while (!done) {
    const auto iter_start = detail::EngineClock::now();
    const std::size_t context_len = prompt.size() + output.size();

    // --- draft phase: catch up on confirmed tokens, then propose ---
    const auto draft_start = detail::EngineClock::now();
    if (!draft_carry.empty()) {
      q_pending = ds->forward_span(draft_carry).back();
      draft_carry.clear();
    }
    TokenSeq proposals;
    std::vector<Dist> proposal_dists;  // temperature policy only
    proposals.reserve(gamma);
    Dist q_cur = std::move(q_pending);
    for (int j = 0; j < gamma; ++j) {
      TokenId x;
      if (greedy) {
        x = argmax(q_cur);
      } else {
        Dist q = apply_temperature(q_cur, config.temperature);
        x = sample_from(q, draft_rng.next_unit());
        proposal_dists.push_back(std::move(q));
      }
      proposals.push_back(x);
      if (j + 1 < gamma) q_cur = ds->decode_step(x);
    }
    const double draft_time = detail::seconds_since(draft_start);

    // --- verify phase: one pass over carry + proposals ---
    TokenSeq span_tokens = target_carry;
    span_tokens.insert(span_tokens.end(), proposals.begin(), proposals.end());
    const std::size_t carry = target_carry.size();
    target_carry.clear();
    const auto verify_start = detail::EngineClock::now();
    const std::vector<Dist> span_dists = ts->forward_span(span_tokens);
    const double verify_time = detail::seconds_since(verify_start);

    // Target distribution at proposal j (0-based): position of proposals[j].
    auto verify_dist = [&](int j) -> const Dist& {
      return (carry == 0 && j == 0) ? p_pending : span_dists[carry + j - 1];
    };

    // --- acceptance ---
    int accepted = 0;
    TokenId extra_token = -1;
    if (greedy) {
      while (accepted < gamma && proposals[accepted] == argmax(verify_dist(accepted))) ++accepted;
      const Dist& bonus_src = accepted == gamma ? span_dists.back() : verify_dist(accepted);
      extra_token = argmax(bonus_src);
    } else {
      bool rejected = false;
      for (int j = 0; j < gamma && !rejected; ++j) {
        const Dist p = apply_temperature(verify_dist(j), config.temperature);
        const Dist& q = proposal_dists[j];
        const double u = target_rng.next_unit();
        if (u < acceptance_probability(p, q, proposals[j])) {
          ++accepted;
          continue;
        }
        if (auto residual = residual_distribution(p, q)) {
          extra_token = sample_from(*residual, target_rng.next_unit());
          rejected = true;
        } else {
          ++accepted;  // p == q exactly: the rejection was a rounding artifact
        }
      }
      if (!rejected) {
        extra_token =
            sample_from(apply_temperature(span_dists.back(), config.temperature),
                        target_rng.next_unit());
      }
    }

    // --- emission, with EOS and budget truncation ---
    TokenSeq emitted_tokens(proposals.begin(), proposals.begin() + accepted);
    emitted_tokens.push_back(extra_token);
    const std::size_t budget = static_cast<std::size_t>(config.max_new_tokens) - output.size();
    std::size_t keep = std::min(emitted_tokens.size(), budget);
    if (config.eos_token) {
      for (std::size_t i = 0; i < keep; ++i) {
        if (emitted_tokens[i] == *config.eos_token) {
          keep = i + 1;
          done = true;
          break;
        }
      }
    }
    if (keep < emitted_tokens.size()) done = true;
    output.insert(output.end(), emitted_tokens.begin(), emitted_tokens.begin() + keep);
    if (output.size() >= static_cast<std::size_t>(config.max_new_tokens)) done = true;

    IterationTrace tr;
    tr.proposed = gamma;
    tr.accepted = keep == emitted_tokens.size() ? accepted : static_cast<int>(keep);
    tr.emitted = static_cast<int>(keep);
    tr.draft_time = draft_time;
    tr.verify_time = verify_time;

    // --- session sync for the next iteration ---
    if (!done) {
      // Full emission happened (accepted proposals + bonus token).
      ts->truncate(context_len + accepted);
      target_carry.assign(1, extra_token);
      const int draft_kept = std::min(accepted, gamma - 1);
      ds->truncate(context_len + static_cast<std::size_t>(draft_kept));
      draft_carry.assign(emitted_tokens.begin() + draft_kept, emitted_tokens.end());
    }
    tr.wall_time = detail::seconds_since(iter_start);
    result.traces.push_back(tr);
  }

  result.stats =
      detail::aggregate_stats(result.traces, std::move(output), config.warmup_iterations);
  return result;
}

struct SweepRow {
  int gamma = 0;
  double tar = 0.0;
  double throughput = 0.0;
  double draft_fraction = 0.0;
  double verify_fraction = 0.0;
  std::size_t iterations = 0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  int best_gamma = 0;  // argmax throughput, smallest gamma on ties
};

/// Run the speculative loop across prompts for each lookahead value and
/// aggregate TAR/throughput per value.
inline SweepTable sweep_lookahead(const LanguageModel& draft, const LanguageModel& target,
                                  std::span<const TokenSeq> prompts, std::span<const int> gammas,
                                  const SpecRunConfig& base_config) {
  if (gammas.empty()) throw ValidationError("sweep requires at least one lookahead value");
  if (prompts.empty()) throw ValidationError("sweep requires at least one prompt");
  SweepTable table;
  double best_tput = -1.0;
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    SpecRunConfig config = base_config;
    config.lookahead = gammas[gi];
    SweepRow row;
    row.gamma = gammas[gi];
    std::size_t total_emitted = 0, total_iterations = 0, timed_emitted = 0;
    double timed_wall = 0.0, draft_t = 0.0, verify_t = 0.0;
    for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
      config.rng_seed = split_seed(base_config.rng_seed, "sweep", gi * 131071 + pi);
      const SpecRunResult r = generate_speculative(draft, target, prompts[pi], config);
      total_emitted += r.stats.output.size();
      total_iterations += r.stats.iterations;
      timed_emitted += r.stats.timed_emitted;
      timed_wall += r.stats.total_wall_time;
      draft_t += r.stats.total_draft_time;
      verify_t += r.stats.total_verify_time;
    }
    row.iterations = total_iterations;
    if (total_iterations > 0) {
      row.tar = static_cast<double>(total_emitted) / static_cast<double>(total_iterations);
    }
    if (timed_wall > 0.0) row.throughput = static_cast<double>(timed_emitted) / timed_wall;
    const double phase_total = draft_t + verify_t;
    if (phase_total > 0.0) {
      row.draft_fraction = draft_t / phase_total;
      row.verify_fraction = verify_t / phase_total;
    }
    if (row.throughput > best_tput) {
      best_tput = row.throughput;
      table.best_gamma = row.gamma;
    }
    table.rows.push_back(row);
  }
  return table;
}

// ---- serialization for traces and stats ----

inline void to_json(nlohmann::json& j, const IterationTrace& t) {
  j = nlohmann::json{{"proposed", t.proposed},       {"accepted", t.accepted},
                     {"emitted", t.emitted},         {"draft_time", t.draft_time},
                     {"verify_time", t.verify_time}, {"wall_time", t.wall_time}};
}

inline void from_json(const nlohmann::json& j, IterationTrace& t) {
  t.proposed = j.at("proposed").get<int>();
  t.accepted = j.at("accepted").get<int>();
  t.emitted = j.at("emitted").get<int>();
  t.draft_time = j.value("draft_time", 0.0);
  t.verify_time = j.value("verify_time", 0.0);
  t.wall_time = j.value("wall_time", 0.0);
}

inline void to_json(nlohmann::json& j, const RunStats& s) {
  j = nlohmann::json{{"tar", s.tar},
                     {"throughput", s.throughput},
                     {"total_draft_time", s.total_draft_time},
                     {"total_verify_time", s.total_verify_time},
                     {"total_wall_time", s.total_wall_time},
                     {"iterations", s.iterations},
                     {"timed_iterations", s.timed_iterations},
                     {"timed_emitted", s.timed_emitted},
                     {"output", s.output}};
}

/// One trace per line, suitable for streaming tools.
inline std::string traces_to_jsonl(std::span<const IterationTrace> traces) {
  std::string out;
  for (const auto& t : traces) {
    out += nlohmann::json(t).dump();
    out += '\n';
  }
  return out;
}

}  // namespace speclab
