#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speclab/model_config.hpp"
#include "speclab/perf_model.hpp"
#include "speclab/timing.hpp"
#include "speclab/transformer.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// Parameter-count conventions. The default matches model-core exactly:
/// learned positions, biases on every projection, tied unembedding, plain
/// two-matrix FFN. gated_ffn switches to three-matrix counting; biases=false
/// drops projection biases and counts gain-only norms.
struct ParamCountOptions {
  bool gated_ffn = false;
  bool biases = true;
};

/// Exact parameter count under the documented formula:
///   embeddings: V*d + P*d
///   per layer attention: 4*d^2 (+ 4*d biases)
///   per layer FFN: 2*d*f (+ f + d biases), or 3*d*f gated
///   norms: 2 per layer + final (gain+bias each, gain-only without biases)
inline std::uint64_t count_params(const ModelConfig& c, ParamCountOptions opts = {}) {
  c.validate();
  const std::uint64_t d = static_cast<std::uint64_t>(c.model_dim);
  const std::uint64_t f = static_cast<std::uint64_t>(c.ffn_dim);
  const std::uint64_t l = static_cast<std::uint64_t>(c.num_layers);
  const std::uint64_t embeddings =
      static_cast<std::uint64_t>(c.vocab_size) * d + static_cast<std::uint64_t>(c.max_positions) * d;
  std::uint64_t attn = 4 * d * d + (opts.biases ? 4 * d : 0);
  std::uint64_t ffn = (opts.gated_ffn ? 3 : 2) * d * f + (opts.biases ? f + d : 0);
  if (opts.gated_ffn && opts.biases) ffn += f;  // gate and up each carry a bias
  const std::uint64_t norm_width = opts.biases ? 2 * d : d;
  return embeddings + l * (attn + ffn + 2 * norm_width) + norm_width;
}

inline std::string count_params_formula(ParamCountOptions opts = {}) {
  std::string s = "V*d + P*d + l*(4*d^2";
  if (opts.biases) s += " + 4*d";
  s += opts.gated_ffn ? " + 3*d*f" : " + 2*d*f";
  if (opts.biases) s += opts.gated_ffn ? " + 2*f + d" : " + f + d";
  s += opts.biases ? " + 4*d) + 2*d" : " + 2*d) + d";
  return s;
}

/// Per-token KV-cache footprint: keys and values, one d_model row per layer.
/// The raw overload admits hypothetical shapes (layer count zero) that a
/// full ModelConfig would reject.
inline std::uint64_t kv_bytes_per_token(int num_layers, int model_dim, int bytes_per_element) {
  if (num_layers < 0 || model_dim < 1) throw ValidationError("invalid KV shape");
  if (bytes_per_element < 1) throw ValidationError("bytes_per_element must be >= 1");
  return 2ull * static_cast<std::uint64_t>(num_layers) * static_cast<std::uint64_t>(model_dim) *
         static_cast<std::uint64_t>(bytes_per_element);
}

inline std::uint64_t kv_bytes_per_token(const ModelConfig& c, int bytes_per_element) {
  c.validate();
  return kv_bytes_per_token(c.num_layers, c.model_dim, bytes_per_element);
}

/// TAR as a function of draft depth, supplied by the caller (measured or
/// assumed); the explorer never invents TAR values. Piecewise linear between
/// breakpoints, clamped at the ends.
class TarEstimate {
 public:
  explicit TarEstimate(std::vector<std::pair<int, double>> by_depth)
      : by_depth_(std::move(by_depth)) {
    if (by_depth_.empty()) throw ValidationError("TAR estimate needs at least one breakpoint");
    std::sort(by_depth_.begin(), by_depth_.end());
    for (const auto& [depth, tar] : by_depth_) {
      if (depth < 1 || !(tar > 0.0)) throw ValidationError("TAR breakpoints must be positive");
    }
  }

  double at(int depth) const {
    if (depth <= by_depth_.front().first) return by_depth_.front().second;
    if (depth >= by_depth_.back().first) return by_depth_.back().second;
    for (std::size_t i = 1; i < by_depth_.size(); ++i) {
      if (depth <= by_depth_[i].first) {
        const auto [d0, t0] = by_depth_[i - 1];
        const auto [d1, t1] = by_depth_[i];
        if (d1 == d0) return t1;
        const double w = static_cast<double>(depth - d0) / static_cast<double>(d1 - d0);
        return t0 + w * (t1 - t0);
      }
    }
    return by_depth_.back().second;
  }

 private:
  std::vector<std::pair<int, double>> by_depth_;
};

struct ParamBudgetSpec {
  double budget = 0.0;      // target parameter count
  double tolerance = 0.05;  // relative band around the budget
  int depth_min = 1, depth_max = 24;
  int head_min = 1, head_max = 64;
  int head_dim = 64;  // width quantum: model_dim = heads * head_dim
  double ffn_ratio_min = 1.0, ffn_ratio_max = 4.0;
  int ffn_quantum = 64;  // ffn_dim lattice step
  int vocab_size = 50272;
  int max_positions = 2050;
  int kv_bytes_per_element = 2;
  ParamCountOptions count;

  void validate() const {
    if (!(budget > 0.0)) throw ValidationError("budget must be > 0");
    if (!(tolerance > 0.0 && tolerance <= 0.5)) throw ValidationError("tolerance must be in (0, 0.5]");
    if (depth_min < 1 || depth_max < depth_min) throw ValidationError("invalid depth range");
    if (head_min < 1 || head_max < head_min) throw ValidationError("invalid head range");
    if (head_dim < 1) throw ValidationError("head_dim must be >= 1");
    if (!(ffn_ratio_min > 0.0) || ffn_ratio_max < ffn_ratio_min) {
      throw ValidationError("invalid ffn ratio range");
    }
    if (ffn_quantum < 1) throw ValidationError("ffn_quantum must be >= 1");
    if (vocab_size < 2 || max_positions < 2) throw ValidationError("invalid vocab/position sizes");
  }
};

struct ConfigReport {
  ModelConfig config;
  std::uint64_t params = 0;
  std::uint64_t kv_bytes_per_token = 0;
  double pred_latency_seconds = 0.0;
  double pred_throughput = 0.0;
  double tar_estimate = 0.0;
};

/// All lattice points within the budget band, annotated with predicted
/// decode latency and speculative throughput, best predicted throughput
/// first. An empty result is a valid outcome (the lattice missed the band);
/// an invalid spec throws.
inline std::vector<ConfigReport> enumerate_configs(const ParamBudgetSpec& spec,
                                                   const LatencyModel& latency_model,
                                                   const TarEstimate& tar_by_depth,
                                                   double t_target_seconds) {
  spec.validate();
  if (!(t_target_seconds > 0.0)) throw ValidationError("t_target must be > 0");
  std::vector<ConfigReport> out;
  for (int l = spec.depth_min; l <= spec.depth_max; ++l) {
    for (int h = spec.head_min; h <= spec.head_max; ++h) {
      const int d = h * spec.head_dim;
      const int f_lo = static_cast<int>(spec.ffn_ratio_min * d);
      const int f_hi = static_cast<int>(spec.ffn_ratio_max * d);
      int f = (f_lo + spec.ffn_quantum - 1) / spec.ffn_quantum * spec.ffn_quantum;
      if (f < spec.ffn_quantum) f = spec.ffn_quantum;
      for (; f <= f_hi; f += spec.ffn_quantum) {
        ModelConfig config;
        config.num_layers = l;
        config.num_heads = h;
        config.model_dim = d;
        config.ffn_dim = f;
        config.vocab_size = spec.vocab_size;
        config.max_positions = spec.max_positions;
        const std::uint64_t params = count_params(config, spec.count);
        const double deviation = std::abs(static_cast<double>(params) - spec.budget);
        if (deviation > spec.tolerance * spec.budget) continue;
        ConfigReport report;
        report.config = config;
        report.params = params;
        report.kv_bytes_per_token = kv_bytes_per_token(config, spec.kv_bytes_per_element);
        report.pred_latency_seconds = latency_model.predict_seconds(config);
        report.tar_estimate = tar_by_depth.at(l);
        report.pred_throughput = predict_throughput(report.tar_estimate, t_target_seconds,
                                                    report.pred_latency_seconds);
        out.push_back(report);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ConfigReport& a, const ConfigReport& b) {
    if (a.pred_throughput != b.pred_throughput) return a.pred_throughput > b.pred_throughput;
    if (a.config.num_layers != b.config.num_layers) return a.config.num_layers < b.config.num_layers;
    if (a.config.model_dim != b.config.model_dim) return a.config.model_dim < b.config.model_dim;
    return a.config.ffn_dim < b.config.ffn_dim;
  });
  return out;
}

struct CandidatePerf {
  std::string name;
  double tar = 0.0;
  double t_draft_seconds = 0.0;
};

struct CompareReport {
  CandidatePerf a, b;
  double throughput_a = 0.0;
  double throughput_b = 0.0;
  int winner = -1;  // 0 = a, 1 = b, -1 = tie
  double margin_pct = 0.0;  // winner's throughput advantage over the loser
};

/// Pure comparison from supplied (TAR, draft latency) pairs.
inline CompareReport compare_candidates(const CandidatePerf& a, const CandidatePerf& b,
                                        double t_target_seconds) {
  CompareReport r;
  r.a = a;
  r.b = b;
  r.throughput_a = predict_throughput(a.tar, t_target_seconds, a.t_draft_seconds);
  r.throughput_b = predict_throughput(b.tar, t_target_seconds, b.t_draft_seconds);
  if (r.throughput_a > r.throughput_b) {
    r.winner = 0;
    r.margin_pct = 100.0 * (r.throughput_a / r.throughput_b - 1.0);
  } else if (r.throughput_b > r.throughput_a) {
    r.winner = 1;
    r.margin_pct = 100.0 * (r.throughput_b / r.throughput_a - 1.0);
  }
  return r;
}

/// Wide-vs-deep verdict with draft latencies measured on the real models:
/// each config's cost to generate n_tokens autoregressively, combined with
/// the supplied TARs through the throughput model.
inline CompareReport compare_wide_vs_deep(const ModelConfig& config_a, const ModelConfig& config_b,
                                          double tar_a, double tar_b, double t_target_seconds,
                                          int n_tokens = 8, TimingOptions timing = {}) {
  const Model model_a(config_a);
  const Model model_b(config_b);
  CandidatePerf a{"a", tar_a, measure_generate_latency(model_a, n_tokens, timing).median_seconds};
  CandidatePerf b{"b", tar_b, measure_generate_latency(model_b, n_tokens, timing).median_seconds};
  return compare_candidates(a, b, t_target_seconds);
}

// ---- serialization ----

inline void to_json(nlohmann::json& j, const ConfigReport& r) {
  j = nlohmann::json{{"config", r.config},
                     {"params", r.params},
                     {"kv_bytes_per_token", r.kv_bytes_per_token},
                     {"pred_latency_ms", r.pred_latency_seconds * 1e3},
                     {"pred_tput", r.pred_throughput},
                     {"tar_estimate", r.tar_estimate}};
}

inline void from_json(const nlohmann::json& j, ParamBudgetSpec& s) {
  s.budget = j.at("budget").get<double>();
  s.tolerance = j.value("tolerance", 0.05);
  s.depth_min = j.value("depth_min", 1);
  s.depth_max = j.value("depth_max", 24);
  s.head_min = j.value("head_min", 1);
  s.head_max = j.value("head_max", 64);
  s.head_dim = j.value("head_dim", 64);
  s.ffn_ratio_min = j.value("ffn_ratio_min", 1.0);
  s.ffn_ratio_max = j.value("ffn_ratio_max", 4.0);
  s.ffn_quantum = j.value("ffn_quantum", 64);
  s.vocab_size = j.value("vocab_size", 50272);
  s.max_positions = j.value("max_positions", 2050);
  s.kv_bytes_per_element = j.value("kv_bytes_per_element", 2);
  s.count.gated_ffn = j.value("gated_ffn", false);
  s.count.biases = j.value("biases", true);
}

}  // namespace speclab
