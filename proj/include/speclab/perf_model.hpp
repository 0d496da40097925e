#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "speclab/model_config.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// Inputs to the analytical throughput models. t_target_d / t_draft_d are
/// end-to-end per-iteration phase latencies in seconds (target verification
/// of d proposals; draft generation of d tokens). alpha / gamma / c feed the
/// acceptance-rate model kept for comparison.
struct AnalyticalParams {
  double tar = 0.0;
  double t_target_d = 0.0;  // seconds
  double t_draft_d = 0.0;   // seconds
  double alpha = 0.0;       // per-token acceptance rate in [0, 1]
  int gamma = 1;
  double c = 0.1;  // draft/target latency ratio

  void validate() const {
    if (!(tar > 0.0)) throw ValidationError("TAR must be > 0");
    if (!(t_target_d > 0.0) || !(t_draft_d > 0.0)) {
      throw ValidationError("latencies must be > 0");
    }
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("alpha must be in [0, 1]");
    if (gamma < 1) throw ValidationError("gamma must be >= 1");
    if (!(c > 0.0)) throw ValidationError("latency ratio c must be > 0");
  }
};

/// Simplified throughput model: TAR tokens per combined draft+verify
/// iteration, with a floor of one token per iteration when TAR <= 1.
inline double predict_throughput(const AnalyticalParams& params) {
  params.validate();
  const double denom = params.t_target_d + params.t_draft_d;
  return (params.tar > 1.0 ? params.tar : 1.0) / denom;
}

inline double predict_throughput(double tar, double t_target_d, double t_draft_d) {
  AnalyticalParams p;
  p.tar = tar;
  p.t_target_d = t_target_d;
  p.t_draft_d = t_draft_d;
  return predict_throughput(p);
}

/// Expected tokens matched per iteration under i.i.d. per-token acceptance
/// rate alpha: (1 - alpha^(gamma+1)) / (1 - alpha), the geometric partial sum.
inline double improvement_factor(double alpha, int gamma) {
  if (alpha < 0.0 || alpha > 1.0) throw ValidationError("alpha must be in [0, 1]");
  if (gamma < 1) throw ValidationError("gamma must be >= 1");
  if (alpha == 1.0) return static_cast<double>(gamma) + 1.0;  // limit of the sum
  return (1.0 - std::pow(alpha, gamma + 1)) / (1.0 - alpha);
}

/// Acceptance-rate speedup model: improvement factor over the combined
/// draft+target latency gamma*c + 1 (kept for comparison with the
/// TAR-based model above).
inline double acceptance_rate_speedup(double alpha, int gamma, double c) {
  if (!(c > 0.0)) throw ValidationError("latency ratio c must be > 0");
  return improvement_factor(alpha, gamma) / (static_cast<double>(gamma) * c + 1.0);
}

struct ParityResult {
  double parity_latency = 0.0;  // seconds: draft latency at which the candidate ties the baseline
  double reduction_pct = 0.0;   // how much of the candidate's latency must go
  bool clamped = false;         // true when even a zero-latency draft cannot reach parity
};

/// Draft latency at which a candidate (TAR, t_draft) would match a baseline
/// throughput, and the corresponding latency reduction.
inline ParityResult parity_latency(double candidate_tar, double candidate_t_draft,
                                   double baseline_throughput, double t_target) {
  if (!(candidate_tar > 0.0)) throw ValidationError("candidate TAR must be > 0");
  if (!(candidate_t_draft > 0.0)) throw ValidationError("candidate draft latency must be > 0");
  if (!(baseline_throughput > 0.0)) throw ValidationError("baseline throughput must be > 0");
  if (!(t_target > 0.0)) throw ValidationError("target latency must be > 0");
  ParityResult r;
  r.parity_latency = candidate_tar / baseline_throughput - t_target;
  if (r.parity_latency < 0.0) {
    r.parity_latency = 0.0;
    r.clamped = true;
  }
  r.reduction_pct = 100.0 * (1.0 - r.parity_latency / candidate_t_draft);
  return r;
}

struct ExtraTarResult {
  double needed_tar = 0.0;  // TAR the candidate needs at its own latency
  double extra_tar = 0.0;   // needed - current
  bool feasible = true;     // false when needed exceeds the gamma+1 cap
};

/// Additional TAR a candidate needs to match a baseline throughput at its
/// own latency; infeasible when the needed TAR exceeds the gamma+1 cap.
inline ExtraTarResult extra_tar(double candidate_tar, double candidate_t_draft,
                                double baseline_throughput, double t_target, int gamma) {
  if (!(candidate_tar > 0.0)) throw ValidationError("candidate TAR must be > 0");
  if (!(candidate_t_draft > 0.0)) throw ValidationError("candidate draft latency must be > 0");
  if (!(baseline_throughput > 0.0)) throw ValidationError("baseline throughput must be > 0");
  if (!(t_target > 0.0)) throw ValidationError("target latency must be > 0");
  if (gamma < 1) throw ValidationError("gamma must be >= 1");
  ExtraTarResult r;
  r.needed_tar = baseline_throughput * (t_target + candidate_t_draft);
  r.extra_tar = r.needed_tar - candidate_tar;
  r.feasible = r.needed_tar <= static_cast<double>(gamma) + 1.0;
  return r;
}

/// TAR required to reach a target throughput at the given phase latencies.
inline double required_tar(double target_throughput, double t_target, double t_draft) {
  if (!(target_throughput > 0.0) || !(t_target > 0.0) || !(t_draft > 0.0)) {
    throw ValidationError("required_tar needs positive inputs");
  }
  return target_throughput * (t_target + t_draft);
}

inline bool tar_reachable(double tar, int gamma) {
  return tar <= static_cast<double>(gamma) + 1.0;
}

/// Affine decode-step cost in depth: seconds = slope_per_layer * l + intercept,
/// fitted at a fixed width. Above saturation_width the per-layer cost is
/// scaled by the per-layer FLOP ratio; below it, width is treated as free.
struct LatencyModel {
  double slope_per_layer = 0.0;  // seconds per layer
  double intercept = 0.0;        // width-independent floor, seconds
  double r_squared = 0.0;
  int ref_model_dim = 0;
  int ref_ffn_dim = 0;
  int saturation_width = 0;

  static double per_layer_flops(int model_dim, int ffn_dim) {
    const double d = static_cast<double>(model_dim);
    const double f = static_cast<double>(ffn_dim);
    return 4.0 * d * d + 2.0 * d * f;
  }

  double predict_seconds(const ModelConfig& config) const {
    double scale = 1.0;
    if (config.model_dim > saturation_width && ref_model_dim > 0) {
      scale = per_layer_flops(config.model_dim, config.ffn_dim) /
              per_layer_flops(ref_model_dim, ref_ffn_dim);
    }
    return slope_per_layer * scale * static_cast<double>(config.num_layers) + intercept;
  }
};

/// Least-squares fit of decode-step time against depth. Requires at least
/// three distinct depths measured at one (model_dim, ffn_dim) width.
inline LatencyModel fit_latency_model(
    std::span<const std::pair<ModelConfig, double>> samples) {
  if (samples.size() < 3) {
    throw ValidationError("latency fit needs at least 3 samples");
  }
  const int ref_d = samples.front().first.model_dim;
  const int ref_f = samples.front().first.ffn_dim;
  std::vector<int> depths;
  for (const auto& [config, seconds] : samples) {
    if (config.model_dim != ref_d || config.ffn_dim != ref_f) {
      throw ValidationError("latency fit samples must share one width");
    }
    if (!(seconds > 0.0)) throw ValidationError("latency samples must be positive");
    depths.push_back(config.num_layers);
  }
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  if (depths.size() < 3) {
    throw ValidationError("latency fit needs at least 3 distinct depths");
  }

  const double n = static_cast<double>(samples.size());
  double mean_l = 0.0, mean_t = 0.0;
  for (const auto& [config, seconds] : samples) {
    mean_l += config.num_layers;
    mean_t += seconds;
  }
  mean_l /= n;
  mean_t /= n;
  double cov = 0.0, var_l = 0.0;
  for (const auto& [config, seconds] : samples) {
    const double dl = config.num_layers - mean_l;
    cov += dl * (seconds - mean_t);
    var_l += dl * dl;
  }

  LatencyModel m;
  m.slope_per_layer = cov / var_l;
  m.intercept = mean_t - m.slope_per_layer * mean_l;
  m.ref_model_dim = ref_d;
  m.ref_ffn_dim = ref_f;
  m.saturation_width = ref_d;

  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [config, seconds] : samples) {
    const double pred = m.slope_per_layer * config.num_layers + m.intercept;
    ss_res += (seconds - pred) * (seconds - pred);
    ss_tot += (seconds - mean_t) * (seconds - mean_t);
  }
  m.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return m;
}

}  // namespace speclab
