#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace speclab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Dense probability vector over the vocabulary. Kept in double so that
/// normalization and acceptance arithmetic hold to 1e-9 or better.
using Dist = std::vector<double>;

/// Raw next-token scores from a model forward pass (float32 internally).
using LogitVector = std::vector<float>;

/// Thrown for malformed configs, arguments, or input files. The CLI maps
/// this to exit code 1; everything else maps to 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline int argmax(std::span<const double> v) {
  if (v.empty()) throw ValidationError("argmax of empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline int argmax(std::span<const float> v) {
  if (v.empty()) throw ValidationError("argmax of empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Numerically stable softmax of float logits into a double distribution.
inline Dist softmax(std::span<const float> logits) {
  Dist out(logits.size());
  const double hi = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - hi);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

/// Temperature transform of an already-normalized distribution:
/// p_i^(1/T) renormalized. Identical to softmax(logits / T) when p came
/// from softmax(logits), and well defined for table-based models too.
inline Dist apply_temperature(const Dist& p, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (temperature == 1.0) return p;
  Dist out(p.size());
  const double inv_t = 1.0 / temperature;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::pow(p[i], inv_t) : 0.0;
    sum += out[i];
  }
  if (!(sum > 0.0)) throw std::runtime_error("temperature transform collapsed distribution");
  for (double& v : out) v /= sum;
  return out;
}

/// Inverse-CDF sample given u in [0, 1).
inline int sample_from(const Dist& p, double u) {
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  // Guard against cum falling epsilon short of 1: return last positive entry.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  throw std::runtime_error("sample_from: distribution has no mass");
}

inline double sum_of(const Dist& p) {
  return std::accumulate(p.begin(), p.end(), 0.0);
}

inline bool is_normalized(const Dist& p, double tol = 1e-9) {
  if (p.empty()) return false;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
  }
  return std::abs(sum_of(p) - 1.0) <= tol;
}

}  // namespace speclab
