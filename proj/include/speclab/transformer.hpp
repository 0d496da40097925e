#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "speclab/model_config.hpp"
#include "speclab/rng.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// Key/value tensors for one sequence, laid out per layer as
/// [max_positions x model_dim] with heads packed along model_dim.
/// Single-owner: one generation run mutates it; never share across threads.
class KVCache {
 public:
  KVCache() = default;
  KVCache(int num_layers, int max_positions, int model_dim)
      : max_positions_(max_positions),
        model_dim_(model_dim),
        keys_(num_layers, std::vector<float>(static_cast<std::size_t>(max_positions) * model_dim)),
        values_(num_layers, std::vector<float>(static_cast<std::size_t>(max_positions) * model_dim)) {}

  std::size_t length() const { return length_; }
  int max_positions() const { return max_positions_; }

  /// Roll back to a shorter confirmed prefix (speculative rejection).
  void truncate(std::size_t new_length) {
    if (new_length > length_) throw ValidationError("KVCache::truncate cannot extend the cache");
    length_ = new_length;
  }

  float* key_row(int layer, std::size_t pos) { return keys_[layer].data() + pos * model_dim_; }
  float* value_row(int layer, std::size_t pos) { return values_[layer].data() + pos * model_dim_; }
  const float* key_row(int layer, std::size_t pos) const { return keys_[layer].data() + pos * model_dim_; }
  const float* value_row(int layer, std::size_t pos) const { return values_[layer].data() + pos * model_dim_; }

  void advance() { ++length_; }

 private:
  std::size_t length_ = 0;
  int max_positions_ = 0;
  int model_dim_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

namespace detail {

/// y = W x + b with W row-major [rows x cols].
inline void gemv(std::span<const float> w, std::span<const float> b, std::span<const float> x,
                 std::span<float> y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* row = w.data() + static_cast<std::size_t>(r) * cols;
    float acc = b.empty() ? 0.0f : b[r];
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

inline void layer_norm(std::span<const float> x, std::span<const float> gain,
                       std::span<const float> bias, std::span<float> y) {
  const int n = static_cast<int>(x.size());
  float mean = 0.0f;
  for (float v : x) mean += v;
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (float v : x) {
    const float d = v - mean;
    var += d * d;
  }
  var /= static_cast<float>(n);
  const float inv = 1.0f / std::sqrt(var + 1e-5f);
  for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

}  // namespace detail

/// Minimal decoder-only transformer: learned absolute positions, pre-LN
/// blocks, causal attention, ReLU feed-forward, tied unembedding.
/// Weights are pseudorandom from weight_seed (zero mean, std 1/sqrt(d_model),
/// LayerNorm gains 1 and biases 0); there is no training loop. Immutable
/// after construction and safe to share across concurrent readers.
class Model {
 public:
  struct Layer {
    std::vector<float> wq, wk, wv, wo;      // [d x d] each
    std::vector<float> bq, bk, bv, bo;      // [d]
    std::vector<float> ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<float> w_fc1, b_fc1;        // [f x d], [f]
    std::vector<float> w_fc2, b_fc2;        // [d x f], [d]
  };

  explicit Model(const ModelConfig& config) : config_(config) {
    config.validate();
    const int d = config.model_dim;
    const int f = config.ffn_dim;
    const float scale = std::sqrt(3.0f) / std::sqrt(static_cast<float>(d));
    SplitMix64 rng(config.weight_seed);
    auto fill = [&](std::vector<float>& t, std::size_t n) {
      t.resize(n);
      for (auto& w : t) w = rng.next_symmetric(scale);
    };
    auto ones = [](std::vector<float>& t, std::size_t n) { t.assign(n, 1.0f); };
    auto zeros = [](std::vector<float>& t, std::size_t n) { t.assign(n, 0.0f); };

    fill(tok_emb_, static_cast<std::size_t>(config.vocab_size) * d);
    fill(pos_emb_, static_cast<std::size_t>(config.max_positions) * d);
    layers_.resize(config.num_layers);
    for (auto& l : layers_) {
      fill(l.wq, static_cast<std::size_t>(d) * d);
      fill(l.wk, static_cast<std::size_t>(d) * d);
      fill(l.wv, static_cast<std::size_t>(d) * d);
      fill(l.wo, static_cast<std::size_t>(d) * d);
      zeros(l.bq, d);
      zeros(l.bk, d);
      zeros(l.bv, d);
      zeros(l.bo, d);
      ones(l.ln1_g, d);
      zeros(l.ln1_b, d);
      ones(l.ln2_g, d);
      zeros(l.ln2_b, d);
      fill(l.w_fc1, static_cast<std::size_t>(f) * d);
      zeros(l.b_fc1, f);
      fill(l.w_fc2, static_cast<std::size_t>(d) * f);
      zeros(l.b_fc2, d);
    }
    ones(lnf_g_, d);
    zeros(lnf_b_, d);
  }

  const ModelConfig& config() const { return config_; }

  KVCache new_cache() const {
    return KVCache(config_.num_layers, config_.max_positions, config_.model_dim);
  }

  /// Number of weight scalars actually allocated. Cross-checked in tests
  /// against the analytic parameter-count formula.
  std::size_t total_parameter_floats() const {
    std::size_t n = tok_emb_.size() + pos_emb_.size() + lnf_g_.size() + lnf_b_.size();
    for (const auto& l : layers_) {
      n += l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size();
      n += l.bq.size() + l.bk.size() + l.bv.size() + l.bo.size();
      n += l.ln1_g.size() + l.ln1_b.size() + l.ln2_g.size() + l.ln2_b.size();
      n += l.w_fc1.size() + l.b_fc1.size() + l.w_fc2.size() + l.b_fc2.size();
    }
    return n;
  }

  /// Append one token to the cache and return next-token logits.
  LogitVector decode_step(KVCache& cache, TokenId token) const {
    if (static_cast<int>(cache.length()) >= config_.max_positions) {
      throw std::runtime_error("KV cache full: max_positions=" +
                               std::to_string(config_.max_positions));
    }
    if (token < 0 || token >= config_.vocab_size) {
      throw ValidationError("token id " + std::to_string(token) + " out of vocabulary");
    }
    const int d = config_.model_dim;
    const int f = config_.ffn_dim;
    const int n_heads = config_.num_heads;
    const int hd = config_.model_dim / n_heads;
    const std::size_t pos = cache.length();

    std::vector<float> x(d), h(d), q(d), attn(d), proj(d), ffn(f);
    const float* te = tok_emb_.data() + static_cast<std::size_t>(token) * d;
    const float* pe = pos_emb_.data() + pos * d;
    for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];

    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<float> scores(pos + 1);

    for (int li = 0; li < config_.num_layers; ++li) {
      const Layer& l = layers_[li];
      detail::layer_norm(x, l.ln1_g, l.ln1_b, h);
      detail::gemv(l.wq, l.bq, h, q, d, d);
      detail::gemv(l.wk, l.bk, h, std::span<float>(cache.key_row(li, pos), d), d, d);
      detail::gemv(l.wv, l.bv, h, std::span<float>(cache.value_row(li, pos), d), d, d);

      for (int head = 0; head < n_heads; ++head) {
        const int off = head * hd;
        float hi = -std::numeric_limits<float>::infinity();
        for (std::size_t t = 0; t <= pos; ++t) {
          const float* k = cache.key_row(li, t) + off;
          float s = 0.0f;
          for (int i = 0; i < hd; ++i) s += q[off + i] * k[i];
          scores[t] = s * inv_sqrt_hd;
          hi = std::max(hi, scores[t]);
        }
        float denom = 0.0f;
        for (std::size_t t = 0; t <= pos; ++t) {
          scores[t] = std::exp(scores[t] - hi);
          denom += scores[t];
        }
        const float inv_denom = 1.0f / denom;
        for (int i = 0; i < hd; ++i) attn[off + i] = 0.0f;
        for (std::size_t t = 0; t <= pos; ++t) {
          const float w = scores[t] * inv_denom;
          const float* v = cache.value_row(li, t) + off;
          for (int i = 0; i < hd; ++i) attn[off + i] += w * v[i];
        }
      }
      detail::gemv(l.wo, l.bo, attn, proj, d, d);
      for (int i = 0; i < d; ++i) x[i] += proj[i];

      detail::layer_norm(x, l.ln2_g, l.ln2_b, h);
      detail::gemv(l.w_fc1, l.b_fc1, h, ffn, f, d);
      for (int i = 0; i < f; ++i) ffn[i] = ffn[i] > 0.0f ? ffn[i] : 0.0f;
      detail::gemv(l.w_fc2, l.b_fc2, ffn, proj, d, f);
      for (int i = 0; i < d; ++i) x[i] += proj[i];
    }

    detail::layer_norm(x, lnf_g_, lnf_b_, h);
    LogitVector logits(config_.vocab_size);
    detail::gemv(tok_emb_, {}, h, logits, config_.vocab_size, d);

    cache.advance();
    return logits;
  }

  /// Process a span of known tokens against the cache, returning next-token
  /// logits after every position. This is the verification-style pass: the
  /// tokens are known in advance, so one call covers the whole span.
  std::vector<LogitVector> forward_span(KVCache& cache, std::span<const TokenId> tokens) const {
    std::vector<LogitVector> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(decode_step(cache, t));
    return out;
  }

 private:
  ModelConfig config_;
  std::vector<float> tok_emb_;  // [V x d], also the tied unembedding
  std::vector<float> pos_emb_;  // [max_positions x d]
  std::vector<Layer> layers_;
  std::vector<float> lnf_g_, lnf_b_;
};

inline Model init_model(const ModelConfig& config) { return Model(config); }

/// Populate a fresh cache from a prompt; returns logits for the last position
/// and the cache positioned at prompt length.
inline std::pair<LogitVector, KVCache> prefill(const Model& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw ValidationError("prefill requires at least one token");
  if (static_cast<int>(tokens.size()) > model.config().max_positions) {
    throw std::runtime_error("prompt of length " + std::to_string(tokens.size()) +
                             " exceeds max_positions " + std::to_string(model.config().max_positions));
  }
  KVCache cache = model.new_cache();
  LogitVector logits;
  for (TokenId t : tokens) logits = model.decode_step(cache, t);
  return {std::move(logits), std::move(cache)};
}

inline LogitVector decode_step(const Model& model, KVCache& cache, TokenId token) {
  return model.decode_step(cache, token);
}

}  // namespace speclab
