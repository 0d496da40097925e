#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speclab/language_model.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// Backoff n-gram model with absolute discounting down to a uniform base,
/// so every token has nonzero probability and conditional distributions
/// normalize exactly. Distributions are analytic (no sampling), which is
/// what the distribution-preservation tests lean on.
class NGramModel final : public LanguageModel {
 public:
  struct ContextStats {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> counts;
  };

  NGramModel(int order, double discount, int vocab_size)
      : order_(order), discount_(discount), vocab_(vocab_size), levels_(order) {
    if (order < 1 || order > 8) throw ValidationError("n-gram order must be in [1, 8]");
    if (!(discount > 0.0 && discount < 1.0)) throw ValidationError("discount must be in (0, 1)");
    if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
  }

  int vocab_size() const override { return vocab_; }
  int order() const { return order_; }
  double discount() const { return discount_; }

  void add_sequence(std::span<const TokenId> seq) {
    for (TokenId t : seq) {
      if (t < 0 || t >= vocab_) {
        throw ValidationError("corpus token " + std::to_string(t) + " outside vocabulary");
      }
    }
    for (int k = 1; k <= order_; ++k) {
      const std::size_t ctx_len = static_cast<std::size_t>(k) - 1;
      if (seq.size() < static_cast<std::size_t>(k)) continue;
      for (std::size_t i = ctx_len; i < seq.size(); ++i) {
        ContextStats& stats = levels_[k - 1][encode(seq.subspan(i - ctx_len, ctx_len))];
        stats.total += 1;
        stats.counts[seq[i]] += 1;
      }
    }
    trained_tokens_ += seq.size();
  }

  std::uint64_t trained_tokens() const { return trained_tokens_; }

  /// Exact next-token distribution given a context (only the last order-1
  /// tokens matter). Backoff chain: level k interpolates its discounted
  /// maximum-likelihood estimate with level k-1, bottoming out at uniform.
  Dist next_distribution(std::span<const TokenId> context) const {
    Dist dist(static_cast<std::size_t>(vocab_), 1.0 / vocab_);
    for (int k = 1; k <= order_; ++k) {
      const std::size_t ctx_len = static_cast<std::size_t>(k) - 1;
      if (context.size() < ctx_len) break;
      const auto& table = levels_[k - 1];
      const auto it = table.find(encode(context.subspan(context.size() - ctx_len, ctx_len)));
      if (it == table.end() || it->second.total == 0) continue;  // P_k = P_{k-1}
      const ContextStats& stats = it->second;
      const double total = static_cast<double>(stats.total);
      const double lambda = discount_ * static_cast<double>(stats.counts.size()) / total;
      for (double& p : dist) p *= lambda;
      for (const auto& [tok, cnt] : stats.counts) {
        dist[static_cast<std::size_t>(tok)] += (static_cast<double>(cnt) - discount_) / total;
      }
    }
    return dist;
  }

  std::unique_ptr<LmSession> make_session() const override;

  nlohmann::json to_json() const {
    nlohmann::json levels = nlohmann::json::array();
    for (int k = 1; k <= order_; ++k) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& [key, stats] : levels_[k - 1]) {
        nlohmann::json counts = nlohmann::json::array();
        for (const auto& [tok, cnt] : stats.counts) counts.push_back({tok, cnt});
        entries.push_back({{"context", decode(key)}, {"counts", std::move(counts)}});
      }
      levels.push_back(std::move(entries));
    }
    return nlohmann::json{{"format", "speclab.ngram"},
                          {"version", 1},
                          {"order", order_},
                          {"discount", discount_},
                          {"vocab_size", vocab_},
                          {"trained_tokens", trained_tokens_},
                          {"levels", std::move(levels)}};
  }

  static NGramModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "speclab.ngram" || j.value("version", 0) != 1) {
      throw ValidationError("not a speclab.ngram v1 document");
    }
    NGramModel m(j.at("order").get<int>(), j.at("discount").get<double>(),
                 j.at("vocab_size").get<int>());
    m.trained_tokens_ = j.value("trained_tokens", std::uint64_t{0});
    const auto& levels = j.at("levels");
    for (std::size_t k = 0; k < levels.size() && k < m.levels_.size(); ++k) {
      for (const auto& entry : levels[k]) {
        TokenSeq ctx = entry.at("context").get<TokenSeq>();
        ContextStats& stats = m.levels_[k][encode(ctx)];
        for (const auto& pair : entry.at("counts")) {
          const TokenId tok = pair.at(0).get<TokenId>();
          const std::uint64_t cnt = pair.at(1).get<std::uint64_t>();
          stats.counts[tok] += cnt;
          stats.total += cnt;
        }
      }
    }
    return m;
  }

 private:
  static std::string encode(std::span<const TokenId> ctx) {
    std::string key(ctx.size() * sizeof(TokenId), '\0');
    if (!ctx.empty()) std::memcpy(key.data(), ctx.data(), key.size());
    return key;
  }

  static TokenSeq decode(const std::string& key) {
    TokenSeq ctx(key.size() / sizeof(TokenId));
    if (!ctx.empty()) std::memcpy(ctx.data(), key.data(), key.size());
    return ctx;
  }

  int order_;
  double discount_;
  int vocab_;
  std::uint64_t trained_tokens_ = 0;
  std::vector<std::unordered_map<std::string, ContextStats>> levels_;  // levels_[k-1]: contexts of length k-1
};

class NGramSession final : public LmSession {
 public:
  explicit NGramSession(const NGramModel& model) : model_(model) {}

  Dist prefill(std::span<const TokenId> tokens) override {
    history_.assign(tokens.begin(), tokens.end());
    return model_.next_distribution(history_);
  }

  Dist decode_step(TokenId token) override {
    history_.push_back(token);
    return model_.next_distribution(history_);
  }

  std::vector<Dist> forward_span(std::span<const TokenId> tokens) override {
    std::vector<Dist> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(decode_step(t));
    return out;
  }

  void truncate(std::size_t new_length) override {
    if (new_length > history_.size()) throw ValidationError("n-gram truncate out of range");
    history_.resize(new_length);
  }

  std::size_t length() const override { return history_.size(); }

 private:
  const NGramModel& model_;
  TokenSeq history_;
};

inline std::unique_ptr<LmSession> NGramModel::make_session() const {
  return std::make_unique<NGramSession>(*this);
}

/// Count-based fit over token sequences; deterministic for a given corpus.
inline std::shared_ptr<NGramModel> fit_ngram(std::span<const TokenSeq> corpus, int order,
                                             double discount, int vocab_size) {
  auto model = std::make_shared<NGramModel>(order, discount, vocab_size);
  for (const TokenSeq& seq : corpus) model->add_sequence(seq);
  if (model->trained_tokens() == 0) throw ValidationError("n-gram corpus is empty");
  return model;
}

}  // namespace speclab
