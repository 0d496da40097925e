#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "speclab/types.hpp"

namespace speclab {

/// Mutable generation state over an immutable model: a context that can be
/// extended token by token, queried for next-token distributions, and rolled
/// back after speculative rejection. Single-owner, like a KV cache.
class LmSession {
 public:
  virtual ~LmSession() = default;

  /// Process a prompt from the current position; returns the distribution
  /// for the position after the last token.
  virtual Dist prefill(std::span<const TokenId> tokens) = 0;

  /// Append one token; returns the next-token distribution.
  virtual Dist decode_step(TokenId token) = 0;

  /// Process a span of known tokens in one verification-style pass,
  /// returning the distribution after every position (last element matches
  /// what decode_step-by-step would produce).
  virtual std::vector<Dist> forward_span(std::span<const TokenId> tokens) = 0;

  /// Roll the context back to a shorter confirmed prefix.
  virtual void truncate(std::size_t new_length) = 0;

  virtual std::size_t length() const = 0;
};

/// Uniform model abstraction so the engine can pair any draft with any
/// target: tiny transformer, backoff n-gram, or scripted replay.
/// Implementations are immutable after construction; sessions carry all
/// mutable state.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual int vocab_size() const = 0;
  /// Longest context a session supports (prompt + generated + lookahead).
  virtual std::size_t max_context() const { return std::numeric_limits<std::size_t>::max(); }
  virtual std::unique_ptr<LmSession> make_session() const = 0;
};

/// Scripted model: position i of the generated continuation returns
/// script[i] regardless of context. Supports rollback, since positions are
/// absolute. Used as a test double and for adversarial draft/target pairs.
class ReplayModel final : public LanguageModel {
 public:
  explicit ReplayModel(std::vector<Dist> script) : script_(std::move(script)) {
    if (script_.empty()) throw ValidationError("replay script must be non-empty");
    vocab_ = static_cast<int>(script_.front().size());
    for (const Dist& d : script_) {
      if (static_cast<int>(d.size()) != vocab_) {
        throw ValidationError("replay script vectors must share one vocabulary size");
      }
      if (!is_normalized(d)) {
        throw ValidationError("replay script vector is not a normalized distribution");
      }
    }
  }

  int vocab_size() const override { return vocab_; }
  std::size_t script_length() const { return script_.size(); }

  std::unique_ptr<LmSession> make_session() const override;

 private:
  friend class ReplaySession;
  std::vector<Dist> script_;
  int vocab_ = 0;
};

class ReplaySession final : public LmSession {
 public:
  explicit ReplaySession(const ReplayModel& model) : model_(model) {}

  Dist prefill(std::span<const TokenId> tokens) override {
    prompt_len_ = tokens.size();
    length_ = tokens.size();
    return at(0);
  }

  Dist decode_step(TokenId) override {
    ++length_;
    return at(length_ - prompt_len_);
  }

  std::vector<Dist> forward_span(std::span<const TokenId> tokens) override {
    std::vector<Dist> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) out.push_back(decode_step(t));
    return out;
  }

  void truncate(std::size_t new_length) override {
    if (new_length > length_ || new_length < prompt_len_) {
      throw ValidationError("replay truncate out of range");
    }
    length_ = new_length;
  }

  std::size_t length() const override { return length_; }

 private:
  Dist at(std::size_t pos) const {
    if (pos >= model_.script_.size()) {
      throw std::runtime_error("replay script exhausted at position " + std::to_string(pos));
    }
    return model_.script_[pos];
  }

  const ReplayModel& model_;
  std::size_t prompt_len_ = 0;
  std::size_t length_ = 0;
};

inline std::unique_ptr<LmSession> ReplayModel::make_session() const {
  return std::make_unique<ReplaySession>(*this);
}

/// Convenience for building replay scripts from one-hot argmax choices.
inline Dist one_hot(int vocab_size, TokenId token) {
  Dist d(vocab_size, 0.0);
  d.at(static_cast<std::size_t>(token)) = 1.0;
  return d;
}

inline std::shared_ptr<ReplayModel> replay_model(std::vector<Dist> script) {
  return std::make_shared<ReplayModel>(std::move(script));
}

}  // namespace speclab
