#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "speclab/language_model.hpp"
#include "speclab/transformer.hpp"
#include "speclab/types.hpp"

namespace speclab {

/// LanguageModel adapter over the tiny transformer. Distributions are the
/// softmax of the model's logits, computed in double.
class TransformerLm final : public LanguageModel {
 public:
  explicit TransformerLm(ModelConfig config) : model_(std::move(config)) {}
  explicit TransformerLm(Model model) : model_(std::move(model)) {}

  int vocab_size() const override { return model_.config().vocab_size; }
  std::size_t max_context() const override {
    return static_cast<std::size_t>(model_.config().max_positions);
  }
  const Model& model() const { return model_; }

  std::unique_ptr<LmSession> make_session() const override;

 private:
  Model model_;
};

class TransformerSession final : public LmSession {
 public:
  explicit TransformerSession(const Model& model) : model_(model), cache_(model.new_cache()) {}

  Dist prefill(std::span<const TokenId> tokens) override {
    LogitVector logits;
    for (TokenId t : tokens) logits = model_.decode_step(cache_, t);
    if (logits.empty()) throw ValidationError("prefill requires at least one token");
    return softmax(logits);
  }

  Dist decode_step(TokenId token) override { return softmax(model_.decode_step(cache_, token)); }

  std::vector<Dist> forward_span(std::span<const TokenId> tokens) override {
    std::vector<Dist> out;
    out.reserve(tokens.size());
    for (const LogitVector& l : model_.forward_span(cache_, tokens)) out.push_back(softmax(l));
    return out;
  }

  void truncate(std::size_t new_length) override { cache_.truncate(new_length); }

  std::size_t length() const override { return cache_.length(); }

 private:
  const Model& model_;
  KVCache cache_;
};

inline std::unique_ptr<LmSession> TransformerLm::make_session() const {
  return std::make_unique<TransformerSession>(model_);
}

}  // namespace speclab
