#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "speclab/types.hpp"

namespace speclab {

/// Architecture hyperparameters for the tiny decoder-only transformer and
/// for design-space entries. OPT-style conventions: learned absolute
/// positions, biases on every projection, tied input/output embedding.
struct ModelConfig {
  int num_layers = 2;        // l
  int num_heads = 2;         // h
  int model_dim = 64;        // d_model, must be divisible by num_heads
  int ffn_dim = 256;         // d_inter
  int vocab_size = 257;      // V
  int max_positions = 512;
  std::uint64_t weight_seed = 0;

  int head_dim() const { return model_dim / num_heads; }

  void validate() const {
    if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
    if (num_heads < 1) throw ValidationError("num_heads must be >= 1");
    if (model_dim < 1) throw ValidationError("model_dim must be >= 1");
    if (ffn_dim < 1) throw ValidationError("ffn_dim must be >= 1");
    if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
    if (max_positions < 2) throw ValidationError("max_positions must be >= 2");
    if (model_dim % num_heads != 0) {
      throw ValidationError("model_dim must be divisible by num_heads (got " +
                            std::to_string(model_dim) + " / " + std::to_string(num_heads) + ")");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},   {"num_heads", c.num_heads},
                     {"model_dim", c.model_dim},     {"ffn_dim", c.ffn_dim},
                     {"vocab_size", c.vocab_size},   {"max_positions", c.max_positions},
                     {"weight_seed", c.weight_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("model_dim").get_to(c.model_dim);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_positions").get_to(c.max_positions);
  c.weight_seed = j.value("weight_seed", std::uint64_t{0});
}

}  // namespace speclab
