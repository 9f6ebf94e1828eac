#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "latentlab/tasks/vocab.hpp"

namespace latentlab::model {

using tasks::SpecialTokens;
using tasks::Token;
using tasks::Tokens;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

enum class PhiMode { Identity, Linear };

inline std::string to_string(PhiMode m) { return m == PhiMode::Identity ? "identity" : "linear"; }

inline PhiMode phi_mode_from_string(const std::string& s) {
  if (s == "identity") return PhiMode::Identity;
  if (s == "linear") return PhiMode::Linear;
  throw ConfigError("unknown phi_mode '" + s + "'");
}

struct ModelConfig {
  std::size_t vocab_size = tasks::kVocabSize;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq = 256;
  std::size_t n_latent = 4;  // latent budget per span
  PhiMode phi_mode = PhiMode::Identity;

  void validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq == 0) {
      throw ConfigError("model config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("model config: n_heads (" + std::to_string(n_heads) + ") must divide d_model (" +
                        std::to_string(d_model) + ")");
    }
    if (n_latent < 1) throw ConfigError("model config: n_latent must be >= 1");
    if (!SpecialTokens{}.valid(vocab_size)) throw ConfigError("model config: vocab too small for reserved tokens");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},       {"max_seq", c.max_seq},
          {"n_latent", c.n_latent},     {"phi_mode", to_string(c.phi_mode)}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "n_layers") c.n_layers = value.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "max_seq") c.max_seq = value.get<std::size_t>();
      else if (key == "n_latent") c.n_latent = value.get<std::size_t>();
      else if (key == "phi_mode") c.phi_mode = phi_mode_from_string(value.get<std::string>());
      else throw ConfigError("model config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

}  // namespace latentlab::model
