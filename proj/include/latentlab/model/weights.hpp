#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentlab/model/config.hpp"
#include "latentlab/numerics/rng.hpp"
#include "latentlab/numerics/tape.hpp"

namespace latentlab::model {

using num::Tensor;

/// Index layout of the parameter list for a given config. The output head is
/// tied to the token embedding.
struct WeightLayout {
  static constexpr std::size_t kTokEmb = 0;
  static constexpr std::size_t kPosEmb = 1;
  static constexpr std::size_t kPerLayer = 12;
  static constexpr std::size_t kFirstLayer = 2;

  enum LayerSlot : std::size_t { Ln1G, Ln1B, WQkv, BQkv, WO, BO, Ln2G, Ln2B, W1, B1, W2, B2 };

  std::size_t n_layers;
  bool has_phi;

  std::size_t layer(std::size_t l, LayerSlot s) const { return kFirstLayer + l * kPerLayer + s; }
  std::size_t final_gain() const { return kFirstLayer + n_layers * kPerLayer; }
  std::size_t final_bias() const { return final_gain() + 1; }
  std::size_t phi_w() const { return final_bias() + 1; }
  std::size_t phi_b() const { return final_bias() + 2; }
  std::size_t count() const { return final_bias() + 1 + (has_phi ? 2 : 0); }
};

struct Weights {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t size() const { return tensors.size(); }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }
  Tensor& operator[](std::size_t i) { return tensors[i]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const Weights&, const Weights&) = default;
};

inline WeightLayout layout_for(const ModelConfig& c) { return {c.n_layers, c.phi_mode == PhiMode::Linear}; }

/// Expected (name, shape) list for a config, in layout order.
inline std::vector<std::pair<std::string, num::Shape>> weight_manifest(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, num::Shape>> m;
  m.emplace_back("tok_emb", num::Shape{c.vocab_size, d});
  m.emplace_back("pos_emb", num::Shape{c.max_seq, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    m.emplace_back(p + "ln1.gain", num::Shape{d});
    m.emplace_back(p + "ln1.bias", num::Shape{d});
    m.emplace_back(p + "attn.w_qkv", num::Shape{d, 3 * d});
    m.emplace_back(p + "attn.b_qkv", num::Shape{3 * d});
    m.emplace_back(p + "attn.w_out", num::Shape{d, d});
    m.emplace_back(p + "attn.b_out", num::Shape{d});
    m.emplace_back(p + "ln2.gain", num::Shape{d});
    m.emplace_back(p + "ln2.bias", num::Shape{d});
    m.emplace_back(p + "mlp.w_in", num::Shape{d, c.d_ff});
    m.emplace_back(p + "mlp.b_in", num::Shape{c.d_ff});
    m.emplace_back(p + "mlp.w_out", num::Shape{c.d_ff, d});
    m.emplace_back(p + "mlp.b_out", num::Shape{d});
  }
  m.emplace_back("ln_f.gain", num::Shape{d});
  m.emplace_back("ln_f.bias", num::Shape{d});
  if (c.phi_mode == PhiMode::Linear) {
    m.emplace_back("phi.weight", num::Shape{d, d});
    m.emplace_back("phi.bias", num::Shape{d});
  }
  return m;
}

inline constexpr double kInitStd = 0.02;

/// GPT-2 style init: N(0, 0.02) matrices, residual output projections scaled
/// by 1/sqrt(2 * n_layers), unit layer-norm gains, phi starting at identity.
inline Weights init_weights(const ModelConfig& c, num::Rng& rng) {
  c.validate();
  Weights w;
  const double resid_std = kInitStd / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  for (auto& [name, shape] : weight_manifest(c)) {
    Tensor t(shape);
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias") || name.find(".b_") != std::string::npos;
    if (name == "phi.weight") {
      t = Tensor::identity(c.d_model);
    } else if (is_gain) {
      t.fill(1.0);
    } else if (!is_bias) {
      const double sd = (name.ends_with("attn.w_out") || name.ends_with("mlp.w_out")) ? resid_std : kInitStd;
      for (double& v : t.data()) v = sd * rng.normal();
    }
    w.names.push_back(name);
    w.tensors.push_back(std::move(t));
  }
  return w;
}

inline void check_weights(const Weights& w, const ModelConfig& c) {
  const auto m = weight_manifest(c);
  if (w.size() != m.size()) throw ConfigError("weights: expected " + std::to_string(m.size()) + " tensors");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (w.names[i] != m[i].first || w.tensors[i].shape() != m[i].second) {
      throw ConfigError("weights: tensor " + std::to_string(i) + " is " + w.names[i] + num::shape_str(w.tensors[i].shape()) +
                        ", expected " + m[i].first + num::shape_str(m[i].second));
    }
  }
}

}  // namespace latentlab::model
