#pragma once

#include <variant>
#include <vector>

#include "latentlab/model/weights.hpp"
#include "latentlab/numerics/ops.hpp"

namespace latentlab::model {

using num::Var;
using Vector = std::vector<double>;

/// One input position: a vocabulary id, or a raw d_model vector that bypasses
/// the embedding table (fed-back latents, soft tokens).
using Input = std::variant<Token, Vector>;
using Sequence = std::vector<Input>;

inline Sequence to_inputs(const Tokens& tokens) { return Sequence(tokens.begin(), tokens.end()); }

/// Weights placed on a tape, either as trainable leaves or constants.
struct BoundWeights {
  std::vector<Var> vars;
  WeightLayout layout;

  const Var& operator[](std::size_t i) const { return vars[i]; }
};

inline BoundWeights bind(num::Tape& tape, const Weights& w, const ModelConfig& c, bool trainable) {
  BoundWeights b{{}, layout_for(c)};
  b.vars.reserve(w.size());
  for (const Tensor& t : w.tensors) b.vars.push_back(trainable ? tape.leaf(t) : tape.constant(t));
  return b;
}

struct ForwardVars {
  Var hidden;  // [N x d] final-layer (post final norm) hidden states
  Var logits;  // [N x vocab]
  std::vector<num::Segment> segments;
};

/// Pre-norm decoder over a packed batch of sequences. Each sequence attends
/// causally within itself; positions restart at 0 per sequence.
inline ForwardVars forward_batch(num::Tape& tape, const BoundWeights& w, const ModelConfig& c,
                                 const std::vector<Sequence>& batch) {
  const std::size_t d = c.d_model;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> pos_ids;
  std::vector<std::size_t> vector_rows;
  std::vector<double> vector_data;
  std::vector<num::Segment> segments;
  for (const Sequence& seq : batch) {
    if (seq.empty()) throw CapacityError("forward: empty input sequence");
    if (seq.size() > c.max_seq) {
      throw CapacityError("forward: sequence length " + std::to_string(seq.size()) + " exceeds max_seq " +
                          std::to_string(c.max_seq));
    }
    segments.push_back({token_ids.size(), seq.size()});
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const std::size_t row = token_ids.size();
      if (const Token* id = std::get_if<Token>(&seq[t])) {
        if (*id >= c.vocab_size) throw CapacityError("forward: token id " + std::to_string(*id) + " outside vocabulary");
        token_ids.push_back(*id);
      } else {
        const Vector& v = std::get<Vector>(seq[t]);
        if (v.size() != d) {
          throw num::ShapeError("forward: input vector of length " + std::to_string(v.size()) + ", expected " +
                                std::to_string(d));
        }
        token_ids.push_back(SpecialTokens{}.pad);
        vector_rows.push_back(row);
        vector_data.insert(vector_data.end(), v.begin(), v.end());
      }
      pos_ids.push_back(t);
    }
  }
  const WeightLayout& L = w.layout;
  Var x = num::gather_rows(w[WeightLayout::kTokEmb], std::move(token_ids));
  if (!vector_rows.empty()) {
    const std::size_t k = vector_rows.size();
    Var src = tape.constant(Tensor({k, d}, std::move(vector_data)));
    x = num::replace_rows(x, std::move(vector_rows), src);
  }
  x = num::add(x, num::gather_rows(w[WeightLayout::kPosEmb], std::move(pos_ids)));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    using S = WeightLayout::LayerSlot;
    Var a = num::layer_norm(x, w[L.layer(l, S::Ln1G)], w[L.layer(l, S::Ln1B)]);
    Var qkv = num::add_row(num::matmul(a, w[L.layer(l, S::WQkv)]), w[L.layer(l, S::BQkv)]);
    Var att = num::causal_attention(qkv, c.n_heads, segments);
    x = num::add(x, num::add_row(num::matmul(att, w[L.layer(l, S::WO)]), w[L.layer(l, S::BO)]));
    Var m = num::layer_norm(x, w[L.layer(l, S::Ln2G)], w[L.layer(l, S::Ln2B)]);
    Var f = num::gelu(num::add_row(num::matmul(m, w[L.layer(l, S::W1)]), w[L.layer(l, S::B1)]));
    x = num::add(x, num::add_row(num::matmul(f, w[L.layer(l, S::W2)]), w[L.layer(l, S::B2)]));
  }
  Var h = num::layer_norm(x, w[L.final_gain()], w[L.final_bias()]);
  Var logits = num::matmul_bt(h, w[WeightLayout::kTokEmb]);
  return {h, logits, std::move(segments)};
}

/// phi applied to rows of a hidden-state matrix on the tape.
inline Var apply_phi(const BoundWeights& w, const ModelConfig& c, Var h) {
  if (c.phi_mode == PhiMode::Identity) return h;
  return num::add_row(num::matmul(h, w[w.layout.phi_w()]), w[w.layout.phi_b()]);
}

struct ForwardResult {
  Tensor hidden;  // [T x d]
  Tensor logits;  // [T x vocab]
};

/// Gradient-free forward of one sequence.
inline ForwardResult forward(const Sequence& inputs, const Weights& weights, const ModelConfig& c) {
  num::Tape tape(false);
  const BoundWeights w = bind(tape, weights, c, false);
  ForwardVars out = forward_batch(tape, w, c, {inputs});
  return {out.hidden.value(), out.logits.value()};
}

/// Identity: h unchanged. Linear: W h + b with W stored as [d x d] acting on
/// row vectors (h^T W), matching the batched path.
inline Vector apply_phi(const Vector& h, const Weights& weights, const ModelConfig& c) {
  if (h.size() != c.d_model) throw num::ShapeError("apply_phi: hidden state length mismatch");
  if (c.phi_mode == PhiMode::Identity) return h;
  const WeightLayout L = layout_for(c);
  const Tensor& W = weights[L.phi_w()];
  const Tensor& b = weights[L.phi_b()];
  const std::size_t d = c.d_model;
  Vector out(b.vec());
  for (std::size_t i = 0; i < d; ++i) {
    const double hi = h[i];
    for (std::size_t j = 0; j < d; ++j) out[j] += hi * W(i, j);
  }
  return out;
}

}  // namespace latentlab::model
