#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentlab/model/intervention.hpp"
#include "latentlab/model/transformer.hpp"
#include "latentlab/tasks/trajectory.hpp"

namespace latentlab::model {

enum class StepMode { Text, Latent };
enum class InputSource { TokenEmbedding, FedBackHidden };

struct TraceStep {
  std::size_t index = 0;
  StepMode mode = StepMode::Text;
  InputSource input_source = InputSource::TokenEmbedding;
  Vector input;               // raw vector at the position that produced `hidden`
  Vector hidden;              // final-layer hidden state h_i
  std::optional<Token> token; // text steps
  Vector latent;              // latent steps: phi(h_i) after the intervention
};

struct GenerationTrace {
  std::vector<TraceStep> steps;
  Tokens text_tokens;  // every emitted token, in order
  Tokens answer_tokens;
  bool has_answer = false;
  std::size_t prompt_length = 0;
  std::size_t step_count = 0;
  std::uint64_t wall_time_ns = 0;
  bool truncated = false;
  std::string error;

  /// Latent spans as [first, last] step indices.
  std::vector<std::pair<std::size_t, std::size_t>> latent_spans() const {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].mode != StepMode::Latent) continue;
      if (!spans.empty() && spans.back().second + 1 == i) {
        spans.back().second = i;
      } else {
        spans.emplace_back(i, i);
      }
    }
    return spans;
  }

  std::vector<const TraceStep*> latent_steps() const {
    std::vector<const TraceStep*> out;
    for (const auto& s : steps)
      if (s.mode == StepMode::Latent) out.push_back(&s);
    return out;
  }
};

struct GenerateOptions {
  std::size_t max_steps = 64;
  InterventionSpec intervention;
  std::uint64_t noise_seed = 0;
};

/// Anything that decodes a trace from a (possibly mixed) prompt. The causal
/// analyses are written against this so that controlled stubs can stand in
/// for a trained model.
class Reasoner {
 public:
  virtual ~Reasoner() = default;
  virtual GenerationTrace generate(const Sequence& prompt, const GenerateOptions& opts) const = 0;
  virtual std::size_t hidden_size() const = 0;
};

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Token embedding row, i.e. the raw vector a token contributes as input.
inline Vector embedding_row(const Weights& w, Token t) {
  const auto row = w[WeightLayout::kTokEmb].row(t);
  return Vector(row.begin(), row.end());
}

/// Greedy decoding with latent mode. After latent_start is emitted, each step
/// feeds phi(h_i) (after the intervention) back as the next input, until h_i
/// decodes to latent_end or n_latent latents have been produced; then
/// latent_end is emitted as text and text decoding resumes.
inline GenerationTrace generate(const Sequence& prompt, const Weights& weights, const ModelConfig& c,
                                const GenerateOptions& opts) {
  const SpecialTokens sp{};
  opts.intervention.validate(c.d_model);
  if (prompt.empty()) throw CapacityError("generate: empty prompt");
  if (prompt.size() >= c.max_seq) {
    throw CapacityError("generate: prompt length " + std::to_string(prompt.size()) + " leaves no room under max_seq " +
                        std::to_string(c.max_seq));
  }
  const auto t0 = std::chrono::steady_clock::now();
  num::Rng noise(opts.noise_seed);
  GenerationTrace trace;
  trace.prompt_length = prompt.size();
  Sequence seq = prompt;
  bool latent_mode = false;
  std::size_t latent_count = 0;
  InputSource last_source = std::holds_alternative<Token>(seq.back()) ? InputSource::TokenEmbedding
                                                                      : InputSource::FedBackHidden;

  for (std::size_t i = 0; i < opts.max_steps; ++i) {
    if (seq.size() > c.max_seq) {
      trace.truncated = true;
      trace.error = "sequence reached max_seq (" + std::to_string(c.max_seq) + ") during generation";
      break;
    }
    const ForwardResult fr = forward(seq, weights, c);
    const std::size_t last = seq.size() - 1;
    TraceStep st;
    st.index = i;
    st.input_source = last_source;
    st.input = std::holds_alternative<Token>(seq.back()) ? embedding_row(weights, std::get<Token>(seq.back()))
                                                         : std::get<Vector>(seq.back());
    const auto h = fr.hidden.row(last);
    st.hidden.assign(h.begin(), h.end());
    const Token decoded = argmax(fr.logits.row(last));

    if (latent_mode && decoded != sp.latent_end && latent_count < c.n_latent) {
      st.mode = StepMode::Latent;
      Vector z = apply_phi(st.hidden, weights, c);
      opts.intervention.apply(z, noise);
      st.latent = z;
      seq.emplace_back(std::move(z));
      last_source = InputSource::FedBackHidden;
      ++latent_count;
      trace.steps.push_back(std::move(st));
      continue;
    }

    Token emit = decoded;
    if (latent_mode) {
      emit = sp.latent_end;  // decoded exit or budget exhausted
      latent_mode = false;
    } else if (decoded == sp.latent_start) {
      latent_mode = true;
      latent_count = 0;
    }
    st.mode = StepMode::Text;
    st.token = emit;
    trace.text_tokens.push_back(emit);
    seq.emplace_back(emit);
    last_source = InputSource::TokenEmbedding;
    trace.steps.push_back(std::move(st));
    if (emit == sp.eos) break;
  }
  trace.step_count = trace.steps.size();
  if (auto ans = tasks::extract_answer(trace.text_tokens)) {
    trace.answer_tokens = std::move(*ans);
    trace.has_answer = true;
  }
  trace.wall_time_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
  return trace;
}

/// A configured transformer behind the Reasoner interface.
class TransformerModel : public Reasoner {
 public:
  TransformerModel(ModelConfig config, Weights weights) : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    check_weights(weights_, config_);
  }

  GenerationTrace generate(const Sequence& prompt, const GenerateOptions& opts) const override {
    return model::generate(prompt, weights_, config_, opts);
  }
  std::size_t hidden_size() const override { return config_.d_model; }

  ForwardResult forward(const Sequence& inputs) const { return model::forward(inputs, weights_, config_); }

  const ModelConfig& config() const { return config_; }
  const Weights& weights() const { return weights_; }

 private:
  ModelConfig config_;
  Weights weights_;
};

}  // namespace latentlab::model
