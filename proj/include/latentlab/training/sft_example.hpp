#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "latentlab/model/transformer.hpp"
#include "latentlab/tasks/trajectory.hpp"

namespace latentlab::train {

using model::Sequence;
using model::Vector;
using tasks::Token;
using tasks::Tokens;

class BuildError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Consecutive latent placeholder positions and their regression targets.
/// The hidden state at row `first - 1 + j` (after phi) is regressed onto
/// `targets[j]`, and `targets[j]` is the teacher-forced input at `first + j`.
struct LatentSpan {
  std::size_t first = 0;
  std::vector<Vector> targets;
};

/// One supervised sequence. Row t of the logits is trained to predict
/// `next[t]` wherever `mask[t]` is set.
struct SftExample {
  std::string id;
  Sequence inputs;
  Tokens next;
  std::vector<char> mask;
  std::vector<LatentSpan> latent_spans;
  std::size_t prompt_length = 0;
  Tokens answer;

  std::size_t length() const { return inputs.size(); }

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (char m : mask) n += m ? 1 : 0;
    return n;
  }
};

namespace detail {

/// Supervise every row from the last prompt token onward, except rows whose
/// successor is a latent placeholder.
inline void finish_example(SftExample& ex, const std::vector<char>& is_vector) {
  const std::size_t n = ex.inputs.size();
  ex.next.assign(n, tasks::tok::pad);
  ex.mask.assign(n, 0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    if (t + 1 < ex.prompt_length || is_vector[t + 1]) continue;
    ex.next[t] = std::get<Token>(ex.inputs[t + 1]);
    ex.mask[t] = 1;
  }
}

}  // namespace detail

/// Each Image segment becomes latent_start + n_latent placeholders +
/// latent_end. Every placeholder's target is the mean of the frozen embedding
/// rows of the image's serialized tokens.
inline SftExample build_latent_sft_example(const std::string& id, const Tokens& prompt, const tasks::InterleavedTrajectory& tr,
                                           const num::Tensor& frozen_embeddings, std::size_t n_latent) {
  bool has_crop = false;
  for (const auto& s : tr.segments) has_crop = has_crop || (s.is_image() && s.tag == tasks::ImageTag::Crop);
  if (!has_crop) throw BuildError("build_latent_sft_example(" + id + "): trajectory has no crop image segment");
  if (n_latent == 0) throw BuildError("build_latent_sft_example: n_latent must be >= 1");
  SftExample ex;
  ex.id = id;
  ex.prompt_length = prompt.size();
  ex.answer = tr.answer;
  std::vector<char> is_vector;
  for (Token t : prompt) {
    ex.inputs.emplace_back(t);
    is_vector.push_back(0);
  }
  const std::size_t d = frozen_embeddings.cols();
  for (const auto& seg : tr.segments) {
    if (!seg.is_image()) {
      for (Token t : seg.tokens) {
        ex.inputs.emplace_back(t);
        is_vector.push_back(0);
      }
      continue;
    }
    Vector mean(d, 0.0);
    for (Token t : seg.tokens) {
      const auto row = frozen_embeddings.row(t);
      for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& v : mean) v /= static_cast<double>(seg.tokens.size());
    ex.inputs.emplace_back(tasks::tok::latent_start);
    is_vector.push_back(0);
    LatentSpan span{ex.inputs.size(), std::vector<Vector>(n_latent, mean)};
    for (std::size_t j = 0; j < n_latent; ++j) {
      ex.inputs.emplace_back(mean);
      is_vector.push_back(1);
    }
    ex.latent_spans.push_back(std::move(span));
    ex.inputs.emplace_back(tasks::tok::latent_end);
    is_vector.push_back(0);
  }
  ex.inputs.emplace_back(tasks::tok::eos);
  is_vector.push_back(0);
  detail::finish_example(ex, is_vector);
  return ex;
}

/// Pure-text sequence: prompt + rewritten reasoning + eos.
inline SftExample build_capimagine_example(const std::string& id, const Tokens& prompt,
                                           const tasks::InterleavedTrajectory& rewritten) {
  if (rewritten.image_count() != 0) {
    throw BuildError("build_capimagine_example(" + id + "): rewritten trajectory still holds an image segment");
  }
  SftExample ex;
  ex.id = id;
  ex.prompt_length = prompt.size();
  ex.answer = rewritten.answer;
  ex.inputs = model::to_inputs(prompt);
  for (Token t : rewritten.flatten()) ex.inputs.emplace_back(t);
  ex.inputs.emplace_back(tasks::tok::eos);
  detail::finish_example(ex, std::vector<char>(ex.inputs.size(), 0));
  return ex;
}

/// Each Image segment becomes a single think_image token; no latent supervision.
inline SftExample build_placeholder_example(const std::string& id, const Tokens& prompt,
                                            const tasks::InterleavedTrajectory& tr) {
  SftExample ex;
  ex.id = id;
  ex.prompt_length = prompt.size();
  ex.answer = tr.answer;
  ex.inputs = model::to_inputs(prompt);
  for (const auto& seg : tr.segments) {
    if (seg.is_image()) {
      ex.inputs.emplace_back(tasks::tok::think_image);
    } else {
      for (Token t : seg.tokens) ex.inputs.emplace_back(t);
    }
  }
  ex.inputs.emplace_back(tasks::tok::eos);
  detail::finish_example(ex, std::vector<char>(ex.inputs.size(), 0));
  return ex;
}

}  // namespace latentlab::train
