#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "latentlab/numerics/rng.hpp"
#include "latentlab/tasks/visual_search.hpp"

namespace latentlab::tasks {

inline constexpr std::size_t kProbeChoices = 4;

/// Multiple-choice question about the same cell as an instance, asking a
/// different attribute.
struct ProbeQuestion {
  Query query;
  Tokens question;
  Tokens answer;
  std::vector<Tokens> choices;
  std::size_t correct = 0;
};

/// Kind asked by the derived question: the next attribute in the cycle
/// color -> glyph -> position -> color.
inline QuestionKind derived_kind(QuestionKind original) {
  switch (original) {
    case QuestionKind::AskColor: return QuestionKind::AskGlyph;
    case QuestionKind::AskGlyph: return QuestionKind::AskPosition;
    case QuestionKind::AskPosition: return QuestionKind::AskColor;
  }
  return QuestionKind::AskColor;
}

/// The target cell is referenced by the instance's own target spec unless the
/// question asks for that very attribute, in which case it is referenced by
/// coordinates. Distractor choices are drawn with `seed`.
inline ProbeQuestion derive_probe_question(const GridInstance& inst, std::uint64_t seed) {
  const Position cell = inst.target_cell();
  ProbeQuestion pq;
  pq.query.ask = derived_kind(inst.question);
  const bool asks_spec_attribute =
      (pq.query.ask == QuestionKind::AskGlyph && inst.target.kind == TargetKind::ByGlyph) ||
      (pq.query.ask == QuestionKind::AskColor && inst.target.kind == TargetKind::ByColor);
  if (asks_spec_attribute) {
    pq.query.ref = cell;
  } else {
    pq.query.ref = inst.target;
  }
  pq.question = question_tokens(pq.query);
  pq.answer = attribute_tokens(inst.grid, cell, pq.query.ask);

  std::vector<Tokens> pool;
  switch (pq.query.ask) {
    case QuestionKind::AskColor:
      for (std::size_t c = 0; c < kColorCount; ++c) pool.push_back({color_token(c)});
      break;
    case QuestionKind::AskGlyph:
      for (std::size_t g = 0; g < kGlyphCount; ++g) pool.push_back({glyph_token(g)});
      break;
    case QuestionKind::AskPosition:
      for (std::size_t r = 0; r < inst.grid.height; ++r)
        for (std::size_t c = 0; c < inst.grid.width; ++c) pool.push_back(coord_tokens(r, c));
      break;
  }
  std::erase(pool, pq.answer);
  num::Rng rng(seed);
  rng.shuffle(pool.begin(), pool.end());
  const std::size_t distractors = std::min(kProbeChoices - 1, pool.size());
  pq.choices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(distractors));
  pq.correct = rng.below(pq.choices.size() + 1);
  pq.choices.insert(pq.choices.begin() + static_cast<std::ptrdiff_t>(pq.correct), pq.answer);
  return pq;
}

}  // namespace latentlab::tasks
