#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>

#include "latentlab/numerics/rng.hpp"
#include "latentlab/tasks/trajectory.hpp"

namespace latentlab::tasks {

/// What a question refers to: a cell picked out by content, or by coordinates.
using Reference = std::variant<TargetSpec, Position>;

struct Query {
  QuestionKind ask = QuestionKind::AskColor;
  Reference ref;
};

/// Zoom-style visual search: find the unique cell matching `target` and
/// report one of its attributes.
struct GridInstance {
  std::string id;
  std::uint64_t seed = 0;
  Grid grid;
  TargetSpec target;
  QuestionKind question = QuestionKind::AskColor;
  Crop crop;
  Tokens answer;

  Position target_cell() const {
    const auto m = find_matches(grid, target);
    if (m.empty()) throw ParseError("instance " + id + ": no cell matches the target");
    return m.front();
  }

  Query query() const { return {question, target}; }

  friend bool operator==(const GridInstance&, const GridInstance&) = default;
};

/// Question templates:
///   what color is glyph G ?      what color is at ( r , c ) ?
///   what glyph has color C ?     what glyph is at ( r , c ) ?
///   where is glyph G ?           where is color C ?
inline Tokens question_tokens(const Query& q) {
  const Vocab& v = Vocab::instance();
  Tokens out;
  auto ref_tokens = [&](bool with_has) {
    if (const auto* pos = std::get_if<Position>(&q.ref)) {
      out.push_back(v.id("is"));
      out.push_back(v.id("at"));
      append(out, coord_tokens(pos->row, pos->col));
      return;
    }
    const auto& spec = std::get<TargetSpec>(q.ref);
    if (with_has) out.push_back(v.id(spec.kind == TargetKind::ByGlyph ? "is" : "has"));
    if (spec.kind == TargetKind::ByGlyph) {
      out.push_back(v.id("glyph"));
      out.push_back(glyph_token(spec.value));
    } else {
      out.push_back(v.id("color"));
      out.push_back(color_token(spec.value));
    }
  };
  switch (q.ask) {
    case QuestionKind::AskColor:
      out.push_back(v.id("what"));
      out.push_back(v.id("color"));
      ref_tokens(true);
      break;
    case QuestionKind::AskGlyph:
      out.push_back(v.id("what"));
      out.push_back(v.id("glyph"));
      ref_tokens(true);
      break;
    case QuestionKind::AskPosition:
      if (std::holds_alternative<Position>(q.ref)) throw ParameterError("position question cannot reference a position");
      out.push_back(v.id("where"));
      out.push_back(v.id("is"));
      ref_tokens(false);
      break;
  }
  out.push_back(tok::question);
  return out;
}

/// Inverse of question_tokens.
inline Query parse_question(const Tokens& t) {
  const Vocab& v = Vocab::instance();
  auto at = [&](std::size_t i) -> Token {
    if (i >= t.size()) throw ParseError("question parse: truncated");
    return t[i];
  };
  Query q;
  std::size_t i = 0;
  if (at(0) == v.id("what")) {
    if (at(1) == v.id("color")) {
      q.ask = QuestionKind::AskColor;
    } else if (at(1) == v.id("glyph")) {
      q.ask = QuestionKind::AskGlyph;
    } else {
      throw ParseError("question parse: unknown attribute");
    }
    i = 2;
    if (at(i) == v.id("is") && at(i + 1) == v.id("at")) {
      i += 2;
      if (at(i) != tok::lparen || !is_digit(at(i + 1))) throw ParseError("question parse: bad coordinate");
      Position p;
      ++i;
      while (is_digit(at(i))) p.row = p.row * 10 + (t[i++] - tok::digit0);
      if (at(i++) != tok::comma) throw ParseError("question parse: bad coordinate");
      while (is_digit(at(i))) p.col = p.col * 10 + (t[i++] - tok::digit0);
      if (at(i++) != tok::rparen) throw ParseError("question parse: bad coordinate");
      q.ref = p;
    } else {
      ++i;  // "is" / "has"
      if (at(i) == v.id("glyph") && is_glyph(at(i + 1))) {
        q.ref = TargetSpec{TargetKind::ByGlyph, static_cast<std::uint8_t>(t[i + 1] - tok::glyph0)};
      } else if (at(i) == v.id("color") && is_color(at(i + 1))) {
        q.ref = TargetSpec{TargetKind::ByColor, static_cast<std::uint8_t>(t[i + 1] - tok::color0)};
      } else {
        throw ParseError("question parse: bad reference");
      }
      i += 2;
    }
  } else if (at(0) == v.id("where") && at(1) == v.id("is")) {
    q.ask = QuestionKind::AskPosition;
    if (at(2) == v.id("glyph") && is_glyph(at(3))) {
      q.ref = TargetSpec{TargetKind::ByGlyph, static_cast<std::uint8_t>(t[3] - tok::glyph0)};
    } else if (at(2) == v.id("color") && is_color(at(3))) {
      q.ref = TargetSpec{TargetKind::ByColor, static_cast<std::uint8_t>(t[3] - tok::color0)};
    } else {
      throw ParseError("question parse: bad reference");
    }
    i = 4;
  } else {
    throw ParseError("question parse: unknown question form");
  }
  if (at(i) != tok::question || i + 1 != t.size()) throw ParseError("question parse: trailing tokens");
  return q;
}

/// Window of side k containing the target, as centred as the borders allow.
inline Crop crop_for(Position target, std::size_t h, std::size_t w, std::size_t k) {
  auto place = [k](std::size_t p, std::size_t extent) {
    const std::size_t half = (k - 1) / 2;
    const std::size_t lo = p >= half ? p - half : 0;
    return std::min(lo, extent - k);
  };
  return {place(target.row, h), place(target.col, w), k};
}

/// bos + grid + question
inline Tokens prompt_tokens(const GridInstance& inst) {
  Tokens out{tok::bos};
  append(out, serialize_grid(inst.grid));
  append(out, question_tokens(inst.query()));
  return out;
}

/// Text("zoom to ( r , c ) .") + Image(crop) + Text("<answer> ... </answer>")
inline InterleavedTrajectory visual_search_trajectory(const GridInstance& inst) {
  const Vocab& v = Vocab::instance();
  Tokens zoom{v.id("zoom"), v.id("to")};
  append(zoom, coord_tokens(inst.crop.row, inst.crop.col));
  zoom.push_back(tok::period);
  InterleavedTrajectory tr;
  tr.segments.push_back(TrajectorySegment::text(std::move(zoom)));
  tr.segments.push_back(TrajectorySegment::image(ImageTag::Crop, serialize_grid(sub_grid(inst.grid, inst.crop))));
  tr.segments.push_back(TrajectorySegment::text(answer_span(inst.answer)));
  tr.answer = inst.answer;
  return tr;
}

inline std::string visual_search_id(std::uint64_t seed) { return "vs-" + std::to_string(seed); }

/// Deterministic per seed. The question kind picks the target kind:
/// ask_color targets a unique glyph, ask_glyph a unique color, ask_position either.
inline std::pair<GridInstance, InterleavedTrajectory> gen_visual_search(std::uint64_t seed, std::size_t h,
                                                                        std::size_t w, std::size_t k = 2) {
  if (h == 0 || w == 0 || k == 0 || k > std::min(h, w)) {
    throw ParameterError("gen_visual_search: need H,W >= k >= 1 (got H=" + std::to_string(h) +
                         " W=" + std::to_string(w) + " k=" + std::to_string(k) + ")");
  }
  if (h > 99 || w > 99) throw ParameterError("gen_visual_search: grids larger than 99 are not supported");
  num::Rng rng(seed);
  GridInstance inst;
  inst.id = visual_search_id(seed);
  inst.seed = seed;
  inst.question = static_cast<QuestionKind>(rng.below(3));
  TargetKind kind = TargetKind::ByGlyph;
  if (inst.question == QuestionKind::AskGlyph) kind = TargetKind::ByColor;
  if (inst.question == QuestionKind::AskPosition) kind = rng.below(2) ? TargetKind::ByColor : TargetKind::ByGlyph;
  const std::size_t domain = kind == TargetKind::ByGlyph ? kGlyphCount : kColorCount;
  inst.target = {kind, static_cast<std::uint8_t>(rng.below(domain))};

  inst.grid = Grid{h, w, std::vector<Cell>(h * w)};
  const Position target{rng.below(h), rng.below(w)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      Cell& cell = inst.grid.at(r, c);
      cell.glyph = static_cast<std::uint8_t>(rng.below(kGlyphCount));
      cell.color = static_cast<std::uint8_t>(rng.below(kColorCount));
      const bool is_target = r == target.row && c == target.col;
      std::uint8_t& keyed = kind == TargetKind::ByGlyph ? cell.glyph : cell.color;
      if (is_target) {
        keyed = inst.target.value;
      } else {
        // Draw from the domain minus the target value.
        const auto draw = static_cast<std::uint8_t>(rng.below(domain - 1));
        keyed = draw >= inst.target.value ? static_cast<std::uint8_t>(draw + 1) : draw;
      }
    }
  }
  inst.crop = crop_for(target, h, w, k);
  inst.answer = attribute_tokens(inst.grid, target, inst.question);
  auto tr = visual_search_trajectory(inst);
  return {std::move(inst), std::move(tr)};
}

/// Rebuilds an instance from its prompt tokens (bos + grid + question).
inline GridInstance instance_from_prompt(const Tokens& prompt, std::size_t k, std::string id = {}, std::uint64_t seed = 0) {
  if (prompt.empty() || prompt.front() != tok::bos) throw ParseError("prompt must start with <bos>");
  std::size_t pos = 1;
  GridInstance inst;
  inst.id = std::move(id);
  inst.seed = seed;
  inst.grid = parse_grid(prompt, pos);
  const Query q = parse_question(Tokens(prompt.begin() + static_cast<std::ptrdiff_t>(pos), prompt.end()));
  const auto* spec = std::get_if<TargetSpec>(&q.ref);
  if (spec == nullptr) throw ParseError("instance questions reference a target, not a position");
  inst.target = *spec;
  inst.question = q.ask;
  const Position p = inst.target_cell();
  inst.crop = crop_for(p, inst.grid.height, inst.grid.width, k);
  inst.answer = attribute_tokens(inst.grid, p, inst.question);
  return inst;
}

}  // namespace latentlab::tasks
