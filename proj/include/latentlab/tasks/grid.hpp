#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latentlab/numerics/rng.hpp"
#include "latentlab/tasks/vocab.hpp"

namespace latentlab::tasks {

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Cell {
  std::uint8_t glyph = 0;
  std::uint8_t color = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Position {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Cell> cells;  // row-major

  Cell& at(std::size_t r, std::size_t c) { return cells[r * width + c]; }
  const Cell& at(std::size_t r, std::size_t c) const { return cells[r * width + c]; }
  const Cell& at(Position p) const { return at(p.row, p.col); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

enum class TargetKind { ByGlyph, ByColor };
enum class QuestionKind { AskColor, AskGlyph, AskPosition };

/// Which cell the question is about: the one carrying a given glyph or color.
struct TargetSpec {
  TargetKind kind = TargetKind::ByGlyph;
  std::uint8_t value = 0;

  bool matches(const Cell& c) const { return kind == TargetKind::ByGlyph ? c.glyph == value : c.color == value; }
  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

struct Crop {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 1;

  bool contains(Position p) const { return p.row >= row && p.row < row + size && p.col >= col && p.col < col + size; }
  friend bool operator==(const Crop&, const Crop&) = default;
};

inline std::string to_string(QuestionKind q) {
  switch (q) {
    case QuestionKind::AskColor: return "ask_color";
    case QuestionKind::AskGlyph: return "ask_glyph";
    case QuestionKind::AskPosition: return "ask_position";
  }
  return "?";
}

inline QuestionKind question_kind_from_string(const std::string& s) {
  if (s == "ask_color") return QuestionKind::AskColor;
  if (s == "ask_glyph") return QuestionKind::AskGlyph;
  if (s == "ask_position") return QuestionKind::AskPosition;
  throw ParseError("unknown question kind '" + s + "'");
}

/// Cells matching the spec, in row-major order.
inline std::vector<Position> find_matches(const Grid& g, const TargetSpec& spec) {
  std::vector<Position> out;
  for (std::size_t r = 0; r < g.height; ++r)
    for (std::size_t c = 0; c < g.width; ++c)
      if (spec.matches(g.at(r, c))) out.push_back({r, c});
  return out;
}

/// Tokens for one attribute of a cell.
inline Tokens attribute_tokens(const Grid& g, Position p, QuestionKind q) {
  switch (q) {
    case QuestionKind::AskColor: return {color_token(g.at(p).color)};
    case QuestionKind::AskGlyph: return {glyph_token(g.at(p).glyph)};
    case QuestionKind::AskPosition: return coord_tokens(p.row, p.col);
  }
  return {};
}

/// Body length is 2*H*W cell tokens + (H+1) row separators + 2 frame tokens:
///   <grid> / g c g c ... / g c ... / </grid>
inline Tokens serialize_grid(const Grid& g) {
  Tokens out;
  out.reserve(2 * g.height * g.width + g.height + 3);
  out.push_back(tok::grid_open);
  out.push_back(tok::row_sep);
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) {
      out.push_back(glyph_token(g.at(r, c).glyph));
      out.push_back(color_token(g.at(r, c).color));
    }
    out.push_back(tok::row_sep);
  }
  out.push_back(tok::grid_close);
  return out;
}

inline std::size_t serialized_grid_length(std::size_t h, std::size_t w) { return 2 * h * w + (h + 1) + 2; }

/// Inverse of serialize_grid; `pos` advances past the closing frame token.
inline Grid parse_grid(const Tokens& t, std::size_t& pos) {
  auto expect = [&](Token want, const char* what) {
    if (pos >= t.size() || t[pos] != want) throw ParseError(std::string("grid parse: expected ") + what);
    ++pos;
  };
  expect(tok::grid_open, "<grid>");
  expect(tok::row_sep, "/");
  Grid g;
  std::size_t row_len = 0;
  bool first_row = true;
  while (pos < t.size() && t[pos] != tok::grid_close) {
    if (t[pos] == tok::row_sep) {
      if (first_row) {
        g.width = row_len;
        first_row = false;
      } else if (row_len != g.width) {
        throw ParseError("grid parse: ragged rows");
      }
      if (row_len == 0) throw ParseError("grid parse: empty row");
      ++g.height;
      row_len = 0;
      ++pos;
      continue;
    }
    if (pos + 1 >= t.size() || !is_glyph(t[pos]) || !is_color(t[pos + 1])) {
      throw ParseError("grid parse: expected glyph/color pair");
    }
    g.cells.push_back({static_cast<std::uint8_t>(t[pos] - tok::glyph0), static_cast<std::uint8_t>(t[pos + 1] - tok::color0)});
    pos += 2;
    ++row_len;
  }
  if (row_len != 0) throw ParseError("grid parse: unterminated row");
  expect(tok::grid_close, "</grid>");
  if (g.height == 0) throw ParseError("grid parse: no rows");
  return g;
}

inline Grid sub_grid(const Grid& g, const Crop& crop) {
  Grid s{crop.size, crop.size, {}};
  for (std::size_t r = 0; r < crop.size; ++r)
    for (std::size_t c = 0; c < crop.size; ++c) s.cells.push_back(g.at(crop.row + r, crop.col + c));
  return s;
}

}  // namespace latentlab::tasks
