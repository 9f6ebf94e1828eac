#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latentlab/numerics/rng.hpp"
#include "latentlab/tasks/trajectory.hpp"

namespace latentlab::tasks {

enum class BoardCell : std::uint8_t { Empty, Hole, Start, Goal };
enum class Action : std::uint8_t { Up, Down, Left, Right };

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<Action, 4> kActions = {Action::Up, Action::Down, Action::Left, Action::Right};
inline constexpr std::size_t kVspMaxAttempts = 1000;

inline Token action_token(Action a) { return tok::action0 + static_cast<Token>(a); }

inline Token board_token(BoardCell c) {
  switch (c) {
    case BoardCell::Empty: return tok::cell_ice;
    case BoardCell::Hole: return tok::cell_hole;
    case BoardCell::Start: return tok::cell_start;
    case BoardCell::Goal: return tok::cell_goal;
  }
  return tok::cell_ice;
}

/// Frozen-lake style planning board with its shortest gold route.
struct VSPInstance {
  std::string id;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::vector<BoardCell> cells;  // row-major n x n
  Position start;
  Position goal;
  std::vector<Action> gold;

  BoardCell at(Position p) const { return cells[p.row * n + p.col]; }
  friend bool operator==(const VSPInstance&, const VSPInstance&) = default;
};

inline std::optional<Position> step(const VSPInstance& b, Position p, Action a) {
  switch (a) {
    case Action::Up:
      if (p.row == 0) return std::nullopt;
      --p.row;
      break;
    case Action::Down:
      if (p.row + 1 >= b.n) return std::nullopt;
      ++p.row;
      break;
    case Action::Left:
      if (p.col == 0) return std::nullopt;
      --p.col;
      break;
    case Action::Right:
      if (p.col + 1 >= b.n) return std::nullopt;
      ++p.col;
      break;
  }
  return p;
}

/// Cells visited after each action, or nullopt if the route leaves the board
/// or enters a hole.
inline std::optional<std::vector<Position>> replay(const VSPInstance& b, const std::vector<Action>& actions) {
  std::vector<Position> visited;
  Position p = b.start;
  for (Action a : actions) {
    auto next = step(b, p, a);
    if (!next || b.at(*next) == BoardCell::Hole) return std::nullopt;
    p = *next;
    visited.push_back(p);
  }
  return visited;
}

inline bool reaches_goal(const VSPInstance& b, const std::vector<Action>& actions) {
  auto v = replay(b, actions);
  if (!v) return false;
  const Position end = v->empty() ? b.start : v->back();
  return end == b.goal;
}

/// Breadth-first shortest route; ties broken by action order up, down, left, right.
inline std::optional<std::vector<Action>> shortest_route(const VSPInstance& b) {
  const std::size_t n = b.n;
  std::vector<int> prev_action(n * n, -1);
  std::vector<char> seen(n * n, 0);
  std::deque<Position> q{b.start};
  seen[b.start.row * n + b.start.col] = 1;
  while (!q.empty()) {
    const Position p = q.front();
    q.pop_front();
    if (p == b.goal) break;
    for (Action a : kActions) {
      auto next = step(b, p, a);
      if (!next || b.at(*next) == BoardCell::Hole) continue;
      const std::size_t idx = next->row * n + next->col;
      if (seen[idx]) continue;
      seen[idx] = 1;
      prev_action[idx] = static_cast<int>(a);
      q.push_back(*next);
    }
  }
  if (!seen[b.goal.row * n + b.goal.col]) return std::nullopt;
  std::vector<Action> route;
  Position p = b.goal;
  while (!(p == b.start)) {
    const Action a = static_cast<Action>(prev_action[p.row * n + p.col]);
    route.push_back(a);
    switch (a) {
      case Action::Up: ++p.row; break;
      case Action::Down: --p.row; break;
      case Action::Left: ++p.col; break;
      case Action::Right: --p.col; break;
    }
  }
  std::reverse(route.begin(), route.end());
  return route;
}

/// <grid> / c c c / ... / </grid>, one token per cell; route cells are drawn
/// with the "path" token when `route` is given.
inline Tokens serialize_board(const VSPInstance& b, const std::vector<Position>* route = nullptr) {
  std::vector<char> on_route(b.n * b.n, 0);
  if (route)
    for (const Position& p : *route)
      if (!(p == b.goal)) on_route[p.row * b.n + p.col] = 1;
  Tokens out{tok::grid_open, tok::row_sep};
  for (std::size_t r = 0; r < b.n; ++r) {
    for (std::size_t c = 0; c < b.n; ++c)
      out.push_back(on_route[r * b.n + c] ? tok::cell_path : board_token(b.cells[r * b.n + c]));
    out.push_back(tok::row_sep);
  }
  out.push_back(tok::grid_close);
  return out;
}

inline Tokens vsp_question_tokens() { return tokenize("plan a path from start to goal?"); }

inline Tokens prompt_tokens(const VSPInstance& b) {
  Tokens out{tok::bos};
  append(out, serialize_board(b));
  append(out, vsp_question_tokens());
  return out;
}

inline Tokens action_tokens(const std::vector<Action>& actions) {
  Tokens out;
  for (Action a : actions) out.push_back(action_token(a));
  return out;
}

/// Text("draw the path .") + Image(manipulated board) + Text(answer actions)
inline InterleavedTrajectory vsp_trajectory(const VSPInstance& b) {
  const auto visited = replay(b, b.gold);
  InterleavedTrajectory tr;
  tr.segments.push_back(TrajectorySegment::text(tokenize("draw the path.")));
  tr.segments.push_back(TrajectorySegment::image(ImageTag::Manipulated, serialize_board(b, &*visited)));
  tr.answer = action_tokens(b.gold);
  tr.segments.push_back(TrajectorySegment::text(answer_span(tr.answer)));
  return tr;
}

inline std::string vsp_id(std::uint64_t seed) { return "vsp-" + std::to_string(seed); }

/// Solvable n x n board; rejection-samples hole layouts until one admits a route.
inline std::pair<VSPInstance, InterleavedTrajectory> gen_vsp(std::uint64_t seed, std::size_t n, double hole_density) {
  if (n < 3 || n > 99) throw ParameterError("gen_vsp: need 3 <= N <= 99");
  if (!(hole_density >= 0.0 && hole_density <= 0.4)) throw ParameterError("gen_vsp: hole_density must lie in [0, 0.4]");
  num::Rng rng(seed);
  for (std::size_t attempt = 0; attempt < kVspMaxAttempts; ++attempt) {
    VSPInstance b;
    b.id = vsp_id(seed);
    b.seed = seed;
    b.n = n;
    b.cells.assign(n * n, BoardCell::Empty);
    const std::size_t s = rng.below(n * n);
    std::size_t g = rng.below(n * n - 1);
    if (g >= s) ++g;
    b.start = {s / n, s % n};
    b.goal = {g / n, g % n};
    b.cells[s] = BoardCell::Start;
    b.cells[g] = BoardCell::Goal;
    for (std::size_t i = 0; i < n * n; ++i)
      if (i != s && i != g && rng.uniform() < hole_density) b.cells[i] = BoardCell::Hole;
    auto route = shortest_route(b);
    if (!route) continue;
    b.gold = std::move(*route);
    auto tr = vsp_trajectory(b);
    return {std::move(b), std::move(tr)};
  }
  throw GenerationError("gen_vsp: no solvable board after " + std::to_string(kVspMaxAttempts) + " attempts (seed " +
                        std::to_string(seed) + ")");
}

}  // namespace latentlab::tasks
