#include <gtest/gtest.h>

#include <deque>
#include <set>

#include "latentlab/tasks/dataset.hpp"
#include "latentlab/tasks/probe_question.hpp"
#include "latentlab/tasks/vsp.hpp"

using namespace latentlab;
using namespace latentlab::tasks;

TEST(Vocab, TokenizeRoundTripsEveryWord) {
  const Vocab& v = Vocab::instance();
  for (Token t = 0; t < kVocabSize; ++t) EXPECT_EQ(v.id(v.word(t)), t);
  const std::string text = "what color is glyph K ? zoom to ( 3 , 12 ) .";
  EXPECT_EQ(detokenize(tokenize(text)), "what color is glyph K? zoom to (3,12).");
  EXPECT_EQ(tokenize(detokenize(tokenize(text))), tokenize(text));
  EXPECT_THROW(tokenize("what colour"), TokenizationError);
}

TEST(Grid, TwoByTwoSerializationByHand) {
  Grid g{2, 2, {{0, 0}, {1, 2}, {25, 7}, {3, 1}}};
  const Tokens want = {tok::grid_open, tok::row_sep,   glyph_token(0),  color_token(0), glyph_token(1),
                       color_token(2), tok::row_sep,   glyph_token(25), color_token(7), glyph_token(3),
                       color_token(1), tok::row_sep,   tok::grid_close};
  const Tokens got = serialize_grid(g);
  EXPECT_EQ(got, want);
  EXPECT_EQ(got.size(), serialized_grid_length(2, 2));
  std::size_t pos = 0;
  EXPECT_EQ(parse_grid(got, pos), g);
  EXPECT_EQ(pos, got.size());
}

TEST(Grid, LengthFormulaHoldsAcrossShapes) {
  for (std::size_t h = 1; h <= 6; ++h)
    for (std::size_t w = 1; w <= 6; ++w) {
      Grid g{h, w, std::vector<Cell>(h * w)};
      EXPECT_EQ(serialize_grid(g).size(), 2 * h * w + h + 3);
    }
}

TEST(Grid, ParseRejectsBrokenSerializations) {
  Grid g{2, 2, {{0, 0}, {1, 2}, {2, 3}, {3, 1}}};
  Tokens t = serialize_grid(g);
  Tokens ragged = t;
  ragged.erase(ragged.begin() + 2, ragged.begin() + 4);
  std::size_t pos = 0;
  EXPECT_THROW(parse_grid(ragged, pos), ParseError);
  Tokens swapped = t;
  std::swap(swapped[2], swapped[3]);
  pos = 0;
  EXPECT_THROW(parse_grid(swapped, pos), ParseError);
  Tokens open(t.begin(), t.end() - 1);
  pos = 0;
  EXPECT_THROW(parse_grid(open, pos), ParseError);
}

TEST(VisualSearch, AnswerMatchesBruteForceScan) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const std::size_t h = 2 + seed % 5;
    const std::size_t w = 2 + (seed / 5) % 5;
    const auto [inst, tr] = gen_visual_search(seed, h, w, 2);
    // Independent scan: every cell whose keyed attribute equals the target value.
    std::vector<Position> hits;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const Cell& cell = inst.grid.at(r, c);
        const auto keyed = inst.target.kind == TargetKind::ByGlyph ? cell.glyph : cell.color;
        if (keyed == inst.target.value) hits.push_back({r, c});
      }
    ASSERT_EQ(hits.size(), 1u) << "seed " << seed;
    const Cell& t = inst.grid.at(hits[0].row, hits[0].col);
    Tokens want;
    switch (inst.question) {
      case QuestionKind::AskColor: want = {color_token(t.color)}; break;
      case QuestionKind::AskGlyph: want = {glyph_token(t.glyph)}; break;
      case QuestionKind::AskPosition: want = coord_tokens(hits[0].row, hits[0].col); break;
    }
    EXPECT_EQ(inst.answer, want) << "seed " << seed;
    // The crop window contains the target.
    EXPECT_LE(inst.crop.row, hits[0].row);
    EXPECT_LT(hits[0].row, inst.crop.row + inst.crop.size);
    EXPECT_LE(inst.crop.col, hits[0].col);
    EXPECT_LT(hits[0].col, inst.crop.col + inst.crop.size);
    EXPECT_TRUE(well_formed(tr));
  }
}

TEST(VisualSearch, DeterministicPerSeedAndPromptRoundTrips) {
  const auto a = gen_visual_search(42, 4, 4, 2);
  const auto b = gen_visual_search(42, 4, 4, 2);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  const auto back = instance_from_prompt(prompt_tokens(a.first), 2, a.first.id, a.first.seed);
  EXPECT_EQ(back, a.first);
  EXPECT_THROW(gen_visual_search(1, 2, 2, 3), ParameterError);
}

TEST(VisualSearch, QuestionsRoundTrip) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [inst, tr] = gen_visual_search(seed, 4, 4, 2);
    const Tokens q = question_tokens(inst.query());
    EXPECT_EQ(question_tokens(parse_question(q)), q);
  }
}

TEST(ProbeQuestion, DerivedAnswerIsLookupOfAnotherAttribute) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto [inst, tr] = gen_visual_search(seed, 4, 4, 2);
    const ProbeQuestion pq = derive_probe_question(inst, seed * 7 + 1);
    EXPECT_NE(pq.query.ask, inst.question);
    const Position p = inst.target_cell();
    EXPECT_EQ(pq.answer, attribute_tokens(inst.grid, p, pq.query.ask));
    ASSERT_EQ(pq.choices.size(), kProbeChoices);
    std::set<Tokens> distinct(pq.choices.begin(), pq.choices.end());
    EXPECT_EQ(distinct.size(), kProbeChoices);
    EXPECT_EQ(std::count(pq.choices.begin(), pq.choices.end(), pq.answer), 1);
  }
}

namespace {

// Plain BFS distance from start to goal, or -1.
int bfs_distance(const VSPInstance& b) {
  std::vector<int> dist(b.n * b.n, -1);
  std::deque<Position> q{b.start};
  dist[b.start.row * b.n + b.start.col] = 0;
  while (!q.empty()) {
    const Position p = q.front();
    q.pop_front();
    const int dr[] = {-1, 1, 0, 0};
    const int dc[] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const long r = static_cast<long>(p.row) + dr[k];
      const long c = static_cast<long>(p.col) + dc[k];
      if (r < 0 || c < 0 || r >= static_cast<long>(b.n) || c >= static_cast<long>(b.n)) continue;
      const Position nxt{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
      if (b.at(nxt) == BoardCell::Hole || dist[nxt.row * b.n + nxt.col] >= 0) continue;
      dist[nxt.row * b.n + nxt.col] = dist[p.row * b.n + p.col] + 1;
      q.push_back(nxt);
    }
  }
  return dist[b.goal.row * b.n + b.goal.col];
}

}  // namespace

TEST(Vsp, GoldRouteIsShortestAndValid) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [b, tr] = gen_vsp(seed, 5, 0.25);
    ASSERT_TRUE(reaches_goal(b, b.gold));
    EXPECT_EQ(static_cast<int>(b.gold.size()), bfs_distance(b)) << "seed " << seed;
    EXPECT_TRUE(well_formed(tr));
  }
}

TEST(Vsp, ReplayStopsAtHolesAndEdges) {
  VSPInstance b;
  b.n = 3;
  b.cells = std::vector<BoardCell>(9, BoardCell::Empty);
  b.start = {0, 0};
  b.goal = {2, 2};
  b.cells[0] = BoardCell::Start;
  b.cells[8] = BoardCell::Goal;
  b.cells[1] = BoardCell::Hole;
  EXPECT_FALSE(replay(b, {Action::Right}).has_value());
  EXPECT_FALSE(replay(b, {Action::Up}).has_value());
  EXPECT_TRUE(reaches_goal(b, {Action::Down, Action::Down, Action::Right, Action::Right}));
  EXPECT_FALSE(reaches_goal(b, {Action::Down, Action::Right}));
}

TEST(Dataset, JsonlRoundTrip) {
  std::vector<DatasetRecord> recs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto [inst, tr] = gen_visual_search(s, 3, 4, 2);
    recs.push_back(make_record(inst, tr));
    const auto [b, btr] = gen_vsp(s, 4, 0.2);
    recs.push_back(make_record(b, btr, 0.2));
  }
  const auto path = std::filesystem::temp_directory_path() / "latentlab_tasks_roundtrip.jsonl";
  write_jsonl(path, recs);
  const auto back = read_jsonl(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(recs[i]));
  std::filesystem::remove(path);
  EXPECT_THROW(read_jsonl("/nonexistent/file.jsonl"), DatasetIoError);
}
