#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentlab/tasks/visual_search.hpp"
#include "latentlab/tasks/vsp.hpp"

namespace latentlab::tasks {

using nlohmann::json;

class DatasetIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kTaskVisualSearch = "visual_search";
inline constexpr const char* kTaskVsp = "vsp";

/// One JSONL line: {id, task, tokens, trajectory_segments, answer,
/// answer_tokens, meta, instance} plus the optional pipeline fields
/// {captions, verdict, reason}.
struct DatasetRecord {
  std::string id;
  std::string task;
  Tokens tokens;  // prompt: bos + grid + question
  InterleavedTrajectory trajectory;
  json meta = json::object();
  std::optional<GridInstance> grid;
  std::optional<VSPInstance> board;
  std::vector<std::string> captions;
  std::optional<std::string> verdict;
  std::optional<std::string> reason;
};

inline DatasetRecord make_record(const GridInstance& inst, const InterleavedTrajectory& tr) {
  DatasetRecord r;
  r.id = inst.id;
  r.task = kTaskVisualSearch;
  r.tokens = prompt_tokens(inst);
  r.trajectory = tr;
  r.meta = {{"seed", inst.seed}, {"H", inst.grid.height}, {"W", inst.grid.width}, {"k", inst.crop.size}};
  r.grid = inst;
  return r;
}

inline DatasetRecord make_record(const VSPInstance& b, const InterleavedTrajectory& tr, double hole_density) {
  DatasetRecord r;
  r.id = b.id;
  r.task = kTaskVsp;
  r.tokens = prompt_tokens(b);
  r.trajectory = tr;
  r.meta = {{"seed", b.seed}, {"H", b.n}, {"W", b.n}, {"hole_density", hole_density}};
  r.board = b;
  return r;
}

namespace detail {

inline std::string target_kind_name(TargetKind k) { return k == TargetKind::ByGlyph ? "glyph" : "color"; }

inline json grid_instance_json(const GridInstance& g) {
  json cells = json::array();
  for (const Cell& c : g.grid.cells)
    cells.push_back({std::string(kGlyphNames[c.glyph]), std::string(kColorNames[c.color])});
  const std::string value = g.target.kind == TargetKind::ByGlyph ? std::string(kGlyphNames[g.target.value])
                                                                  : std::string(kColorNames[g.target.value]);
  return {{"height", g.grid.height},
          {"width", g.grid.width},
          {"cells", cells},
          {"target", {{"kind", target_kind_name(g.target.kind)}, {"value", value}}},
          {"question", to_string(g.question)},
          {"crop", {{"row", g.crop.row}, {"col", g.crop.col}, {"size", g.crop.size}}}};
}

inline std::uint8_t index_of(std::string_view name, const auto& table, const char* what) {
  for (std::size_t i = 0; i < table.size(); ++i)
    if (table[i] == name) return static_cast<std::uint8_t>(i);
  throw DatasetIoError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

inline GridInstance grid_instance_from_json(const json& j, const DatasetRecord& rec) {
  GridInstance g;
  g.id = rec.id;
  g.seed = rec.meta.value("seed", std::uint64_t{0});
  g.grid.height = j.at("height").get<std::size_t>();
  g.grid.width = j.at("width").get<std::size_t>();
  for (const auto& c : j.at("cells")) {
    g.grid.cells.push_back({index_of(c.at(0).get<std::string>(), kGlyphNames, "glyph"),
                            index_of(c.at(1).get<std::string>(), kColorNames, "color")});
  }
  if (g.grid.cells.size() != g.grid.height * g.grid.width) throw DatasetIoError(rec.id + ": cell count mismatch");
  const auto& t = j.at("target");
  const std::string kind = t.at("kind").get<std::string>();
  if (kind == "glyph") {
    g.target = {TargetKind::ByGlyph, index_of(t.at("value").get<std::string>(), kGlyphNames, "glyph")};
  } else if (kind == "color") {
    g.target = {TargetKind::ByColor, index_of(t.at("value").get<std::string>(), kColorNames, "color")};
  } else {
    throw DatasetIoError(rec.id + ": unknown target kind '" + kind + "'");
  }
  g.question = question_kind_from_string(j.at("question").get<std::string>());
  const auto& c = j.at("crop");
  g.crop = {c.at("row").get<std::size_t>(), c.at("col").get<std::size_t>(), c.at("size").get<std::size_t>()};
  g.answer = rec.trajectory.answer;
  return g;
}

inline const char* board_cell_name(BoardCell c) {
  switch (c) {
    case BoardCell::Empty: return "ice";
    case BoardCell::Hole: return "hole";
    case BoardCell::Start: return "start";
    case BoardCell::Goal: return "goal";
  }
  return "ice";
}

inline json board_json(const VSPInstance& b) {
  json cells = json::array();
  for (BoardCell c : b.cells) cells.push_back(board_cell_name(c));
  json gold = json::array();
  for (Action a : b.gold) gold.push_back(std::string(Vocab::instance().word(action_token(a))));
  return {{"n", b.n},
          {"cells", cells},
          {"start", {b.start.row, b.start.col}},
          {"goal", {b.goal.row, b.goal.col}},
          {"gold", gold}};
}

inline VSPInstance board_from_json(const json& j, const DatasetRecord& rec) {
  VSPInstance b;
  b.id = rec.id;
  b.seed = rec.meta.value("seed", std::uint64_t{0});
  b.n = j.at("n").get<std::size_t>();
  for (const auto& c : j.at("cells")) {
    const std::string s = c.get<std::string>();
    if (s == "ice") b.cells.push_back(BoardCell::Empty);
    else if (s == "hole") b.cells.push_back(BoardCell::Hole);
    else if (s == "start") b.cells.push_back(BoardCell::Start);
    else if (s == "goal") b.cells.push_back(BoardCell::Goal);
    else throw DatasetIoError(rec.id + ": unknown board cell '" + s + "'");
  }
  if (b.cells.size() != b.n * b.n) throw DatasetIoError(rec.id + ": board cell count mismatch");
  b.start = {j.at("start").at(0).get<std::size_t>(), j.at("start").at(1).get<std::size_t>()};
  b.goal = {j.at("goal").at(0).get<std::size_t>(), j.at("goal").at(1).get<std::size_t>()};
  for (const auto& a : j.at("gold")) {
    const Token t = Vocab::instance().id(a.get<std::string>());
    if (t < tok::action0 || t >= tok::action0 + 4) throw DatasetIoError(rec.id + ": bad action");
    b.gold.push_back(static_cast<Action>(t - tok::action0));
  }
  return b;
}

}  // namespace detail

inline json to_json(const DatasetRecord& r) {
  json segs = json::array();
  for (const auto& s : r.trajectory.segments) {
    json js = {{"kind", s.is_image() ? "image" : "text"}, {"tokens", s.tokens}};
    if (s.is_image()) js["tag"] = to_string(s.tag);
    segs.push_back(std::move(js));
  }
  json j = {{"id", r.id},
            {"task", r.task},
            {"tokens", r.tokens},
            {"trajectory_segments", segs},
            {"answer", detokenize(r.trajectory.answer)},
            {"answer_tokens", r.trajectory.answer},
            {"meta", r.meta}};
  if (r.grid) j["instance"] = detail::grid_instance_json(*r.grid);
  if (r.board) j["instance"] = detail::board_json(*r.board);
  if (!r.captions.empty()) j["captions"] = r.captions;
  if (r.verdict) j["verdict"] = *r.verdict;
  if (r.reason) j["reason"] = *r.reason;
  return j;
}

inline DatasetRecord record_from_json(const json& j) {
  DatasetRecord r;
  r.id = j.at("id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.tokens = j.at("tokens").get<Tokens>();
  for (const auto& s : j.at("trajectory_segments")) {
    const std::string kind = s.at("kind").get<std::string>();
    if (kind == "text") {
      r.trajectory.segments.push_back(TrajectorySegment::text(s.at("tokens").get<Tokens>()));
    } else if (kind == "image") {
      r.trajectory.segments.push_back(
          TrajectorySegment::image(image_tag_from_string(s.at("tag").get<std::string>()), s.at("tokens").get<Tokens>()));
    } else {
      throw DatasetIoError(r.id + ": unknown segment kind '" + kind + "'");
    }
  }
  r.trajectory.answer = j.at("answer_tokens").get<Tokens>();
  r.meta = j.value("meta", json::object());
  for (Token t : r.tokens)
    if (t >= kVocabSize) throw DatasetIoError(r.id + ": token id out of vocabulary");
  if (j.contains("instance")) {
    if (r.task == kTaskVisualSearch) r.grid = detail::grid_instance_from_json(j.at("instance"), r);
    else if (r.task == kTaskVsp) r.board = detail::board_from_json(j.at("instance"), r);
  }
  if (j.contains("captions")) r.captions = j.at("captions").get<std::vector<std::string>>();
  if (j.contains("verdict")) r.verdict = j.at("verdict").get<std::string>();
  if (j.contains("reason")) r.reason = j.at("reason").get<std::string>();
  return r;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetIoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw DatasetIoError("write failed: " + path.string());
}

inline std::vector<DatasetRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetIoError("cannot read dataset " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DatasetIoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace latentlab::tasks
