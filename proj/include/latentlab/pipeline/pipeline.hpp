#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "latentlab/pipeline/rewriter.hpp"

namespace latentlab::pipeline {

class RefinementError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Image segments replaced by their captions, in order. The connective
/// template is plain concatenation: a caption sits directly between the text
/// segments around it, so the refined text is the canonical detokenization of
/// the joined token stream.
inline tasks::InterleavedTrajectory refine_trajectory(const tasks::InterleavedTrajectory& tr,
                                                      const std::vector<std::string>& captions) {
  if (captions.size() != tr.image_count()) {
    throw RefinementError("refine_trajectory: " + std::to_string(tr.image_count()) + " image segments but " +
                          std::to_string(captions.size()) + " captions");
  }
  tasks::InterleavedTrajectory out;
  out.answer = tr.answer;
  std::size_t next = 0;
  for (const auto& seg : tr.segments) {
    if (!seg.is_image()) {
      out.segments.push_back(seg);
      continue;
    }
    Tokens caption;
    try {
      caption = tasks::tokenize(captions[next++]);
    } catch (const tasks::TokenizationError& e) {
      throw RefinementError(std::string("refine_trajectory: caption is not in the vocabulary: ") + e.what());
    }
    if (caption.empty()) throw RefinementError("refine_trajectory: empty caption");
    out.segments.push_back(TrajectorySegment::text(std::move(caption)));
  }
  return out;
}

struct FilterVerdict {
  enum class Decision { Keep, Reject };
  enum class Reason { AnswerConflict, AmbiguousQuestion, Malformed };

  Decision decision = Decision::Keep;
  std::optional<Reason> reason;

  static FilterVerdict keep() { return {}; }
  static FilterVerdict reject(Reason r) { return {Decision::Reject, r}; }
  bool kept() const { return decision == Decision::Keep; }
};

inline std::string to_string(FilterVerdict::Reason r) {
  switch (r) {
    case FilterVerdict::Reason::AnswerConflict: return "answer_conflict";
    case FilterVerdict::Reason::AmbiguousQuestion: return "ambiguous_question";
    case FilterVerdict::Reason::Malformed: return "malformed";
  }
  return "?";
}

/// Parsed "Zooming into region ( r , c ) : the target glyph is G with color C ."
struct ZoomClaim {
  Position cell;
  std::uint8_t glyph = 0;
  std::uint8_t color = 0;
};

inline std::optional<ZoomClaim> parse_zoom_caption(const Tokens& t) {
  const auto& v = tasks::Vocab::instance();
  std::size_t i = 0;
  auto eat = [&](Token want) {
    if (i < t.size() && t[i] == want) {
      ++i;
      return true;
    }
    return false;
  };
  auto number = [&](std::size_t& out) {
    if (i >= t.size() || !tasks::is_digit(t[i])) return false;
    out = 0;
    while (i < t.size() && tasks::is_digit(t[i])) out = out * 10 + (t[i++] - tasks::tok::digit0);
    return true;
  };
  ZoomClaim c;
  if (!(eat(v.id("Zooming")) && eat(v.id("into")) && eat(v.id("region")) && eat(tasks::tok::lparen) &&
        number(c.cell.row) && eat(tasks::tok::comma) && number(c.cell.col) && eat(tasks::tok::rparen) &&
        eat(tasks::tok::colon) && eat(v.id("the")) && eat(v.id("target")) && eat(v.id("glyph")) && eat(v.id("is")))) {
    return std::nullopt;
  }
  if (i >= t.size() || !tasks::is_glyph(t[i])) return std::nullopt;
  c.glyph = static_cast<std::uint8_t>(t[i++] - tasks::tok::glyph0);
  if (!(eat(v.id("with")) && eat(v.id("color")))) return std::nullopt;
  if (i >= t.size() || !tasks::is_color(t[i])) return std::nullopt;
  c.color = static_cast<std::uint8_t>(t[i++] - tasks::tok::color0);
  if (!eat(tasks::tok::period) || i != t.size()) return std::nullopt;
  return c;
}

/// Cells listed by a DiffDescription, or nullopt if it does not parse.
inline std::optional<std::vector<Position>> parse_diff_description(const Tokens& t) {
  const auto& v = tasks::Vocab::instance();
  const Tokens head = {v.id("The"), v.id("path"), v.id("now"), v.id("marks")};
  if (t.size() < head.size() + 1 || !std::equal(head.begin(), head.end(), t.begin())) return std::nullopt;
  std::size_t i = head.size();
  std::vector<Position> cells;
  if (t.size() == i + 3 && t[i] == v.id("the") && t[i + 1] == v.id("goal") && t[i + 2] == tasks::tok::period) return cells;
  while (i < t.size() && t[i] == tasks::tok::lparen) {
    Position p;
    ++i;
    if (i >= t.size() || !tasks::is_digit(t[i])) return std::nullopt;
    while (i < t.size() && tasks::is_digit(t[i])) p.row = p.row * 10 + (t[i++] - tasks::tok::digit0);
    if (i >= t.size() || t[i++] != tasks::tok::comma) return std::nullopt;
    if (i >= t.size() || !tasks::is_digit(t[i])) return std::nullopt;
    while (i < t.size() && tasks::is_digit(t[i])) p.col = p.col * 10 + (t[i++] - tasks::tok::digit0);
    if (i >= t.size() || t[i++] != tasks::tok::rparen) return std::nullopt;
    cells.push_back(p);
  }
  if (cells.empty() || i + 1 != t.size() || t[i] != tasks::tok::period) return std::nullopt;
  return cells;
}

/// Verdict for a rewritten record (its trajectory already refined). Checks run
/// in the order malformed, ambiguous_question, answer_conflict.
inline FilterVerdict filter_instance(const DatasetRecord& record, const tasks::InterleavedTrajectory& refined) {
  using R = FilterVerdict::Reason;
  if (refined.image_count() != 0 || !tasks::well_formed(refined) || record.captions.empty()) {
    return FilterVerdict::reject(R::Malformed);
  }
  std::vector<Tokens> captions;
  try {
    for (const auto& c : record.captions) captions.push_back(tasks::tokenize(c));
  } catch (const tasks::TokenizationError&) {
    return FilterVerdict::reject(R::Malformed);
  }

  if (record.grid) {
    const tasks::GridInstance& inst = *record.grid;
    if (inst.grid.cells.size() != inst.grid.height * inst.grid.width) return FilterVerdict::reject(R::Malformed);
    if (tasks::find_matches(inst.grid, inst.target).size() != 1) return FilterVerdict::reject(R::AmbiguousQuestion);
    for (const Tokens& c : captions) {
      const auto claim = parse_zoom_caption(c);
      if (!claim) return FilterVerdict::reject(R::Malformed);
      Tokens claimed;
      switch (inst.question) {
        case tasks::QuestionKind::AskColor: claimed = {tasks::color_token(claim->color)}; break;
        case tasks::QuestionKind::AskGlyph: claimed = {tasks::glyph_token(claim->glyph)}; break;
        case tasks::QuestionKind::AskPosition: claimed = tasks::coord_tokens(claim->cell.row, claim->cell.col); break;
      }
      if (claimed != inst.answer || refined.answer != inst.answer) return FilterVerdict::reject(R::AnswerConflict);
    }
    return FilterVerdict::keep();
  }

  if (record.board) {
    const tasks::VSPInstance& b = *record.board;
    if (b.cells.size() != b.n * b.n) return FilterVerdict::reject(R::Malformed);
    const auto starts = std::count(b.cells.begin(), b.cells.end(), tasks::BoardCell::Start);
    const auto goals = std::count(b.cells.begin(), b.cells.end(), tasks::BoardCell::Goal);
    if (starts != 1 || goals != 1) return FilterVerdict::reject(R::AmbiguousQuestion);
    std::vector<tasks::Action> actions;
    for (Token t : refined.answer) {
      if (t < tasks::tok::action0 || t >= tasks::tok::action0 + 4) return FilterVerdict::reject(R::Malformed);
      actions.push_back(static_cast<tasks::Action>(t - tasks::tok::action0));
    }
    const auto visited = tasks::replay(b, actions);
    if (!visited || !tasks::reaches_goal(b, actions)) return FilterVerdict::reject(R::AnswerConflict);
    std::vector<Position> marked(visited->begin(), visited->end());
    if (!marked.empty()) marked.pop_back();  // goal keeps its own token
    for (const Tokens& c : captions) {
      auto cells = parse_diff_description(c);
      if (!cells) return FilterVerdict::reject(R::Malformed);
      auto a = *cells;
      auto e = marked;
      auto key = [](const Position& p, const Position& q) { return p.row != q.row ? p.row < q.row : p.col < q.col; };
      std::sort(a.begin(), a.end(), key);
      std::sort(e.begin(), e.end(), key);
      e.erase(std::unique(e.begin(), e.end()), e.end());
      if (a != e) return FilterVerdict::reject(R::AnswerConflict);
    }
    return FilterVerdict::keep();
  }
  return FilterVerdict::reject(R::Malformed);
}

struct PipelineConfig {
  std::size_t concurrency = 4;
};

struct PipelineStats {
  std::size_t input = 0;
  std::size_t rewrite_failures = 0;
  std::map<std::string, std::size_t> rejects;  // by reason
  std::size_t retained = 0;

  std::size_t rejected() const {
    std::size_t n = 0;
    for (const auto& [_, c] : rejects) n += c;
    return n;
  }
  bool conserved() const { return input == retained + rejected() + rewrite_failures; }
};

inline nlohmann::json to_json(const PipelineStats& s) {
  nlohmann::json rej = nlohmann::json::object();
  for (const char* r : {"answer_conflict", "ambiguous_question", "malformed"}) rej[r] = 0;
  for (const auto& [k, v] : s.rejects) rej[k] = v;
  return {{"input", s.input}, {"rewrite_failures", s.rewrite_failures}, {"rejects", rej}, {"retained", s.retained}};
}

struct RewriteOutput {
  std::vector<DatasetRecord> rewritten;   // captions set, trajectory refined
  std::vector<DatasetRecord> failed;      // verdict "rewrite_failure", reason = message
};

/// Captions every image segment and refines each trajectory. Records are
/// processed by up to `concurrency` workers; output order matches input order.
inline RewriteOutput rewrite_dataset(const std::vector<DatasetRecord>& input, const Rewriter& rewriter,
                                     const PipelineConfig& cfg = {}) {
  std::vector<std::optional<DatasetRecord>> done(input.size());
  std::vector<std::string> errors(input.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < input.size(); i = next++) {
      DatasetRecord r = input[i];
      try {
        std::vector<std::string> captions;
        for (const auto& seg : r.trajectory.segments) {
          if (!seg.is_image()) continue;
          captions.push_back(verbalize(seg, r, RewriteRule::for_tag(seg.tag), rewriter));
        }
        r.trajectory = refine_trajectory(r.trajectory, captions);
        r.captions = std::move(captions);
        done[i] = std::move(r);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.concurrency, input.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  RewriteOutput out;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (done[i]) {
      out.rewritten.push_back(std::move(*done[i]));
    } else {
      DatasetRecord r = input[i];
      r.verdict = "rewrite_failure";
      r.reason = errors[i];
      out.failed.push_back(std::move(r));
    }
  }
  return out;
}

struct FilterOutput {
  std::vector<DatasetRecord> kept;
  std::vector<DatasetRecord> quarantined;
  std::map<std::string, std::size_t> rejects;
};

inline FilterOutput filter_dataset(const std::vector<DatasetRecord>& rewritten) {
  FilterOutput out;
  for (DatasetRecord r : rewritten) {
    const FilterVerdict v = filter_instance(r, r.trajectory);
    if (v.kept()) {
      r.verdict = "keep";
      r.reason.reset();
      out.kept.push_back(std::move(r));
    } else {
      const std::string reason = to_string(*v.reason);
      r.verdict = "reject";
      r.reason = reason;
      ++out.rejects[reason];
      out.quarantined.push_back(std::move(r));
    }
  }
  return out;
}

struct PipelineResult {
  std::vector<DatasetRecord> retained;
  std::vector<DatasetRecord> quarantined;  // rejects and rewrite failures
  PipelineStats stats;
};

inline PipelineResult run_pipeline(const std::vector<DatasetRecord>& input, const Rewriter& rewriter,
                                   const PipelineConfig& cfg = {}) {
  RewriteOutput rw = rewrite_dataset(input, rewriter, cfg);
  FilterOutput f = filter_dataset(rw.rewritten);
  PipelineResult res;
  res.stats.input = input.size();
  res.stats.rewrite_failures = rw.failed.size();
  res.stats.rejects = f.rejects;
  res.stats.retained = f.kept.size();
  res.retained = std::move(f.kept);
  res.quarantined = std::move(f.quarantined);
  for (auto& r : rw.failed) res.quarantined.push_back(std::move(r));
  return res;
}

/// Reads `input`, writes retained.jsonl, quarantine.jsonl and stats.json under `out_dir`.
inline PipelineStats run_pipeline_files(const std::filesystem::path& input, const std::filesystem::path& out_dir,
                                        const Rewriter& rewriter, const PipelineConfig& cfg = {}) {
  const auto records = tasks::read_jsonl(input);
  PipelineResult res = run_pipeline(records, rewriter, cfg);
  std::filesystem::create_directories(out_dir);
  tasks::write_jsonl(out_dir / "retained.jsonl", res.retained);
  tasks::write_jsonl(out_dir / "quarantine.jsonl", res.quarantined);
  std::ofstream(out_dir / "stats.json") << to_json(res.stats).dump(2) << '\n';
  return res.stats;
}

}  // namespace latentlab::pipeline
