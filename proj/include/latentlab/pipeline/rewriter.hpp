#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "latentlab/tasks/dataset.hpp"

namespace latentlab::pipeline {

using tasks::DatasetRecord;
using tasks::ImageTag;
using tasks::Position;
using tasks::Token;
using tasks::Tokens;
using tasks::TrajectorySegment;

/// ZoomCaption verbalizes crop segments, DiffDescription manipulated ones.
struct RewriteRule {
  enum class Kind { ZoomCaption, DiffDescription };
  Kind kind = Kind::ZoomCaption;
  std::string template_id = "v1";

  static RewriteRule for_tag(ImageTag tag) {
    if (tag == ImageTag::Crop) return {Kind::ZoomCaption, "v1"};
    if (tag == ImageTag::Manipulated) return {Kind::DiffDescription, "v1"};
    throw std::invalid_argument("no rewrite rule for image tag '" + tasks::to_string(tag) + "'");
  }

  bool accepts(ImageTag tag) const {
    return (kind == Kind::ZoomCaption && tag == ImageTag::Crop) ||
           (kind == Kind::DiffDescription && tag == ImageTag::Manipulated);
  }

  std::string name() const { return kind == Kind::ZoomCaption ? "zoom_caption" : "diff_description"; }
};

/// A segment could not be rewritten; carries the instance id.
class RewriteFailure : public std::runtime_error {
 public:
  RewriteFailure(std::string instance_id, const std::string& what)
      : std::runtime_error(instance_id + ": " + what), instance_id_(std::move(instance_id)) {}
  const std::string& instance_id() const noexcept { return instance_id_; }

 private:
  std::string instance_id_;
};

class Rewriter {
 public:
  virtual ~Rewriter() = default;
  /// Caption text for one image segment; throws RewriteFailure.
  virtual std::string rewrite(const TrajectorySegment& segment, const DatasetRecord& record,
                              const RewriteRule& rule) const = 0;
  virtual std::string name() const = 0;
};

/// Template-based captions computed from the synthetic instance itself:
///   ZoomCaption:     "Zooming into region (r,c): the target glyph is G with color C."
///                    (r,c) is the target cell in full-grid coordinates.
///   DiffDescription: "The path now marks (r,c) (r,c) ..." listing the cells that
///                    differ from the original board, or "The path now marks the goal."
class DeterministicVerbalizer : public Rewriter {
 public:
  std::string rewrite(const TrajectorySegment& segment, const DatasetRecord& record,
                      const RewriteRule& rule) const override {
    if (rule.kind == RewriteRule::Kind::ZoomCaption) return zoom_caption(segment, record);
    return diff_description(segment, record);
  }
  std::string name() const override { return "deterministic"; }

  static std::string zoom_caption(const TrajectorySegment& segment, const DatasetRecord& record) {
    if (!record.grid) throw RewriteFailure(record.id, "zoom caption needs a grid instance");
    const tasks::GridInstance& inst = *record.grid;
    std::size_t pos = 0;
    tasks::Grid crop;
    try {
      crop = tasks::parse_grid(segment.tokens, pos);
    } catch (const tasks::ParseError& e) {
      throw RewriteFailure(record.id, std::string("crop segment does not parse: ") + e.what());
    }
    const auto hits = tasks::find_matches(crop, inst.target);
    if (hits.empty()) throw RewriteFailure(record.id, "crop does not show the target");
    const Position local = hits.front();
    const Position abs{inst.crop.row + local.row, inst.crop.col + local.col};
    const tasks::Cell cell = crop.at(local);
    return "Zooming into region (" + std::to_string(abs.row) + "," + std::to_string(abs.col) +
           "): the target glyph is " + std::string(tasks::kGlyphNames[cell.glyph]) + " with color " +
           std::string(tasks::kColorNames[cell.color]) + ".";
  }

  static std::string diff_description(const TrajectorySegment& segment, const DatasetRecord& record) {
    if (!record.board) throw RewriteFailure(record.id, "diff description needs a board instance");
    const Tokens before = tasks::serialize_board(*record.board);
    const Tokens& after = segment.tokens;
    if (before.size() != after.size()) throw RewriteFailure(record.id, "manipulated board has a different size");
    const std::size_t n = record.board->n;
    std::string cells;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const bool is_cell = before[i] != tasks::tok::grid_open && before[i] != tasks::tok::grid_close &&
                           before[i] != tasks::tok::row_sep;
      if (!is_cell) continue;
      if (before[i] != after[i]) {
        cells += " (" + std::to_string(idx / n) + "," + std::to_string(idx % n) + ")";
      }
      ++idx;
    }
    if (cells.empty()) return "The path now marks the goal.";
    return "The path now marks" + cells + ".";
  }
};

inline std::string verbalize(const TrajectorySegment& segment, const DatasetRecord& record, const RewriteRule& rule,
                             const Rewriter& rewriter) {
  if (!segment.is_image()) throw std::invalid_argument("verbalize: segment is not an image");
  if (!rule.accepts(segment.tag)) {
    throw std::invalid_argument("verbalize: rule " + rule.name() + " does not apply to a " + tasks::to_string(segment.tag) +
                                " segment");
  }
  return rewriter.rewrite(segment, record, rule);
}

}  // namespace latentlab::pipeline
