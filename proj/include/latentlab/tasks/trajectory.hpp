#pragma once

#include <string>
#include <vector>

#include "latentlab/tasks/grid.hpp"

namespace latentlab::tasks {

enum class SegmentKind { Text, Image };
enum class ImageTag { Original, Crop, Manipulated };

inline std::string to_string(ImageTag t) {
  switch (t) {
    case ImageTag::Original: return "original";
    case ImageTag::Crop: return "crop";
    case ImageTag::Manipulated: return "manipulated";
  }
  return "?";
}

inline ImageTag image_tag_from_string(const std::string& s) {
  if (s == "original") return ImageTag::Original;
  if (s == "crop") return ImageTag::Crop;
  if (s == "manipulated") return ImageTag::Manipulated;
  throw ParseError("unknown image tag '" + s + "'");
}

struct TrajectorySegment {
  SegmentKind kind = SegmentKind::Text;
  ImageTag tag = ImageTag::Original;  // Image segments only
  Tokens tokens;

  static TrajectorySegment text(Tokens t) { return {SegmentKind::Text, ImageTag::Original, std::move(t)}; }
  static TrajectorySegment image(ImageTag tag, Tokens t) { return {SegmentKind::Image, tag, std::move(t)}; }

  bool is_image() const { return kind == SegmentKind::Image; }
  friend bool operator==(const TrajectorySegment&, const TrajectorySegment&) = default;
};

/// Gold reasoning for one instance: text and intermediate "images" in order.
/// The final answer appears exactly once, as "<answer> ... </answer>" inside a
/// text segment, and is mirrored in `answer`.
struct InterleavedTrajectory {
  std::vector<TrajectorySegment> segments;
  Tokens answer;

  Tokens flatten() const {
    Tokens out;
    for (const auto& s : segments) append(out, s.tokens);
    return out;
  }

  std::size_t image_count() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.is_image() ? 1 : 0;
    return n;
  }

  friend bool operator==(const InterleavedTrajectory&, const InterleavedTrajectory&) = default;
};

inline Tokens answer_span(const Tokens& answer) {
  Tokens out{tok::answer_open};
  append(out, answer);
  out.push_back(tok::answer_close);
  return out;
}

/// Contents of every "<answer> ... </answer>" span in a token sequence.
inline std::vector<Tokens> find_answer_spans(const Tokens& t) {
  std::vector<Tokens> spans;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != tok::answer_open) continue;
    std::size_t j = i + 1;
    while (j < t.size() && t[j] != tok::answer_close) ++j;
    if (j == t.size()) break;
    spans.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(i + 1), t.begin() + static_cast<std::ptrdiff_t>(j));
    i = j;
  }
  return spans;
}

/// First complete answer span of generated text, if any.
inline std::optional<Tokens> extract_answer(const Tokens& generated) {
  auto spans = find_answer_spans(generated);
  if (spans.empty()) return std::nullopt;
  return spans.front();
}

/// Structural validity: one or more text segments, exactly one answer span
/// across the whole trajectory, and that span equal to `answer`.
inline bool well_formed(const InterleavedTrajectory& tr) {
  bool has_text = false;
  for (const auto& s : tr.segments) has_text = has_text || !s.is_image();
  if (!has_text) return false;
  const auto spans = find_answer_spans(tr.flatten());
  return spans.size() == 1 && spans.front() == tr.answer;
}

}  // namespace latentlab::tasks
