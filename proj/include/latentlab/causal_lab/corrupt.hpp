#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latentlab/causal_lab/interventions.hpp"
#include "latentlab/tasks/visual_search.hpp"

namespace latentlab::causal {

using tasks::Token;
using tasks::Tokens;

/// [first, last] token indices of the verbalized imagination: from "Zooming"
/// through the next ".".
inline std::optional<std::pair<std::size_t, std::size_t>> find_imagination_span(const Tokens& t) {
  const Token start = tasks::Vocab::instance().id("Zooming");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != start) continue;
    for (std::size_t j = i + 1; j < t.size(); ++j)
      if (t[j] == tasks::tok::period) return std::pair{i, j};
    return std::nullopt;
  }
  return std::nullopt;
}

/// Replaces the answer-bearing attribute inside span [first, last] with a
/// different legal value: the next color or glyph cyclically, or for
/// positions the next row modulo the grid height. Returns false if the
/// attribute is absent.
inline bool flip_attribute(Tokens& t, std::size_t first, std::size_t last, tasks::QuestionKind ask, std::size_t height) {
  switch (ask) {
    case tasks::QuestionKind::AskColor:
      for (std::size_t i = first; i <= last; ++i) {
        if (!tasks::is_color(t[i])) continue;
        t[i] = tasks::color_token((t[i] - tasks::tok::color0 + 1) % tasks::kColorCount);
        return true;
      }
      return false;
    case tasks::QuestionKind::AskGlyph:
      for (std::size_t i = first; i <= last; ++i) {
        if (!tasks::is_glyph(t[i])) continue;
        t[i] = tasks::glyph_token((t[i] - tasks::tok::glyph0 + 1) % tasks::kGlyphCount);
        return true;
      }
      return false;
    case tasks::QuestionKind::AskPosition: {
      if (height < 2) return false;
      for (std::size_t i = first; i < last; ++i) {
        if (t[i] != tasks::tok::lparen || !tasks::is_digit(t[i + 1])) continue;
        std::size_t j = i + 1;
        std::size_t row = 0;
        while (j <= last && tasks::is_digit(t[j])) row = row * 10 + (t[j++] - tasks::tok::digit0);
        const Tokens repl = tasks::number_tokens((row + 1) % height);
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(i + 1), t.begin() + static_cast<std::ptrdiff_t>(j));
        t.insert(t.begin() + static_cast<std::ptrdiff_t>(i + 1), repl.begin(), repl.end());
        return true;
      }
      return false;
    }
  }
  return false;
}

struct CorruptionResult {
  std::string id;
  bool skipped = false;
  std::string skip_reason;
  Tokens clean_text;
  Tokens clean_prefix;      // through the end of the imagination span
  Tokens corrupted_prefix;
  Tokens completion;        // tokens generated after the corrupted prefix
  std::optional<Tokens> clean_answer;
  std::optional<Tokens> corrupted_answer;
  bool answer_changed = false;
};

/// Clean greedy trace, then the same prompt with the flipped prefix (answer
/// stripped) completed greedily.
inline CorruptionResult corrupt_trace(const model::Reasoner& m, const tasks::GridInstance& inst, std::size_t max_steps) {
  CorruptionResult r;
  r.id = inst.id;
  const Sequence prompt = model::to_inputs(tasks::prompt_tokens(inst));
  model::GenerateOptions o;
  o.max_steps = max_steps;
  const auto clean = m.generate(prompt, o);
  r.clean_text = clean.text_tokens;
  if (clean.has_answer) r.clean_answer = clean.answer_tokens;
  const auto span = find_imagination_span(clean.text_tokens);
  if (!span) {
    r.skipped = true;
    r.skip_reason = "no imagination span";
    return r;
  }
  r.clean_prefix.assign(clean.text_tokens.begin(), clean.text_tokens.begin() + static_cast<std::ptrdiff_t>(span->second + 1));
  r.corrupted_prefix = r.clean_prefix;
  if (!flip_attribute(r.corrupted_prefix, span->first, span->second, inst.question, inst.grid.height)) {
    r.skipped = true;
    r.skip_reason = "attribute not found in imagination span";
    return r;
  }
  Sequence forced = prompt;
  for (Token t : r.corrupted_prefix) forced.emplace_back(t);
  o.max_steps = max_steps > r.corrupted_prefix.size() ? max_steps - r.corrupted_prefix.size() : 1;
  const auto done = m.generate(forced, o);
  r.completion = done.text_tokens;
  if (done.has_answer) r.corrupted_answer = done.answer_tokens;
  r.answer_changed = r.corrupted_answer != r.clean_answer;
  return r;
}

struct CorruptionReport {
  std::vector<CorruptionResult> results;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  double clean_accuracy = 0.0;      // over evaluated instances
  double corrupted_accuracy = 0.0;
  double delta = 0.0;
  double change_rate = 0.0;
};

inline CorruptionReport run_corruption(const model::Reasoner& m, const std::vector<tasks::GridInstance>& instances,
                                       std::size_t max_steps) {
  CorruptionReport rep;
  std::size_t clean_hits = 0;
  std::size_t corrupt_hits = 0;
  std::size_t changed = 0;
  for (const auto& inst : instances) {
    auto r = corrupt_trace(m, inst, max_steps);
    if (r.skipped) {
      ++rep.skipped;
    } else {
      ++rep.evaluated;
      clean_hits += r.clean_answer == inst.answer ? 1 : 0;
      corrupt_hits += r.corrupted_answer == inst.answer ? 1 : 0;
      changed += r.answer_changed ? 1 : 0;
    }
    rep.results.push_back(std::move(r));
  }
  if (rep.evaluated > 0) {
    const double n = static_cast<double>(rep.evaluated);
    rep.clean_accuracy = static_cast<double>(clean_hits) / n;
    rep.corrupted_accuracy = static_cast<double>(corrupt_hits) / n;
    rep.delta = (static_cast<double>(corrupt_hits) - static_cast<double>(clean_hits)) / n;
    rep.change_rate = static_cast<double>(changed) / n;
  }
  return rep;
}

inline nlohmann::json to_json(const CorruptionReport& r) {
  auto opt = [](const std::optional<Tokens>& t) -> nlohmann::json {
    return t ? nlohmann::json(tasks::detokenize(*t)) : nlohmann::json(nullptr);
  };
  nlohmann::json items = nlohmann::json::array();
  for (const auto& x : r.results) {
    nlohmann::json j = {{"id", x.id}, {"skipped", x.skipped}};
    if (x.skipped) {
      j["reason"] = x.skip_reason;
    } else {
      j["clean_prefix"] = tasks::detokenize(x.clean_prefix);
      j["corrupted_prefix"] = tasks::detokenize(x.corrupted_prefix);
      j["completion"] = tasks::detokenize(x.completion);
      j["clean_answer"] = opt(x.clean_answer);
      j["corrupted_answer"] = opt(x.corrupted_answer);
      j["answer_changed"] = x.answer_changed;
    }
    items.push_back(j);
  }
  return {{"evaluated", r.evaluated},    {"skipped", r.skipped},   {"clean_accuracy", r.clean_accuracy},
          {"corrupted_accuracy", r.corrupted_accuracy}, {"delta", r.delta}, {"answer_change_rate", r.change_rate},
          {"corruption", "answer attribute in the imagination span flipped to the next legal value"},
          {"instances", items}};
}

}  // namespace latentlab::causal
