#pragma once

#include <vector>

#include "json.hpp"
#include "latentlab/model/generate.hpp"

namespace latentlab::causal {

struct TimingReport {
  std::size_t instances = 0;
  double mean_steps = 0.0;
  double mean_wall_ms = 0.0;
  double tokens_per_sec = 0.0;
};

/// Only the decode loop is timed (the trace's own clock); prompts are built
/// before the call.
inline TimingReport timing(const model::Reasoner& m, const std::vector<model::Sequence>& prompts, std::size_t max_steps) {
  TimingReport r;
  r.instances = prompts.size();
  if (prompts.empty()) return r;
  model::GenerateOptions o;
  o.max_steps = max_steps;
  std::size_t steps = 0;
  std::uint64_t ns = 0;
  for (const auto& p : prompts) {
    const auto tr = m.generate(p, o);
    steps += tr.step_count;
    ns += tr.wall_time_ns;
  }
  const double n = static_cast<double>(prompts.size());
  r.mean_steps = static_cast<double>(steps) / n;
  r.mean_wall_ms = static_cast<double>(ns) / 1e6 / n;
  r.tokens_per_sec = ns > 0 ? static_cast<double>(steps) / (static_cast<double>(ns) / 1e9) : 0.0;
  return r;
}

inline nlohmann::json to_json(const TimingReport& r) {
  return {{"instances", r.instances},
          {"mean_decode_steps", r.mean_steps},
          {"mean_wall_ms", r.mean_wall_ms},
          {"tokens_per_sec", r.tokens_per_sec}};
}

}  // namespace latentlab::causal
