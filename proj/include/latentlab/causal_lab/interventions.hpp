#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentlab/causal_lab/similarity.hpp"
#include "latentlab/training/trainer.hpp"

namespace latentlab::causal {

/// Prompt and gold answer for scored analyses.
using train::EvalItem;

struct InterventionRow {
  model::InterventionSpec spec;
  double clean_accuracy = 0.0;
  double intervened_accuracy = 0.0;
  double delta = 0.0;
  double change_rate = 0.0;
  std::size_t generation_errors = 0;
};

struct InterventionReport {
  std::vector<InterventionRow> rows;
  std::size_t instances = 0;
};

/// Answer as compared for the change rate; a missing answer compares as empty.
inline tasks::Tokens final_answer(const model::GenerationTrace& t) { return t.has_answer ? t.answer_tokens : tasks::Tokens{}; }

/// Per-instance noise stream: the spec's seed forked by the instance index.
inline std::uint64_t noise_seed_for(const model::InterventionSpec& spec, std::size_t index) {
  return num::Rng(spec.seed).fork(index).next_u64();
}

/// Regenerates every item under each spec; the clean pass uses no intervention.
inline InterventionReport run_intervention_suite(const model::Reasoner& m, const std::vector<EvalItem>& items,
                                                 const std::vector<model::InterventionSpec>& specs,
                                                 std::size_t max_steps) {
  if (items.empty()) throw AnalysisError("run_intervention_suite: empty eval set");
  for (const auto& s : specs) s.validate(m.hidden_size());
  InterventionReport rep;
  rep.instances = items.size();
  model::GenerateOptions base;
  base.max_steps = max_steps;
  std::vector<tasks::Tokens> clean;
  std::size_t clean_hits = 0;
  for (const auto& it : items) {
    const auto tr = m.generate(it.prompt, base);
    clean_hits += train::answer_matches(tr, it.answer) ? 1 : 0;
    clean.push_back(final_answer(tr));
  }
  const double n = static_cast<double>(items.size());
  const double clean_acc = static_cast<double>(clean_hits) / n;
  for (const auto& spec : specs) {
    InterventionRow row;
    row.spec = spec;
    row.clean_accuracy = clean_acc;
    std::size_t hits = 0;
    std::size_t changed = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      model::GenerateOptions o = base;
      o.intervention = spec;
      o.noise_seed = noise_seed_for(spec, i);
      const auto tr = m.generate(items[i].prompt, o);
      if (!tr.error.empty()) ++row.generation_errors;
      hits += train::answer_matches(tr, items[i].answer) ? 1 : 0;
      changed += final_answer(tr) != clean[i] ? 1 : 0;
    }
    row.intervened_accuracy = static_cast<double>(hits) / n;
    row.delta = static_cast<double>(static_cast<long long>(hits) - static_cast<long long>(clean_hits)) / n;
    row.change_rate = static_cast<double>(changed) / n;
    rep.rows.push_back(row);
  }
  return rep;
}

/// Defaults derived from clean latents: sigma is their RMS component, tau
/// their element-wise mean.
struct Calibration {
  double sigma = 0.0;
  Vector tau;
  std::size_t latents = 0;
};

inline Calibration calibrate(const LatentSet& set) {
  Calibration c;
  if (set.size() == 0) throw AnalysisError("calibrate: empty latent set");
  const std::size_t d = set.latents.front().front().size();
  c.tau.assign(d, 0.0);
  double sq = 0.0;
  for (const auto& inst : set.latents) {
    for (const auto& z : inst) {
      for (std::size_t i = 0; i < d; ++i) {
        c.tau[i] += z[i];
        sq += z[i] * z[i];
      }
      ++c.latents;
    }
  }
  for (double& t : c.tau) t /= static_cast<double>(c.latents);
  c.sigma = std::sqrt(sq / static_cast<double>(c.latents * d));
  return c;
}

inline constexpr double kDefaultNearZero = 1e-6;

/// None, AddGaussian, ReplaceGaussian, FixedTensor and NearZero with the
/// calibrated defaults.
inline std::vector<model::InterventionSpec> default_interventions(const Calibration& c, std::uint64_t seed) {
  using model::InterventionSpec;
  return {InterventionSpec::none(), InterventionSpec::add_gaussian(c.sigma, seed),
          InterventionSpec::replace_gaussian(c.sigma, seed + 1), InterventionSpec::fixed_tensor(c.tau),
          InterventionSpec::near_zero(kDefaultNearZero)};
}

inline nlohmann::json to_json(const InterventionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"variant", row.spec.name()},
                    {"params", row.spec.params()},
                    {"clean_accuracy", row.clean_accuracy},
                    {"intervened_accuracy", row.intervened_accuracy},
                    {"delta", row.delta},
                    {"answer_change_rate", row.change_rate},
                    {"generation_errors", row.generation_errors}});
  }
  return {{"instances", r.instances}, {"applied_at", "every latent step, before feed-back"}, {"rows", rows}};
}

inline void write_intervention_csv(const std::filesystem::path& path, const InterventionReport& r) {
  std::ofstream os(path);
  os << "variant,clean_accuracy,intervened_accuracy,delta,answer_change_rate\n";
  for (const auto& row : r.rows) {
    os << row.spec.name() << ',' << fmt(row.clean_accuracy) << ',' << fmt(row.intervened_accuracy) << ','
       << fmt(row.delta) << ',' << fmt(row.change_rate) << '\n';
  }
}

}  // namespace latentlab::causal
