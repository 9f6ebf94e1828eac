#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "latentlab/model/transformer.hpp"
#include "latentlab/training/sft_example.hpp"

namespace latentlab::train {

enum class Regime { LatentSft, CapimagineSft, PlaceholderSft };
enum class GradMask { LatentOnly, Full };
enum class LatentLoss { Cosine, Mse };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::LatentSft: return "latent_sft";
    case Regime::CapimagineSft: return "capimagine_sft";
    case Regime::PlaceholderSft: return "placeholder_sft";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "latent_sft") return Regime::LatentSft;
  if (s == "capimagine_sft") return Regime::CapimagineSft;
  if (s == "placeholder_sft") return Regime::PlaceholderSft;
  throw model::ConfigError("unknown regime '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t eval_interval = 500;
  std::size_t warmup_steps = 0;
  double weight_decay = 0.0;  // decoupled, matrices only
  double lambda_text = 1.0;
  double lambda_latent = 1.0;
  GradMask grad_mask = GradMask::Full;
  LatentLoss latent_loss = LatentLoss::Cosine;
  Regime regime = Regime::CapimagineSft;
  std::size_t eval_max_steps = 48;

  void validate() const {
    if (lambda_text < 0 || lambda_latent < 0) throw model::ConfigError("train config: loss weights must be >= 0");
    if (batch_size == 0) throw model::ConfigError("train config: batch_size must be > 0");
    if (eval_interval == 0) throw model::ConfigError("train config: eval_interval must be > 0");
    if (!(learning_rate >= 0)) throw model::ConfigError("train config: learning_rate must be >= 0");
    if (!(weight_decay >= 0)) throw model::ConfigError("train config: weight_decay must be >= 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"eval_interval", c.eval_interval},
          {"warmup_steps", c.warmup_steps},
          {"weight_decay", c.weight_decay},
          {"lambda_text", c.lambda_text},
          {"lambda_latent", c.lambda_latent},
          {"grad_mask", c.grad_mask == GradMask::Full ? "full" : "latent_only"},
          {"latent_loss", c.latent_loss == LatentLoss::Cosine ? "cosine" : "mse"},
          {"regime", to_string(c.regime)},
          {"eval_max_steps", c.eval_max_steps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "eval_interval") c.eval_interval = value.get<std::size_t>();
      else if (key == "warmup_steps") c.warmup_steps = value.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "lambda_text") c.lambda_text = value.get<double>();
      else if (key == "lambda_latent") c.lambda_latent = value.get<double>();
      else if (key == "grad_mask") {
        const auto s = value.get<std::string>();
        if (s == "full") c.grad_mask = GradMask::Full;
        else if (s == "latent_only") c.grad_mask = GradMask::LatentOnly;
        else throw model::ConfigError("train config: unknown grad_mask '" + s + "'");
      } else if (key == "latent_loss") {
        const auto s = value.get<std::string>();
        if (s == "cosine") c.latent_loss = LatentLoss::Cosine;
        else if (s == "mse") c.latent_loss = LatentLoss::Mse;
        else throw model::ConfigError("train config: unknown latent_loss '" + s + "'");
      } else if (key == "regime") c.regime = regime_from_string(value.get<std::string>());
      else if (key == "eval_max_steps") c.eval_max_steps = value.get<std::size_t>();
      else throw model::ConfigError("train config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw model::ConfigError("train config: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

struct LossTerms {
  num::Var total;
  double text = 0.0;    // mean CE over masked rows (0 when none)
  double latent = 0.0;  // mean latent distance (0 when no latent rows)
};

/// L = lambda_text * mean CE over masked rows + lambda_latent * mean latent
/// distance over latent rows, on a packed forward of `batch`. Under
/// GradMask::LatentOnly the text term keeps its value but is cut from the graph.
inline LossTerms sft_loss(num::Tape& tape, const model::BoundWeights& w, const model::ModelConfig& mc,
                          const TrainConfig& tc, const std::vector<const SftExample*>& batch) {
  std::vector<Sequence> seqs;
  seqs.reserve(batch.size());
  for (const SftExample* ex : batch) seqs.push_back(ex->inputs);
  const model::ForwardVars fv = model::forward_batch(tape, w, mc, seqs);

  std::vector<std::size_t> ce_rows;
  std::vector<std::size_t> ce_targets;
  std::vector<std::size_t> latent_rows;
  std::vector<double> latent_targets;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SftExample& ex = *batch[b];
    const std::size_t off = fv.segments[b].offset;
    for (std::size_t t = 0; t < ex.mask.size(); ++t) {
      if (!ex.mask[t]) continue;
      ce_rows.push_back(off + t);
      ce_targets.push_back(ex.next[t]);
    }
    for (const LatentSpan& span : ex.latent_spans) {
      for (std::size_t j = 0; j < span.targets.size(); ++j) {
        latent_rows.push_back(off + span.first - 1 + j);
        latent_targets.insert(latent_targets.end(), span.targets[j].begin(), span.targets[j].end());
      }
    }
  }

  LossTerms out;
  std::vector<num::Var> parts;
  if (!ce_rows.empty()) {
    num::Var ce = num::cross_entropy(fv.logits, std::move(ce_rows), std::move(ce_targets));
    out.text = ce.value()[0];
    if (tc.grad_mask == GradMask::LatentOnly) ce = tape.detach(ce);
    parts.push_back(num::scale(ce, tc.lambda_text));
  }
  if (!latent_rows.empty()) {
    const std::size_t k = latent_rows.size();
    num::Var z = model::apply_phi(w, mc, num::select_rows(fv.hidden, std::move(latent_rows)));
    num::Var target = tape.constant(num::Tensor({k, mc.d_model}, std::move(latent_targets)));
    num::Var dist = tc.latent_loss == LatentLoss::Cosine
                        ? num::add_scalar(num::scale(num::mean(num::cosine_rows(z, target)), -1.0), 1.0)
                        : num::mean_squared_error(z, target);
    out.latent = dist.value()[0];
    parts.push_back(num::scale(dist, tc.lambda_latent));
  }
  if (parts.empty()) {
    out.total = tape.constant(num::Tensor({1}, {0.0}));
    return out;
  }
  out.total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out.total = num::add(out.total, parts[i]);
  return out;
}

}  // namespace latentlab::train
