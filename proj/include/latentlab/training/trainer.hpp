#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentlab/model/generate.hpp"
#include "latentlab/numerics/adam.hpp"
#include "latentlab/training/loss.hpp"

namespace latentlab::train {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Prompt plus gold answer; scored by exact match of the generated answer span.
struct EvalItem {
  std::string id;
  model::Sequence prompt;
  Tokens answer;
};

inline bool answer_matches(const model::GenerationTrace& tr, const Tokens& gold) {
  return tr.has_answer && tr.answer_tokens == gold;
}

inline double evaluate(const model::Reasoner& m, const std::vector<EvalItem>& items, std::size_t max_steps) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  model::GenerateOptions opts;
  opts.max_steps = max_steps;
  for (const auto& it : items) hits += answer_matches(m.generate(it.prompt, opts), it.answer) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

struct MetricRow {
  std::size_t step = 0;
  double loss_text = 0.0;    // mean over the steps since the previous row
  double loss_latent = 0.0;
  double eval_acc = 0.0;
};

struct Checkpoint {
  std::size_t step = 0;
  double eval_acc = 0.0;
  model::Weights weights;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<MetricRow> metrics;
  std::size_t best = 0;

  const Checkpoint& best_checkpoint() const { return checkpoints.at(best); }
};

/// Index of the highest accuracy; ties go to the earliest.
inline std::size_t select_best(const std::vector<double>& accs) {
  if (accs.empty()) throw std::invalid_argument("select_best: no checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 1; i < accs.size(); ++i)
    if (accs[i] > accs[best]) best = i;
  return best;
}

/// Called after each optimizer step with (step, text loss, latent loss).
using StepCallback = std::function<void(std::size_t, double, double)>;

/// Adam on the SFT loss. Minibatches are drawn from a per-epoch shuffle of
/// the dataset seeded by `seed`; a checkpoint is evaluated every
/// eval_interval steps and after the final step (or once at step 0 when
/// steps == 0). Deterministic for a fixed seed.
inline TrainResult train(const std::vector<SftExample>& dataset, const std::vector<EvalItem>& eval_set,
                         const model::ModelConfig& mc, const TrainConfig& tc, model::Weights init, std::uint64_t seed,
                         const StepCallback& on_step = {}) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  mc.validate();
  tc.validate();
  model::check_weights(init, mc);
  num::Rng rng(seed);
  model::Weights w = std::move(init);
  num::AdamState adam = num::AdamState::for_params(w.tensors);
  TrainResult result;

  auto checkpoint = [&](std::size_t step, double lt, double ll) {
    const double acc = evaluate(model::TransformerModel(mc, w), eval_set, tc.eval_max_steps);
    result.metrics.push_back({step, lt, ll, acc});
    result.checkpoints.push_back({step, acc, w});
  };

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  double sum_text = 0.0;
  double sum_latent = 0.0;
  std::size_t since = 0;

  if (tc.steps == 0) checkpoint(0, 0.0, 0.0);
  for (std::size_t step = 1; step <= tc.steps; ++step) {
    std::vector<const SftExample*> batch;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }
    num::Tape tape;
    const model::BoundWeights bw = model::bind(tape, w, mc, true);
    const LossTerms loss = sft_loss(tape, bw, mc, tc, batch);
    const double total = loss.total.value()[0];
    if (!std::isfinite(total)) {
      throw DivergenceError("train: loss became non-finite at step " + std::to_string(step) + " (text " +
                            std::to_string(loss.text) + ", latent " + std::to_string(loss.latent) + ")");
    }
    std::vector<num::Tensor> grads;
    grads.reserve(w.size());
    if (tape.needs_grad(loss.total.id)) tape.backward(loss.total);
    for (const num::Var& v : bw.vars) grads.push_back(tape.grad(v));
    num::AdamHyper h;
    h.lr = tc.learning_rate;
    if (tc.warmup_steps > 0 && step <= tc.warmup_steps) {
      h.lr *= static_cast<double>(step) / static_cast<double>(tc.warmup_steps);
    }
    num::adam_step(w.tensors, grads, adam, h);
    if (tc.weight_decay > 0) {
      const double keep = 1.0 - h.lr * tc.weight_decay;
      for (auto& t : w.tensors)
        if (t.shape().size() == 2)
          for (double& x : t.data()) x *= keep;
    }
    sum_text += loss.text;
    sum_latent += loss.latent;
    ++since;
    if (on_step) on_step(step, loss.text, loss.latent);
    if (step % tc.eval_interval == 0 || step == tc.steps) {
      checkpoint(step, sum_text / static_cast<double>(since), sum_latent / static_cast<double>(since));
      sum_text = sum_latent = 0.0;
      since = 0;
    }
  }
  std::vector<double> accs;
  for (const auto& c : result.checkpoints) accs.push_back(c.eval_acc);
  result.best = select_best(accs);
  return result;
}

}  // namespace latentlab::train
