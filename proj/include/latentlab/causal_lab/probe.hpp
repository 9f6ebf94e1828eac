#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "latentlab/causal_lab/similarity.hpp"
#include "latentlab/numerics/adam.hpp"
#include "latentlab/tasks/probe_question.hpp"

namespace latentlab::causal {

/// Picks one of the choices for a prompt, or none.
class ChoiceModel {
 public:
  virtual ~ChoiceModel() = default;
  virtual std::optional<std::size_t> choose(const Sequence& prompt, const tasks::ProbeQuestion& q) = 0;
};

/// Greedy decoding; the answer span must equal one of the choices exactly.
class GenerativeChooser : public ChoiceModel {
 public:
  GenerativeChooser(const model::Reasoner& m, std::size_t max_steps) : m_(m), max_steps_(max_steps) {}

  std::optional<std::size_t> choose(const Sequence& prompt, const tasks::ProbeQuestion& q) override {
    model::GenerateOptions o;
    o.max_steps = max_steps_;
    const auto tr = m_.generate(prompt, o);
    if (!tr.has_answer) return std::nullopt;
    for (std::size_t i = 0; i < q.choices.size(); ++i)
      if (q.choices[i] == tr.answer_tokens) return i;
    return std::nullopt;
  }

 private:
  const model::Reasoner& m_;
  std::size_t max_steps_;
};

/// Uniformly random choice; the chance-level reference.
class RandomChooser : public ChoiceModel {
 public:
  explicit RandomChooser(std::uint64_t seed) : rng_(seed) {}
  std::optional<std::size_t> choose(const Sequence&, const tasks::ProbeQuestion& q) override {
    return rng_.below(q.choices.size());
  }

 private:
  num::Rng rng_;
};

/// One instance's probe material.
struct ProbeItem {
  std::string id;
  tasks::GridInstance instance;
  std::vector<Vector> latents;  // may be empty when only text conditions are run
  tasks::ProbeQuestion question;
};

enum class ProbeCondition { LatentOnly, FullImage, TextOnly };

inline Sequence probe_prompt(const ProbeItem& it, ProbeCondition c) {
  Sequence s{tasks::tok::bos};
  switch (c) {
    case ProbeCondition::LatentOnly:
      for (const auto& z : it.latents) s.emplace_back(z);
      break;
    case ProbeCondition::FullImage:
      for (auto t : tasks::serialize_grid(it.instance.grid)) s.emplace_back(t);
      break;
    case ProbeCondition::TextOnly: break;
  }
  for (auto t : it.question.question) s.emplace_back(t);
  return s;
}

inline double probe_accuracy(ChoiceModel& m, const std::vector<ProbeItem>& items, ProbeCondition c) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& it : items) {
    if (c == ProbeCondition::LatentOnly && it.latents.empty()) {
      throw AnalysisError("probe: item " + it.id + " has no latents for the latent-only condition");
    }
    const auto pick = m.choose(probe_prompt(it, c), it.question);
    hits += pick && *pick == it.question.correct ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

/// Pairs collected latents with instances by id.
inline std::vector<ProbeItem> align_probe_items(const LatentSet& set, const std::vector<tasks::GridInstance>& instances,
                                                std::uint64_t seed) {
  std::map<std::string, const tasks::GridInstance*> by_id;
  for (const auto& g : instances) by_id[g.id] = &g;
  std::vector<ProbeItem> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto it = by_id.find(set.ids[i]);
    if (it == by_id.end()) throw AnalysisError("probe: latents for unknown instance " + set.ids[i]);
    out.push_back({set.ids[i], *it->second, set.latents[i],
                   tasks::derive_probe_question(*it->second, num::Rng(seed).fork(i).next_u64())});
  }
  return out;
}

struct LinearProbeResult {
  double accuracy = 0.0;
  double majority_baseline = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t classes = 0;
};

struct ProbeReport {
  std::optional<double> latent_only;
  std::optional<double> full_image;
  std::optional<double> text_only;
  std::optional<LinearProbeResult> linear_probe;
  double chance = 1.0 / static_cast<double>(tasks::kProbeChoices);
  std::size_t questions = 0;
};

class DegenerateDataError : public AnalysisError {
 public:
  using AnalysisError::AnalysisError;
};

struct LinearProbeOptions {
  std::size_t steps = 300;
  double learning_rate = 0.05;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on standardized features; seeded 80/20
/// split, full-batch Adam. The baseline predicts the training majority class.
inline LinearProbeResult train_linear_probe(const std::vector<Vector>& features, const std::vector<std::size_t>& labels,
                                            const LinearProbeOptions& opt = {}) {
  if (features.size() != labels.size() || features.empty()) {
    throw AnalysisError("linear probe: need one label per feature vector");
  }
  std::map<std::size_t, std::size_t> present;
  for (auto l : labels) ++present[l];
  if (present.size() < 2) throw DegenerateDataError("linear probe: only one class present");
  const std::size_t k = present.rbegin()->first + 1;
  const std::size_t d = features.front().size();
  for (const auto& f : features)
    if (f.size() != d) throw AnalysisError("linear probe: ragged features");

  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  num::Rng rng(opt.seed);
  rng.shuffle(order.begin(), order.end());
  std::size_t n_train = static_cast<std::size_t>(opt.train_fraction * static_cast<double>(order.size()));
  n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
  const std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> te(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  Vector mean(d, 0.0), sd(d, 0.0);
  for (auto i : tr)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i][j];
  for (double& m : mean) m /= static_cast<double>(tr.size());
  for (auto i : tr)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (features[i][j] - mean[j]) * (features[i][j] - mean[j]);
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(tr.size()));
  auto design = [&](const std::vector<std::size_t>& rows) {
    num::Tensor x({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d; ++j)
        x(r, j) = sd[j] > 1e-12 ? (features[rows[r]][j] - mean[j]) / sd[j] : 0.0;
    return x;
  };
  const num::Tensor xtr = design(tr);
  const num::Tensor xte = design(te);
  std::vector<std::size_t> ytr;
  for (auto i : tr) ytr.push_back(labels[i]);
  std::vector<std::size_t> rows(tr.size());
  std::iota(rows.begin(), rows.end(), 0);

  std::vector<num::Tensor> params{num::Tensor({d, k}), num::Tensor({k})};
  num::AdamState st = num::AdamState::for_params(params);
  num::AdamHyper h;
  h.lr = opt.learning_rate;
  for (std::size_t s = 0; s < opt.steps; ++s) {
    num::Tape tape;
    num::Var w = tape.leaf(params[0]);
    num::Var b = tape.leaf(params[1]);
    num::Var logits = num::add_row(num::matmul(tape.constant(xtr), w), b);
    num::Var loss = num::cross_entropy(logits, rows, ytr);
    tape.backward(loss);
    num::adam_step(params, {tape.grad(w), tape.grad(b)}, st, h);
  }

  std::map<std::size_t, std::size_t> train_counts;
  for (auto l : ytr) ++train_counts[l];
  std::size_t majority = train_counts.begin()->first;
  for (const auto& [l, c] : train_counts)
    if (c > train_counts[majority]) majority = l;

  const num::Tensor logits = num::matmul(xte, params[0]);
  std::size_t hits = 0;
  std::size_t base = 0;
  for (std::size_t r = 0; r < te.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits(r, c) + params[1][c] > logits(r, best) + params[1][best]) best = c;
    hits += best == labels[te[r]] ? 1 : 0;
    base += majority == labels[te[r]] ? 1 : 0;
  }
  const double n = static_cast<double>(te.size());
  return {static_cast<double>(hits) / n, static_cast<double>(base) / n, tr.size(), te.size(), present.size()};
}

inline nlohmann::json to_json(const ProbeReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"questions", r.questions},
                      {"chance", r.chance},
                      {"accuracy_latent_only", opt(r.latent_only)},
                      {"accuracy_full_image", opt(r.full_image)},
                      {"accuracy_text_only", opt(r.text_only)}};
  if (r.linear_probe) {
    const auto& p = *r.linear_probe;
    j["accuracy_linear_probe"] = p.accuracy;
    j["linear_probe"] = {{"accuracy", p.accuracy}, {"majority_baseline", p.majority_baseline},
                         {"train", p.train_size}, {"test", p.test_size}, {"classes", p.classes}};
  } else {
    j["accuracy_linear_probe"] = nullptr;
  }
  return j;
}

}  // namespace latentlab::causal
