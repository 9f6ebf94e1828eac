#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentlab/model/generate.hpp"
#include "latentlab/numerics/ops.hpp"

namespace latentlab::causal {

using model::Sequence;
using model::Vector;
using Matrix = std::vector<std::vector<double>>;

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One item to analyse: an id and the prompt the model decodes from.
struct AnalysisItem {
  std::string id;
  Sequence prompt;
};

inline constexpr std::size_t kTextBaselineTokens = 16;

/// Latents from the first latent span of each retained instance, with the
/// hidden-state baselines taken from the same trace.
struct LatentSet {
  std::vector<std::string> ids;
  std::vector<std::vector<Vector>> latents;        // [N][n_latent][d], post-phi
  std::vector<std::vector<Vector>> text_hidden;    // [N][<=16][d], first text-mode steps
  std::vector<Vector> input_hidden;                // [N][d], hidden state at the last prompt position
  std::size_t requested = 0;
  std::size_t dropped = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t n_latent() const { return latents.empty() ? 0 : latents.front().size(); }
};

/// Decodes every item without intervention and keeps those whose first
/// latent span holds exactly `n_latent` latents.
inline LatentSet collect_latents(const model::Reasoner& m, const std::vector<AnalysisItem>& items, std::size_t n_latent,
                                 std::size_t max_steps) {
  LatentSet out;
  out.requested = items.size();
  model::GenerateOptions opts;
  opts.max_steps = max_steps;
  for (const auto& it : items) {
    const model::GenerationTrace tr = m.generate(it.prompt, opts);
    const auto spans = tr.latent_spans();
    if (spans.empty() || spans.front().second - spans.front().first + 1 != n_latent || tr.steps.empty()) {
      ++out.dropped;
      continue;
    }
    std::vector<Vector> z;
    for (std::size_t i = spans.front().first; i <= spans.front().second; ++i) z.push_back(tr.steps[i].latent);
    std::vector<Vector> text;
    for (const auto& s : tr.steps) {
      if (s.mode != model::StepMode::Text) continue;
      text.push_back(s.hidden);
      if (text.size() == kTextBaselineTokens) break;
    }
    out.ids.push_back(it.id);
    out.latents.push_back(std::move(z));
    out.text_hidden.push_back(std::move(text));
    out.input_hidden.push_back(tr.steps.front().hidden);
  }
  if (out.ids.empty()) {
    throw AnalysisError("collect_latents: none of " + std::to_string(items.size()) +
                        " instances produced a latent span of length " + std::to_string(n_latent));
  }
  return out;
}

inline Matrix pairwise_cosine(const std::vector<Vector>& v) {
  const std::size_t n = v.size();
  Matrix s(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    s[a][a] = num::norm(v[a]) > num::kCosineNormFloor ? 1.0 : 0.0;
    for (std::size_t b = a + 1; b < n; ++b) s[a][b] = s[b][a] = num::cosine(v[a], v[b]);
  }
  return s;
}

/// Mean of the off-diagonal entries.
inline double off_diagonal_mean(const Matrix& s) {
  const std::size_t n = s.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b) sum += s[a][b];
  return sum / static_cast<double>(n * (n - 1));
}

/// S_j[a][b] = cos(z_a^j, z_b^j).
inline Matrix inter_instance_similarity(const LatentSet& set, std::size_t j) {
  if (set.size() < 2) throw AnalysisError("inter_instance_similarity: need at least 2 instances");
  if (j >= set.n_latent()) {
    throw std::out_of_range("inter_instance_similarity: latent index " + std::to_string(j) + " >= n_latent " +
                            std::to_string(set.n_latent()));
  }
  std::vector<Vector> col;
  for (const auto& z : set.latents) col.push_back(z[j]);
  return pairwise_cosine(col);
}

struct IntraSimilarity {
  std::vector<Matrix> per_instance;  // M_i[p][q] = cos(z_i^p, z_i^q)
  Matrix mean;
};

inline IntraSimilarity intra_instance_similarity(const LatentSet& set) {
  if (set.size() == 0) throw AnalysisError("intra_instance_similarity: empty latent set");
  IntraSimilarity out;
  const std::size_t k = set.n_latent();
  out.mean.assign(k, std::vector<double>(k, 0.0));
  for (const auto& z : set.latents) {
    out.per_instance.push_back(pairwise_cosine(z));
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t q = 0; q < k; ++q) out.mean[p][q] += out.per_instance.back()[p][q];
  }
  for (auto& row : out.mean)
    for (double& x : row) x /= static_cast<double>(set.size());
  return out;
}

struct SimilarityReport {
  std::vector<std::string> ids;
  std::vector<Matrix> inter;           // one per latent index
  std::vector<double> inter_mean;      // off-diagonal mean per latent index
  IntraSimilarity intra;
  std::vector<Matrix> text_inter;      // baseline (a), one per text step index present in every trace
  double text_inter_mean = 0.0;        // mean over those indices
  Matrix input_inter;                  // baseline (b)
  double input_inter_mean = 0.0;
  std::size_t requested = 0;
  std::size_t dropped = 0;

  /// Final-index latents more mutually similar than the text baseline.
  bool collapse_ordering_holds() const { return !inter_mean.empty() && inter_mean.back() > text_inter_mean; }
};

inline SimilarityReport similarity_report(const LatentSet& set) {
  SimilarityReport r;
  r.ids = set.ids;
  r.requested = set.requested;
  r.dropped = set.dropped;
  for (std::size_t j = 0; j < set.n_latent(); ++j) {
    r.inter.push_back(inter_instance_similarity(set, j));
    r.inter_mean.push_back(off_diagonal_mean(r.inter.back()));
  }
  r.intra = intra_instance_similarity(set);
  std::size_t common = kTextBaselineTokens;
  for (const auto& t : set.text_hidden) common = std::min(common, t.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < common; ++j) {
    std::vector<Vector> col;
    for (const auto& t : set.text_hidden) col.push_back(t[j]);
    r.text_inter.push_back(pairwise_cosine(col));
    sum += off_diagonal_mean(r.text_inter.back());
  }
  r.text_inter_mean = common ? sum / static_cast<double>(common) : std::numeric_limits<double>::quiet_NaN();
  r.input_inter = pairwise_cosine(set.input_hidden);
  r.input_inter_mean = off_diagonal_mean(r.input_inter);
  return r;
}

/// Fixed-precision number formatting so reports are byte-stable.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline nlohmann::json number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& labels) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "id";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (std::size_t a = 0; a < m.size(); ++a) {
    os << labels[a];
    for (double x : m[a]) os << ',' << fmt(x);
    os << '\n';
  }
}

inline std::vector<std::string> position_labels(std::size_t n, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// similarity.json plus one CSV per matrix under `dir`. Returns the files written.
inline std::vector<std::filesystem::path> write_similarity_report(const SimilarityReport& r,
                                                                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "intra");
  std::vector<fs::path> files;
  nlohmann::json inter = nlohmann::json::array();
  for (std::size_t j = 0; j < r.inter.size(); ++j) {
    const fs::path p = dir / ("inter_latent_" + std::to_string(j) + ".csv");
    write_matrix_csv(p, r.inter[j], r.ids);
    files.push_back(p);
    inter.push_back({{"latent_index", j}, {"mean_offdiag_cosine", number(r.inter_mean[j])}, {"csv", p.filename().string()}});
  }
  const auto pos = position_labels(r.intra.mean.size(), "z");
  write_matrix_csv(dir / "intra_mean.csv", r.intra.mean, pos);
  files.push_back(dir / "intra_mean.csv");
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    const fs::path p = dir / "intra" / (r.ids[i] + ".csv");
    write_matrix_csv(p, r.intra.per_instance[i], pos);
    files.push_back(p);
  }
  for (std::size_t j = 0; j < r.text_inter.size(); ++j) {
    const fs::path p = dir / ("baseline_text_" + std::to_string(j) + ".csv");
    write_matrix_csv(p, r.text_inter[j], r.ids);
    files.push_back(p);
  }
  write_matrix_csv(dir / "baseline_input.csv", r.input_inter, r.ids);
  files.push_back(dir / "baseline_input.csv");

  const double final_latent = r.inter_mean.empty() ? std::numeric_limits<double>::quiet_NaN() : r.inter_mean.back();
  nlohmann::json j = {
      {"instances", r.ids.size()},
      {"requested", r.requested},
      {"dropped_without_latent_span", r.dropped},
      {"latent_basis", "post_phi"},
      {"inter_instance", inter},
      {"intra_instance_mean_offdiag", number(off_diagonal_mean(r.intra.mean))},
      {"baseline_text_tokens", {{"steps", r.text_inter.size()}, {"mean_offdiag_cosine", number(r.text_inter_mean)}}},
      {"baseline_input_position", {{"mean_offdiag_cosine", number(r.input_inter_mean)},
                                   {"definition", "final-layer hidden state at the last prompt position"}}},
      {"final_latent_mean_offdiag_cosine", number(final_latent)},
      {"collapse_ordering_holds", r.collapse_ordering_holds()},
  };
  if (!r.collapse_ordering_holds()) {
    j["deviation"] = "final-index latent similarity does not exceed the text-token baseline";
  }
  std::ofstream(dir / "similarity.json") << j.dump(2) << '\n';
  files.push_back(dir / "similarity.json");
  return files;
}

}  // namespace latentlab::causal
