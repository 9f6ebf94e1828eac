// latentlab: experiment lifecycle from data generation to the summary report.
//
//   latentlab <command> --config cfg.json [--seed N] [--out RUN_DIR] [--override key=value]...
//
// Every command writes under RUN_DIR/<command>/ (train under train/<regime>/),
// reads its inputs from the sibling directories unless a paths.* override says
// otherwise, and leaves config.json and manifest.json next to its outputs.

#include <openssl/sha.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "latentlab/causal_lab/corrupt.hpp"
#include "latentlab/causal_lab/probe.hpp"
#include "latentlab/causal_lab/timing.hpp"
#include "latentlab/cli/run_config.hpp"
#include "latentlab/model/checkpoint.hpp"
#include "latentlab/pipeline/pipeline.hpp"
#include "latentlab/pipeline/remote_chat.hpp"
#include "latentlab/tasks/probe_question.hpp"
#include "latentlab/tasks/vsp.hpp"

namespace fs = std::filesystem;
using namespace latentlab;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Bad inputs discovered before any work starts.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Level { Error, Warn, Info, Debug };

Level log_level() {
  const char* env = std::getenv("LATENTLAB_LOG");
  const std::string s = env ? env : "info";
  if (s == "error") return Level::Error;
  if (s == "warn") return Level::Warn;
  if (s == "debug") return Level::Debug;
  return Level::Info;
}

void log(Level l, const std::string& msg) {
  static const Level threshold = log_level();
  if (l > threshold) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[latentlab " << names[static_cast<int>(l)] << "] " << msg << '\n';
}

std::string git_blob_sha1(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::ostringstream os;
  for (unsigned char b : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return os.str();
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Derived seeds, one per consumer, so adding a consumer never shifts another.
struct Seeds {
  std::uint64_t base = 0;
  std::uint64_t of(const std::string& what) const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the name
    for (unsigned char ch : what) h = (h ^ ch) * 1099511628211ULL;
    return num::Rng(base).fork(h).next_u64();
  }
};

struct Context {
  std::string command;
  cli::RunConfig cfg;
  json cfg_json;
  Seeds seeds;
  fs::path run_dir;
  fs::path out_dir;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  json seed_registry = json::object();

  std::uint64_t seed(const std::string& what) {
    const auto s = seeds.of(what);
    seed_registry[what] = s;
    return s;
  }

  fs::path in(const std::string& override_path, const fs::path& fallback) {
    fs::path p = override_path.empty() ? run_dir / fallback : fs::path(override_path);
    if (!fs::exists(p)) throw ValidationError("input not found: " + p.string() + " (run the producing command first)");
    inputs.push_back(p);
    return p;
  }

  fs::path out(const fs::path& name) {
    const fs::path p = out_dir / name;
    outputs.push_back(p);
    return p;
  }

  void write_json(const fs::path& name, const json& j) {
    const fs::path p = out(name);
    fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2) << '\n';
  }
};

void write_manifest(Context& ctx, const std::string& started) {
  fs::create_directories(ctx.out_dir);
  const std::string cfg_text = ctx.cfg_json.dump();
  std::ofstream(ctx.out_dir / "config.json") << ctx.cfg_json.dump(2) << '\n';
  const std::string hash = git_blob_sha1(cfg_text);
  json outs = json::array();
  std::set<std::string> seen;
  auto rel = [&](const fs::path& p) { return fs::relative(p, ctx.run_dir).generic_string(); };
  for (const auto& p : ctx.outputs)
    if (seen.insert(rel(p)).second) outs.push_back(rel(p));
  outs.push_back(rel(ctx.out_dir / "config.json"));
  outs.push_back(rel(ctx.out_dir / "manifest.json"));
  json ins = json::array();
  for (const auto& p : ctx.inputs) ins.push_back(p.generic_string());
  const json m = {{"run_id", ctx.command + "-" + hash.substr(0, 12) + "-" + std::to_string(ctx.seeds.base)},
                  {"command", ctx.command},
                  {"config_hash", hash},
                  {"base_seed", ctx.seeds.base},
                  {"seeds", ctx.seed_registry},
                  {"inputs", ins},
                  {"outputs", outs},
                  {"timestamps", {{"started", started}, {"finished", utc_now()}}}};
  std::ofstream(ctx.out_dir / "manifest.json") << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// gen

void cmd_gen(Context& ctx) {
  const auto& t = ctx.cfg.task;
  auto make = [&](const std::string& split, std::size_t count) {
    const std::uint64_t base = ctx.seed("gen." + split);
    std::vector<tasks::DatasetRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t s = num::Rng(base).fork(i).next_u64() >> 16;  // short ids
      if (t.kind == tasks::kTaskVisualSearch) {
        auto [inst, tr] = tasks::gen_visual_search(s, t.height, t.width, t.crop);
        out.push_back(tasks::make_record(inst, tr));
      } else {
        auto [b, tr] = tasks::gen_vsp(s, t.board_size, t.hole_density);
        out.push_back(tasks::make_record(b, tr, t.hole_density));
      }
    }
    tasks::write_jsonl(ctx.out(split + ".jsonl"), out);
    return out.size();
  };
  const auto n_train = make("train", t.train_count);
  const auto n_eval = make("eval", t.eval_count);
  ctx.write_json("gen.json", {{"task", t.kind}, {"train", n_train}, {"eval", n_eval}});
  log(Level::Info, "generated " + std::to_string(n_train) + " train and " + std::to_string(n_eval) + " eval instances");
}

// ---------------------------------------------------------------------------
// rewrite / filter

std::unique_ptr<pipeline::Rewriter> make_rewriter(const cli::RunConfig& c) {
  if (c.pipeline.rewriter == "remote") return std::make_unique<pipeline::RemoteChat>(c.pipeline.remote);
  return std::make_unique<pipeline::DeterministicVerbalizer>();
}

void cmd_rewrite(Context& ctx) {
  const auto input = ctx.in(ctx.cfg.paths.train_data, "gen/train.jsonl");
  const auto rewriter = make_rewriter(ctx.cfg);
  const auto records = tasks::read_jsonl(input);
  auto out = pipeline::rewrite_dataset(records, *rewriter, {ctx.cfg.pipeline.concurrency});
  tasks::write_jsonl(ctx.out("rewritten.jsonl"), out.rewritten);
  tasks::write_jsonl(ctx.out("failures.jsonl"), out.failed);
  ctx.write_json("rewrite.json", {{"input", records.size()},
                                  {"rewritten", out.rewritten.size()},
                                  {"rewrite_failures", out.failed.size()},
                                  {"rewriter", rewriter->name()}});
  log(Level::Info, "rewrote " + std::to_string(out.rewritten.size()) + "/" + std::to_string(records.size()));
}

void cmd_filter(Context& ctx) {
  const auto input = ctx.in(ctx.cfg.paths.rewritten, "rewrite/rewritten.jsonl");
  const auto records = tasks::read_jsonl(input);
  std::vector<tasks::DatasetRecord> failures;
  if (ctx.cfg.paths.rewritten.empty() && fs::exists(ctx.run_dir / "rewrite/failures.jsonl")) {
    failures = tasks::read_jsonl(ctx.in("", "rewrite/failures.jsonl"));
  }
  auto f = pipeline::filter_dataset(records);
  pipeline::PipelineStats stats;
  stats.input = records.size() + failures.size();
  stats.rewrite_failures = failures.size();
  stats.rejects = f.rejects;
  stats.retained = f.kept.size();
  for (auto& r : failures) f.quarantined.push_back(std::move(r));
  tasks::write_jsonl(ctx.out("retained.jsonl"), f.kept);
  tasks::write_jsonl(ctx.out("quarantine.jsonl"), f.quarantined);
  json s = pipeline::to_json(stats);
  s["conserved"] = stats.conserved();
  ctx.write_json("stats.json", s);
  log(Level::Info, "retained " + std::to_string(stats.retained) + "/" + std::to_string(stats.input));
}

// ---------------------------------------------------------------------------
// train

std::vector<train::EvalItem> eval_items(const std::vector<tasks::DatasetRecord>& records, std::size_t limit) {
  std::vector<train::EvalItem> out;
  for (const auto& r : records) {
    if (out.size() == limit) break;
    out.push_back({r.id, model::to_inputs(r.tokens), r.trajectory.answer});
  }
  return out;
}

void write_metrics_csv(const fs::path& p, const std::vector<train::MetricRow>& rows) {
  std::ofstream os(p);
  os << "step,loss_text,loss_latent,eval_acc\n";
  for (const auto& r : rows)
    os << r.step << ',' << causal::fmt(r.loss_text) << ',' << causal::fmt(r.loss_latent) << ',' << causal::fmt(r.eval_acc)
       << '\n';
}

void cmd_train(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto regime = c.train.regime;
  if (regime == train::Regime::LatentSft && c.task.kind != tasks::kTaskVisualSearch) {
    throw ValidationError("latent_sft needs crop image segments, which only visual_search trajectories have");
  }
  const fs::path data = regime == train::Regime::CapimagineSft ? ctx.in(c.paths.retained, "filter/retained.jsonl")
                                                               : ctx.in(c.paths.train_data, "gen/train.jsonl");
  const fs::path eval_path = ctx.in(c.paths.eval_data, "gen/eval.jsonl");
  const auto records = tasks::read_jsonl(data);
  const auto eval = eval_items(tasks::read_jsonl(eval_path), c.task.eval_count);

  num::Rng init_rng(ctx.seed("train.init." + train::to_string(regime)));
  model::Weights w0 = model::init_weights(c.model, init_rng);
  const num::Tensor frozen = w0[model::WeightLayout::kTokEmb];
  std::vector<train::SftExample> ds;
  for (const auto& r : records) {
    switch (regime) {
      case train::Regime::CapimagineSft: ds.push_back(train::build_capimagine_example(r.id, r.tokens, r.trajectory)); break;
      case train::Regime::LatentSft:
        ds.push_back(train::build_latent_sft_example(r.id, r.tokens, r.trajectory, frozen, c.model.n_latent));
        break;
      case train::Regime::PlaceholderSft: ds.push_back(train::build_placeholder_example(r.id, r.tokens, r.trajectory)); break;
    }
  }
  if (ds.empty()) throw ValidationError("training set is empty: " + data.string());
  log(Level::Info, "training " + train::to_string(regime) + " on " + std::to_string(ds.size()) + " examples for " +
                       std::to_string(c.train.steps) + " steps");
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train::train(ds, eval, c.model, c.train, std::move(w0), ctx.seed("train.loop." + train::to_string(regime)),
                                [&](std::size_t step, double lt, double ll) {
                                  if (step % 100 != 0) return;
                                  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                                  std::ostringstream os;
                                  os << "step " << step << " text " << lt << " latent " << ll << " (" << std::fixed
                                     << std::setprecision(1) << s << "s)";
                                  log(Level::Debug, os.str());
                                });
  const auto& best = res.best_checkpoint();
  model::save_checkpoint(best.weights, c.model, ctx.out("checkpoint.ckpt"));
  write_metrics_csv(ctx.out("metrics.csv"), res.metrics);
  json evals = json::array();
  for (const auto& m : res.metrics) evals.push_back({{"step", m.step}, {"eval_acc", m.eval_acc}});
  ctx.write_json("train.json", {{"regime", train::to_string(regime)},
                                {"examples", ds.size()},
                                {"eval_instances", eval.size()},
                                {"steps", c.train.steps},
                                {"best_step", best.step},
                                {"best_eval_acc", best.eval_acc},
                                {"evaluations", evals},
                                {"latent_targets", regime == train::Regime::LatentSft
                                                       ? json("mean of initial token embeddings of the crop tokens")
                                                       : json(nullptr)}});
  log(Level::Info, "best checkpoint at step " + std::to_string(best.step) + " with eval accuracy " +
                       std::to_string(best.eval_acc));
}

// ---------------------------------------------------------------------------
// analyses

model::TransformerModel load_model(Context& ctx, const std::string& override_path, const std::string& regime) {
  const fs::path p = ctx.in(override_path, fs::path("train") / regime / "checkpoint.ckpt");
  auto [w, c] = model::load_checkpoint(p);
  return model::TransformerModel(c, std::move(w));
}

void require_visual_search(const Context& ctx) {
  if (ctx.cfg.task.kind != tasks::kTaskVisualSearch) {
    throw ValidationError(ctx.command + " analyses visual_search instances only");
  }
}

std::vector<tasks::DatasetRecord> eval_records(Context& ctx, std::size_t limit) {
  auto r = tasks::read_jsonl(ctx.in(ctx.cfg.paths.eval_data, "gen/eval.jsonl"));
  if (r.size() > limit) r.resize(limit);
  return r;
}

std::vector<causal::AnalysisItem> analysis_items(const std::vector<tasks::DatasetRecord>& records) {
  std::vector<causal::AnalysisItem> out;
  for (const auto& r : records) out.push_back({r.id, model::to_inputs(r.tokens)});
  return out;
}

void cmd_intervene(Context& ctx) {
  require_visual_search(ctx);
  const auto& a = ctx.cfg.analysis;
  const auto m = load_model(ctx, ctx.cfg.paths.latent_checkpoint, "latent_sft");
  auto calib_records = tasks::read_jsonl(ctx.in(ctx.cfg.paths.train_data, "gen/train.jsonl"));
  if (calib_records.size() > a.calibration) calib_records.resize(a.calibration);
  const auto calib = causal::calibrate(
      causal::collect_latents(m, analysis_items(calib_records), m.config().n_latent, a.max_steps));
  const double sigma = a.sigma.value_or(calib.sigma);
  const std::vector<double> tau = a.tau.value_or(calib.tau);
  const std::uint64_t s = ctx.seed("intervene.noise");
  using model::InterventionSpec;
  const std::vector<InterventionSpec> specs = {InterventionSpec::none(), InterventionSpec::add_gaussian(0.0, s),
                                               InterventionSpec::add_gaussian(sigma, s + 1),
                                               InterventionSpec::replace_gaussian(sigma, s + 2),
                                               InterventionSpec::fixed_tensor(tau), InterventionSpec::near_zero(a.mu)};
  const auto items = eval_items(eval_records(ctx, a.instances), a.instances);
  const auto rep = causal::run_intervention_suite(m, items, specs, a.max_steps);
  json j = causal::to_json(rep);
  j["calibration"] = {{"instances", calib_records.size()},
                      {"latents", calib.latents},
                      {"sigma_rms", calib.sigma},
                      {"sigma_used", sigma},
                      {"tau_source", a.tau ? "config" : "mean latent over calibration split"},
                      {"mu", a.mu}};
  ctx.write_json("intervention.json", j);
  causal::write_intervention_csv(ctx.out("intervention.csv"), rep);
}

void cmd_analyze_sim(Context& ctx) {
  require_visual_search(ctx);
  const auto& a = ctx.cfg.analysis;
  const auto m = load_model(ctx, ctx.cfg.paths.latent_checkpoint, "latent_sft");
  const auto set = causal::collect_latents(m, analysis_items(eval_records(ctx, a.instances)), m.config().n_latent, a.max_steps);
  const auto rep = causal::similarity_report(set);
  for (const auto& f : causal::write_similarity_report(rep, ctx.out_dir)) ctx.outputs.push_back(f);
  if (!rep.collapse_ordering_holds()) log(Level::Warn, "final-index latent similarity does not exceed the text baseline");
}

std::vector<tasks::GridInstance> grid_instances(const std::vector<tasks::DatasetRecord>& records) {
  std::vector<tasks::GridInstance> out;
  for (const auto& r : records) {
    if (!r.grid) throw ValidationError("record " + r.id + " has no grid instance");
    out.push_back(*r.grid);
  }
  return out;
}

void cmd_probe(Context& ctx) {
  require_visual_search(ctx);
  const auto& a = ctx.cfg.analysis;
  const auto latent = load_model(ctx, ctx.cfg.paths.latent_checkpoint, "latent_sft");
  const auto cap = load_model(ctx, ctx.cfg.paths.capimagine_checkpoint, "capimagine_sft");
  const auto records = eval_records(ctx, a.probe_questions);
  const auto set = causal::collect_latents(latent, analysis_items(records), latent.config().n_latent, a.max_steps);
  const auto items = causal::align_probe_items(set, grid_instances(records), ctx.seed("probe.choices"));

  causal::ProbeReport rep;
  rep.questions = items.size();
  causal::GenerativeChooser latent_chooser(latent, a.max_steps);
  causal::GenerativeChooser cap_chooser(cap, a.max_steps);
  rep.latent_only = causal::probe_accuracy(latent_chooser, items, causal::ProbeCondition::LatentOnly);
  rep.full_image = causal::probe_accuracy(cap_chooser, items, causal::ProbeCondition::FullImage);
  rep.text_only = causal::probe_accuracy(cap_chooser, items, causal::ProbeCondition::TextOnly);

  std::vector<causal::Vector> features;
  std::vector<std::size_t> labels;
  for (const auto& it : items) {
    causal::Vector f;
    for (const auto& z : it.latents) f.insert(f.end(), z.begin(), z.end());
    features.push_back(std::move(f));
    labels.push_back(it.instance.grid.at(it.instance.target_cell()).color);
  }
  std::string probe_note;
  try {
    causal::LinearProbeOptions lp;
    lp.steps = a.probe_steps;
    lp.seed = ctx.seed("probe.linear");
    rep.linear_probe = causal::train_linear_probe(features, labels, lp);
  } catch (const causal::DegenerateDataError& e) {
    probe_note = e.what();
  }
  causal::RandomChooser random(ctx.seed("probe.random_stub"));
  json j = causal::to_json(rep);
  j["random_stub_accuracy"] = causal::probe_accuracy(random, items, causal::ProbeCondition::FullImage);
  j["dropped_without_latent_span"] = set.dropped;
  j["models"] = {{"latent_only", "latent_sft"}, {"full_image", "capimagine_sft"}, {"text_only", "capimagine_sft"}};
  j["linear_probe_label"] = "color of the target cell";
  if (!probe_note.empty()) j["linear_probe_note"] = probe_note;
  ctx.write_json("probe.json", j);
}

void cmd_corrupt(Context& ctx) {
  require_visual_search(ctx);
  const auto& a = ctx.cfg.analysis;
  const auto cap = load_model(ctx, ctx.cfg.paths.capimagine_checkpoint, "capimagine_sft");
  const auto rep = causal::run_corruption(cap, grid_instances(eval_records(ctx, a.instances)), a.max_steps);
  ctx.write_json("corrupt.json", causal::to_json(rep));
}

void cmd_bench(Context& ctx) {
  const auto& a = ctx.cfg.analysis;
  const auto records = eval_records(ctx, a.instances);
  std::vector<model::Sequence> prompts;
  for (const auto& r : records) prompts.push_back(model::to_inputs(r.tokens));
  json j = json::object();
  for (const char* regime : {"capimagine_sft", "latent_sft", "placeholder_sft"}) {
    const fs::path p = ctx.run_dir / "train" / regime / "checkpoint.ckpt";
    if (!fs::exists(p)) continue;
    ctx.inputs.push_back(p);
    auto [w, c] = model::load_checkpoint(p);
    const model::TransformerModel m(c, std::move(w));
    j[regime] = causal::to_json(causal::timing(m, prompts, a.max_steps));
  }
  if (j.empty()) throw ValidationError("bench: no trained checkpoints under " + (ctx.run_dir / "train").string());
  ctx.write_json("timing.json", j);
}

// ---------------------------------------------------------------------------
// report

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void cmd_report(Context& ctx) {
  json summary = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(ctx.run_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    const auto rel = fs::relative(e.path(), ctx.run_dir);
    const std::string name = e.path().filename().string();
    // bench holds wall-clock numbers; leaving it out keeps the summary byte-stable
    const std::string top = rel.begin()->string();
    if (name == "manifest.json" || name == "config.json" || top == "report" || top == "bench" ||
        rel.generic_string().find("/intra/") != std::string::npos)
      continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("report: no command outputs under " + ctx.run_dir.string());
  for (const auto& p : files) {
    ctx.inputs.push_back(p);
    json j = read_json_file(p);
    if (j.contains("instances") && j["instances"].is_array()) j.erase("instances");  // per-instance detail stays in place
    summary[fs::relative(p, ctx.run_dir).generic_string()] = j;
  }
  ctx.write_json("summary.json", summary);

  // Plot-ready tables.
  auto copy_csv = [&](const fs::path& src, const std::string& name) {
    if (!fs::exists(src)) return;
    ctx.inputs.push_back(src);
    fs::copy_file(src, ctx.out(name), fs::copy_options::overwrite_existing);
  };
  for (const char* regime : {"capimagine_sft", "latent_sft", "placeholder_sft"}) {
    copy_csv(ctx.run_dir / "train" / regime / "metrics.csv", std::string("metrics_") + regime + ".csv");
  }
  copy_csv(ctx.run_dir / "intervene" / "intervention.csv", "intervention.csv");
  copy_csv(ctx.run_dir / "analyze-sim" / "intra_mean.csv", "similarity_intra_mean.csv");
  const fs::path sim = ctx.run_dir / "analyze-sim" / "similarity.json";
  if (fs::exists(sim)) {
    const json s = read_json_file(sim);
    std::ofstream os(ctx.out("similarity_by_index.csv"));
    os << "series,index,mean_offdiag_cosine\n";
    for (const auto& row : s["inter_instance"]) {
      os << "latent," << row["latent_index"].get<std::size_t>() << ',' << row["mean_offdiag_cosine"].dump() << '\n';
    }
    os << "text_baseline,all," << s["baseline_text_tokens"]["mean_offdiag_cosine"].dump() << '\n';
    os << "input_baseline,last," << s["baseline_input_position"]["mean_offdiag_cosine"].dump() << '\n';
  }
  const fs::path probe = ctx.run_dir / "probe" / "probe.json";
  if (fs::exists(probe)) {
    const json p = read_json_file(probe);
    std::ofstream os(ctx.out("probe.csv"));
    os << "condition,accuracy\n";
    for (const char* k : {"accuracy_latent_only", "accuracy_full_image", "accuracy_text_only", "accuracy_linear_probe",
                          "random_stub_accuracy", "chance"}) {
      if (p.contains(k)) os << k << ',' << p[k].dump() << '\n';
    }
  }
  const fs::path corrupt = ctx.run_dir / "corrupt" / "corrupt.json";
  if (fs::exists(corrupt)) {
    const json p = read_json_file(corrupt);
    std::ofstream os(ctx.out("corrupt.csv"));
    os << "clean_accuracy,corrupted_accuracy,delta,answer_change_rate,evaluated,skipped\n";
    os << p["clean_accuracy"].dump() << ',' << p["corrupted_accuracy"].dump() << ',' << p["delta"].dump() << ','
       << p["answer_change_rate"].dump() << ',' << p["evaluated"].dump() << ',' << p["skipped"].dump() << '\n';
  }
}

const std::vector<std::pair<std::string, void (*)(Context&)>> kCommands = {
    {"gen", cmd_gen},         {"rewrite", cmd_rewrite}, {"filter", cmd_filter},   {"train", cmd_train},
    {"analyze-sim", cmd_analyze_sim}, {"intervene", cmd_intervene}, {"probe", cmd_probe}, {"corrupt", cmd_corrupt},
    {"bench", cmd_bench},     {"report", cmd_report}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentlab: latent-reasoning causal analysis lab"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  for (const auto& [name, _] : kCommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "base seed");
    sub->add_option("--out", out_dir, "run directory");
    sub->add_option("--override", overrides, "key=value applied to the config (repeatable)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  ctx.seeds.base = seed;
  ctx.run_dir = out_dir;
  ctx.out_dir = ctx.run_dir / ctx.command;
  const std::string started = utc_now();
  try {
    json doc = cli::read_config_file(config_path);
    for (const auto& o : overrides) cli::apply_override(doc, o);
    ctx.cfg = cli::run_config_from_json(doc);
    ctx.cfg_json = cli::to_json(ctx.cfg);
    if (ctx.command == "train") ctx.out_dir = ctx.run_dir / "train" / train::to_string(ctx.cfg.train.regime);
  } catch (const std::exception& e) {
    log(Level::Error, std::string("config: ") + e.what());
    return kExitConfig;
  }

  void (*fn)(Context&) = nullptr;
  for (const auto& [name, f] : kCommands)
    if (name == ctx.command) fn = f;
  try {
    fs::create_directories(ctx.out_dir);
    fn(ctx);
    write_manifest(ctx, started);
  } catch (const ValidationError& e) {
    log(Level::Error, e.what());
    return kExitConfig;
  } catch (const model::ConfigError& e) {
    log(Level::Error, e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log(Level::Error, ctx.command + " failed: " + e.what());
    return kExitRuntime;
  }
  log(Level::Info, ctx.command + " wrote " + ctx.out_dir.string());
  return kExitOk;
}
