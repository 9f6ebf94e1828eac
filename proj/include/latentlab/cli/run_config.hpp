#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentlab/model/config.hpp"
#include "latentlab/pipeline/remote_chat.hpp"
#include "latentlab/training/loss.hpp"

namespace latentlab::cli {

using nlohmann::json;
using model::ConfigError;

struct TaskConfig {
  std::string kind = tasks::kTaskVisualSearch;
  std::size_t train_count = 2000;
  std::size_t eval_count = 200;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t crop = 2;
  std::size_t board_size = 5;   // vsp
  double hole_density = 0.2;    // vsp
};

struct PipelineSection {
  std::string rewriter = "deterministic";
  std::size_t concurrency = 4;
  pipeline::RemoteChatConfig remote;
};

struct AnalysisConfig {
  std::size_t instances = 100;
  std::size_t calibration = 50;
  std::size_t probe_questions = 200;
  std::size_t max_steps = 48;
  std::optional<double> sigma;
  std::optional<std::vector<double>> tau;
  double mu = 1e-6;
  std::size_t probe_steps = 300;
};

/// Input overrides; empty means the default location inside the run directory.
struct PathsConfig {
  std::string train_data;
  std::string eval_data;
  std::string rewritten;
  std::string retained;
  std::string latent_checkpoint;
  std::string capimagine_checkpoint;
};

struct RunConfig {
  TaskConfig task;
  model::ModelConfig model;
  train::TrainConfig train;
  PipelineSection pipeline;
  AnalysisConfig analysis;
  PathsConfig paths;
};

namespace detail {

template <class T>
void take(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(section + ": unknown key '" + k + "'");
  }
}

}  // namespace detail

/// Validates the whole document; every error is a ConfigError.
inline RunConfig run_config_from_json(const json& j) {
  using detail::only_keys;
  using detail::take;
  only_keys(j, {"task", "model", "train", "pipeline", "analysis", "paths"}, "config");
  if (!j.contains("task")) throw ConfigError("config: missing required section 'task'");
  if (!j.at("task").contains("kind")) throw ConfigError("config: missing required field 'task.kind'");
  RunConfig c;

  const json& t = j.at("task");
  only_keys(t, {"kind", "train_count", "eval_count", "height", "width", "crop", "board_size", "hole_density"}, "task");
  take(t, "kind", c.task.kind, "task");
  take(t, "train_count", c.task.train_count, "task");
  take(t, "eval_count", c.task.eval_count, "task");
  take(t, "height", c.task.height, "task");
  take(t, "width", c.task.width, "task");
  take(t, "crop", c.task.crop, "task");
  take(t, "board_size", c.task.board_size, "task");
  take(t, "hole_density", c.task.hole_density, "task");
  if (c.task.kind != tasks::kTaskVisualSearch && c.task.kind != tasks::kTaskVsp) {
    throw ConfigError("task.kind must be 'visual_search' or 'vsp', got '" + c.task.kind + "'");
  }
  if (c.task.train_count == 0 || c.task.eval_count == 0) throw ConfigError("task: counts must be > 0");
  if (c.task.kind == tasks::kTaskVisualSearch &&
      (c.task.crop == 0 || c.task.crop > std::min(c.task.height, c.task.width) || c.task.height > 99 || c.task.width > 99)) {
    throw ConfigError("task: need 1 <= crop <= min(height, width) and sides <= 99");
  }
  if (c.task.kind == tasks::kTaskVsp && (c.task.board_size < 3 || c.task.hole_density < 0 || c.task.hole_density > 0.4)) {
    throw ConfigError("task: vsp needs board_size >= 3 and 0 <= hole_density <= 0.4");
  }

  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
  c.model.validate();
  if (j.contains("train")) c.train = train::train_config_from_json(j.at("train"));
  if (c.train.steps == 0) throw ConfigError("train.steps must be > 0");

  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    only_keys(p, {"rewriter", "concurrency", "remote"}, "pipeline");
    take(p, "rewriter", c.pipeline.rewriter, "pipeline");
    take(p, "concurrency", c.pipeline.concurrency, "pipeline");
    if (c.pipeline.rewriter != "deterministic" && c.pipeline.rewriter != "remote") {
      throw ConfigError("pipeline.rewriter must be 'deterministic' or 'remote'");
    }
    if (c.pipeline.concurrency == 0) throw ConfigError("pipeline.concurrency must be > 0");
    if (p.contains("remote")) {
      const json& r = p.at("remote");
      only_keys(r, {"base_url", "path", "model", "template_dir", "timeout_s", "retries"}, "pipeline.remote");
      auto& rc = c.pipeline.remote;
      std::string dir = rc.template_dir.string();
      take(r, "base_url", rc.base_url, "pipeline.remote");
      take(r, "path", rc.path, "pipeline.remote");
      take(r, "model", rc.model, "pipeline.remote");
      take(r, "template_dir", dir, "pipeline.remote");
      take(r, "timeout_s", rc.timeout_s, "pipeline.remote");
      take(r, "retries", rc.retries, "pipeline.remote");
      rc.template_dir = dir;
    }
  }

  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    only_keys(a, {"instances", "calibration", "probe_questions", "max_steps", "sigma", "tau", "mu", "probe_steps"}, "analysis");
    take(a, "instances", c.analysis.instances, "analysis");
    take(a, "calibration", c.analysis.calibration, "analysis");
    take(a, "probe_questions", c.analysis.probe_questions, "analysis");
    take(a, "max_steps", c.analysis.max_steps, "analysis");
    take(a, "mu", c.analysis.mu, "analysis");
    take(a, "probe_steps", c.analysis.probe_steps, "analysis");
    if (a.contains("sigma") && !a.at("sigma").is_null()) {
      double s = 0;
      take(a, "sigma", s, "analysis");
      if (s < 0) throw ConfigError("analysis.sigma must be >= 0");
      c.analysis.sigma = s;
    }
    if (a.contains("tau") && !a.at("tau").is_null()) {
      std::vector<double> tau;
      take(a, "tau", tau, "analysis");
      if (tau.size() != c.model.d_model) throw ConfigError("analysis.tau must have d_model entries");
      c.analysis.tau = tau;
    }
    if (c.analysis.instances < 2) throw ConfigError("analysis.instances must be >= 2");
    if (c.analysis.calibration == 0) throw ConfigError("analysis.calibration must be > 0");
  }

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    only_keys(p, {"train_data", "eval_data", "rewritten", "retained", "latent_checkpoint", "capimagine_checkpoint"}, "paths");
    take(p, "train_data", c.paths.train_data, "paths");
    take(p, "eval_data", c.paths.eval_data, "paths");
    take(p, "rewritten", c.paths.rewritten, "paths");
    take(p, "retained", c.paths.retained, "paths");
    take(p, "latent_checkpoint", c.paths.latent_checkpoint, "paths");
    take(p, "capimagine_checkpoint", c.paths.capimagine_checkpoint, "paths");
  }
  return c;
}

/// Effective configuration with every default spelled out.
inline json to_json(const RunConfig& c) {
  json analysis = {{"instances", c.analysis.instances},
                   {"calibration", c.analysis.calibration},
                   {"probe_questions", c.analysis.probe_questions},
                   {"max_steps", c.analysis.max_steps},
                   {"sigma", c.analysis.sigma ? json(*c.analysis.sigma) : json(nullptr)},
                   {"tau", c.analysis.tau ? json(*c.analysis.tau) : json(nullptr)},
                   {"mu", c.analysis.mu},
                   {"probe_steps", c.analysis.probe_steps}};
  const auto& rc = c.pipeline.remote;
  return {{"task",
           {{"kind", c.task.kind},
            {"train_count", c.task.train_count},
            {"eval_count", c.task.eval_count},
            {"height", c.task.height},
            {"width", c.task.width},
            {"crop", c.task.crop},
            {"board_size", c.task.board_size},
            {"hole_density", c.task.hole_density}}},
          {"model", model::to_json(c.model)},
          {"train", train::to_json(c.train)},
          {"pipeline",
           {{"rewriter", c.pipeline.rewriter},
            {"concurrency", c.pipeline.concurrency},
            {"remote",
             {{"base_url", rc.base_url},
              {"path", rc.path},
              {"model", rc.model},
              {"template_dir", rc.template_dir.string()},
              {"timeout_s", rc.timeout_s},
              {"retries", rc.retries}}}}},
          {"analysis", analysis},
          {"paths",
           {{"train_data", c.paths.train_data},
            {"eval_data", c.paths.eval_data},
            {"rewritten", c.paths.rewritten},
            {"retained", c.paths.retained},
            {"latent_checkpoint", c.paths.latent_checkpoint},
            {"capimagine_checkpoint", c.paths.capimagine_checkpoint}}}};
}

/// Applies "a.b.c=value". The value is parsed as JSON when it parses,
/// otherwise taken as a string.
inline void apply_override(json& doc, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

}  // namespace latentlab::cli
