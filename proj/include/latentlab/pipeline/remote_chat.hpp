#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <thread>

#include "json.hpp"
#include "latentlab/pipeline/rewriter.hpp"

#include "httplib.h"
// <resolv.h> (pulled in by httplib) defines _res, which collides with Eigen
// parameter names in anything included later.
#undef _res

namespace latentlab::pipeline {

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text prompt with {{name}} placeholders. A line holding only "---"
/// splits the system message from the user message.
struct PromptTemplate {
  std::string id;
  std::string system;
  std::string user;

  static PromptTemplate parse(std::string id, const std::string& text) {
    PromptTemplate t{std::move(id), {}, {}};
    const auto sep = text.find("\n---\n");
    if (sep == std::string::npos) {
      t.user = text;
    } else {
      t.system = text.substr(0, sep);
      t.user = text.substr(sep + 5);
    }
    return t;
  }

  static PromptTemplate load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw TemplateError("cannot read prompt template " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(path.stem().string(), ss.str());
  }

  static std::string fill(const std::string& text, const std::map<std::string, std::string>& vars, const std::string& id) {
    static const std::regex slot(R"(\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\})");
    std::string out;
    auto last = text.cbegin();
    for (std::sregex_iterator it(text.begin(), text.end(), slot), end; it != end; ++it) {
      const auto& m = *it;
      const auto v = vars.find(m[1].str());
      if (v == vars.end()) throw TemplateError("template " + id + ": no value for {{" + m[1].str() + "}}");
      out.append(last, m[0].first);
      out += v->second;
      last = m[0].second;
    }
    out.append(last, text.cend());
    return out;
  }

  std::pair<std::string, std::string> render(const std::map<std::string, std::string>& vars) const {
    return {fill(system, vars, id), fill(user, vars, id)};
  }
};

struct RemoteChatConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/v1/chat/completions";
  std::string model = "captioner";
  std::filesystem::path template_dir = "prompts";
  double timeout_s = 30.0;
  std::size_t retries = 2;
  double backoff_s = 0.2;
};

/// Caption text from a chat response: a top-level "text" field, or the
/// chat-completion shape choices[0].message.content.
inline std::optional<std::string> response_text(const nlohmann::json& j) {
  if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string()) {
      return c["message"]["content"].get<std::string>();
    }
  }
  return std::nullopt;
}

/// POSTs {model, messages: [system, user]} and returns the reply verbatim.
/// Transport errors and non-2xx replies are retried; after the last attempt
/// a RewriteFailure carries the instance id.
class RemoteChat : public Rewriter {
 public:
  explicit RemoteChat(RemoteChatConfig cfg) : cfg_(std::move(cfg)) {
    for (const char* name : {"zoom_caption", "diff_description"}) {
      const auto file = cfg_.template_dir / (std::string(name) + ".v1.txt");
      templates_[name] = PromptTemplate::load(file);
    }
  }

  RemoteChat(RemoteChatConfig cfg, std::map<std::string, PromptTemplate> templates)
      : cfg_(std::move(cfg)), templates_(std::move(templates)) {}

  std::string name() const override { return "remote_chat"; }

  std::string rewrite(const TrajectorySegment& segment, const DatasetRecord& record,
                      const RewriteRule& rule) const override {
    const auto t = templates_.find(rule.name());
    if (t == templates_.end()) throw RewriteFailure(record.id, "no prompt template for " + rule.name());
    std::map<std::string, std::string> vars;
    if (record.grid) {
      vars["grid"] = tasks::detokenize(tasks::serialize_grid(record.grid->grid));
      vars["question"] = tasks::detokenize(tasks::question_tokens(record.grid->query()));
      vars["crop"] = tasks::detokenize(segment.tokens);
    }
    if (record.board) {
      vars["board"] = tasks::detokenize(tasks::serialize_board(*record.board));
      vars["manipulated"] = tasks::detokenize(segment.tokens);
    }
    std::pair<std::string, std::string> msgs;
    try {
      msgs = t->second.render(vars);
    } catch (const TemplateError& e) {
      throw RewriteFailure(record.id, e.what());
    }
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"messages",
                                  {{{"role", "system"}, {"content", msgs.first}},
                                   {{"role", "user"}, {"content", msgs.second}}}},
                                 {"metadata", {{"instance_id", record.id}, {"template", t->second.id + ".v1"}}}};
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.backoff_s * static_cast<double>(attempt)));
      }
      httplib::Client cli(cfg_.base_url);
      const auto to = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg_.timeout_s));
      cli.set_connection_timeout(to);
      cli.set_read_timeout(to);
      cli.set_write_timeout(to);
      const auto res = cli.Post(cfg_.path, body.dump(), "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) {
        last_error = "response is not JSON";
        continue;
      }
      if (auto text = response_text(j)) return *text;
      last_error = "response has no text field";
    }
    throw RewriteFailure(record.id, "remote rewrite failed after " + std::to_string(cfg_.retries + 1) +
                                        " attempts: " + last_error);
  }

 private:
  RemoteChatConfig cfg_;
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace latentlab::pipeline
