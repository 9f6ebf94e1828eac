#include <gtest/gtest.h>

#include "latentlab/cli/run_config.hpp"

using namespace latentlab;
using namespace latentlab::cli;

TEST(RunConfig, MinimalDocumentTakesDefaults) {
  const RunConfig c = run_config_from_json(json::parse(R"({"task":{"kind":"visual_search"}})"));
  EXPECT_EQ(c.task.train_count, 2000u);
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.model.n_latent, 4u);
  EXPECT_EQ(c.pipeline.rewriter, "deterministic");
  // round trip through the effective config
  const RunConfig again = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(RunConfig, RejectsBadDocuments) {
  auto bad = [](const char* text) { return run_config_from_json(json::parse(text)); };
  EXPECT_THROW(bad(R"({})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"chess"}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search","colour":1}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search"},"extra":{}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search","crop":5}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search"},"model":{"n_heads":3}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search"},"train":{"steps":"many"}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search"},"analysis":{"tau":[1,2]}})"), ConfigError);
  EXPECT_THROW(bad(R"({"task":{"kind":"visual_search"},"pipeline":{"rewriter":"gpt"}})"), ConfigError);
}

TEST(RunConfig, OverridesParseJsonOrFallBackToString) {
  json doc = json::parse(R"({"task":{"kind":"visual_search"}})");
  apply_override(doc, "train.steps=7");
  apply_override(doc, "train.regime=latent_sft");
  apply_override(doc, "analysis.sigma=0.5");
  EXPECT_EQ(doc["train"]["steps"], 7);
  EXPECT_EQ(doc["train"]["regime"], "latent_sft");
  const RunConfig c = run_config_from_json(doc);
  EXPECT_EQ(c.train.steps, 7u);
  EXPECT_EQ(*c.analysis.sigma, 0.5);
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train.steps.x=1"), ConfigError);
}

TEST(RunConfig, ShippedConfigsValidate) {
  for (const char* name : {"default.json", "smoke.json"}) {
    const auto path = std::filesystem::path(LATENTLAB_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(run_config_from_json(read_config_file(path))) << name;
  }
  EXPECT_THROW(read_config_file("/nonexistent/config.json"), ConfigError);
}
