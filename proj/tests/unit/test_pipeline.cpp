#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "injection.hpp"
#include "latentlab/pipeline/pipeline.hpp"
#include "latentlab/pipeline/remote_chat.hpp"
#include "latentlab/tasks/vsp.hpp"

using namespace latentlab;
using namespace latentlab::pipeline;
using tasks::DatasetRecord;

namespace {

DatasetRecord vs_record(std::uint64_t seed, std::size_t h = 4) {
  auto [inst, tr] = tasks::gen_visual_search(seed, h, h, 2);
  return tasks::make_record(inst, tr);
}

DatasetRecord vsp_record(std::uint64_t seed) {
  auto [b, tr] = tasks::gen_vsp(seed, 5, 0.2);
  return tasks::make_record(b, tr, 0.2);
}

std::string reason_of(const DatasetRecord& r) { return r.reason.value_or(""); }

}  // namespace

TEST(Verbalizer, ZoomCaptionNamesTargetCell) {
  const auto r = vs_record(3);
  const auto& inst = *r.grid;
  const std::string cap = DeterministicVerbalizer::zoom_caption(r.trajectory.segments[1], r);
  const auto claim = parse_zoom_caption(tasks::tokenize(cap));
  ASSERT_TRUE(claim);
  const auto p = inst.target_cell();
  EXPECT_EQ(claim->cell, p);
  EXPECT_EQ(claim->glyph, inst.grid.at(p).glyph);
  EXPECT_EQ(claim->color, inst.grid.at(p).color);
}

TEST(Verbalizer, DiffDescriptionListsPathCells) {
  const auto r = vsp_record(4);
  const auto& seg = r.trajectory.segments[1];
  ASSERT_TRUE(seg.is_image());
  const auto cells = parse_diff_description(tasks::tokenize(DeterministicVerbalizer::diff_description(seg, r)));
  ASSERT_TRUE(cells);
  auto visited = *tasks::replay(*r.board, r.board->gold);
  visited.pop_back();
  EXPECT_EQ(cells->size(), visited.size());
}

TEST(Refine, ReplacesImagesAndKeepsAnswer) {
  const auto r = vs_record(5);
  const auto out = refine_trajectory(r.trajectory, {"the target glyph is a ."});
  EXPECT_EQ(out.image_count(), 0u);
  EXPECT_EQ(out.answer, r.trajectory.answer);
  EXPECT_EQ(out.segments.back(), r.trajectory.segments.back());
  EXPECT_EQ(out.segments[1].tokens, tasks::tokenize("the target glyph is a ."));
  EXPECT_THROW(refine_trajectory(r.trajectory, {}), RefinementError);
  EXPECT_THROW(refine_trajectory(r.trajectory, {"zebra crossing"}), RefinementError);
}

TEST(Filter, CleanRecordsAreKept) {
  DeterministicVerbalizer v;
  std::vector<DatasetRecord> in;
  for (std::uint64_t s = 0; s < 40; ++s) in.push_back(vs_record(s));
  for (std::uint64_t s = 0; s < 20; ++s) in.push_back(vsp_record(s));
  const auto res = run_pipeline(in, v, {3});
  EXPECT_EQ(res.stats.retained, in.size());
  EXPECT_TRUE(res.stats.conserved());
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(res.retained[i].id, in[i].id);  // order preserved across workers
    EXPECT_EQ(res.retained[i].tokens, in[i].tokens);
    EXPECT_EQ(res.retained[i].trajectory.answer, in[i].trajectory.answer);
  }
}

TEST(Filter, InjectedFaultsGetTheirReasons) {
  DeterministicVerbalizer v;
  auto conflict = vs_record(7);
  inject::answer_conflict(conflict);
  auto ambiguous = vs_record(8);
  inject::ambiguity(ambiguous);
  auto bad_route = vsp_record(9);
  bad_route.trajectory.answer.pop_back();
  bad_route.trajectory.segments.back() = tasks::TrajectorySegment::text(tasks::answer_span(bad_route.trajectory.answer));
  auto two_starts = vsp_record(10);
  for (auto& c : two_starts.board->cells)
    if (c == tasks::BoardCell::Empty) {
      c = tasks::BoardCell::Start;
      break;
    }
  const auto res = run_pipeline({conflict, ambiguous, bad_route, two_starts}, v, {1});
  ASSERT_EQ(res.quarantined.size(), 4u);
  EXPECT_EQ(reason_of(res.quarantined[0]), "answer_conflict");
  EXPECT_EQ(reason_of(res.quarantined[1]), "ambiguous_question");
  EXPECT_EQ(reason_of(res.quarantined[2]), "answer_conflict");
  EXPECT_EQ(reason_of(res.quarantined[3]), "ambiguous_question");
  EXPECT_TRUE(res.stats.conserved());
}

TEST(Filter, MalformedWhenCaptionDoesNotParse) {
  auto r = vs_record(11);
  r.captions = {"the target glyph is a ."};
  const auto refined = refine_trajectory(r.trajectory, r.captions);
  const auto v = filter_instance(r, refined);
  ASSERT_FALSE(v.kept());
  EXPECT_EQ(*v.reason, FilterVerdict::Reason::Malformed);
  r.captions.clear();
  EXPECT_EQ(*filter_instance(r, refined).reason, FilterVerdict::Reason::Malformed);
}

namespace {

class Failing : public Rewriter {
 public:
  std::string rewrite(const tasks::TrajectorySegment&, const DatasetRecord& r, const RewriteRule&) const override {
    if (r.id.back() == '3') throw RewriteFailure(r.id, "service unavailable");
    return DeterministicVerbalizer::zoom_caption(r.trajectory.segments[1], r);
  }
  std::string name() const override { return "failing"; }
};

}  // namespace

TEST(Pipeline, RewriteFailuresAreCountedAndQuarantined) {
  std::vector<DatasetRecord> in;
  for (std::uint64_t s = 0; s < 30; ++s) in.push_back(vs_record(s));
  const auto res = run_pipeline(in, Failing{}, {4});
  EXPECT_EQ(res.stats.rewrite_failures, 3u);
  EXPECT_EQ(res.stats.retained, 27u);
  EXPECT_TRUE(res.stats.conserved());
  std::size_t failures = 0;
  for (const auto& q : res.quarantined) {
    if (q.verdict != "rewrite_failure") continue;
    ++failures;
    EXPECT_NE(reason_of(q).find("service unavailable"), std::string::npos);
  }
  EXPECT_EQ(failures, 3u);
}

TEST(Pipeline, FilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "latentlab_pipeline_files";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::vector<DatasetRecord> in{vs_record(1), vs_record(2)};
  inject::answer_conflict(in[1]);
  tasks::write_jsonl(dir / "in.jsonl", in);
  const auto stats = run_pipeline_files(dir / "in.jsonl", dir / "out", DeterministicVerbalizer{});
  EXPECT_EQ(stats.retained, 1u);
  EXPECT_EQ(tasks::read_jsonl(dir / "out/retained.jsonl").size(), 1u);
  const auto q = tasks::read_jsonl(dir / "out/quarantine.jsonl");
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(reason_of(q[0]), "answer_conflict");
  std::ifstream s(dir / "out/stats.json");
  const auto j = nlohmann::json::parse(s);
  EXPECT_EQ(j["rejects"]["answer_conflict"], 1);
  std::filesystem::remove_all(dir);
}

TEST(PromptTemplate, FillsSlotsAndRejectsMissing) {
  const auto t = PromptTemplate::parse("zoom_caption", "You describe crops.\n---\nGrid {{grid}} asks {{ question }}.");
  const auto [sys, user] = t.render({{"grid", "G"}, {"question", "Q"}});
  EXPECT_EQ(sys, "You describe crops.");
  EXPECT_EQ(user, "Grid G asks Q.");
  EXPECT_THROW(t.render({{"grid", "G"}}), TemplateError);
  EXPECT_THROW(PromptTemplate::load("/nonexistent/template.txt"), TemplateError);
}

TEST(PromptTemplate, ShippedTemplatesLoad) {
  const std::filesystem::path dir = LATENTLAB_SOURCE_DIR "/prompts";
  const auto z = PromptTemplate::load(dir / "zoom_caption.v1.txt");
  const auto d = PromptTemplate::load(dir / "diff_description.v1.txt");
  EXPECT_NO_THROW(z.render({{"grid", "g"}, {"question", "q"}, {"crop", "c"}}));
  EXPECT_NO_THROW(d.render({{"board", "b"}, {"manipulated", "m"}}));
}

namespace {

// Chat endpoint double: fails the first `fail_first` calls with HTTP 503,
// then answers with the deterministic caption for the instance id it is sent.
struct MockChat {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  int fail_first = 0;
  std::map<std::string, std::string> answers;
  nlohmann::json last_request;
  std::mutex mu;

  MockChat() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = calls++;
      if (n < fail_first) {
        res.status = 503;
        return;
      }
      const auto j = nlohmann::json::parse(req.body);
      std::lock_guard lock(mu);
      last_request = j;
      const auto id = j["metadata"]["instance_id"].get<std::string>();
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", answers[id]}}}}}}}.dump(),
                      "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockChat() {
    server.stop();
    thread.join();
  }
  RemoteChatConfig config() const {
    RemoteChatConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port);
    c.template_dir = LATENTLAB_SOURCE_DIR "/prompts";
    c.retries = 2;
    c.backoff_s = 0.01;
    c.timeout_s = 5;
    return c;
  }
};

}  // namespace

TEST(RemoteChat, CaptionsThroughMockServerWithRetries) {
  MockChat mock;
  mock.fail_first = 2;
  std::vector<DatasetRecord> in{vs_record(21), vs_record(22)};
  for (const auto& r : in) mock.answers[r.id] = DeterministicVerbalizer::zoom_caption(r.trajectory.segments[1], r);
  const auto res = run_pipeline(in, RemoteChat(mock.config()), {1});
  EXPECT_EQ(res.stats.retained, 2u);
  EXPECT_EQ(mock.calls.load(), 4);
  EXPECT_EQ(mock.last_request["messages"].size(), 2u);
  const std::string user = mock.last_request["messages"][1]["content"];
  EXPECT_NE(user.find(tasks::detokenize(tasks::serialize_grid(in[1].grid->grid))), std::string::npos);
}

TEST(RemoteChat, ExhaustedRetriesBecomeRewriteFailures) {
  MockChat mock;
  mock.fail_first = 1000;
  const auto res = run_pipeline({vs_record(23)}, RemoteChat(mock.config()), {1});
  EXPECT_EQ(res.stats.rewrite_failures, 1u);
  EXPECT_EQ(mock.calls.load(), 3);
  EXPECT_NE(reason_of(res.quarantined[0]).find("HTTP 503"), std::string::npos);
}

TEST(RemoteChat, WrongCaptionIsFilteredAsConflict) {
  MockChat mock;
  const auto r = vs_record(24);
  const auto& inst = *r.grid;
  const auto p = inst.target_cell();
  const auto& cell = inst.grid.at(p);
  // Every attribute wrong, so the claim conflicts whatever the question asks.
  mock.answers[r.id] = "Zooming into region (" + std::to_string((p.row + 1) % inst.grid.height) + "," +
                       std::to_string(p.col) + "): the target glyph is " +
                       std::string(tasks::kGlyphNames[(cell.glyph + 1) % tasks::kGlyphCount]) + " with color " +
                       std::string(tasks::kColorNames[(cell.color + 1) % tasks::kColorCount]) + ".";
  const auto res = run_pipeline({r}, RemoteChat(mock.config()), {1});
  EXPECT_EQ(res.stats.rejects.at("answer_conflict"), 1u);
}

TEST(RemoteChat, UnreachableServerFailsCleanly) {
  RemoteChatConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.template_dir = LATENTLAB_SOURCE_DIR "/prompts";
  c.retries = 0;
  c.timeout_s = 1;
  const auto res = run_pipeline({vs_record(25)}, RemoteChat(c), {1});
  EXPECT_EQ(res.stats.rewrite_failures, 1u);
  EXPECT_NE(reason_of(res.quarantined[0]).find("transport error"), std::string::npos);
}
