#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rct/campaign.hpp"

using namespace rct;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(
seed: 3
resource: {preset: frontera-node, nodes: 3}
pilot: {startup_latency: 5}
workload:
  items: 400
  duration: {kind: lognormal, mean: 2.0, min: 0.1, max: 30}
overlay: {nodes_per_master: 10, bulk_size: 8}
metrics: {rate_window: 10}
)";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("rct-test-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string config_error_path(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, DumpParseRoundTrip) {
  auto c = parse_config_text(kSmall);
  EXPECT_EQ(c.resource.nodes, 3);
  EXPECT_EQ(c.overlay.bulk_size, 8);
  auto again = parse_config_text(dump_config(c));
  EXPECT_EQ(again, c);

  auto d = parse_config_text(R"(
seed: 1
resource: {nodes: 4}
scheduler: {algorithm: noop, colocation: {md: same_node}}
backend:
  kind: bulk
  bulk: {scheduling_rate: 14.21, startup_cost: 10}
  partitions: {count: 2, nodes_per_partition: 2, max_tasks_per_partition: 50}
workflow: {template: wf3-esmacs, params: {pipelines: 8, stages: 1, seconds: 314}}
)");
  EXPECT_EQ(parse_config_text(dump_config(d)), d);
}

TEST(Config, ErrorsNameTheKeyPath) {
  EXPECT_EQ(config_error_path("seed: 1\nresource: {preset: cray-node}\nworkload: {preset: wf3}"), "resource.preset");
  EXPECT_EQ(config_error_path("seed: 1\nworkload: {preset: wf3, itmes: 3}"), "workload.itmes");
  EXPECT_EQ(config_error_path("resource: {nodes: 2}"), "seed");
  EXPECT_EQ(config_error_path("seed: 1\nbackend: {kind: slurm}\nworkload: {preset: wf3}"), "backend.kind");
  EXPECT_EQ(config_error_path("seed: 1\nworkflow: {template: wf9}"), "workflow.template");
  EXPECT_EQ(config_error_path("seed: 1\nworkflow: {template: wf3-esmacs, params: {pipes: 2}}"),
            "workflow.params.pipes");
  EXPECT_EQ(config_error_path("seed: 1\nworkload: {preset: wf3}\noverlay: {bulk_size: 0}"), "overlay.bulk_size");
  EXPECT_EQ(config_error_path("seed: 1\nresource: {nodes: 0}\nworkload: {preset: wf3}"), "resource.nodes");
  EXPECT_THROW(load_config("/nonexistent/config.yaml"), ConfigError);
}

TEST(Campaign, SeededRunsAreByteIdentical) {
  auto c = parse_config_text(kSmall);
  auto a = run_campaign(c);
  auto b = run_campaign(c);
  std::ostringstream sa, sb;
  a.log.write_jsonl(sa);
  b.log.write_jsonl(sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_TRUE(a.success);
  c.seed = 4;
  auto other = run_campaign(c);
  std::ostringstream so;
  other.log.write_jsonl(so);
  EXPECT_NE(sa.str(), so.str());
}

TEST(Campaign, ReportFromLogMatchesInline) {
  auto c = parse_config_text(kSmall);
  auto r = run_campaign(c);
  auto dir = scratch("report");
  write_artifacts(dir, c, r);
  for (auto f : {"events.jsonl", "config.resolved.yaml", "utilization.json", "overhead.json", "rate.json",
                 "timeline.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(load_config(dir / "config.resolved.yaml"), c);

  auto again = report_from_log(dir / "events.jsonl", c);
  auto dir2 = scratch("report2");
  write_reports(dir2, c, again);
  for (auto f : {"utilization.json", "overhead.json", "rate.json", "timeline.csv", "summary.json"})
    EXPECT_EQ(slurp(dir / f), slurp(dir2 / f)) << f;
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Campaign, TemplatesRun) {
  auto wf2 = parse_config_text(R"(
seed: 2
resource: {nodes: 2}
workflow: {template: wf2-deepdrive, params: {iterations: 2}}
workload: {time_scale: 0.01}
)");
  auto r = run_campaign(wf2);
  EXPECT_EQ(r.counts.done, r.counts.total);
  EXPECT_EQ(r.counts.total, 2u * (12 + 1 + 1 + 1));

  auto hyb = parse_config_text(R"(
seed: 2
resource: {nodes: 2}
workflow: {template: hybrid-lb, params: {wf3_pipelines: 12, wf4_pipelines: 2}}
workload: {time_scale: 0.1}
)");
  auto h = run_campaign(hyb);
  EXPECT_EQ(h.counts.done, 12u * 4 + 2u * 3);
  EXPECT_FALSE(find_oversubscription(h.trace));
}

TEST(Campaign, CompletionThresholdDecidesSuccess) {
  auto c = parse_config_text(R"(
seed: 2
resource: {preset: frontera-node, nodes: 2}
pilot: {walltime: 30}
workload: {items: 200, duration: {kind: constant, seconds: 1}}
)");
  EXPECT_TRUE(run_campaign(c).success);
  // One worker of 34 slots finishes ~100 items in 3 s.
  c.walltime = 3;
  c.completion_threshold = 0.95;
  EXPECT_FALSE(run_campaign(c).success);
}

// Every shipped recipe parses.
TEST(Recipes, AllParse) {
  const fs::path dir = fs::path(RCT_SOURCE_DIR) / "recipes";
  ASSERT_TRUE(fs::exists(dir));
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".yaml") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 8);
}

// Beyond the stable limits some tasks fail or are lost, but never more than 5%.
TEST(Campaign, UnstablePartitionsLoseAFewTasks) {
  auto c = load_config(fs::path(RCT_SOURCE_DIR) / "recipes" / "esmacs-unstable.yaml");
  std::size_t worst = 12000;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    c.seed = seed;
    auto r = run_campaign(c);
    EXPECT_GE(r.counts.done, 11400u) << seed;
    EXPECT_FALSE(find_oversubscription(r.trace));
    worst = std::min(worst, r.counts.done);
  }
  EXPECT_LT(worst, 12000u);
}
