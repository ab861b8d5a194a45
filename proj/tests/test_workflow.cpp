#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace rct;

namespace {

PilotDescription summit(int nodes, double startup = 0) {
  PilotDescription d;
  d.resource = make_resource(*find_node_preset("summit-node"), nodes);
  d.startup_latency = from_seconds(startup);
  return d;
}

PilotDescription cores(int n) {
  PilotDescription d;
  d.resource = make_resource("test", 1, n, 0);
  return d;
}

struct Harness {
  SimLoop loop;
  EventLog log;
  Agent agent;
  explicit Harness(PilotDescription p, std::uint64_t seed = 1) : agent(loop, log, std::move(p), {}, {}, seed) {}
  Trace trace() const { return build_trace(log.rows()); }
};

Pipeline simple(std::string id, std::vector<int> stage_sizes, double seconds) {
  Pipeline p;
  p.pipeline_id = std::move(id);
  for (std::size_t s = 0; s < stage_sizes.size(); ++s) {
    Stage st{"s" + std::to_string(s), {}};
    for (int i = 0; i < stage_sizes[s]; ++i)
      st.tasks.push_back(make_task(p.pipeline_id + "." + std::to_string(s) + "." + std::to_string(i), 1, 1, 0, seconds));
    p.stages.push_back(std::move(st));
  }
  return p;
}

// Stage barrier, checked on the records of one pipeline.
void expect_barrier(const PipelineRecord& rec, const std::vector<TaskRecord>& tasks) {
  std::map<std::uint64_t, const TaskRecord*> by_id;
  for (const auto& t : tasks) by_id[to_int(t.id)] = &t;
  for (std::size_t s = 1; s < rec.stages.size(); ++s) {
    Micros prev_end = 0;
    for (auto id : rec.stages[s - 1].task_ids) prev_end = std::max(prev_end, *by_id.at(to_int(id))->ts.done);
    for (auto id : rec.stages[s].task_ids) EXPECT_GE(*by_id.at(to_int(id))->ts.queued, prev_end);
  }
}

}  // namespace

TEST(Workflow, ZeroDurationStagesHaveZeroTtx) {
  Harness h(cores(1));
  auto run = run_pipeline(simple("p", {1, 1}, 0), h.agent);
  EXPECT_EQ(run.ttx, 0);
  EXPECT_EQ(run.pipelines[0].stages.size(), 2u);
  EXPECT_TRUE(h.agent.ended());
}

TEST(Workflow, StageSpanFollowsPacking) {
  Harness h(cores(5));
  auto run = run_pipeline(simple("p", {10}, 1), h.agent);
  EXPECT_EQ(run.ttx, from_seconds(2));
}

TEST(Workflow, CommLatencyChargedPerSubmitAndCollect) {
  Harness h(cores(1));
  auto run = run_pipeline(simple("p", {1, 1, 1}, 1), h.agent, WorkflowConfig{0.5, {}});
  // Stage k is submitted after 2k+1 latencies and k seconds of work.
  const auto& st = run.pipelines[0].stages;
  for (std::size_t k = 0; k < st.size(); ++k)
    EXPECT_EQ(st[k].submitted, from_seconds(0.5 * static_cast<double>(2 * k + 1) + static_cast<double>(k)));
  EXPECT_EQ(*run.pipelines[0].finished, from_seconds(3 + 0.5 * 6));
}

TEST(Workflow, BarrierAcrossInterleavedPipelines) {
  Harness h(cores(3));
  std::vector<Pipeline> ps;
  ps.push_back(simple("a", {3, 2, 4}, 1.5));
  ps.push_back(simple("b", {1, 5}, 0.7));
  ps.push_back(simple("c", {2, 2, 2, 2}, 0.3));
  auto run = run_pipelines(std::move(ps), h.agent, WorkflowConfig{0.01, {}});
  for (const auto& rec : run.pipelines) {
    EXPECT_FALSE(rec.aborted);
    expect_barrier(rec, run.tasks);
  }
  EXPECT_FALSE(find_oversubscription(h.trace()));
}

TEST(Workflow, FailedTaskDoesNotBlockBarrier) {
  Harness h(cores(2));
  auto p = simple("p", {2, 1}, 1);
  p.stages[0].tasks[1].cpu_cores_per_rank = 8;  // never fits
  auto run = run_pipeline(p, h.agent);
  EXPECT_EQ(run.pipelines[0].stages.size(), 2u);
  EXPECT_EQ(run.pipelines[0].stages[0].failed, 1);

  Harness h2(cores(2));
  auto run2 = run_pipeline(p, h2.agent, WorkflowConfig{0, FailurePolicy::abort});
  EXPECT_TRUE(run2.pipelines[0].aborted);
  EXPECT_EQ(run2.pipelines[0].stages.size(), 1u);
}

TEST(Adaptive, ContinueBranchKeepsTaskNames) {
  Harness h(summit(2));
  DeepDriveParams p;
  p.nodes = 2;
  p.time_scale = 0.01;
  AdaptiveLoopConfig cfg;
  cfg.max_iterations = 3;
  auto out = iterate_adaptive(cfg, deepdrive_pipeline(p), h.agent, 7, p);
  ASSERT_EQ(out.iterations.size(), 3u);
  EXPECT_EQ(out.run.pipelines[0].iterations, 3);
  const auto& first = out.iterations[0].stages[0].names;
  for (const auto& it : out.iterations) EXPECT_EQ(it.stages[0].names, first);
  EXPECT_EQ(out.branches.back(), Branch::stop);
}

TEST(Adaptive, OutlierBranchRegeneratesFirstStage) {
  Harness h(summit(1));
  DeepDriveParams p;
  p.nodes = 1;
  p.time_scale = 0.01;
  AdaptiveLoopConfig cfg;
  cfg.max_iterations = 4;
  cfg.outlier_probability = 1.0;
  auto out = iterate_adaptive(cfg, deepdrive_pipeline(p), h.agent, 7, p);
  ASSERT_EQ(out.iterations.size(), 4u);
  EXPECT_EQ(out.iterations[1].stages[0].names.front(), "md.g1.0");
  EXPECT_EQ(out.iterations[3].stages[0].names.front(), "md.g3.0");
}

TEST(Adaptive, HookIsPureInSeedAndIteration) {
  AdaptiveLoopConfig cfg;
  cfg.outlier_probability = 0.5;
  auto a = bernoulli_adaptation(cfg, {}, 3);
  auto b = bernoulli_adaptation(cfg, {}, 3);
  for (int i = 0; i < 7; ++i) {
    IterationResult r;
    r.iteration = i;
    EXPECT_EQ(a(r).branch, b(r).branch);
  }
  cfg.max_iterations = 0;
  EXPECT_THROW(bernoulli_adaptation(cfg, {}, 3), InvalidSpec);
}

TEST(Adaptive, LatencyRaisesOverhead) {
  auto total = [](double latency, int iterations) {
    Harness h(summit(2));
    DeepDriveParams p;
    p.nodes = 2;
    p.time_scale = 0.05;
    AdaptiveLoopConfig cfg;
    cfg.max_iterations = iterations;
    cfg.comm_latency = latency;
    iterate_adaptive(cfg, deepdrive_pipeline(p), h.agent, 1, p);
    return overhead(h.trace()).overhead;
  };
  double prev = 0;
  for (int n = 1; n <= 4; ++n) {
    const double hi = total(0.5, n);
    EXPECT_GT(hi, prev);
    prev = hi;
    EXPECT_GT(hi, 2 * total(0.001, n));
  }
}

TEST(Hybrid, TemplatesHaveDeclaredShapes) {
  auto wf3 = wf3_pipeline(0, 30);
  auto wf4 = wf4_pipeline(0, 90);
  EXPECT_EQ(wf3.stages.size(), 4u);
  EXPECT_EQ(wf4.stages.size(), 3u);
  EXPECT_EQ(wf3.stages[0].tasks[0].gpus, 1);
  EXPECT_EQ(wf4.stages[0].tasks[0].ranks, 36);
  EXPECT_EQ(hybrid_pipelines(3, 1).size(), 4u);
}

TEST(Hybrid, BalancedCountsFillNodes) {
  Harness h(summit(2));
  auto run = run_hybrid(12, 2, h.agent);
  auto tr = h.trace();
  auto u = utilization(tr);
  for (const auto& t : run.tasks) EXPECT_EQ(t.state, TaskState::done);
  EXPECT_FALSE(find_oversubscription(tr));

  Harness g(summit(2));
  run_hybrid(12, 0, g.agent);
  EXPECT_GT(u.core_fraction, utilization(g.trace()).core_fraction);
}

TEST(Hybrid, WithoutWf4CoresStayIdle) {
  Harness h(summit(1));
  run_hybrid(6, 0, h.agent);
  auto u = utilization(h.trace());
  EXPECT_LE(u.core_fraction, 6.0 / 42.0 + 1e-9);
}
