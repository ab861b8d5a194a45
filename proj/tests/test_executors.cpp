#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace rct;

namespace {

struct Outcome {
  EventLog log;
  Trace trace;
  std::vector<TaskRecord> records;
  std::optional<Micros> ready_at;
};

TaskDescription sleeper(double seconds, int cores = 1, int gpus = 0) {
  TaskDescription t;
  t.cpu_cores_per_rank = cores;
  t.gpus = gpus;
  t.payload.duration = from_seconds(seconds);
  return t;
}

// Submits everything at t=0 and shuts the pilot down once all tasks end.
void drive(EventLoop& loop, Outcome& run, PilotDescription pilot, ExecutorConfig exec, std::vector<TaskDescription> tasks,
           SchedulerConfig sched = {}, std::uint64_t seed = 1) {
  Agent agent(loop, run.log, std::move(pilot), std::move(sched), std::move(exec), seed);
  agent.start();
  std::size_t left = tasks.size();
  for (auto& t : tasks)
    agent.submit(std::move(t), [&](const TaskRecord&) {
      if (--left == 0) agent.shutdown();
    });
  loop.run();
  run.records = agent.records();
  run.ready_at = agent.ready_at();
  run.trace = build_trace(run.log.rows());
}

Outcome sim(PilotDescription pilot, ExecutorConfig exec, std::vector<TaskDescription> tasks, SchedulerConfig sched = {},
        std::uint64_t seed = 1) {
  SimLoop loop;
  Outcome run;
  drive(loop, run, std::move(pilot), std::move(exec), std::move(tasks), std::move(sched), seed);
  return run;
}

PilotDescription pilot(int nodes, int cores, int gpus, double startup = 0) {
  PilotDescription d;
  d.resource = make_resource("test", nodes, cores, gpus);
  d.startup_latency = from_seconds(startup);
  return d;
}

std::vector<TaskDescription> many(int n, double seconds, int cores = 1, int gpus = 0) {
  return std::vector<TaskDescription>(static_cast<std::size_t>(n), sleeper(seconds, cores, gpus));
}

}  // namespace

TEST(Partitions, StartupCostIsSequential) {
  Rng rng(1);
  PartitionPlan plan;
  plan.partition_count = 32;
  plan.nodes_per_partition = 31;
  StabilityLimits calm;
  calm.inject = false;
  EXPECT_EQ(start_partitions(1000, plan, calm, rng).elapsed, from_seconds(336));
  plan.partition_count = 64;
  plan.nodes_per_partition = 15;
  EXPECT_EQ(start_partitions(1000, plan, calm, rng).elapsed, from_seconds(672));
  plan.per_partition_start_cost = 0;
  plan.post_start_sleep = 0;
  EXPECT_EQ(start_partitions(1000, plan, calm, rng).elapsed, 0);
  plan.nodes_per_partition = 16;
  EXPECT_THROW(start_partitions(1000, plan, calm, rng), InvalidSpec);
}

TEST(Partitions, StableLayoutsNeverFail) {
  PartitionPlan plan;
  plan.partition_count = 32;
  plan.nodes_per_partition = 31;
  plan.max_tasks_per_partition = 192;
  StabilityLimits lim;
  lim.startup_failure = lim.internal_failure = lim.lost_connection = 1.0;
  Rng rng(3);
  for (const auto& p : start_partitions(1000, plan, lim, rng).partitions) {
    EXPECT_TRUE(p.alive);
    EXPECT_FALSE(p.failure);
  }
  plan.max_tasks_per_partition = 200;
  auto unstable = start_partitions(1000, plan, lim, rng);
  for (const auto& p : unstable.partitions) EXPECT_FALSE(p.alive);
}

TEST(Agent, DirectRunCompletesAndReleases) {
  auto run = sim(pilot(2, 4, 0, 5), {}, many(16, 10));
  ASSERT_EQ(run.records.size(), 16u);
  for (const auto& r : run.records) {
    EXPECT_EQ(r.state, TaskState::done);
    EXPECT_EQ(r.history, (std::vector<TaskState>{TaskState::queued, TaskState::scheduled, TaskState::launching,
                                                  TaskState::running, TaskState::done}));
  }
  EXPECT_EQ(run.ready_at, from_seconds(5));
  EXPECT_EQ(pilot_end(run.trace), from_seconds(25));
  EXPECT_FALSE(find_oversubscription(run.trace));
}

TEST(Agent, ZeroLaunchDelayStartsAtPlacement) {
  auto run = sim(pilot(1, 4, 0), {}, many(4, 1));
  for (const auto& r : run.records) {
    EXPECT_EQ(r.ts.scheduled, r.ts.exec_start);
    EXPECT_EQ(*r.ts.exec_end - *r.ts.exec_start, from_seconds(1));
  }
}

TEST(Agent, LaunchDelaySerializesPerLane) {
  ExecutorConfig exec;
  exec.launch_delay = 0.5;
  auto run = sim(pilot(1, 8, 0), exec, many(8, 0));
  std::vector<Micros> starts;
  for (const auto& r : run.records) starts.push_back(*r.ts.exec_start);
  std::sort(starts.begin(), starts.end());
  for (std::size_t i = 0; i < starts.size(); ++i) EXPECT_EQ(starts[i], from_seconds(0.5 * static_cast<double>(i + 1)));
}

TEST(Agent, UnschedulableTaskFailsWithoutBlocking) {
  auto tasks = many(3, 1);
  tasks.push_back(sleeper(1, 64));
  auto run = sim(pilot(1, 4, 0), {}, tasks);
  auto counts = completion_counts(run.records);
  EXPECT_EQ(counts.done, 3u);
  EXPECT_EQ(counts.failed, 1u);
}

TEST(Agent, WalltimeMarksUnfinishedTasksLost) {
  auto p = pilot(1, 2, 0);
  p.walltime = from_seconds(15);
  SimLoop loop;
  Outcome run;
  drive(loop, run, p, {}, many(4, 10));
  auto counts = completion_counts(run.records);
  EXPECT_EQ(counts.done, 2u);
  EXPECT_EQ(counts.lost, 2u);
  EXPECT_EQ(pilot_end(run.trace), from_seconds(15));
}

TEST(Agent, NoopNeedsBulkBackend) {
  SimLoop loop;
  EventLog log;
  SchedulerConfig noop;
  noop.algorithm = Algorithm::noop;
  EXPECT_THROW(Agent(loop, log, pilot(1, 4, 0), noop, {}, 1), InvalidSpec);
}

TEST(Agent, PartitionedStartupAndLaunchDelay) {
  ExecutorConfig exec;
  exec.backend = BackendKind::partitioned;
  exec.partitions.partition_count = 4;
  exec.partitions.nodes_per_partition = 2;
  exec.partitions.per_launch_delay = 0.1;
  exec.stability.inject = false;
  auto run = sim(pilot(8, 4, 0), exec, many(40, 0));
  EXPECT_EQ(run.ready_at, from_seconds(42));
  auto ov = overhead(run.trace);
  EXPECT_EQ(ov.decomposition.startup, 42.0);
  EXPECT_EQ(ov.decomposition.launch_delay, 4.0);
  std::set<int> used;
  for (const auto& r : run.records) used.insert(*r.partition);
  EXPECT_EQ(used.size(), 4u);
}

TEST(Agent, BulkAdmissionRate) {
  ExecutorConfig exec;
  exec.backend = BackendKind::bulk;
  exec.bulk.scheduling_rate = 14.21;
  SchedulerConfig noop;
  noop.algorithm = Algorithm::noop;
  auto run = sim(pilot(128, 44, 4), exec, many(512, 1, 1, 1), noop);
  Micros first = kNever, last = 0;
  for (const auto& r : run.records) {
    first = std::min(first, *r.ts.exec_start);
    last = std::max(last, *r.ts.exec_start);
  }
  EXPECT_NEAR(to_seconds(last - first), 511 / 14.21, 1e-3);

  exec.bulk.scheduling_rate = 10;
  run = sim(pilot(250, 4, 0), exec, many(1000, 1000), noop);
  first = kNever, last = 0;
  for (const auto& r : run.records) {
    first = std::min(first, *r.ts.exec_start);
    last = std::max(last, *r.ts.exec_start);
  }
  EXPECT_NEAR(to_seconds(last - first) + 0.1, 100.0, 1e-3);
}

TEST(Agent, SeededRunsProduceIdenticalLogs) {
  auto once = [] {
    ExecutorConfig exec;
    exec.backend = BackendKind::partitioned;
    exec.partitions.partition_count = 4;
    exec.partitions.nodes_per_partition = 4;
    exec.partitions.max_tasks_per_partition = 300;
    exec.stability.startup_failure = 0.3;
    exec.stability.internal_failure = 0.3;
    auto run = sim(pilot(16, 4, 0), exec, many(500, 2), {}, 9);
    std::ostringstream os;
    run.log.write_jsonl(os);
    return os.str();
  };
  EXPECT_EQ(once(), once());
}

TEST(Agent, RealAndSimAgreeOnStateSequence) {
  auto tasks = many(8, 0.05);
  RealLoop real;
  Outcome r;
  drive(real, r, pilot(1, 4, 0), {}, tasks);
  auto s = sim(pilot(1, 4, 0), {}, tasks);
  ASSERT_EQ(r.records.size(), s.records.size());
  for (std::size_t i = 0; i < r.records.size(); ++i) EXPECT_EQ(r.records[i].history, s.records[i].history);
  EXPECT_FALSE(find_oversubscription(r.trace));
}
