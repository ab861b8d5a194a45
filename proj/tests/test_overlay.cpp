#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace rct;

namespace {

WorkerState worker(int id, int capacity) {
  WorkerState w;
  w.worker_id = id;
  w.slots = capacity;
  w.capacity = capacity;
  return w;
}

std::vector<WorkUnit> units(int n) {
  std::vector<WorkUnit> out;
  for (int i = 1; i <= n; ++i) out.push_back(WorkUnit{static_cast<std::uint64_t>(i), from_seconds(1), 1});
  return out;
}

WorkloadPreset workload(std::uint64_t items, DurationModel d, int bundle = 1, TaskShape shape = {}) {
  WorkloadPreset w;
  w.name = "test";
  w.item_count = items;
  w.durations = std::move(d);
  w.bundle_size = bundle;
  w.shape = shape;
  return w;
}

struct OverlayRun {
  EventLog log;
  Trace trace;
  OverlayStats stats;
  bool conserved = false;
  std::uint64_t credited = 0;
};

OverlayRun run_overlay(int nodes, int cores, int gpus, MasterConfig cfg, const WorkloadPreset& w,
                       std::uint64_t seed = 1, std::function<void(SimLoop&, Overlay&)> inject = {}) {
  SimLoop loop;
  OverlayRun r;
  PilotDescription p;
  p.resource = make_resource("test", nodes, cores, gpus);
  Overlay ov(loop, r.log, p, cfg, w, seed);
  ov.start();
  if (inject) inject(loop, ov);
  loop.run();
  r.trace = build_trace(r.log.rows());
  r.stats = ov.stats();
  r.conserved = ov.conserved();
  r.credited = ov.credited();
  return r;
}

}  // namespace

TEST(Spawn, MasterAndWorkerCounts) {
  const NodeSpec node{0, 44, 6, 42};
  MasterConfig cfg;
  for (auto [nodes, masters, workers] : {std::tuple{128, 2, 126}, {1000, 10, 990}, {2, 1, 1}}) {
    auto l = spawn_overlay(nodes, node, cfg);
    EXPECT_EQ(static_cast<int>(l.masters.size()), masters);
    EXPECT_EQ(static_cast<int>(l.workers.size()), workers);
    std::set<int> used;
    for (const auto& m : l.masters) used.insert(m.node_id);
    for (const auto& w : l.workers) used.insert(w.node_id);
    EXPECT_EQ(static_cast<int>(used.size()), nodes);
  }
  EXPECT_THROW(spawn_overlay(1, node, cfg), ConfigError);
  cfg.nodes_per_master = 1;
  EXPECT_THROW(spawn_overlay(4, node, cfg), ConfigError);
}

TEST(Spawn, SlotsFollowUnitShape) {
  const NodeSpec node{0, 44, 6, 42};
  EXPECT_EQ(unit_slots(node, {1, 1, 0}), 42);
  EXPECT_EQ(unit_slots(node, {1, 1, 1}), 6);
  EXPECT_EQ(unit_slots(NodeSpec{0, 56, 0, 34}, {1, 1, 0}), 34);
}

TEST(MasterBlocks, PartitionTheItemSpace) {
  for (std::uint64_t items : {1ull, 7ull, 1000ull, 12345ull}) {
    for (int m = 1; m <= 10; ++m) {
      std::uint64_t next = 0;
      for (int k = 0; k < m; ++k) {
        auto [first, count] = master_block(items, m, k);
        EXPECT_EQ(first, next);
        next += count;
      }
      EXPECT_EQ(next, items);
    }
  }
}

TEST(Dispatch, BulkMessagesOfAtMostBulkSize) {
  MasterLedger led(0, units(10), 4);
  led.add_worker(worker(0, 16));
  auto msgs = led.dispatch_bulk();
  ASSERT_EQ(msgs.size(), 3u);
  EXPECT_EQ(msgs[0].units.size(), 4u);
  EXPECT_EQ(msgs[1].units.size(), 4u);
  EXPECT_EQ(msgs[2].units.size(), 2u);
  EXPECT_EQ(led.in_flight(), 10u);
}

TEST(Dispatch, MostFreeCapacityWins) {
  MasterLedger led(0, units(1), 1);
  auto a = worker(0, 10);
  auto b = worker(1, 2);
  led.add_worker(a);
  led.add_worker(b);
  // Free capacity 10 vs 2; the single unit goes to worker 0.
  auto msgs = led.dispatch_bulk();
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_EQ(msgs[0].worker_id, 0);

  MasterLedger tie(0, units(1), 1);
  tie.add_worker(worker(3, 4));
  tie.add_worker(worker(1, 4));
  EXPECT_EQ(tie.dispatch_bulk()[0].worker_id, 1);
}

TEST(Dispatch, MessageCountBound) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 200; ++round) {
    const int n = 1 + static_cast<int>(rng() % 200);
    const int bulk = 1 + static_cast<int>(rng() % 8);
    const int w = 1 + static_cast<int>(rng() % 5);
    MasterLedger led(0, units(n), bulk);
    for (int i = 0; i < w; ++i) led.add_worker(worker(i, 1 + static_cast<int>(rng() % 40)));
    while (!led.finished()) {
      auto msgs = led.dispatch_bulk();
      std::size_t sent = 0;
      for (const auto& m : msgs) sent += m.units.size();
      EXPECT_LE(msgs.size(), (sent + bulk - 1) / bulk + static_cast<std::size_t>(w));
      for (const auto& m : msgs) {
        EXPECT_LE(m.units.size(), static_cast<std::size_t>(bulk));
        std::vector<std::uint64_t> ids;
        for (const auto& u : m.units) ids.push_back(u.id);
        led.report_completion(m.worker_id, ids);
      }
      for (const auto& [id, ws] : led.workers()) ASSERT_LE(ws.in_flight, ws.capacity);
      ASSERT_TRUE(led.conserved());
    }
    EXPECT_EQ(led.completed(), static_cast<std::uint64_t>(n));
  }
}

TEST(Completion, RefillAfterFullCompletion) {
  MasterLedger led(0, units(6), 3);
  led.add_worker(worker(0, 3));
  auto first = led.dispatch_bulk();
  ASSERT_EQ(first.size(), 1u);
  const std::uint64_t ids[] = {1, 2, 3};
  led.report_completion(0, ids);
  EXPECT_EQ(led.worker(0).in_flight, 0);
  auto second = led.dispatch_bulk();
  ASSERT_EQ(second.size(), 1u);
  EXPECT_EQ(second[0].units.front().id, 4u);
}

TEST(Completion, DuplicateIsProtocolErrorAndIdempotent) {
  MasterLedger led(0, units(3), 3);
  led.add_worker(worker(0, 4));
  led.dispatch_bulk();
  const std::uint64_t one[] = {1};
  led.report_completion(0, one);
  const MasterLedger before = led;
  EXPECT_THROW(led.report_completion(0, one), ProtocolError);
  EXPECT_EQ(led.protocol_errors(), 1u);
  EXPECT_EQ(led.completed(), before.completed());
  EXPECT_EQ(led.in_flight(), before.in_flight());
  EXPECT_TRUE(led.conserved());
  const std::uint64_t unknown[] = {99};
  EXPECT_THROW(led.report_completion(0, unknown), ProtocolError);
  EXPECT_TRUE(led.conserved());
}

TEST(Completion, InterleavedWorkersConserve) {
  MasterLedger led(0, units(40), 2);
  led.add_worker(worker(0, 4));
  led.add_worker(worker(1, 4));
  std::mt19937_64 rng(3);
  std::map<int, std::vector<std::uint64_t>> held;
  while (!led.finished()) {
    for (const auto& m : led.dispatch_bulk())
      for (const auto& u : m.units) held[m.worker_id].push_back(u.id);
    const int w = static_cast<int>(rng() % 2);
    if (held[w].empty()) continue;
    const std::uint64_t id[] = {held[w].front()};
    held[w].erase(held[w].begin());
    led.report_completion(w, id);
    ASSERT_TRUE(led.conserved());
  }
  EXPECT_EQ(led.completed(), led.dispatched());
}

TEST(Loss, RequeuedOnceThenFailed) {
  MasterLedger led(0, units(2), 2);
  led.add_worker(worker(0, 4));
  led.add_worker(worker(1, 4));
  led.dispatch_bulk();
  auto out = led.worker_lost(0);
  EXPECT_EQ(out.requeued.size(), 2u);
  EXPECT_TRUE(led.conserved());
  led.dispatch_bulk();
  EXPECT_EQ(led.worker(1).in_flight, 2);
  out = led.worker_lost(1);
  EXPECT_EQ(out.failed.size(), 2u);
  EXPECT_TRUE(led.conserved());
  EXPECT_EQ(led.lost(), 4u);
}

TEST(Loss, AllWorkersDeadDrains) {
  MasterLedger led(0, units(5), 1);
  led.add_worker(worker(0, 2));
  led.dispatch_bulk();
  led.worker_lost(0);
  EXPECT_THROW(led.dispatch_bulk(), OverlayDrained);
}

TEST(Overlay, RunCompletesEveryUnit) {
  MasterConfig cfg;
  cfg.nodes_per_master = 3;
  auto r = run_overlay(6, 4, 0, cfg, workload(1000, DurationModel::constant(2)));
  EXPECT_EQ(r.stats.done, 1000u);
  EXPECT_EQ(r.stats.dispatched, 1000u);
  EXPECT_TRUE(r.conserved);
  EXPECT_EQ(r.trace.pilot.masters, 2);
  EXPECT_EQ(r.trace.pilot.cores, 4 * 4);
  EXPECT_FALSE(find_oversubscription(r.trace));
}

TEST(Overlay, BundlesCreditItems) {
  auto r = run_overlay(2, 4, 2, {}, workload(100, DurationModel::constant(1), 16, {1, 1, 1}));
  EXPECT_EQ(r.stats.units, 7u);
  EXPECT_EQ(r.credited, 100u);
}

TEST(Overlay, WorkerDeathRequeues) {
  MasterConfig cfg;
  cfg.nodes_per_master = 10;
  auto r = run_overlay(3, 2, 0, cfg, workload(40, DurationModel::constant(10)), 1, [](SimLoop& loop, Overlay& ov) {
    loop.at(from_seconds(15), [&ov] { ov.kill_worker(0); });
  });
  EXPECT_TRUE(r.conserved);
  EXPECT_EQ(r.stats.done + r.stats.failed, 40u);
  EXPECT_GT(r.stats.done, 0u);
  EXPECT_FALSE(find_oversubscription(r.trace));
}

TEST(Overlay, LongTailMakespanNearLpt) {
  // 1 master node + 4 single-slot workers.
  MasterConfig cfg;
  auto d = DurationModel::lognormal(28.8, 0.1, 3582.6);
  auto w = workload(10000, d);
  auto r = run_overlay(5, 1, 0, cfg, w, 17);
  ASSERT_EQ(r.stats.done, 10000u);
  Micros first = kNever, last = 0;
  for (const auto& t : r.trace.tasks) {
    first = std::min(first, *t.ts.exec_start);
    last = std::max(last, *t.ts.exec_end);
  }
  std::vector<double> secs;
  for (const auto& u : make_units(10000, 1, d, 17)) secs.push_back(to_seconds(u.duration));
  const double lpt = oracle::lpt_makespan(secs, 4);
  EXPECT_LE(to_seconds(last - first), 1.10 * lpt);
}

TEST(Overlay, ThroughputLaw) {
  for (auto [nodes, cores, bundle] : {std::tuple{2, 8, 1}, {3, 32, 16}}) {
    const int W = (nodes - 1) * cores;
    const double mu = 10.0;
    auto r = run_overlay(nodes, cores, 0, {}, workload(static_cast<std::uint64_t>(W) * 40 * bundle,
                                                       DurationModel::constant(mu), bundle));
    auto rs = rate(r.trace, 60.0);
    const double want = W * bundle / mu * 3600.0;
    EXPECT_NEAR(steady_state_rate(rs), want, 0.1 * want) << W << " slots";
  }
}

TEST(Overlay, SeededRunsAreIdentical) {
  auto w = workload(500, DurationModel::lognormal(28.8, 0.1, 3582.6));
  MasterConfig cfg;
  cfg.nodes_per_master = 2;
  cfg.bulk_size = 4;
  cfg.message_latency = 0.01;
  auto a = run_overlay(6, 4, 0, cfg, w, 3);
  auto b = run_overlay(6, 4, 0, cfg, w, 3);
  std::ostringstream sa, sb;
  a.log.write_jsonl(sa);
  b.log.write_jsonl(sb);
  EXPECT_EQ(sa.str(), sb.str());
}
