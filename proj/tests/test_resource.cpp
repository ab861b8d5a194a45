#include <random>

#include <gtest/gtest.h>

#include "rct/resource.hpp"

using namespace rct;

TEST(Resource, PresetsHaveExpectedShapes) {
  auto summit = find_node_preset("summit-node");
  ASSERT_TRUE(summit);
  EXPECT_EQ(summit->usable_cpu_cores, 42);
  EXPECT_EQ(summit->gpus, 6);
  auto frontera = find_node_preset("frontera-node");
  ASSERT_TRUE(frontera);
  EXPECT_EQ(frontera->usable_cpu_cores, 34);
  EXPECT_EQ(frontera->gpus, 0);
  EXPECT_FALSE(find_node_preset("nope"));
}

TEST(Resource, ValidateRejectsBadSpecs) {
  EXPECT_THROW(validate(ResourceSpec{"empty", {}}), InvalidSpec);
  auto r = make_resource("r", 2, 8, 1);
  r.nodes[1].gpus = 2;
  EXPECT_THROW(validate(r), InvalidSpec);
  EXPECT_THROW(validate(make_resource("r", 1, 8, 0, 9)), InvalidSpec);
  EXPECT_NO_THROW(validate(make_resource("r", 3, 8, 2)));
}

TEST(Resource, AcquireSetsClockAndDeadline) {
  PilotDescription d;
  d.resource = make_resource(*find_node_preset("summit-node"), 4);
  d.walltime = from_seconds(100);
  d.startup_latency = from_seconds(10);
  Pilot p = acquire(d);
  EXPECT_EQ(p.nodes.size(), 4u);
  EXPECT_EQ(p.free_cores(), 4 * 42);
  EXPECT_EQ(p.free_gpus(), 24);
  EXPECT_EQ(p.clock, from_seconds(10));
  EXPECT_EQ(p.deadline, from_seconds(100));
}

TEST(NodeState, OccupyAndReleaseTrackOwnership) {
  NodeState n(NodeSpec{0, 8, 2, 8});
  const TaskId a{1}, b{2};
  n.occupy(NodeSlots{0, {0, 1}, {0}}, a);
  EXPECT_EQ(n.free_cores(), 6);
  EXPECT_EQ(n.free_gpus(), 1);
  EXPECT_EQ(n.core_owner(1), a);
  EXPECT_THROW(n.occupy(NodeSlots{0, {1}, {}}, b), OccupancyConflict);
  EXPECT_THROW(n.release(NodeSlots{0, {0}, {}}, b), OwnershipError);
  EXPECT_THROW(n.release(NodeSlots{0, {2}, {}}, a), OwnershipError);
  EXPECT_THROW(n.occupy(NodeSlots{0, {9}, {}}, b), OccupancyConflict);
  EXPECT_THROW(n.occupy(NodeSlots{0, {3, 3}, {}}, b), OccupancyConflict);
  n.release(NodeSlots{0, {0, 1}, {0}}, a);
  EXPECT_EQ(n.free_cores(), 8);
  EXPECT_EQ(n.lowest_free_cores(3), (std::vector<int>{0, 1, 2}));
}

TEST(NodeState, PlacementIsAllOrNothing) {
  std::vector<NodeState> nodes{NodeState(NodeSpec{0, 4, 0, 4}), NodeState(NodeSpec{1, 4, 0, 4})};
  nodes[1].occupy(NodeSlots{1, {3}, {}}, TaskId{9});
  const auto before = nodes;
  Placement p{TaskId{1}, {NodeSlots{0, {0, 1}, {}}, NodeSlots{1, {2, 3}, {}}}, std::nullopt};
  EXPECT_THROW(occupy(nodes, p), OccupancyConflict);
  EXPECT_EQ(nodes, before);
}

// Property: any sequence of valid occupies followed by the matching releases
// restores the initial state.
TEST(NodeState, OccupyReleaseIdentity) {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 200; ++round) {
    std::vector<NodeState> nodes;
    for (int i = 0; i < 3; ++i) nodes.emplace_back(NodeSpec{i, 8, 4, 8});
    const auto initial = nodes;
    std::vector<Placement> held;
    for (int k = 0; k < 10; ++k) {
      Placement p;
      p.task_id = TaskId{static_cast<std::uint64_t>(k + 1)};
      for (int n = 0; n < 3; ++n) {
        std::uniform_int_distribution<int> nc(0, 3), ng(0, 1);
        auto cores = nodes[static_cast<std::size_t>(n)].lowest_free_cores(nc(rng));
        auto gpus = nodes[static_cast<std::size_t>(n)].lowest_free_gpus(ng(rng));
        if (!cores.empty() || !gpus.empty()) p.slots.push_back(NodeSlots{n, cores, gpus});
      }
      if (p.slots.empty()) continue;
      occupy(nodes, p);
      held.push_back(p);
    }
    std::shuffle(held.begin(), held.end(), rng);
    for (const auto& p : held) release(nodes, p);
    ASSERT_EQ(nodes, initial);
  }
}
