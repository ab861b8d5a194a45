#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "resource.hpp"
#include "task.hpp"

namespace rct {

enum class Algorithm { continuous, noop };
enum class Colocation { none, same_node, different_node };

struct SchedulerConfig {
  Algorithm algorithm = Algorithm::continuous;
  bool prioritize_large = true;
  std::map<std::string, Colocation> colocation;

  Colocation policy(const std::optional<std::string>& tag) const {
    if (!tag) return Colocation::none;
    auto it = colocation.find(*tag);
    return it == colocation.end() ? Colocation::none : it->second;
  }

  bool operator==(const SchedulerConfig&) const = default;
};

// Nodes used by active tagged tasks: tag -> node -> active task count.
class TagTracker {
 public:
  void add(const std::string& tag, const Placement& p) {
    for (const auto& s : p.slots) ++tags_[tag][s.node_id];
  }
  void remove(const std::string& tag, const Placement& p) {
    auto it = tags_.find(tag);
    if (it == tags_.end()) return;
    for (const auto& s : p.slots) {
      auto n = it->second.find(s.node_id);
      if (n != it->second.end() && --n->second == 0) it->second.erase(n);
    }
    if (it->second.empty()) tags_.erase(it);
  }
  const std::map<int, int>* nodes(const std::string& tag) const {
    auto it = tags_.find(tag);
    return it == tags_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, std::map<int, int>> tags_;
};

// A set of nodes a placement must stay within (a partition). Direct
// execution uses one group covering the pilot.
struct NodeGroup {
  std::vector<int> node_ids;
  bool alive = true;
  // Remaining number of tasks this group may still accept.
  std::optional<int> quota;
};

inline std::vector<NodeGroup> whole_pilot_group(std::size_t nodes) {
  NodeGroup g;
  for (std::size_t i = 0; i < nodes; ++i) g.node_ids.push_back(static_cast<int>(i));
  return {g};
}

// One GPU costs like its fair share of the node's cores.
inline double gpu_weight_of(const NodeSpec& spec) {
  return spec.gpus > 0 ? static_cast<double>(spec.usable_cpu_cores) / spec.gpus : 0.0;
}

// First-fit placement of `task` on `candidates` (ascending node ids):
// the lowest node that holds every rank. Only a task larger than one node is
// spread, ranks packed densely from the lowest node upwards; a smaller one
// waits for a node rather than fragmenting. Within a node the lowest free
// core/GPU ids are used.
inline std::optional<Placement> find_placement(const TaskDescription& task, std::span<const NodeState> nodes,
                                               std::span<const int> candidates, const SchedulerConfig& cfg,
                                               const TagTracker& tags) {
  const int c = task.cores_per_rank();
  const int g = task.gpus_per_rank();
  const int r = task.ranks;
  const Colocation policy = cfg.policy(task.tag);
  const std::map<int, int>* tagged = task.tag ? tags.nodes(*task.tag) : nullptr;

  auto allowed = [&](int node) {
    if (policy == Colocation::same_node && tagged) return tagged->contains(node);
    if (policy == Colocation::different_node && tagged) return !tagged->contains(node);
    return true;
  };
  auto rank_capacity = [&](const NodeState& n) {
    int k = n.free_cores() / c;
    if (g > 0) k = std::min(k, n.free_gpus() / g);
    return k;
  };
  auto fits_empty = [&](const NodeState& n) {
    int k = n.spec().usable_cpu_cores / c;
    if (g > 0) k = std::min(k, n.spec().gpus / g);
    return k >= r;
  };
  auto slots_on = [&](const NodeState& n, int k) {
    return NodeSlots{n.node_id(), n.lowest_free_cores(k * c), n.lowest_free_gpus(k * g)};
  };

  Placement p;
  p.task_id = task.id;
  for (int id : candidates) {
    if (!allowed(id)) continue;
    const auto& n = nodes[static_cast<std::size_t>(id)];
    if (rank_capacity(n) >= r) {
      p.slots.push_back(slots_on(n, r));
      return p;
    }
  }
  if (r == 1 || policy == Colocation::same_node) return std::nullopt;
  for (int id : candidates)
    if (allowed(id) && fits_empty(nodes[static_cast<std::size_t>(id)])) return std::nullopt;

  int remaining = r;
  for (int id : candidates) {
    if (!allowed(id)) continue;
    const auto& n = nodes[static_cast<std::size_t>(id)];
    const int k = std::min(rank_capacity(n), remaining);
    if (k == 0) continue;
    p.slots.push_back(slots_on(n, k));
    remaining -= k;
    if (remaining == 0) return p;
  }
  return std::nullopt;
}

struct Decision {
  TaskDescription task;
  Placement placement;
};

struct ScheduleResult {
  std::vector<Decision> placed;
  std::vector<TaskDescription> remaining;
  std::vector<TaskDescription> unschedulable;
};

// Continuous scheduler with a persistent queue. Each pass is one decision
// instant: tasks are visited largest-first (arrival order among equals) and
// placed first-fit; tasks that do not fit stay queued.
class ContinuousScheduler {
 public:
  ContinuousScheduler(SchedulerConfig cfg, NodeSpec node_type)
      : cfg_(std::move(cfg)), node_type_(node_type), gpu_weight_(gpu_weight_of(node_type)) {}

  const SchedulerConfig& config() const { return cfg_; }
  double gpu_weight() const { return gpu_weight_; }
  std::size_t size() const { return queue_.size(); }
  bool empty() const { return queue_.empty(); }
  TagTracker& tags() { return tags_; }

  // Throws Unschedulable if the task can never fit in `max_group_nodes`
  // nodes of this type.
  void check_capacity(const TaskDescription& t, int max_group_nodes) const {
    const int c = t.cores_per_rank();
    const int g = t.gpus_per_rank();
    int per_node = node_type_.usable_cpu_cores / c;
    if (g > 0) per_node = node_type_.gpus > 0 ? std::min(per_node, node_type_.gpus / g) : 0;
    const bool single = t.ranks == 1 || cfg_.policy(t.tag) == Colocation::same_node;
    const long long capacity = single ? per_node : static_cast<long long>(per_node) * max_group_nodes;
    if (per_node == 0 || capacity < t.ranks)
      throw Unschedulable("task " + std::to_string(to_int(t.id)) + " needs " + std::to_string(t.ranks) +
                          " x (" + std::to_string(c) + " cores, " + std::to_string(g) +
                          " gpus), more than the pilot can ever provide");
  }

  void enqueue(TaskDescription t) {
    validate(t);
    const Key key{cfg_.prioritize_large ? -t.priority_hint(gpu_weight_) : 0.0, seq_++};
    ++shape_counts_[shape_of(t)];
    queue_.emplace(key, std::move(t));
  }

  // Removes and returns everything still queued, in visiting order.
  std::vector<TaskDescription> drain() {
    std::vector<TaskDescription> out;
    out.reserve(queue_.size());
    for (auto& [k, t] : queue_) out.push_back(std::move(t));
    queue_.clear();
    shape_counts_.clear();
    return out;
  }

  std::vector<Decision> pass(std::span<NodeState> nodes, std::vector<NodeGroup>& groups,
                             std::size_t max_placements = std::numeric_limits<std::size_t>::max()) {
    std::vector<Decision> out;
    if (queue_.empty() || groups.empty()) return out;

    long long free_cores = 0;
    long long free_gpus = 0;
    for (const auto& grp : groups) {
      if (!grp.alive) continue;
      for (int id : grp.node_ids) {
        free_cores += nodes[static_cast<std::size_t>(id)].free_cores();
        free_gpus += nodes[static_cast<std::size_t>(id)].free_gpus();
      }
    }

    std::set<Shape> failed;
    for (auto it = queue_.begin(); it != queue_.end() && out.size() < max_placements;) {
      if (free_cores <= 0) break;
      const TaskDescription& task = it->second;
      Shape shape = shape_of(task);
      if (failed.contains(shape)) {
        ++it;
        continue;
      }
      auto placement = place_in_groups(task, nodes, groups);
      if (!placement) {
        failed.insert(std::move(shape));
        if (failed.size() == shape_counts_.size()) break;
        ++it;
        continue;
      }
      occupy(nodes, *placement);
      if (task.tag) tags_.add(*task.tag, *placement);
      free_cores -= placement->core_count();
      free_gpus -= placement->gpu_count();
      if (auto sc = shape_counts_.find(shape); --sc->second == 0) shape_counts_.erase(sc);
      out.push_back(Decision{std::move(it->second), std::move(*placement)});
      it = queue_.erase(it);
    }
    return out;
  }

  void on_release(const TaskDescription& t, const Placement& p) {
    if (t.tag) tags_.remove(*t.tag, p);
  }

 private:
  struct Key {
    double neg_priority;
    std::uint64_t seq;
    bool operator<(const Key& o) const {
      return neg_priority != o.neg_priority ? neg_priority < o.neg_priority : seq < o.seq;
    }
  };
  using Shape = std::tuple<int, int, int, std::string>;

  static Shape shape_of(const TaskDescription& t) {
    return {t.cores_per_rank(), t.gpus_per_rank(), t.ranks, t.tag.value_or(std::string{})};
  }

  std::optional<Placement> place_in_groups(const TaskDescription& task, std::span<NodeState> nodes,
                                           std::vector<NodeGroup>& groups) {
    const std::size_t n = groups.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t gi = (cursor_ + i) % n;
      auto& grp = groups[gi];
      if (!grp.alive || (grp.quota && *grp.quota <= 0)) continue;
      auto p = find_placement(task, nodes, grp.node_ids, cfg_, tags_);
      if (!p) continue;
      if (n > 1) {
        p->partition = static_cast<int>(gi);
        cursor_ = (gi + 1) % n;
      }
      if (grp.quota) --*grp.quota;
      return p;
    }
    return std::nullopt;
  }

  SchedulerConfig cfg_;
  NodeSpec node_type_;
  double gpu_weight_;
  std::map<Key, TaskDescription> queue_;
  std::map<Shape, std::size_t> shape_counts_;
  TagTracker tags_;
  std::uint64_t seq_ = 0;
  std::size_t cursor_ = 0;
};

// One decision instant over explicit state. Placements are applied to
// `nodes`; tasks that can never fit are reported separately from those that
// merely do not fit now.
inline ScheduleResult schedule(std::vector<TaskDescription> queue, std::span<NodeState> nodes,
                               const SchedulerConfig& cfg, TagTracker* tags = nullptr) {
  ScheduleResult res;
  if (queue.empty()) return res;
  if (nodes.empty()) throw InvalidSpec("schedule needs at least one node");
  ContinuousScheduler sched(cfg, nodes.front().spec());
  if (tags) sched.tags() = *tags;
  for (auto& t : queue) {
    try {
      sched.check_capacity(t, static_cast<int>(nodes.size()));
    } catch (const Unschedulable&) {
      res.unschedulable.push_back(std::move(t));
      continue;
    }
    sched.enqueue(std::move(t));
  }
  auto groups = whole_pilot_group(nodes.size());
  res.placed = sched.pass(nodes, groups);
  res.remaining = sched.drain();
  if (tags) *tags = sched.tags();
  return res;
}

// Pass-through: no slot accounting, arrival order preserved.
inline std::vector<TaskDescription> schedule_noop(std::vector<TaskDescription> queue) { return queue; }

// Places tasks sharing colocation tags according to their policies.
inline ScheduleResult place_colocated(std::vector<TaskDescription> tasks, std::span<NodeState> nodes,
                                      const SchedulerConfig& cfg, TagTracker* tags = nullptr) {
  return schedule(std::move(tasks), nodes, cfg, tags);
}

}  // namespace rct
