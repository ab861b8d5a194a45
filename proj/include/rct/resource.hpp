#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "time.hpp"

namespace rct {

enum class TaskId : std::uint64_t {};

inline std::uint64_t to_int(TaskId id) { return static_cast<std::uint64_t>(id); }

struct NodeSpec {
  int node_id = 0;
  int cpu_cores = 0;
  int gpus = 0;
  int usable_cpu_cores = 0;

  bool operator==(const NodeSpec&) const = default;
};

struct ResourceSpec {
  std::string name;
  std::vector<NodeSpec> nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int usable_cores() const {
    int n = 0;
    for (const auto& s : nodes) n += s.usable_cpu_cores;
    return n;
  }
  int gpus() const {
    int n = 0;
    for (const auto& s : nodes) n += s.gpus;
    return n;
  }

  bool operator==(const ResourceSpec&) const = default;
};

inline void validate(const NodeSpec& n) {
  if (n.cpu_cores < 0 || n.gpus < 0 || n.usable_cpu_cores < 0)
    throw InvalidSpec("node " + std::to_string(n.node_id) + ": negative count");
  if (n.usable_cpu_cores > n.cpu_cores)
    throw InvalidSpec("node " + std::to_string(n.node_id) + ": usable_cpu_cores > cpu_cores");
}

inline void validate(const ResourceSpec& r) {
  if (r.nodes.empty()) throw InvalidSpec("resource '" + r.name + "' has zero nodes");
  const auto& first = r.nodes.front();
  for (const auto& n : r.nodes) {
    validate(n);
    if (n.cpu_cores != first.cpu_cores || n.gpus != first.gpus ||
        n.usable_cpu_cores != first.usable_cpu_cores)
      throw InvalidSpec("resource '" + r.name + "' mixes node types");
  }
}

// Node shapes of the supported platforms. Summit exposes 42 of its 44
// physical cores to applications.
struct NodePreset {
  std::string_view name;
  int cpu_cores;
  int usable_cpu_cores;
  int gpus;
};

inline constexpr NodePreset kNodePresets[] = {
    {"summit-node", 44, 42, 6},
    {"frontera-node", 56, 34, 0},
    {"lassen-node", 44, 44, 4},
};

inline std::optional<NodePreset> find_node_preset(std::string_view name) {
  for (const auto& p : kNodePresets)
    if (p.name == name) return p;
  return std::nullopt;
}

inline ResourceSpec make_resource(std::string name, int node_count, int cpu_cores, int gpus,
                                  std::optional<int> usable = std::nullopt) {
  ResourceSpec r;
  r.name = std::move(name);
  r.nodes.reserve(static_cast<std::size_t>(std::max(node_count, 0)));
  for (int i = 0; i < node_count; ++i)
    r.nodes.push_back(NodeSpec{i, cpu_cores, gpus, usable.value_or(cpu_cores)});
  return r;
}

inline ResourceSpec make_resource(const NodePreset& p, int node_count) {
  return make_resource(std::string(p.name), node_count, p.cpu_cores, p.gpus, p.usable_cpu_cores);
}

// Slots a placement holds on one node.
struct NodeSlots {
  int node_id = 0;
  std::vector<int> cores;
  std::vector<int> gpus;

  bool operator==(const NodeSlots&) const = default;
};

struct Placement {
  TaskId task_id{};
  std::vector<NodeSlots> slots;
  std::optional<int> partition;

  int core_count() const {
    int n = 0;
    for (const auto& s : slots) n += static_cast<int>(s.cores.size());
    return n;
  }
  int gpu_count() const {
    int n = 0;
    for (const auto& s : slots) n += static_cast<int>(s.gpus.size());
    return n;
  }
  bool empty() const { return slots.empty(); }

  bool operator==(const Placement&) const = default;
};

namespace detail {
// Instrumentation: number of NodeState capacity queries on this thread.
inline thread_local std::uint64_t node_state_reads = 0;
}  // namespace detail

inline std::uint64_t node_state_reads() { return detail::node_state_reads; }

class NodeState {
 public:
  NodeState() = default;
  explicit NodeState(NodeSpec spec)
      : spec_(spec),
        cores_(static_cast<std::size_t>(spec.usable_cpu_cores)),
        gpus_(static_cast<std::size_t>(spec.gpus)),
        free_cores_(spec.usable_cpu_cores),
        free_gpus_(spec.gpus) {}

  const NodeSpec& spec() const { return spec_; }
  int node_id() const { return spec_.node_id; }

  int free_cores() const {
    ++detail::node_state_reads;
    return free_cores_;
  }
  int free_gpus() const {
    ++detail::node_state_reads;
    return free_gpus_;
  }
  int busy_cores() const { return spec_.usable_cpu_cores - free_cores_; }
  int busy_gpus() const { return spec_.gpus - free_gpus_; }

  std::optional<TaskId> core_owner(int core) const { return cores_.at(static_cast<std::size_t>(core)); }
  std::optional<TaskId> gpu_owner(int gpu) const { return gpus_.at(static_cast<std::size_t>(gpu)); }

  // Lowest-numbered free ids, at most n of them.
  std::vector<int> lowest_free_cores(int n) const { return lowest_free(cores_, n); }
  std::vector<int> lowest_free_gpus(int n) const { return lowest_free(gpus_, n); }

  void check_can_occupy(const NodeSlots& s) const {
    check_ids(s);
    for (int c : s.cores)
      if (cores_[static_cast<std::size_t>(c)])
        throw OccupancyConflict(where(s.node_id) + " core " + std::to_string(c) + " busy");
    for (int g : s.gpus)
      if (gpus_[static_cast<std::size_t>(g)])
        throw OccupancyConflict(where(s.node_id) + " gpu " + std::to_string(g) + " busy");
  }

  void check_can_release(const NodeSlots& s, TaskId owner) const {
    check_ids(s);
    for (int c : s.cores)
      if (cores_[static_cast<std::size_t>(c)] != owner)
        throw OwnershipError(where(s.node_id) + " core " + std::to_string(c) + " not owned by task " +
                             std::to_string(to_int(owner)));
    for (int g : s.gpus)
      if (gpus_[static_cast<std::size_t>(g)] != owner)
        throw OwnershipError(where(s.node_id) + " gpu " + std::to_string(g) + " not owned by task " +
                             std::to_string(to_int(owner)));
  }

  void occupy(const NodeSlots& s, TaskId owner) {
    check_can_occupy(s);
    for (int c : s.cores) cores_[static_cast<std::size_t>(c)] = owner;
    for (int g : s.gpus) gpus_[static_cast<std::size_t>(g)] = owner;
    free_cores_ -= static_cast<int>(s.cores.size());
    free_gpus_ -= static_cast<int>(s.gpus.size());
  }

  void release(const NodeSlots& s, TaskId owner) {
    check_can_release(s, owner);
    for (int c : s.cores) cores_[static_cast<std::size_t>(c)].reset();
    for (int g : s.gpus) gpus_[static_cast<std::size_t>(g)].reset();
    free_cores_ += static_cast<int>(s.cores.size());
    free_gpus_ += static_cast<int>(s.gpus.size());
  }

  bool operator==(const NodeState&) const = default;

 private:
  static std::vector<int> lowest_free(const std::vector<std::optional<TaskId>>& v, int n) {
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size() && static_cast<int>(out.size()) < n; ++i)
      if (!v[i]) out.push_back(static_cast<int>(i));
    return out;
  }

  static std::string where(int node) { return "node " + std::to_string(node); }

  void check_ids(const NodeSlots& s) const {
    if (s.node_id != spec_.node_id)
      throw OccupancyConflict("slots for node " + std::to_string(s.node_id) + " applied to node " +
                              std::to_string(spec_.node_id));
    auto check = [&](const std::vector<int>& ids, std::size_t limit, const char* kind) {
      std::vector<int> sorted = ids;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw OccupancyConflict(where(s.node_id) + " duplicate " + kind + " id");
      for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= limit)
          throw OccupancyConflict(where(s.node_id) + " " + kind + " id " + std::to_string(id) +
                                  " out of range");
    };
    check(s.cores, cores_.size(), "core");
    check(s.gpus, gpus_.size(), "gpu");
  }

  NodeSpec spec_{};
  std::vector<std::optional<TaskId>> cores_;
  std::vector<std::optional<TaskId>> gpus_;
  int free_cores_ = 0;
  int free_gpus_ = 0;
};

// Apply a whole placement; all-or-nothing.
inline void occupy(std::span<NodeState> nodes, const Placement& p) {
  for (const auto& s : p.slots) nodes[static_cast<std::size_t>(s.node_id)].check_can_occupy(s);
  for (const auto& s : p.slots) nodes[static_cast<std::size_t>(s.node_id)].occupy(s, p.task_id);
}

inline void release(std::span<NodeState> nodes, const Placement& p) {
  for (const auto& s : p.slots) nodes[static_cast<std::size_t>(s.node_id)].check_can_release(s, p.task_id);
  for (const auto& s : p.slots) nodes[static_cast<std::size_t>(s.node_id)].release(s, p.task_id);
}

struct PilotDescription {
  ResourceSpec resource;
  Micros walltime = from_seconds(86400.0);
  Micros startup_latency = 0;
};

inline void validate(const PilotDescription& d) {
  validate(d.resource);
  if (d.walltime <= 0) throw InvalidSpec("pilot walltime must be > 0");
  if (d.startup_latency < 0) throw InvalidSpec("pilot startup_latency must be >= 0");
}

// Resources held by an active pilot.
struct Pilot {
  PilotDescription desc;
  std::vector<NodeState> nodes;
  Micros clock = 0;
  Micros deadline = 0;

  int free_cores() const {
    int n = 0;
    for (const auto& s : nodes) n += s.free_cores();
    return n;
  }
  int free_gpus() const {
    int n = 0;
    for (const auto& s : nodes) n += s.free_gpus();
    return n;
  }
};

inline Pilot acquire(const PilotDescription& desc) {
  validate(desc);
  Pilot p;
  p.desc = desc;
  p.nodes.reserve(desc.resource.nodes.size());
  for (const auto& n : desc.resource.nodes) p.nodes.emplace_back(n);
  p.clock = desc.startup_latency;
  p.deadline = desc.walltime;
  return p;
}

}  // namespace rct
