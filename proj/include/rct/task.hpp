#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "resource.hpp"
#include "time.hpp"

namespace rct {

// What a task runs. Without a command the payload sleeps (or spins) for
// `duration`.
struct Payload {
  Micros duration = 0;
  std::vector<std::string> command;
};

struct TaskDescription {
  TaskId id{};
  // Logical identity (e.g. "md.3"); stable across adaptive iterations.
  std::string name;
  int cpu_cores_per_rank = 1;
  int ranks = 1;
  // Total GPUs of the task, split evenly across ranks.
  int gpus = 0;
  std::optional<std::string> tag;
  Payload payload;
  // Work items credited on completion (bundle size).
  int credit = 1;
  std::optional<std::string> stage_ref;

  int gpus_per_rank() const { return ranks > 0 ? gpus / ranks : 0; }
  // Each GPU reserves one CPU core.
  int cores_per_rank() const { return std::max(cpu_cores_per_rank, gpus_per_rank()); }
  int total_cores() const { return ranks * cores_per_rank(); }

  double priority_hint(double gpu_weight) const {
    return static_cast<double>(ranks) * cpu_cores_per_rank + gpu_weight * gpus;
  }
};

inline void validate(const TaskDescription& t) {
  const auto who = "task " + std::to_string(to_int(t.id));
  if (t.ranks < 1) throw InvalidSpec(who + ": ranks must be >= 1");
  if (t.cpu_cores_per_rank < 0 || t.gpus < 0) throw InvalidSpec(who + ": negative resource count");
  if (t.cpu_cores_per_rank == 0 && t.gpus == 0) throw InvalidSpec(who + ": requests no resources");
  if (t.gpus % t.ranks != 0) throw InvalidSpec(who + ": gpus must be divisible by ranks");
  if (t.payload.duration < 0) throw InvalidSpec(who + ": negative duration");
  if (t.credit < 0) throw InvalidSpec(who + ": negative credit");
}

enum class TaskState { queued, scheduled, launching, running, done, failed, lost };

inline constexpr std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::queued: return "queued";
    case TaskState::scheduled: return "scheduled";
    case TaskState::launching: return "launching";
    case TaskState::running: return "running";
    case TaskState::done: return "done";
    case TaskState::failed: return "failed";
    case TaskState::lost: return "lost";
  }
  return "?";
}

inline std::optional<TaskState> task_state_from(std::string_view s) {
  for (auto st : {TaskState::queued, TaskState::scheduled, TaskState::launching, TaskState::running,
                  TaskState::done, TaskState::failed, TaskState::lost})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

inline bool is_terminal(TaskState s) {
  return s == TaskState::done || s == TaskState::failed || s == TaskState::lost;
}

struct Timestamps {
  std::optional<Micros> queued;
  std::optional<Micros> scheduled;
  std::optional<Micros> launch_start;
  std::optional<Micros> exec_start;
  std::optional<Micros> exec_end;
  std::optional<Micros> done;

  bool operator==(const Timestamps&) const = default;
};

struct TaskRecord {
  TaskId id{};
  std::string name;
  TaskState state = TaskState::queued;
  Timestamps ts;
  int cores = 0;
  int gpus = 0;
  int credit = 1;
  Placement placement;
  // When the placement started holding its slots.
  std::optional<Micros> placed_at;
  std::optional<int> partition;
  std::vector<TaskState> history;

  bool terminal() const { return is_terminal(state); }
};

}  // namespace rct
