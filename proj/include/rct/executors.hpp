#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "event_log.hpp"
#include "event_loop.hpp"
#include "resource.hpp"
#include "rng.hpp"
#include "scheduler.hpp"
#include "task.hpp"

namespace rct {

enum class BackendKind { direct, partitioned, bulk };
enum class Flavor { sim, real };

inline std::string_view to_string(BackendKind b) {
  switch (b) {
    case BackendKind::direct: return "direct";
    case BackendKind::partitioned: return "partitioned";
    case BackendKind::bulk: return "bulk";
  }
  return "?";
}

// Multi-partition execution (one persistent runtime per partition).
// Partitions start one after another; each start costs
// per_partition_start_cost + post_start_sleep seconds.
struct PartitionPlan {
  int partition_count = 1;
  int nodes_per_partition = 1;
  int max_tasks_per_partition = std::numeric_limits<int>::max();
  double per_partition_start_cost = 0.5;
  double post_start_sleep = 10.0;
  double per_launch_delay = 0.1;

  bool operator==(const PartitionPlan&) const = default;
};

// Partitions larger than these limits are unstable and may fail. The
// probabilities are per partition and are calibration knobs.
struct StabilityLimits {
  int stable_max_nodes = 50;
  int stable_max_tasks = 200;
  double startup_failure = 0.03;
  double internal_failure = 0.01;
  double lost_connection = 0.01;
  bool inject = true;

  bool operator==(const StabilityLimits&) const = default;

  bool exceeded_by(const PartitionPlan& p) const {
    return p.nodes_per_partition >= stable_max_nodes || p.max_tasks_per_partition >= stable_max_tasks;
  }
};

struct BulkBackendConfig {
  // Tasks per second; infinity disables the cap.
  double scheduling_rate = 14.21;
  double startup_cost = 0.0;

  bool operator==(const BulkBackendConfig&) const = default;
};

struct ExecutorConfig {
  BackendKind backend = BackendKind::direct;
  // Delay between consecutive launches of one lane (direct backend; the
  // partitioned backend uses its plan's per_launch_delay).
  double launch_delay = 0.0;
  // Number of executor components, each with one serialized launch lane.
  int lanes = 1;
  PartitionPlan partitions;
  StabilityLimits stability;
  BulkBackendConfig bulk;

  bool operator==(const ExecutorConfig&) const = default;
};

enum class FailureKind { internal, lost_connection };

struct PartitionHandle {
  int id = 0;
  std::vector<int> node_ids;
  bool alive = true;
  Micros started_at = 0;
  Micros ready_at = 0;
  // Fires when the partition's n-th launch happens.
  std::optional<std::pair<int, FailureKind>> failure;
};

struct PartitionStartup {
  std::vector<PartitionHandle> partitions;
  Micros elapsed = 0;
};

inline void validate(const PartitionPlan& p, int pilot_nodes) {
  if (p.partition_count < 1) throw InvalidSpec("partition_count must be >= 1");
  if (p.nodes_per_partition < 1) throw InvalidSpec("nodes_per_partition must be >= 1");
  if (static_cast<long long>(p.nodes_per_partition) * p.partition_count > pilot_nodes)
    throw InvalidSpec("partition plan needs " + std::to_string(p.nodes_per_partition * p.partition_count) +
                      " nodes, pilot has " + std::to_string(pilot_nodes));
  if (p.max_tasks_per_partition < 1) throw InvalidSpec("max_tasks_per_partition must be >= 1");
  if (p.per_partition_start_cost < 0 || p.post_start_sleep < 0 || p.per_launch_delay < 0)
    throw InvalidSpec("partition costs must be >= 0");
}

inline void validate(const StabilityLimits& s) {
  for (double p : {s.startup_failure, s.internal_failure, s.lost_connection})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidSpec("failure probabilities must lie in [0,1]");
}

// Sequential partition startup beginning at t0. Failure draws only happen
// for plans beyond the stability limits.
inline PartitionStartup start_partitions(int pilot_nodes, const PartitionPlan& plan, const StabilityLimits& limits,
                                         Rng& rng, Micros t0 = 0) {
  validate(plan, pilot_nodes);
  validate(limits);
  PartitionStartup out;
  const Micros step = from_seconds(plan.per_partition_start_cost + plan.post_start_sleep);
  const bool unstable = limits.inject && limits.exceeded_by(plan);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Micros t = t0;
  for (int k = 0; k < plan.partition_count; ++k) {
    PartitionHandle h;
    h.id = k;
    for (int i = 0; i < plan.nodes_per_partition; ++i) h.node_ids.push_back(k * plan.nodes_per_partition + i);
    h.started_at = t;
    t += step;
    h.ready_at = t;
    if (unstable) {
      const double a = u(rng);
      const double b = u(rng);
      const double c = u(rng);
      std::uniform_int_distribution<int> when(1, plan.max_tasks_per_partition);
      const int wi = when(rng);
      const int wl = when(rng);
      if (a < limits.startup_failure) {
        h.alive = false;
      } else if (b < limits.internal_failure && (!(c < limits.lost_connection) || wi <= wl)) {
        h.failure = std::pair{wi, FailureKind::internal};
      } else if (c < limits.lost_connection) {
        h.failure = std::pair{wl, FailureKind::lost_connection};
      }
    }
    out.partitions.push_back(std::move(h));
  }
  out.elapsed = t - t0;
  return out;
}

// Pilot agent: owns the pilot's resources, the scheduler and one backend.
// Every state transition is written to the event log.
class Agent {
 public:
  using OnTerminal = std::function<void(const TaskRecord&)>;

  Agent(EventLoop& loop, EventLog& log, PilotDescription pilot, SchedulerConfig sched, ExecutorConfig exec,
        std::uint64_t seed)
      : loop_(loop),
        log_(log),
        pilot_(acquire(pilot)),
        sched_cfg_(std::move(sched)),
        exec_(std::move(exec)),
        rng_(make_stream(seed, stream::failures)),
        sched_(exec_.backend == BackendKind::bulk ? fifo(sched_cfg_) : sched_cfg_,
               pilot_.desc.resource.nodes.front()) {
    if (exec_.lanes < 1) throw InvalidSpec("executor lanes must be >= 1");
    // noop hands placement to the backend; only the bulk backend places.
    if (sched_cfg_.algorithm == Algorithm::noop && exec_.backend != BackendKind::bulk)
      throw InvalidSpec("the noop scheduler requires the bulk backend");
    if (exec_.launch_delay < 0) throw InvalidSpec("launch_delay must be >= 0");
    if (exec_.backend == BackendKind::partitioned) {
      validate(exec_.partitions, static_cast<int>(pilot_.nodes.size()));
      validate(exec_.stability);
    }
    if (exec_.backend == BackendKind::bulk && !(exec_.bulk.scheduling_rate > 0.0))
      throw InvalidSpec("bulk scheduling_rate must be > 0");
    lanes_.resize(static_cast<std::size_t>(exec_.lanes));
  }

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  void start() {
    if (started_) return;
    started_ = true;
    const auto& r = pilot_.desc.resource;
    log_.pilot_start(loop_.now(), r, r.usable_cores(), r.gpus());
    walltime_timer_ = loop_.at(pilot_.deadline, [this] { expire(); });
    loop_.at(pilot_.clock, [this] { bootstrap(); });
  }

  TaskId next_id() { return TaskId{next_id_++}; }

  void submit(TaskDescription t, OnTerminal cb = {}) {
    if (to_int(t.id) == 0) t.id = next_id();
    next_id_ = std::max(next_id_, to_int(t.id) + 1);
    validate(t);
    const std::uint64_t key = to_int(t.id);
    if (entries_.contains(key)) throw InvalidSpec("duplicate task id " + std::to_string(key));
    Entry& e = entries_[key];
    e.rec.id = t.id;
    e.rec.name = t.name;
    e.rec.cores = t.total_cores();
    e.rec.gpus = t.gpus;
    e.rec.credit = t.credit;
    e.cb = std::move(cb);
    e.desc = std::move(t);
    transition(e, TaskState::queued, loop_.now());
    e.rec.ts.queued = loop_.now();
    log_.task_event(loop_.now(), e.rec);
    ++outstanding_;

    if (ended_) {
      finish(e, TaskState::lost, loop_.now());
      return;
    }
    try {
      sched_.check_capacity(e.desc, max_group_nodes());
    } catch (const Unschedulable&) {
      finish(e, TaskState::failed, loop_.now());
      return;
    }
    sched_.enqueue(e.desc);
    request_pass();
  }

  // Tears the pilot down now; tasks still in flight are marked lost.
  void shutdown() {
    if (ended_) return;
    loop_.cancel(walltime_timer_);
    teardown(loop_.now());
  }

  bool started() const { return started_; }
  bool ended() const { return ended_; }
  bool ready() const { return ready_; }
  std::optional<Micros> ready_at() const { return ready_at_; }
  std::size_t outstanding() const { return outstanding_; }
  const Pilot& pilot() const { return pilot_; }
  const std::vector<PartitionHandle>& partitions() const { return partitions_; }
  const ExecutorConfig& executor() const { return exec_; }
  EventLoop& loop() { return loop_; }

  const TaskRecord& record(TaskId id) const { return entries_.at(to_int(id)).rec; }

  std::vector<TaskRecord> records() const {
    std::vector<TaskRecord> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(e.rec);
    return out;
  }

 private:
  struct Entry {
    TaskDescription desc;
    TaskRecord rec;
    OnTerminal cb;
    std::optional<EventLoop::Handle> payload;
  };
  struct Lane {
    std::deque<std::uint64_t> queue;
    bool busy = false;
  };

  static SchedulerConfig fifo(SchedulerConfig c) {
    c.prioritize_large = false;
    return c;
  }

  int max_group_nodes() const {
    if (exec_.backend == BackendKind::partitioned) return exec_.partitions.nodes_per_partition;
    return static_cast<int>(pilot_.nodes.size());
  }

  void transition(Entry& e, TaskState s, Micros) {
    e.rec.state = s;
    e.rec.history.push_back(s);
  }

  void bootstrap() {
    if (ended_) return;
    const Micros now = loop_.now();
    switch (exec_.backend) {
      case BackendKind::direct:
        groups_ = whole_pilot_group(pilot_.nodes.size());
        become_ready(now);
        break;
      case BackendKind::bulk:
        groups_ = whole_pilot_group(pilot_.nodes.size());
        loop_.at(now + from_seconds(exec_.bulk.startup_cost), [this] { become_ready(loop_.now()); });
        break;
      case BackendKind::partitioned: {
        auto startup = start_partitions(static_cast<int>(pilot_.nodes.size()), exec_.partitions, exec_.stability,
                                         rng_, now);
        partitions_ = std::move(startup.partitions);
        launches_.assign(partitions_.size(), 0);
        for (const auto& p : partitions_) {
          NodeGroup g;
          g.node_ids = p.node_ids;
          g.alive = false;
          if (exec_.partitions.max_tasks_per_partition != std::numeric_limits<int>::max())
            g.quota = exec_.partitions.max_tasks_per_partition;
          groups_.push_back(std::move(g));
          const int id = p.id;
          const bool alive = p.alive;
          loop_.at(p.ready_at, [this, id, alive] {
            if (ended_) return;
            log_.partition_event(loop_.now(), id, alive ? "started" : "failed", alive ? "" : "startup_failure");
            groups_[static_cast<std::size_t>(id)].alive = alive;
          });
        }
        loop_.at(now + startup.elapsed, [this] { become_ready(loop_.now()); });
        break;
      }
    }
  }

  void become_ready(Micros now) {
    if (ended_) return;
    ready_ = true;
    ready_at_ = now;
    log_.pilot_event(now, "ready");
    next_admission_ = static_cast<double>(now);
    request_pass();
  }

  void request_pass() {
    if (!ready_ || ended_ || pass_pending_) return;
    pass_pending_ = true;
    loop_.at(loop_.now(), [this] {
      pass_pending_ = false;
      if (exec_.backend == BackendKind::bulk)
        admit();
      else
        do_pass();
    });
  }

  void do_pass() {
    if (ended_ || sched_.empty()) return;
    auto decisions = sched_.pass(pilot_.nodes, groups_);
    const Micros now = loop_.now();
    for (auto& d : decisions) {
      Entry& e = entries_.at(to_int(d.task.id));
      e.rec.placement = std::move(d.placement);
      e.rec.partition = e.rec.placement.partition;
      e.rec.placed_at = now;
      e.rec.ts.scheduled = now;
      transition(e, TaskState::scheduled, now);
      log_.task_event(now, e.rec, true);
      const std::size_t lane = static_cast<std::size_t>(e.rec.partition.value_or(0)) % lanes_.size();
      lanes_[lane].queue.push_back(to_int(d.task.id));
      kick_lane(lane);
    }
  }

  Micros launch_delay() const {
    return from_seconds(exec_.backend == BackendKind::partitioned ? exec_.partitions.per_launch_delay
                                                                  : exec_.launch_delay);
  }

  void kick_lane(std::size_t l) {
    Lane& lane = lanes_[l];
    while (!lane.busy && !lane.queue.empty() && !ended_) {
      const std::uint64_t key = lane.queue.front();
      lane.queue.pop_front();
      Entry& e = entries_.at(key);
      if (e.rec.state != TaskState::scheduled) continue;
      const Micros now = loop_.now();
      e.rec.ts.launch_start = now;
      transition(e, TaskState::launching, now);
      log_.task_event(now, e.rec);
      lane.busy = true;
      loop_.at(now + launch_delay(), [this, l, key] {
        lanes_[l].busy = false;
        launched(key);
        kick_lane(l);
      });
    }
  }

  void launched(std::uint64_t key) {
    if (ended_) return;
    Entry& e = entries_.at(key);
    if (e.rec.state != TaskState::launching) return;
    const Micros now = loop_.now();
    if (e.rec.partition) {
      const auto p = static_cast<std::size_t>(*e.rec.partition);
      if (!groups_[p].alive) {
        finish(e, TaskState::failed, now);
        return;
      }
      ++launches_[p];
      const auto& f = partitions_[p].failure;
      if (f && launches_[p] == f->first) {
        partition_failure(p, f->second, now);
        return;
      }
    }
    start_payload(e, now);
  }

  void start_payload(Entry& e, Micros now) {
    e.rec.ts.exec_start = now;
    transition(e, TaskState::running, now);
    log_.task_event(now, e.rec);
    const std::uint64_t key = to_int(e.rec.id);
    e.payload = loop_.run_payload(e.desc.payload, [this, key](Micros end, bool ok) { exec_end(key, end, ok); });
  }

  void exec_end(std::uint64_t key, Micros end, bool ok) {
    Entry& e = entries_.at(key);
    if (e.rec.state != TaskState::running) return;
    e.payload.reset();
    e.rec.ts.exec_end = end;
    finish(e, ok ? TaskState::done : TaskState::failed, std::max(end, loop_.now()));
  }

  void partition_failure(std::size_t p, FailureKind kind, Micros now) {
    groups_[p].alive = false;
    log_.partition_event(now, static_cast<int>(p), "dead",
                         kind == FailureKind::internal ? "internal_failure" : "lost_connection");
    const TaskState outcome = kind == FailureKind::internal ? TaskState::failed : TaskState::lost;
    for (auto& [key, e] : entries_) {
      if (e.rec.partition != static_cast<int>(p) || e.rec.terminal() || e.rec.placement.empty()) continue;
      if (e.rec.state == TaskState::running) {
        loop_.kill_payload(*e.payload);
        e.payload.reset();
        e.rec.ts.exec_end = now;
      }
      finish(e, outcome, now);
    }
  }

  // Bulk backend: tasks are admitted FCFS at no more than scheduling_rate.
  void admit() {
    if (ended_ || admission_pending_) return;
    while (!sched_.empty()) {
      const Micros now = loop_.now();
      const Micros allowed = std::max(now, static_cast<Micros>(std::llround(next_admission_)));
      if (allowed > now) {
        admission_pending_ = true;
        loop_.at(allowed, [this] {
          admission_pending_ = false;
          admit();
        });
        return;
      }
      auto decisions = sched_.pass(pilot_.nodes, groups_, 1);
      if (decisions.empty()) return;  // resumes on the next release
      auto& d = decisions.front();
      Entry& e = entries_.at(to_int(d.task.id));
      e.rec.placement = std::move(d.placement);
      e.rec.placed_at = now;
      e.rec.ts.scheduled = now;
      transition(e, TaskState::scheduled, now);
      log_.task_event(now, e.rec, true);
      e.rec.ts.launch_start = now;
      transition(e, TaskState::launching, now);
      log_.task_event(now, e.rec);
      start_payload(e, now);
      const double period = std::isinf(exec_.bulk.scheduling_rate) ? 0.0 : 1e6 / exec_.bulk.scheduling_rate;
      next_admission_ = std::max(static_cast<double>(now), next_admission_) + period;
    }
  }

  void finish(Entry& e, TaskState outcome, Micros at) {
    if (!e.rec.placement.empty() && e.rec.state != TaskState::queued) {
      release(pilot_.nodes, e.rec.placement);
      sched_.on_release(e.desc, e.rec.placement);
    }
    e.rec.ts.done = at;
    transition(e, outcome, at);
    log_.task_event(at, e.rec);
    --outstanding_;
    if (e.cb) {
      auto cb = e.cb;
      cb(e.rec);
    }
    request_pass();
  }

  void expire() {
    if (ended_) return;
    teardown(loop_.now());
  }

  void teardown(Micros now) {
    std::vector<std::uint64_t> live;
    for (auto& [key, e] : entries_)
      if (!e.rec.terminal()) live.push_back(key);
    ended_ = true;
    for (auto key : live) {
      Entry& e = entries_.at(key);
      if (e.rec.terminal()) continue;
      if (e.rec.state == TaskState::running) {
        loop_.kill_payload(*e.payload);
        e.payload.reset();
        e.rec.ts.exec_end = now;
      }
      finish(e, TaskState::lost, now);
    }
    sched_.drain();
    log_.pilot_event(now, "end");
  }

  EventLoop& loop_;
  EventLog& log_;
  Pilot pilot_;
  SchedulerConfig sched_cfg_;
  ExecutorConfig exec_;
  Rng rng_;
  ContinuousScheduler sched_;
  std::vector<NodeGroup> groups_;
  std::vector<PartitionHandle> partitions_;
  std::vector<int> launches_;
  std::vector<Lane> lanes_;
  std::map<std::uint64_t, Entry> entries_;
  std::uint64_t next_id_ = 1;
  std::size_t outstanding_ = 0;
  EventLoop::Handle walltime_timer_ = 0;
  bool started_ = false;
  bool ready_ = false;
  bool ended_ = false;
  bool pass_pending_ = false;
  bool admission_pending_ = false;
  double next_admission_ = 0.0;
  std::optional<Micros> ready_at_;
};

}  // namespace rct
