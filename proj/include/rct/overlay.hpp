#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "error.hpp"
#include "event_log.hpp"
#include "event_loop.hpp"
#include "resource.hpp"
#include "rng.hpp"
#include "task.hpp"
#include "workload.hpp"

namespace rct {

struct MasterConfig {
  int nodes_per_master = 100;
  // Max execution units per dispatch message.
  int bulk_size = 1;
  // Units a worker may hold per slot (running + queued locally).
  int queue_depth = 2;
  // One-way latency of every master<->worker message, seconds.
  double message_latency = 0.0;

  bool operator==(const MasterConfig&) const = default;
};

inline void validate(const MasterConfig& c) {
  if (c.nodes_per_master < 1) throw ConfigError("overlay.nodes_per_master", "must be >= 1");
  if (c.bulk_size < 1) throw ConfigError("overlay.bulk_size", "must be >= 1");
  if (c.queue_depth < 1) throw ConfigError("overlay.queue_depth", "must be >= 1");
  if (!(c.message_latency >= 0.0)) throw ConfigError("overlay.message_latency", "must be >= 0");
}

// One execution unit: bundle_size work items run as a single payload.
struct WorkUnit {
  std::uint64_t id = 0;
  Micros duration = 0;
  int credit = 1;

  bool operator==(const WorkUnit&) const = default;
};

struct WorkItemBatch {
  int master_id = 0;
  // Work-item id range [first_item, first_item + item_count).
  std::uint64_t first_item = 0;
  std::uint64_t item_count = 0;
  int bundle_size = 1;
  std::vector<WorkUnit> units;
};

struct WorkerState {
  int worker_id = 0;
  int node_id = 0;
  int master_id = 0;
  // Execution slots of the node (cores or GPUs, depending on the unit shape).
  int slots = 0;
  // Units the master may keep in flight on this worker.
  int capacity = 0;
  int in_flight = 0;
  std::uint64_t completed = 0;
  bool alive = true;

  bool operator==(const WorkerState&) const = default;
};

struct OverlayLayout {
  struct Master {
    int master_id = 0;
    int node_id = 0;
    std::vector<int> workers;
  };
  std::vector<Master> masters;
  std::vector<WorkerState> workers;
};

// Execution slots one node offers to units of `shape` (single rank).
inline int unit_slots(const NodeSpec& node, const TaskShape& shape) {
  TaskDescription t;
  t.cpu_cores_per_rank = shape.cpu_cores_per_rank;
  t.ranks = 1;
  t.gpus = shape.gpus;
  int k = node.usable_cpu_cores / std::max(1, t.cores_per_rank());
  if (shape.gpus > 0) k = std::min(k, node.gpus / shape.gpus);
  return k;
}

// Masters take the first nodes, one worker on every other node; workers are
// dealt to masters round-robin.
inline OverlayLayout spawn_overlay(int node_count, const NodeSpec& node, const MasterConfig& cfg,
                                   const TaskShape& shape = {}) {
  validate(cfg);
  if (shape.ranks != 1) throw ConfigError("workload.shape.ranks", "overlay units are single-rank");
  const int masters = (node_count + cfg.nodes_per_master - 1) / cfg.nodes_per_master;
  const int workers = node_count - masters;
  if (masters < 1 || workers < masters)
    throw ConfigError("resource.nodes", std::to_string(node_count) + " nodes cannot host " +
                                            std::to_string(masters) + " master(s) and a worker for each");
  const int slots = unit_slots(node, shape);
  if (slots < 1) throw ConfigError("workload.shape", "a unit does not fit on one node");
  OverlayLayout out;
  for (int m = 0; m < masters; ++m) out.masters.push_back({m, m, {}});
  for (int w = 0; w < workers; ++w) {
    WorkerState ws;
    ws.worker_id = w;
    ws.node_id = masters + w;
    ws.master_id = w % masters;
    ws.slots = slots;
    ws.capacity = slots * cfg.queue_depth;
    out.workers.push_back(ws);
    out.masters[static_cast<std::size_t>(ws.master_id)].workers.push_back(w);
  }
  return out;
}

inline OverlayLayout spawn_overlay(const Pilot& pilot, const MasterConfig& cfg, const TaskShape& shape = {}) {
  return spawn_overlay(static_cast<int>(pilot.nodes.size()), pilot.desc.resource.nodes.front(), cfg, shape);
}

// Master m owns the m-th contiguous block of the item space.
inline std::pair<std::uint64_t, std::uint64_t> master_block(std::uint64_t items, int masters, int m) {
  const auto M = static_cast<std::uint64_t>(masters);
  const auto k = static_cast<std::uint64_t>(m);
  const std::uint64_t first = items * k / M;
  const std::uint64_t last = items * (k + 1) / M;
  return {first, last - first};
}

// A master's bookkeeping, free of any timing: pending units, units in flight
// per worker, and the counters behind the conservation law
//   dispatched = completed + in_flight + lost.
class MasterLedger {
 public:
  struct Message {
    int master_id = 0;
    int worker_id = 0;
    std::vector<WorkUnit> units;
  };
  struct LossOutcome {
    std::vector<WorkUnit> requeued;
    std::vector<WorkUnit> failed;
  };

  MasterLedger(int master_id, std::vector<WorkUnit> units, int bulk_size, int max_attempts = 2)
      : id_(master_id), bulk_(bulk_size), max_attempts_(max_attempts) {
    if (bulk_size < 1) throw InvalidSpec("bulk_size must be >= 1");
    for (auto& u : units) {
      if (!known_.emplace(u.id, u).second) throw InvalidSpec("duplicate unit id " + std::to_string(u.id));
      pending_.push_back(u.id);
    }
  }

  int id() const { return id_; }

  void add_worker(const WorkerState& w) {
    if (w.capacity < 1) throw InvalidSpec("worker capacity must be >= 1");
    auto [it, fresh] = workers_.try_emplace(w.worker_id, w);
    if (!fresh) throw ProtocolError("worker " + std::to_string(w.worker_id) + " registered twice");
    it->second.in_flight = 0;
    it->second.alive = true;
    refresh(it->second);
  }

  // Fills eligible workers (in_flight below half their capacity), always
  // serving the worker with the most free capacity first.
  std::vector<Message> dispatch_bulk() {
    std::vector<Message> out;
    if (pending_.empty()) return out;
    if (alive_workers() == 0) throw OverlayDrained("master " + std::to_string(id_) + ": all workers dead");
    std::vector<int> touched;
    while (!pending_.empty() && !eligible_.empty()) {
      const auto [neg_free, wid] = *eligible_.begin();
      touched.push_back(wid);
      WorkerState& w = workers_.at(wid);
      const int n = std::min<int>({bulk_, -neg_free, static_cast<int>(pending_.size())});
      Message msg{id_, wid, {}};
      for (int i = 0; i < n; ++i) {
        const std::uint64_t uid = pending_.front();
        pending_.pop_front();
        msg.units.push_back(known_.at(uid));
        where_[uid] = wid;
        ++attempts_[uid];
      }
      unlist(wid);
      w.in_flight += n;
      dispatched_ += static_cast<std::uint64_t>(n);
      // Keep filling this worker up to capacity within the same round.
      if (w.in_flight < w.capacity) list(w.worker_id, w.capacity - w.in_flight);
      out.push_back(std::move(msg));
    }
    // Workers above the watermark wait for the next round.
    for (int wid : touched) {
      const WorkerState& w = workers_.at(wid);
      if (2 * w.in_flight >= w.capacity) unlist(wid);
    }
    return out;
  }

  // Valid ids are applied; unknown or duplicate ids leave the ledger as it
  // was and raise ProtocolError after the valid part is applied.
  void report_completion(int worker_id, std::span<const std::uint64_t> ids) {
    auto wit = workers_.find(worker_id);
    std::string bad;
    for (auto uid : ids) {
      auto loc = where_.find(uid);
      if (wit == workers_.end() || loc == where_.end() || loc->second != worker_id) {
        const bool dup = done_.contains(uid);
        bad += (bad.empty() ? "" : ", ") + std::string(dup ? "duplicate " : "unknown ") + std::to_string(uid);
        ++protocol_errors_;
        continue;
      }
      where_.erase(loc);
      done_.insert(uid);
      ++completed_;
      --wit->second.in_flight;
      ++wit->second.completed;
    }
    if (wit != workers_.end()) refresh(wit->second);
    if (!bad.empty())
      throw ProtocolError("master " + std::to_string(id_) + ", worker " + std::to_string(worker_id) + ": " + bad);
  }

  // Units in flight on a dead worker are lost; each unit is requeued once.
  LossOutcome worker_lost(int worker_id) {
    LossOutcome out;
    auto wit = workers_.find(worker_id);
    if (wit == workers_.end() || !wit->second.alive) return out;
    WorkerState& w = wit->second;
    w.alive = false;
    unlist(worker_id);
    std::vector<std::uint64_t> gone;
    for (const auto& [uid, wid] : where_)
      if (wid == worker_id) gone.push_back(uid);
    for (auto uid : gone) {
      where_.erase(uid);
      ++lost_;
      if (attempts_[uid] < max_attempts_) {
        pending_.push_back(uid);
        out.requeued.push_back(known_.at(uid));
      } else {
        ++failed_;
        out.failed.push_back(known_.at(uid));
      }
    }
    w.in_flight = 0;
    return out;
  }

  // Removes everything still pending (e.g. when the overlay is drained).
  std::vector<WorkUnit> take_pending() {
    std::vector<WorkUnit> out;
    for (auto uid : pending_) out.push_back(known_.at(uid));
    pending_.clear();
    return out;
  }

  std::size_t pending() const { return pending_.size(); }
  std::uint64_t dispatched() const { return dispatched_; }
  std::uint64_t completed() const { return completed_; }
  std::uint64_t in_flight() const { return where_.size(); }
  std::uint64_t lost() const { return lost_; }
  std::uint64_t failed() const { return failed_; }
  std::uint64_t protocol_errors() const { return protocol_errors_; }
  bool conserved() const { return dispatched_ == completed_ + in_flight() + lost_; }
  bool finished() const { return pending_.empty() && where_.empty(); }

  const std::map<int, WorkerState>& workers() const { return workers_; }
  const WorkerState& worker(int id) const { return workers_.at(id); }

  std::size_t alive_workers() const {
    return static_cast<std::size_t>(
        std::count_if(workers_.begin(), workers_.end(), [](const auto& kv) { return kv.second.alive; }));
  }

  bool operator==(const MasterLedger&) const = default;

 private:
  void list(int wid, int free) {
    eligible_.insert({-free, wid});
    key_[wid] = -free;
  }
  void unlist(int wid) {
    auto it = key_.find(wid);
    if (it == key_.end()) return;
    eligible_.erase({it->second, wid});
    key_.erase(it);
  }
  void refresh(const WorkerState& w) {
    unlist(w.worker_id);
    if (w.alive && 2 * w.in_flight < w.capacity) list(w.worker_id, w.capacity - w.in_flight);
  }

  int id_;
  int bulk_;
  int max_attempts_;
  std::map<std::uint64_t, WorkUnit> known_;
  std::deque<std::uint64_t> pending_;
  std::map<std::uint64_t, int> where_;
  std::map<std::uint64_t, int> attempts_;
  std::set<std::uint64_t> done_;
  std::map<int, WorkerState> workers_;
  std::set<std::pair<int, int>> eligible_;
  std::map<int, int> key_;
  std::uint64_t dispatched_ = 0;
  std::uint64_t completed_ = 0;
  std::uint64_t lost_ = 0;
  std::uint64_t failed_ = 0;
  std::uint64_t protocol_errors_ = 0;
};

// Execution units of a workload: items grouped into bundles, one sampled
// duration per bundle. Unit ids start at 1.
inline std::vector<WorkUnit> make_units(std::uint64_t items, int bundle_size, const DurationModel& durations,
                                        std::uint64_t seed) {
  if (items < 1) throw InvalidSpec("workload needs at least one item");
  if (bundle_size < 1) throw InvalidSpec("bundle_size must be >= 1");
  const auto b = static_cast<std::uint64_t>(bundle_size);
  const std::uint64_t n = (items + b - 1) / b;
  DurationModel m = durations;
  m.seed = seed;
  const auto d = sample_durations(m, static_cast<std::size_t>(n));
  std::vector<WorkUnit> out;
  out.reserve(d.size());
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t credit = std::min(b, items - i * b);
    out.push_back(WorkUnit{i + 1, from_seconds(d[i]), static_cast<int>(credit)});
  }
  return out;
}

struct OverlayStats {
  std::uint64_t units = 0;
  std::uint64_t done = 0;
  std::uint64_t failed = 0;
  std::uint64_t lost = 0;
  std::uint64_t dispatched = 0;
  std::uint64_t messages = 0;
  std::uint64_t protocol_errors = 0;
  bool drained = false;
};

// Masters and workers as actors on an event loop. They share nothing and
// talk only through messages delivered after `message_latency`.
class Overlay {
 public:
  Overlay(EventLoop& loop, EventLog& log, PilotDescription pilot, MasterConfig cfg, const WorkloadPreset& workload,
          std::uint64_t seed)
      : loop_(loop),
        log_(log),
        pilot_(acquire(pilot)),
        cfg_(cfg),
        shape_(workload.shape),
        layout_(spawn_overlay(pilot_, cfg_, shape_)),
        latency_(from_seconds(cfg_.message_latency)) {
    auto units = make_units(workload.item_count, workload.bundle_size, workload.durations, seed);
    const int M = static_cast<int>(layout_.masters.size());
    const auto n = static_cast<std::uint64_t>(units.size());
    records_.resize(units.size());
    for (int m = 0; m < M; ++m) {
      auto [first, count] = master_block(n, M, m);
      std::vector<WorkUnit> block(units.begin() + static_cast<std::ptrdiff_t>(first),
                                  units.begin() + static_cast<std::ptrdiff_t>(first + count));
      masters_.emplace_back(m, std::move(block), cfg_.bulk_size);
    }
    TaskDescription probe;
    probe.cpu_cores_per_rank = shape_.cpu_cores_per_rank;
    probe.gpus = shape_.gpus;
    unit_cores_ = probe.cores_per_rank();
    for (const auto& u : units) {
      TaskRecord& r = records_[u.id - 1];
      r.id = TaskId{u.id};
      r.name = "unit." + std::to_string(u.id);
      r.cores = unit_cores_;
      r.gpus = shape_.gpus;
      r.credit = u.credit;
    }
    for (const auto& ws : layout_.workers) {
      Worker w;
      w.state = ws;
      for (int s = 0; s < ws.slots; ++s) w.free_slots.insert(s);
      workers_.push_back(std::move(w));
    }
    units_ = std::move(units);
  }

  Overlay(const Overlay&) = delete;
  Overlay& operator=(const Overlay&) = delete;

  void start() {
    const auto& node = pilot_.desc.resource.nodes.front();
    const auto W = static_cast<long long>(layout_.workers.size());
    log_.pilot_start(loop_.now(), pilot_.desc.resource, W * node.usable_cpu_cores, W * node.gpus,
                     static_cast<int>(layout_.masters.size()));
    const Micros now = loop_.now();
    for (auto& r : records_) {
      r.ts.queued = now;
      set_state(r, TaskState::queued, now);
    }
    walltime_ = loop_.at(pilot_.deadline, [this] { teardown(); });
    loop_.at(pilot_.clock, [this] { bootstrap(); });
  }

  // Worker failure injected at the current instant.
  void kill_worker(int worker_id) {
    Worker& w = workers_.at(static_cast<std::size_t>(worker_id));
    if (!w.state.alive || ended_) return;
    w.state.alive = false;
    const Micros now = loop_.now();
    for (auto& [slot, run] : w.running) {
      loop_.kill_payload(run.payload);
      records_[run.unit - 1].ts.exec_end = now;
    }
    w.running.clear();
    w.local.clear();
    send(w.state.master_id, [this, worker_id](int m) { on_worker_lost(m, worker_id); });
  }

  bool ended() const { return ended_; }
  const OverlayLayout& layout() const { return layout_; }
  const std::vector<MasterLedger>& masters() const { return masters_; }
  const std::vector<TaskRecord>& records() const { return records_; }
  const std::vector<WorkUnit>& units() const { return units_; }

  OverlayStats stats() const {
    OverlayStats s;
    s.units = units_.size();
    for (const auto& r : records_) {
      s.done += r.state == TaskState::done;
      s.failed += r.state == TaskState::failed;
      s.lost += r.state == TaskState::lost;
    }
    for (const auto& m : masters_) {
      s.dispatched += m.dispatched();
      s.protocol_errors += m.protocol_errors();
    }
    s.messages = messages_;
    s.drained = drained_;
    return s;
  }

  bool conserved() const {
    return std::all_of(masters_.begin(), masters_.end(), [](const auto& m) { return m.conserved(); });
  }

  // Completed items credited per master (bundle aware).
  std::uint64_t credited() const {
    std::uint64_t n = 0;
    for (const auto& r : records_)
      if (r.state == TaskState::done) n += static_cast<std::uint64_t>(r.credit);
    return n;
  }

 private:
  struct Running {
    std::uint64_t unit = 0;
    EventLoop::Handle payload = 0;
  };
  struct Worker {
    WorkerState state;
    std::deque<WorkUnit> local;
    std::set<int> free_slots;
    std::map<int, Running> running;
  };

  template <class F>
  void send(int to, F&& f) {
    ++messages_;
    loop_.at(loop_.now() + latency_, [to, f = std::forward<F>(f)] { f(to); });
  }

  void set_state(TaskRecord& r, TaskState s, Micros t, bool with_placement = false) {
    r.state = s;
    r.history.push_back(s);
    log_.task_event(t, r, with_placement);
  }

  void bootstrap() {
    if (ended_) return;
    log_.pilot_event(loop_.now(), "ready");
    for (const auto& w : workers_) {
      const WorkerState reg = w.state;
      send(reg.master_id, [this, reg](int m) { on_register(m, reg); });
    }
  }

  // --- master side -------------------------------------------------------

  void on_register(int m, const WorkerState& reg) {
    if (ended_) return;
    masters_[static_cast<std::size_t>(m)].add_worker(reg);
    dispatch(m);
  }

  void dispatch(int m) {
    if (ended_) return;
    MasterLedger& led = masters_[static_cast<std::size_t>(m)];
    std::vector<MasterLedger::Message> msgs;
    try {
      msgs = led.dispatch_bulk();
    } catch (const OverlayDrained&) {
      drained_ = true;
      for (const auto& u : led.take_pending()) finish(u.id, TaskState::lost, loop_.now());
      return;
    }
    const Micros now = loop_.now();
    for (auto& msg : msgs) {
      for (const auto& u : msg.units) {
        TaskRecord& r = records_[u.id - 1];
        r.ts.scheduled = now;
        set_state(r, TaskState::scheduled, now);
      }
      const int wid = msg.worker_id;
      send(wid, [this, units = std::move(msg.units)](int w) { on_dispatch(w, units); });
    }
  }

  void on_done(int m, int worker_id, std::uint64_t unit) {
    if (ended_) return;
    const std::uint64_t ids[] = {unit};
    masters_[static_cast<std::size_t>(m)].report_completion(worker_id, ids);
    dispatch(m);
    maybe_finish();
  }

  void on_worker_lost(int m, int worker_id) {
    if (ended_) return;
    auto outcome = masters_[static_cast<std::size_t>(m)].worker_lost(worker_id);
    const Micros now = loop_.now();
    for (const auto& u : outcome.requeued) {
      TaskRecord& r = records_[u.id - 1];
      r.ts = Timestamps{};
      r.ts.queued = now;
      r.placement = {};
      r.placed_at.reset();
      set_state(r, TaskState::queued, now);
    }
    for (const auto& u : outcome.failed) finish(u.id, TaskState::failed, now);
    dispatch(m);
    maybe_finish();
  }

  // --- worker side -------------------------------------------------------

  void on_dispatch(int w, const std::vector<WorkUnit>& units) {
    Worker& wk = workers_[static_cast<std::size_t>(w)];
    if (!wk.state.alive || ended_) return;  // the master learns of the loss separately
    const Micros now = loop_.now();
    for (const auto& u : units) {
      TaskRecord& r = records_[u.id - 1];
      r.ts.launch_start = now;
      set_state(r, TaskState::launching, now);
      wk.local.push_back(u);
    }
    fill_slots(w);
  }

  void fill_slots(int w) {
    Worker& wk = workers_[static_cast<std::size_t>(w)];
    while (!wk.local.empty() && !wk.free_slots.empty()) {
      const WorkUnit u = wk.local.front();
      wk.local.pop_front();
      const int slot = *wk.free_slots.begin();
      wk.free_slots.erase(wk.free_slots.begin());
      const Micros now = loop_.now();
      TaskRecord& r = records_[u.id - 1];
      r.placement = Placement{r.id, {slot_of(wk.state.node_id, slot)}, std::nullopt};
      r.placed_at = now;
      r.ts.exec_start = now;
      set_state(r, TaskState::running, now, true);
      const auto handle = loop_.run_payload(Payload{u.duration, {}}, [this, w, slot, uid = u.id](Micros end, bool ok) {
        on_exec_end(w, slot, uid, end, ok);
      });
      wk.running[slot] = Running{u.id, handle};
    }
  }

  NodeSlots slot_of(int node, int slot) const {
    NodeSlots s;
    s.node_id = node;
    for (int c = 0; c < unit_cores_; ++c) s.cores.push_back(slot * unit_cores_ + c);
    for (int g = 0; g < shape_.gpus; ++g) s.gpus.push_back(slot * shape_.gpus + g);
    return s;
  }

  void on_exec_end(int w, int slot, std::uint64_t unit, Micros end, bool ok) {
    Worker& wk = workers_[static_cast<std::size_t>(w)];
    if (!wk.state.alive || ended_) return;
    wk.running.erase(slot);
    wk.free_slots.insert(slot);
    records_[unit - 1].ts.exec_end = end;
    finish(unit, ok ? TaskState::done : TaskState::failed, std::max(end, loop_.now()));
    ++wk.state.completed;
    send(wk.state.master_id, [this, w, unit](int m) { on_done(m, w, unit); });
    fill_slots(w);
  }

  void finish(std::uint64_t unit, TaskState s, Micros t) {
    TaskRecord& r = records_[unit - 1];
    if (r.terminal()) return;
    r.ts.done = t;
    set_state(r, s, t);
    ++terminal_;
  }

  void maybe_finish() {
    if (ended_ || terminal_ < records_.size()) return;
    for (const auto& m : masters_)
      if (!m.finished()) return;
    loop_.cancel(walltime_);
    ended_ = true;
    log_.pilot_event(loop_.now(), "end");
  }

  void teardown() {
    if (ended_) return;
    const Micros now = loop_.now();
    for (auto& wk : workers_) {
      for (auto& [slot, run] : wk.running) {
        loop_.kill_payload(run.payload);
        records_[run.unit - 1].ts.exec_end = now;
      }
      wk.running.clear();
      wk.local.clear();
    }
    for (auto& r : records_)
      if (!r.terminal()) finish(to_int(r.id), TaskState::lost, now);
    ended_ = true;
    log_.pilot_event(now, "end");
  }

  EventLoop& loop_;
  EventLog& log_;
  Pilot pilot_;
  MasterConfig cfg_;
  TaskShape shape_;
  OverlayLayout layout_;
  Micros latency_;
  int unit_cores_ = 1;
  std::vector<WorkUnit> units_;
  std::vector<TaskRecord> records_;
  std::vector<MasterLedger> masters_;
  std::vector<Worker> workers_;
  std::size_t terminal_ = 0;
  std::uint64_t messages_ = 0;
  EventLoop::Handle walltime_ = 0;
  bool ended_ = false;
  bool drained_ = false;
};

}  // namespace rct
