#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "error.hpp"
#include "event_log.hpp"
#include "task.hpp"
#include "time.hpp"

namespace rct {

// --- utilization -----------------------------------------------------------

struct TimelinePoint {
  Micros t = 0;
  double core_busy = 0.0;
  double gpu_busy = 0.0;
};

struct UtilizationReport {
  double busy_core_seconds = 0.0;
  double busy_gpu_seconds = 0.0;
  double allocated_core_seconds = 0.0;
  double allocated_gpu_seconds = 0.0;
  double core_fraction = 0.0;
  double gpu_fraction = 0.0;
  double combined_fraction = 0.0;
  Micros span = 0;
  Micros bucket = kMicrosPerSecond;
  std::vector<TimelinePoint> timeline;
};

inline Micros pilot_end(const Trace& tr) {
  if (tr.pilot.end) return *tr.pilot.end;
  Micros last = tr.pilot.start;
  for (const auto& t : tr.tasks) {
    for (const auto& v : {t.ts.queued, t.ts.scheduled, t.ts.launch_start, t.ts.exec_start, t.ts.exec_end, t.ts.done})
      if (v) last = std::max(last, *v);
  }
  return last;
}

namespace detail {

inline double frac(long double num, long double den) {
  return den > 0 ? static_cast<double>(num / den) : 0.0;
}

// Executing interval of a task, if it ran.
inline std::optional<std::pair<Micros, Micros>> exec_interval(const TaskRecord& t) {
  if (!t.ts.exec_start || !t.ts.exec_end) return std::nullopt;
  return std::pair{*t.ts.exec_start, *t.ts.exec_end};
}

}  // namespace detail

// Busy slot-time over allocated slot-time. Capacity is the one recorded on
// the pilot start row; the span runs from pilot start to pilot end.
inline UtilizationReport utilization(const Trace& tr, std::optional<Micros> bucket = std::nullopt) {
  UtilizationReport rep;
  const Micros t0 = tr.pilot.start;
  const Micros t1 = pilot_end(tr);
  rep.span = std::max<Micros>(0, t1 - t0);
  rep.bucket = bucket.value_or(kMicrosPerSecond);
  if (rep.bucket <= 0) throw ValidationError("timeline bucket must be > 0");

  // Integer slot-microseconds keep this exact.
  long double busy_c = 0;
  long double busy_g = 0;
  std::vector<std::pair<Micros, std::pair<long long, long long>>> steps;
  for (const auto& t : tr.tasks) {
    auto iv = detail::exec_interval(t);
    if (!iv) continue;
    auto [a, b] = *iv;
    if (b < a) throw ValidationError("task " + std::to_string(to_int(t.id)) + ": exec_end before exec_start");
    a = std::clamp(a, t0, t1);
    b = std::clamp(b, t0, t1);
    if (b <= a) continue;
    busy_c += static_cast<long double>(b - a) * t.cores;
    busy_g += static_cast<long double>(b - a) * t.gpus;
    steps.push_back({a, {t.cores, t.gpus}});
    steps.push_back({b, {-t.cores, -t.gpus}});
  }
  const long double alloc_c = static_cast<long double>(rep.span) * tr.pilot.cores;
  const long double alloc_g = static_cast<long double>(rep.span) * tr.pilot.gpus;
  const long double us = kMicrosPerSecond;
  rep.busy_core_seconds = static_cast<double>(busy_c / us);
  rep.busy_gpu_seconds = static_cast<double>(busy_g / us);
  rep.allocated_core_seconds = static_cast<double>(alloc_c / us);
  rep.allocated_gpu_seconds = static_cast<double>(alloc_g / us);
  rep.core_fraction = detail::frac(busy_c, alloc_c);
  rep.gpu_fraction = detail::frac(busy_g, alloc_g);
  rep.combined_fraction = detail::frac(busy_c + busy_g, alloc_c + alloc_g);

  // Timeline: busy fraction per bucket via a sweep over step changes.
  std::sort(steps.begin(), steps.end());
  std::size_t k = 0;
  long long cur_c = 0;
  long long cur_g = 0;
  for (Micros b0 = t0; b0 < t1; b0 += rep.bucket) {
    const Micros b1 = std::min(t1, b0 + rep.bucket);
    long double acc_c = 0;
    long double acc_g = 0;
    Micros t = b0;
    while (k < steps.size() && steps[k].first <= b1) {
      acc_c += static_cast<long double>(steps[k].first - t) * cur_c;
      acc_g += static_cast<long double>(steps[k].first - t) * cur_g;
      t = steps[k].first;
      cur_c += steps[k].second.first;
      cur_g += steps[k].second.second;
      ++k;
    }
    acc_c += static_cast<long double>(b1 - t) * cur_c;
    acc_g += static_cast<long double>(b1 - t) * cur_g;
    const long double len = b1 - b0;
    rep.timeline.push_back(TimelinePoint{b0 - t0, detail::frac(acc_c, len * tr.pilot.cores),
                                         detail::frac(acc_g, len * tr.pilot.gpus)});
  }
  return rep;
}

inline void write_timeline_csv(std::ostream& os, const UtilizationReport& rep) {
  os << "t,core_busy,gpu_busy\n";
  for (const auto& p : rep.timeline) os << to_seconds(p.t) << ',' << p.core_busy << ',' << p.gpu_busy << '\n';
}

// --- rate --------------------------------------------------------------------

struct RatePoint {
  double t = 0.0;  // seconds since pilot start (window end)
  double per_hour = 0.0;
};

struct RateSeries {
  double window = 3600.0;
  std::optional<int> credit;
  std::vector<RatePoint> points;
};

// Tumbling windows from pilot start; the point at t counts completions in
// (t - window, t] (the first window also includes its left edge), credited
// per completion with `credit` or, if absent, with each task's own credit.
inline RateSeries rate(const Trace& tr, double window_seconds, std::optional<int> credit = std::nullopt) {
  if (!(window_seconds > 0.0)) throw ValidationError("rate window must be > 0");
  RateSeries rs;
  rs.window = window_seconds;
  rs.credit = credit;
  const Micros w = from_seconds(window_seconds);
  if (w <= 0) throw ValidationError("rate window below clock resolution");
  const Micros t0 = tr.pilot.start;
  const Micros t1 = pilot_end(tr);
  const Micros n = std::max<Micros>(1, (t1 - t0 + w - 1) / w);
  std::vector<long double> credits(static_cast<std::size_t>(n), 0.0L);
  for (const auto& t : tr.tasks) {
    if (t.state != TaskState::done || !t.ts.done) continue;
    const Micros d = *t.ts.done - t0;
    Micros k = d <= 0 ? 0 : (d - 1) / w;
    k = std::clamp<Micros>(k, 0, n - 1);
    credits[static_cast<std::size_t>(k)] += credit.value_or(t.credit);
  }
  for (Micros k = 0; k < n; ++k)
    rs.points.push_back(RatePoint{to_seconds((k + 1) * w),
                                  static_cast<double>(credits[static_cast<std::size_t>(k)] * 3600.0L / window_seconds)});
  return rs;
}

// Mean rate after dropping the first and last `trim` fraction of windows.
inline double steady_state_rate(const RateSeries& rs, double trim = 0.2) {
  if (rs.points.empty()) return 0.0;
  const auto n = rs.points.size();
  auto lo = static_cast<std::size_t>(static_cast<double>(n) * trim);
  auto hi = n - lo;
  if (hi <= lo) {
    lo = 0;
    hi = n;
  }
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += rs.points[i].per_hour;
  return s / static_cast<double>(hi - lo);
}

// --- overhead ----------------------------------------------------------------

struct OverheadDecomposition {
  double startup = 0.0;
  double scheduling = 0.0;
  double launch_delay = 0.0;
  double teardown = 0.0;
  double idle_gaps = 0.0;

  double sum() const { return startup + scheduling + launch_delay + teardown + idle_gaps; }
};

struct OverheadReport {
  double ttx = 0.0;
  double busy_union = 0.0;
  double overhead = 0.0;
  OverheadDecomposition decomposition;
  // Per-task sums (not wall time): queue waits and launch delays.
  double total_scheduling_wait = 0.0;
  double total_launch_delay = 0.0;
  Micros first_queued = 0;
  Micros last_terminal = 0;

  double fraction() const { return ttx > 0 ? overhead / ttx : 0.0; }
};

inline void validate_intervals(const TaskRecord& t) {
  const auto who = "task " + std::to_string(to_int(t.id));
  std::optional<Micros> prev;
  for (const auto& v : {t.ts.queued, t.ts.scheduled, t.ts.launch_start, t.ts.exec_start, t.ts.exec_end, t.ts.done}) {
    if (!v) continue;
    if (prev && *v < *prev) throw ValidationError(who + ": timestamps out of lifecycle order");
    prev = v;
  }
  if (t.ts.exec_start.has_value() != t.ts.exec_end.has_value() && t.terminal())
    throw ValidationError(who + ": unmatched execution interval");
}

// Wall time within TTX with no task executing, split by the phase active at
// each instant: startup (before the first launch), teardown (after the last
// execution end), launch delay (a task between launch_start and exec_start),
// scheduling (a task waiting for a launch), idle gaps otherwise.
inline OverheadReport overhead(const std::vector<TaskRecord>& tasks) {
  OverheadReport rep;
  Micros t0 = kNever;
  Micros t1 = std::numeric_limits<Micros>::min();
  Micros first_launch = kNever;
  Micros last_exec_end = std::numeric_limits<Micros>::min();
  // +1/-1 steps per phase: 0 busy, 1 launching, 2 waiting.
  std::vector<std::pair<Micros, std::array<int, 3>>> steps;
  long double wait_sum = 0;
  long double launch_sum = 0;
  auto add = [&](Micros a, Micros b, int lane) {
    if (b <= a) return;
    std::array<int, 3> up{}, down{};
    up[static_cast<std::size_t>(lane)] = 1;
    down[static_cast<std::size_t>(lane)] = -1;
    steps.push_back({a, up});
    steps.push_back({b, down});
  };
  for (const auto& t : tasks) {
    validate_intervals(t);
    if (t.ts.queued) t0 = std::min(t0, *t.ts.queued);
    if (t.ts.done) t1 = std::max(t1, *t.ts.done);
    if (t.ts.launch_start) first_launch = std::min(first_launch, *t.ts.launch_start);
    if (t.ts.exec_end) last_exec_end = std::max(last_exec_end, *t.ts.exec_end);
    if (t.ts.exec_start && t.ts.exec_end) add(*t.ts.exec_start, *t.ts.exec_end, 0);
    if (t.ts.launch_start) {
      const Micros end = t.ts.exec_start.value_or(t.ts.done.value_or(*t.ts.launch_start));
      add(*t.ts.launch_start, end, 1);
      launch_sum += end - *t.ts.launch_start;
    }
    if (t.ts.queued) {
      const Micros end = t.ts.launch_start.value_or(t.ts.done.value_or(*t.ts.queued));
      add(*t.ts.queued, end, 2);
      wait_sum += end - *t.ts.queued;
    }
  }
  if (t0 == kNever || t1 < t0) return rep;
  rep.first_queued = t0;
  rep.last_terminal = t1;
  if (first_launch == kNever) first_launch = t1;
  if (last_exec_end < first_launch) last_exec_end = t1;

  std::sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Micros busy = 0;
  Micros startup = 0, teardown = 0, launching = 0, waiting = 0, idle = 0;
  std::array<int, 3> cnt{};
  Micros t = t0;
  std::size_t k = 0;
  auto account = [&](Micros a, Micros b) {
    if (b <= a) return;
    if (cnt[0] > 0) {
      busy += b - a;
      return;
    }
    // A segment may straddle the startup/teardown cut points.
    const Micros s_end = std::min(b, first_launch);
    if (s_end > a) startup += s_end - a;
    const Micros td_start = std::max(a, last_exec_end);
    if (b > td_start) teardown += b - td_start;
    const Micros mid = std::max<Micros>(0, std::min(b, last_exec_end) - std::max(a, first_launch));
    if (cnt[1] > 0)
      launching += mid;
    else if (cnt[2] > 0)
      waiting += mid;
    else
      idle += mid;
  };
  while (k < steps.size()) {
    const Micros next = std::min(steps[k].first, t1);
    if (next > t) account(std::max(t, t0), next);
    t = std::max(t, next);
    const Micros at = steps[k].first;
    while (k < steps.size() && steps[k].first == at) {
      for (std::size_t i = 0; i < 3; ++i) cnt[i] += steps[k].second[i];
      ++k;
    }
  }
  if (t1 > t) account(t, t1);

  const auto s = [](Micros v) { return to_seconds(v); };
  rep.ttx = s(t1 - t0);
  rep.busy_union = s(busy);
  rep.overhead = s(t1 - t0 - busy);
  rep.decomposition = {s(startup), s(waiting), s(launching), s(teardown), s(idle)};
  rep.total_scheduling_wait = static_cast<double>(wait_sum / kMicrosPerSecond);
  rep.total_launch_delay = static_cast<double>(launch_sum / kMicrosPerSecond);
  return rep;
}

inline OverheadReport overhead(const Trace& tr) { return overhead(tr.tasks); }

// --- replay check --------------------------------------------------------------

// Replays slot holdings (placed_at .. terminal) and reports the first slot
// held by two tasks at once, or a slot outside its node. Releases at an
// instant are applied before acquisitions at the same instant.
inline std::optional<std::string> find_oversubscription(const Trace& tr) {
  struct Ev {
    Micros t;
    int kind;  // 0 release, 1 acquire
    std::size_t task;
  };
  std::vector<Ev> evs;
  for (std::size_t i = 0; i < tr.tasks.size(); ++i) {
    const auto& t = tr.tasks[i];
    if (t.placement.empty() || !t.placed_at) continue;
    evs.push_back({*t.placed_at, 1, i});
    if (t.terminal() && t.ts.done) evs.push_back({*t.ts.done, 0, i});
  }
  std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
    return a.t != b.t ? a.t < b.t : a.kind != b.kind ? a.kind < b.kind : a.task < b.task;
  });
  const int C = tr.pilot.cores_per_node;
  const int G = tr.pilot.gpus_per_node;
  std::map<std::pair<int, int>, std::size_t> cores, gpus;
  for (const auto& e : evs) {
    const auto& t = tr.tasks[e.task];
    for (const auto& s : t.placement.slots) {
      if (s.node_id < 0 || s.node_id >= tr.pilot.nodes)
        return "task " + std::to_string(to_int(t.id)) + " placed on unknown node " + std::to_string(s.node_id);
      auto apply = [&](std::map<std::pair<int, int>, std::size_t>& m, const std::vector<int>& ids, int limit,
                       const char* kind) -> std::optional<std::string> {
        for (int id : ids) {
          if (id < 0 || id >= limit)
            return "task " + std::to_string(to_int(t.id)) + ": " + kind + " " + std::to_string(id) + " out of range";
          const auto key = std::pair{s.node_id, id};
          if (e.kind == 1) {
            auto [it, fresh] = m.try_emplace(key, e.task);
            if (!fresh)
              return "node " + std::to_string(s.node_id) + " " + kind + " " + std::to_string(id) + " held by tasks " +
                     std::to_string(to_int(tr.tasks[it->second].id)) + " and " + std::to_string(to_int(t.id)) +
                     " at t=" + std::to_string(e.t);
          } else {
            m.erase(key);
          }
        }
        return std::nullopt;
      };
      if (auto err = apply(cores, s.cores, C, "core")) return err;
      if (auto err = apply(gpus, s.gpus, G, "gpu")) return err;
    }
  }
  return std::nullopt;
}

// --- summaries -----------------------------------------------------------------

struct CompletionCounts {
  std::size_t total = 0;
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t lost = 0;
  std::size_t unfinished = 0;
  std::uint64_t credited = 0;

  double done_fraction() const { return total ? static_cast<double>(done) / static_cast<double>(total) : 0.0; }
};

inline CompletionCounts completion_counts(const std::vector<TaskRecord>& tasks) {
  CompletionCounts c;
  c.total = tasks.size();
  for (const auto& t : tasks) {
    switch (t.state) {
      case TaskState::done:
        ++c.done;
        c.credited += static_cast<std::uint64_t>(t.credit);
        break;
      case TaskState::failed: ++c.failed; break;
      case TaskState::lost: ++c.lost; break;
      default: ++c.unfinished; break;
    }
  }
  return c;
}

inline json to_json(const UtilizationReport& r) {
  return {{"busy_core_seconds", r.busy_core_seconds},
          {"busy_gpu_seconds", r.busy_gpu_seconds},
          {"allocated_core_seconds", r.allocated_core_seconds},
          {"allocated_gpu_seconds", r.allocated_gpu_seconds},
          {"core_fraction", r.core_fraction},
          {"gpu_fraction", r.gpu_fraction},
          {"combined_fraction", r.combined_fraction},
          {"span_seconds", to_seconds(r.span)},
          {"bucket_seconds", to_seconds(r.bucket)}};
}

inline json to_json(const OverheadReport& r) {
  const auto& d = r.decomposition;
  return {{"ttx", r.ttx},
          {"busy_union", r.busy_union},
          {"overhead", r.overhead},
          {"overhead_fraction", r.fraction()},
          {"decomposition",
           {{"startup", d.startup},
            {"scheduling", d.scheduling},
            {"launch_delay", d.launch_delay},
            {"teardown", d.teardown},
            {"idle_gaps", d.idle_gaps}}},
          {"total_scheduling_wait", r.total_scheduling_wait},
          {"total_launch_delay", r.total_launch_delay}};
}

inline json to_json(const RateSeries& r) {
  json pts = json::array();
  for (const auto& p : r.points) pts.push_back({{"t", p.t}, {"per_hour", p.per_hour}});
  json j = {{"window", r.window}, {"steady_state_per_hour", steady_state_rate(r)}, {"points", std::move(pts)}};
  if (r.credit) j["credit"] = *r.credit;
  return j;
}

inline json to_json(const CompletionCounts& c) {
  return {{"total", c.total}, {"done", c.done},           {"failed", c.failed},
          {"lost", c.lost},   {"unfinished", c.unfinished}, {"credited", c.credited},
          {"done_fraction", c.done_fraction()}};
}

}  // namespace rct
