#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "resource.hpp"
#include "task.hpp"
#include "time.hpp"

namespace rct {

using json = nlohmann::json;

// JSON-lines event log, one row per transition, times in integer
// microseconds:
//   {"kind":"pilot","event":"start","t":0,"name":..,"nodes":N,"cores_per_node":C,
//    "gpus_per_node":G,"cores":accounted cores,"gpus":accounted gpus[,"masters":M]}
//   {"kind":"pilot","event":"ready"|"end","t":..}
//   {"kind":"partition","event":"started"|"failed"|"dead","t":..,"partition":k[,"cause":..]}
//   {"kind":"task","event":<state>,"t":..,"task":id,"ts":{..}[,"name","cores","gpus","credit"]
//    [,"placement":[{"node","cores","gpus"}],"partition":k]}
// "cores"/"gpus" on the pilot row are the capacity utilization is measured
// against (worker capacity for task overlays).

struct PilotRow {
  Micros t = 0;
  std::string event;
  std::string name;
  int nodes = 0;
  int cores_per_node = 0;
  int gpus_per_node = 0;
  long long cores = 0;
  long long gpus = 0;
  int masters = 0;

  bool operator==(const PilotRow&) const = default;
};

struct PartitionRow {
  Micros t = 0;
  int partition = 0;
  std::string event;
  std::string cause;

  bool operator==(const PartitionRow&) const = default;
};

struct TaskHeader {
  std::string name;
  int cores = 0;
  int gpus = 0;
  int credit = 1;

  bool operator==(const TaskHeader&) const = default;
};

struct TaskRow {
  Micros t = 0;
  TaskId task{};
  TaskState state = TaskState::queued;
  Timestamps ts;
  std::optional<TaskHeader> header;
  std::optional<Placement> placement;

  bool operator==(const TaskRow&) const = default;
};

using LogRow = std::variant<PilotRow, PartitionRow, TaskRow>;

inline json to_json(const LogRow& row) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, PilotRow>) {
          json j = {{"kind", "pilot"}, {"event", r.event}, {"t", r.t}};
          if (r.event == "start") {
            j["name"] = r.name;
            j["nodes"] = r.nodes;
            j["cores_per_node"] = r.cores_per_node;
            j["gpus_per_node"] = r.gpus_per_node;
            j["cores"] = r.cores;
            j["gpus"] = r.gpus;
            if (r.masters > 0) j["masters"] = r.masters;
          }
          return j;
        } else if constexpr (std::is_same_v<T, PartitionRow>) {
          json j = {{"kind", "partition"}, {"event", r.event}, {"t", r.t}, {"partition", r.partition}};
          if (!r.cause.empty()) j["cause"] = r.cause;
          return j;
        } else {
          json ts = json::object();
          auto put = [&](const char* k, const std::optional<Micros>& v) {
            if (v) ts[k] = *v;
          };
          put("queued", r.ts.queued);
          put("scheduled", r.ts.scheduled);
          put("launch_start", r.ts.launch_start);
          put("exec_start", r.ts.exec_start);
          put("exec_end", r.ts.exec_end);
          put("done", r.ts.done);
          json j = {{"kind", "task"}, {"event", std::string(to_string(r.state))}, {"t", r.t},
                    {"task", to_int(r.task)}, {"ts", std::move(ts)}};
          if (r.header) {
            j["name"] = r.header->name;
            j["cores"] = r.header->cores;
            j["gpus"] = r.header->gpus;
            j["credit"] = r.header->credit;
          }
          if (r.placement) {
            json slots = json::array();
            for (const auto& s : r.placement->slots)
              slots.push_back({{"node", s.node_id}, {"cores", s.cores}, {"gpus", s.gpus}});
            j["placement"] = std::move(slots);
            if (r.placement->partition) j["partition"] = *r.placement->partition;
          }
          return j;
        }
      },
      row);
}

// Throws LogParseError tagged with `rowno`.
inline LogRow row_from_json(const json& j, std::size_t rowno) {
  try {
    if (!j.is_object()) throw LogParseError(rowno, "not an object");
    if (!j.contains("t") || !j["t"].is_number_integer()) throw LogParseError(rowno, "missing integer 't'");
    if (!j.contains("kind") || !j.contains("event")) throw LogParseError(rowno, "missing 'kind' or 'event'");
    const Micros t = j["t"].get<Micros>();
    const auto kind = j["kind"].get<std::string>();
    const auto event = j["event"].get<std::string>();
    if (kind == "pilot") {
      PilotRow r;
      r.t = t;
      r.event = event;
      if (event == "start") {
        r.name = j.value("name", std::string{});
        r.nodes = j.at("nodes").get<int>();
        r.cores_per_node = j.at("cores_per_node").get<int>();
        r.gpus_per_node = j.at("gpus_per_node").get<int>();
        r.cores = j.at("cores").get<long long>();
        r.gpus = j.at("gpus").get<long long>();
        r.masters = j.value("masters", 0);
      } else if (event != "ready" && event != "end") {
        throw LogParseError(rowno, "unknown pilot event '" + event + "'");
      }
      return r;
    }
    if (kind == "partition") {
      return PartitionRow{t, j.at("partition").get<int>(), event, j.value("cause", std::string{})};
    }
    if (kind == "task") {
      TaskRow r;
      r.t = t;
      const auto state = task_state_from(event);
      if (!state) throw LogParseError(rowno, "unknown task event '" + event + "'");
      r.state = *state;
      r.task = TaskId{j.at("task").get<std::uint64_t>()};
      if (j.contains("ts")) {
        const json& ts = j["ts"];
        auto get = [&](const char* k, std::optional<Micros>& dst) {
          if (ts.contains(k)) dst = ts[k].get<Micros>();
        };
        get("queued", r.ts.queued);
        get("scheduled", r.ts.scheduled);
        get("launch_start", r.ts.launch_start);
        get("exec_start", r.ts.exec_start);
        get("exec_end", r.ts.exec_end);
        get("done", r.ts.done);
      }
      if (j.contains("name") || j.contains("cores")) {
        r.header = TaskHeader{j.value("name", std::string{}), j.value("cores", 0), j.value("gpus", 0),
                              j.value("credit", 1)};
      }
      if (j.contains("placement")) {
        Placement p;
        p.task_id = r.task;
        for (const auto& s : j["placement"])
          p.slots.push_back(NodeSlots{s.at("node").get<int>(), s.at("cores").get<std::vector<int>>(),
                                      s.at("gpus").get<std::vector<int>>()});
        if (j.contains("partition")) p.partition = j["partition"].get<int>();
        r.placement = std::move(p);
      }
      return r;
    }
    throw LogParseError(rowno, "unknown kind '" + kind + "'");
  } catch (const LogParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw LogParseError(rowno, e.what());
  }
}

class EventLog {
 public:
  void pilot_start(Micros t, const ResourceSpec& r, long long cores, long long gpus, int masters = 0) {
    const auto& n = r.nodes.front();
    rows_.push_back(PilotRow{t, "start", r.name, r.node_count(), n.usable_cpu_cores, n.gpus, cores, gpus, masters});
  }

  void pilot_event(Micros t, std::string event) {
    PilotRow r;
    r.t = t;
    r.event = std::move(event);
    rows_.push_back(std::move(r));
  }

  void partition_event(Micros t, int partition, std::string event, std::string cause = {}) {
    rows_.push_back(PartitionRow{t, partition, std::move(event), std::move(cause)});
  }

  // Logs rec's current state. The first row of a task carries its header.
  void task_event(Micros t, const TaskRecord& rec, bool with_placement = false) {
    TaskRow row;
    row.t = t;
    row.task = rec.id;
    row.state = rec.state;
    row.ts = rec.ts;
    if (rec.history.size() <= 1) row.header = TaskHeader{rec.name, rec.cores, rec.gpus, rec.credit};
    if (with_placement) row.placement = rec.placement;
    rows_.push_back(std::move(row));
  }

  const std::vector<LogRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : rows_) os << to_json(r).dump() << '\n';
  }

 private:
  std::vector<LogRow> rows_;
};

inline std::vector<LogRow> read_jsonl(std::istream& is) {
  std::vector<LogRow> rows;
  std::string line;
  std::size_t rowno = 0;
  while (std::getline(is, line)) {
    ++rowno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw LogParseError(rowno, e.what());
    }
    rows.push_back(row_from_json(j, rowno));
  }
  return rows;
}

struct PilotInfo {
  std::string name;
  Micros start = 0;
  std::optional<Micros> ready;
  std::optional<Micros> end;
  int nodes = 0;
  int cores_per_node = 0;
  int gpus_per_node = 0;
  long long cores = 0;
  long long gpus = 0;
  int masters = 0;
};

// Everything the metrics need, reconstructed from the rows of a log.
struct Trace {
  PilotInfo pilot;
  std::vector<TaskRecord> tasks;
  std::vector<PartitionRow> partitions;
};

namespace detail {

// Canonical replay order: time, then pilot/partition/task rows, then id and
// lifecycle position. Logs are written in this order already; sorting makes
// the reconstruction independent of how rows were shuffled.
inline auto row_key(const LogRow& r) {
  if (const auto* p = std::get_if<PilotRow>(&r)) {
    const int ev = p->event == "start" ? 0 : p->event == "ready" ? 1 : 2;
    return std::tuple{p->t, 0, std::uint64_t{0}, ev};
  }
  if (const auto* q = std::get_if<PartitionRow>(&r))
    return std::tuple{q->t, 1, static_cast<std::uint64_t>(q->partition), 0};
  const auto& t = std::get<TaskRow>(r);
  return std::tuple{t.t, 2, to_int(t.task), static_cast<int>(t.state)};
}

}  // namespace detail

inline Trace build_trace(const std::vector<LogRow>& input) {
  std::vector<std::size_t> order(input.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::row_key(input[a]) < detail::row_key(input[b]);
  });
  Trace tr;
  bool have_pilot = false;
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    const auto& rows = input;
    const std::size_t rowno = i + 1;
    if (const auto* p = std::get_if<PilotRow>(&rows[i])) {
      if (p->event == "start") {
        have_pilot = true;
        tr.pilot.name = p->name;
        tr.pilot.start = p->t;
        tr.pilot.nodes = p->nodes;
        tr.pilot.cores_per_node = p->cores_per_node;
        tr.pilot.gpus_per_node = p->gpus_per_node;
        tr.pilot.cores = p->cores;
        tr.pilot.gpus = p->gpus;
        tr.pilot.masters = p->masters;
      } else if (p->event == "ready") {
        tr.pilot.ready = p->t;
      } else if (p->event == "end") {
        tr.pilot.end = p->t;
      }
    } else if (const auto* q = std::get_if<PartitionRow>(&rows[i])) {
      tr.partitions.push_back(*q);
    } else {
      const auto& r = std::get<TaskRow>(rows[i]);
      auto [it, fresh] = index.try_emplace(to_int(r.task), tr.tasks.size());
      if (fresh) {
        tr.tasks.emplace_back();
        tr.tasks.back().id = r.task;
      }
      TaskRecord& rec = tr.tasks[it->second];
      if (rec.terminal())
        throw LogParseError(rowno, "transition after terminal state of task " + std::to_string(to_int(r.task)));
      rec.state = r.state;
      rec.history.push_back(r.state);
      rec.ts = r.ts;
      if (r.header) {
        rec.name = r.header->name;
        rec.cores = r.header->cores;
        rec.gpus = r.header->gpus;
        rec.credit = r.header->credit;
      }
      if (r.placement) {
        rec.placement = *r.placement;
        rec.partition = r.placement->partition;
        rec.placed_at = r.t;
      }
    }
  }
  if (!have_pilot) throw LogParseError(input.size() + 1, "no pilot start row");
  std::sort(tr.tasks.begin(), tr.tasks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return tr;
}

inline Trace read_trace(std::istream& is) { return build_trace(read_jsonl(is)); }

}  // namespace rct
