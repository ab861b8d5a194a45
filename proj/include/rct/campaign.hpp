#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "error.hpp"
#include "event_log.hpp"
#include "event_loop.hpp"
#include "executors.hpp"
#include "metrics.hpp"
#include "overlay.hpp"
#include "resource.hpp"
#include "scheduler.hpp"
#include "workflow.hpp"
#include "workload.hpp"

namespace rct {

// Campaign configuration (YAML, schema 1). Every key is optional except
// `seed`; see recipes/ for complete examples.
struct ResourceConfig {
  std::string preset = "summit-node";
  int nodes = 1;
  // Inline node shape; overrides the preset when set.
  std::optional<int> cpu_cores;
  std::optional<int> usable_cpu_cores;
  std::optional<int> gpus;

  bool operator==(const ResourceConfig&) const = default;
};

struct DurationSpec {
  std::string kind = "constant";  // constant | lognormal
  double seconds = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::optional<double> sigma;

  bool operator==(const DurationSpec&) const = default;
};

struct WorkloadConfig {
  std::string preset;
  std::optional<std::uint64_t> items;
  double time_scale = 1.0;
  std::optional<int> bundle_size;
  std::optional<DurationSpec> duration;

  bool operator==(const WorkloadConfig&) const = default;
};

struct WorkflowSection {
  std::string name = "wf1-overlay";
  std::map<std::string, double> params;

  bool operator==(const WorkflowSection&) const = default;
};

struct MetricsConfig {
  std::optional<double> bucket;
  double rate_window = 60.0;
  std::optional<int> credit;

  bool operator==(const MetricsConfig&) const = default;
};

struct CampaignConfig {
  int schema = 1;
  std::uint64_t seed = 0;
  std::string output = "out";
  ResourceConfig resource;
  double walltime = 86400.0;
  double startup_latency = 0.0;
  SchedulerConfig scheduler;
  ExecutorConfig executor;
  Flavor flavor = Flavor::sim;
  PayloadMode payload = PayloadMode::sleep;
  WorkflowSection workflow;
  WorkloadConfig workload;
  MasterConfig overlay;
  MetricsConfig metrics;
  double completion_threshold = 0.95;

  bool operator==(const CampaignConfig&) const = default;
};

inline constexpr std::string_view kTemplates[] = {"wf1-overlay", "wf2-deepdrive", "wf3-esmacs", "wf4-ties",
                                                  "hybrid-lb"};

// Parameters each template accepts, with defaults.
inline const std::map<std::string, double>& template_defaults(const std::string& name) {
  static const std::map<std::string, std::map<std::string, double>> table = {
      {"wf1-overlay", {}},
      {"wf2-deepdrive",
       {{"iterations", 4},
        {"outlier_probability", 0.0},
        {"comm_latency", 0.001},
        {"md_seconds", 900},
        {"aggregate_seconds", 30},
        {"train_seconds", 40},
        {"infer_seconds", 20},
        {"nodes_per_train", 20}}},
      {"wf3-esmacs", {{"pipelines", 1}, {"stages", 4}, {"seconds", 60}, {"comm_latency", 0}}},
      {"wf4-ties", {{"pipelines", 1}, {"stages", 3}, {"seconds", 180}, {"comm_latency", 0}}},
      {"hybrid-lb",
       {{"wf3_pipelines", 0}, {"wf4_pipelines", 0}, {"wf3_seconds", 30}, {"wf4_seconds", 90}, {"comm_latency", 0}}},
  };
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("workflow.template", "unknown template '" + name + "'");
  return it->second;
}

namespace detail {

// Strict reader: every key must be consumed, errors carry the key path.
class Reader {
 public:
  Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where(""), "expected a mapping");
  }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  template <class T>
  void get(const std::string& key, T& dst) {
    if (!has(key)) return;
    used_.insert(key);
    try {
      dst = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key), "invalid value");
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& dst) {
    if (!has(key)) return;
    T v{};
    get(key, v);
    dst = v;
  }

  Reader child(const std::string& key) {
    used_.insert(key);
    return Reader(has(key) ? node_[key] : YAML::Node(), where(key));
  }

  YAML::Node raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? node_[key] : YAML::Node();
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!used_.contains(k)) throw ConfigError(where(k), "unknown key");
    }
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

template <class E>
E parse_enum(const std::string& path, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string names;
  for (const auto& [n, e] : opts) {
    if (v == n) return e;
    names += (names.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError(path, "'" + v + "' is not one of: " + names);
}

inline const char* name_of(Algorithm a) { return a == Algorithm::noop ? "noop" : "continuous"; }
inline const char* name_of(Colocation c) {
  return c == Colocation::same_node ? "same_node" : c == Colocation::different_node ? "different_node" : "none";
}
inline const char* name_of(Flavor f) { return f == Flavor::real ? "real" : "sim"; }
inline const char* name_of(PayloadMode p) { return p == PayloadMode::spin ? "spin" : "sleep"; }

}  // namespace detail

inline void validate(const CampaignConfig& c) {
  if (c.schema != 1) throw ConfigError("schema", "unsupported schema " + std::to_string(c.schema));
  if (c.resource.nodes < 1) throw ConfigError("resource.nodes", "must be >= 1");
  if (!c.resource.cpu_cores && !find_node_preset(c.resource.preset))
    throw ConfigError("resource.preset", "unknown preset '" + c.resource.preset + "'");
  if (!(c.walltime > 0)) throw ConfigError("pilot.walltime", "must be > 0");
  if (!(c.startup_latency >= 0)) throw ConfigError("pilot.startup_latency", "must be >= 0");
  if (!(c.completion_threshold >= 0 && c.completion_threshold <= 1))
    throw ConfigError("completion_threshold", "must lie in [0,1]");
  if (!(c.metrics.rate_window > 0)) throw ConfigError("metrics.rate_window", "must be > 0");
  if (c.metrics.bucket && !(*c.metrics.bucket > 0)) throw ConfigError("metrics.bucket", "must be > 0");
  if (!(c.workload.time_scale > 0)) throw ConfigError("workload.time_scale", "must be > 0");
  if (c.workload.items && *c.workload.items < 1) throw ConfigError("workload.items", "must be >= 1");
  if (c.workload.bundle_size && *c.workload.bundle_size < 1) throw ConfigError("workload.bundle_size", "must be >= 1");
  if (!c.workload.preset.empty()) {
    bool known = false;
    for (auto p : kWorkloadPresets) known |= p == c.workload.preset;
    if (!known) throw ConfigError("workload.preset", "unknown preset '" + c.workload.preset + "'");
  }
  if (c.workload.duration) {
    const auto& d = *c.workload.duration;
    if (d.kind != "constant" && d.kind != "lognormal")
      throw ConfigError("workload.duration.kind", "'" + d.kind + "' is not one of: constant, lognormal");
  }
  const auto& defaults = template_defaults(c.workflow.name);
  for (const auto& [k, v] : c.workflow.params)
    if (!defaults.contains(k)) throw ConfigError("workflow.params." + k, "unknown parameter for " + c.workflow.name);
  if (c.workflow.name == "wf1-overlay" && c.workload.preset.empty() && !c.workload.duration)
    throw ConfigError("workload", "wf1-overlay needs a workload preset or duration");
  if (c.executor.lanes < 1) throw ConfigError("backend.lanes", "must be >= 1");
  try {
    validate(c.executor.stability);
  } catch (const InvalidSpec& e) {
    throw ConfigError("backend.stability", e.what());
  }
  try {
    validate(c.overlay);
  } catch (const ConfigError&) {
    throw;
  }
}

inline CampaignConfig parse_config(const YAML::Node& root) {
  using detail::Reader;
  CampaignConfig c;
  Reader r(root, "");
  r.get("schema", c.schema);
  if (!r.has("seed")) throw ConfigError("seed", "required");
  r.get("seed", c.seed);
  r.get("output", c.output);
  r.get("completion_threshold", c.completion_threshold);

  {
    Reader x = r.child("resource");
    x.get("preset", c.resource.preset);
    x.get("nodes", c.resource.nodes);
    x.get("cpu_cores", c.resource.cpu_cores);
    x.get("usable_cpu_cores", c.resource.usable_cpu_cores);
    x.get("gpus", c.resource.gpus);
    x.finish();
  }
  {
    Reader x = r.child("pilot");
    x.get("walltime", c.walltime);
    x.get("startup_latency", c.startup_latency);
    x.finish();
  }
  {
    Reader x = r.child("scheduler");
    std::string alg = detail::name_of(c.scheduler.algorithm);
    x.get("algorithm", alg);
    c.scheduler.algorithm = detail::parse_enum<Algorithm>(
        x.where("algorithm"), alg, {{"continuous", Algorithm::continuous}, {"noop", Algorithm::noop}});
    x.get("prioritize_large", c.scheduler.prioritize_large);
    YAML::Node col = x.raw("colocation");
    if (col && !col.IsNull()) {
      if (!col.IsMap()) throw ConfigError(x.where("colocation"), "expected a mapping");
      for (const auto& kv : col) {
        const auto tag = kv.first.as<std::string>();
        c.scheduler.colocation[tag] = detail::parse_enum<Colocation>(
            x.where("colocation") + "." + tag, kv.second.as<std::string>(),
            {{"none", Colocation::none}, {"same_node", Colocation::same_node},
             {"different_node", Colocation::different_node}});
      }
    }
    x.finish();
  }
  {
    Reader x = r.child("backend");
    std::string kind(to_string(c.executor.backend));
    x.get("kind", kind);
    c.executor.backend = detail::parse_enum<BackendKind>(
        x.where("kind"), kind,
        {{"direct", BackendKind::direct}, {"partitioned", BackendKind::partitioned}, {"bulk", BackendKind::bulk}});
    std::string flavor = detail::name_of(c.flavor);
    x.get("flavor", flavor);
    c.flavor = detail::parse_enum<Flavor>(x.where("flavor"), flavor, {{"sim", Flavor::sim}, {"real", Flavor::real}});
    std::string payload = detail::name_of(c.payload);
    x.get("payload", payload);
    c.payload = detail::parse_enum<PayloadMode>(x.where("payload"), payload,
                                                {{"sleep", PayloadMode::sleep}, {"spin", PayloadMode::spin}});
    x.get("launch_delay", c.executor.launch_delay);
    x.get("lanes", c.executor.lanes);
    {
      Reader p = x.child("partitions");
      auto& pp = c.executor.partitions;
      p.get("count", pp.partition_count);
      p.get("nodes_per_partition", pp.nodes_per_partition);
      p.get("max_tasks_per_partition", pp.max_tasks_per_partition);
      p.get("start_cost", pp.per_partition_start_cost);
      p.get("post_start_sleep", pp.post_start_sleep);
      p.get("per_launch_delay", pp.per_launch_delay);
      p.finish();
    }
    {
      Reader s = x.child("stability");
      auto& sl = c.executor.stability;
      s.get("max_nodes", sl.stable_max_nodes);
      s.get("max_tasks", sl.stable_max_tasks);
      s.get("startup_failure", sl.startup_failure);
      s.get("internal_failure", sl.internal_failure);
      s.get("lost_connection", sl.lost_connection);
      s.get("inject", sl.inject);
      s.finish();
    }
    {
      Reader b = x.child("bulk");
      b.get("scheduling_rate", c.executor.bulk.scheduling_rate);
      b.get("startup_cost", c.executor.bulk.startup_cost);
      b.finish();
    }
    x.finish();
  }
  {
    Reader x = r.child("workflow");
    x.get("template", c.workflow.name);
    YAML::Node params = x.raw("params");
    if (params && !params.IsNull()) {
      if (!params.IsMap()) throw ConfigError(x.where("params"), "expected a mapping");
      for (const auto& kv : params) {
        const auto k = kv.first.as<std::string>();
        try {
          c.workflow.params[k] = kv.second.as<double>();
        } catch (const YAML::Exception&) {
          throw ConfigError(x.where("params") + "." + k, "expected a number");
        }
      }
    }
    x.finish();
  }
  {
    Reader x = r.child("workload");
    x.get("preset", c.workload.preset);
    x.get("items", c.workload.items);
    x.get("time_scale", c.workload.time_scale);
    x.get("bundle_size", c.workload.bundle_size);
    if (x.has("duration")) {
      Reader d = x.child("duration");
      DurationSpec ds;
      d.get("kind", ds.kind);
      d.get("seconds", ds.seconds);
      d.get("mean", ds.mean);
      d.get("min", ds.min);
      d.get("max", ds.max);
      d.get("sigma", ds.sigma);
      d.finish();
      c.workload.duration = ds;
    }
    x.finish();
  }
  {
    Reader x = r.child("overlay");
    x.get("nodes_per_master", c.overlay.nodes_per_master);
    x.get("bulk_size", c.overlay.bulk_size);
    x.get("queue_depth", c.overlay.queue_depth);
    x.get("message_latency", c.overlay.message_latency);
    x.finish();
  }
  {
    Reader x = r.child("metrics");
    x.get("bucket", c.metrics.bucket);
    x.get("rate_window", c.metrics.rate_window);
    x.get("credit", c.metrics.credit);
    x.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline CampaignConfig load_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError(path.string(), "cannot read file");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string(), e.what());
  }
  return parse_config(root);
}

inline CampaignConfig parse_config_text(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError("<text>", e.what());
  }
}

// Fully resolved configuration; parse_config_text(dump_config(c)) == c.
inline std::string dump_config(const CampaignConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "schema" << YAML::Value << c.schema;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "output" << YAML::Value << c.output;
  e << YAML::Key << "completion_threshold" << YAML::Value << c.completion_threshold;

  e << YAML::Key << "resource" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << c.resource.preset;
  e << YAML::Key << "nodes" << YAML::Value << c.resource.nodes;
  if (c.resource.cpu_cores) e << YAML::Key << "cpu_cores" << YAML::Value << *c.resource.cpu_cores;
  if (c.resource.usable_cpu_cores) e << YAML::Key << "usable_cpu_cores" << YAML::Value << *c.resource.usable_cpu_cores;
  if (c.resource.gpus) e << YAML::Key << "gpus" << YAML::Value << *c.resource.gpus;
  e << YAML::EndMap;

  e << YAML::Key << "pilot" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "walltime" << YAML::Value << c.walltime;
  e << YAML::Key << "startup_latency" << YAML::Value << c.startup_latency;
  e << YAML::EndMap;

  e << YAML::Key << "scheduler" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "algorithm" << YAML::Value << detail::name_of(c.scheduler.algorithm);
  e << YAML::Key << "prioritize_large" << YAML::Value << c.scheduler.prioritize_large;
  if (!c.scheduler.colocation.empty()) {
    e << YAML::Key << "colocation" << YAML::Value << YAML::BeginMap;
    for (const auto& [tag, pol] : c.scheduler.colocation) e << YAML::Key << tag << YAML::Value << detail::name_of(pol);
    e << YAML::EndMap;
  }
  e << YAML::EndMap;

  const auto& x = c.executor;
  e << YAML::Key << "backend" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << std::string(to_string(x.backend));
  e << YAML::Key << "flavor" << YAML::Value << detail::name_of(c.flavor);
  e << YAML::Key << "payload" << YAML::Value << detail::name_of(c.payload);
  e << YAML::Key << "launch_delay" << YAML::Value << x.launch_delay;
  e << YAML::Key << "lanes" << YAML::Value << x.lanes;
  e << YAML::Key << "partitions" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "count" << YAML::Value << x.partitions.partition_count;
  e << YAML::Key << "nodes_per_partition" << YAML::Value << x.partitions.nodes_per_partition;
  e << YAML::Key << "max_tasks_per_partition" << YAML::Value << x.partitions.max_tasks_per_partition;
  e << YAML::Key << "start_cost" << YAML::Value << x.partitions.per_partition_start_cost;
  e << YAML::Key << "post_start_sleep" << YAML::Value << x.partitions.post_start_sleep;
  e << YAML::Key << "per_launch_delay" << YAML::Value << x.partitions.per_launch_delay;
  e << YAML::EndMap;
  e << YAML::Key << "stability" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "max_nodes" << YAML::Value << x.stability.stable_max_nodes;
  e << YAML::Key << "max_tasks" << YAML::Value << x.stability.stable_max_tasks;
  e << YAML::Key << "startup_failure" << YAML::Value << x.stability.startup_failure;
  e << YAML::Key << "internal_failure" << YAML::Value << x.stability.internal_failure;
  e << YAML::Key << "lost_connection" << YAML::Value << x.stability.lost_connection;
  e << YAML::Key << "inject" << YAML::Value << x.stability.inject;
  e << YAML::EndMap;
  e << YAML::Key << "bulk" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "scheduling_rate" << YAML::Value << x.bulk.scheduling_rate;
  e << YAML::Key << "startup_cost" << YAML::Value << x.bulk.startup_cost;
  e << YAML::EndMap;
  e << YAML::EndMap;

  e << YAML::Key << "workflow" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "template" << YAML::Value << c.workflow.name;
  if (!c.workflow.params.empty()) {
    e << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : c.workflow.params) e << YAML::Key << k << YAML::Value << v;
    e << YAML::EndMap;
  }
  e << YAML::EndMap;

  e << YAML::Key << "workload" << YAML::Value << YAML::BeginMap;
  if (!c.workload.preset.empty()) e << YAML::Key << "preset" << YAML::Value << c.workload.preset;
  if (c.workload.items) e << YAML::Key << "items" << YAML::Value << *c.workload.items;
  e << YAML::Key << "time_scale" << YAML::Value << c.workload.time_scale;
  if (c.workload.bundle_size) e << YAML::Key << "bundle_size" << YAML::Value << *c.workload.bundle_size;
  if (c.workload.duration) {
    const auto& d = *c.workload.duration;
    e << YAML::Key << "duration" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "kind" << YAML::Value << d.kind;
    e << YAML::Key << "seconds" << YAML::Value << d.seconds;
    e << YAML::Key << "mean" << YAML::Value << d.mean;
    e << YAML::Key << "min" << YAML::Value << d.min;
    e << YAML::Key << "max" << YAML::Value << d.max;
    if (d.sigma) e << YAML::Key << "sigma" << YAML::Value << *d.sigma;
    e << YAML::EndMap;
  }
  e << YAML::EndMap;

  e << YAML::Key << "overlay" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "nodes_per_master" << YAML::Value << c.overlay.nodes_per_master;
  e << YAML::Key << "bulk_size" << YAML::Value << c.overlay.bulk_size;
  e << YAML::Key << "queue_depth" << YAML::Value << c.overlay.queue_depth;
  e << YAML::Key << "message_latency" << YAML::Value << c.overlay.message_latency;
  e << YAML::EndMap;

  e << YAML::Key << "metrics" << YAML::Value << YAML::BeginMap;
  if (c.metrics.bucket) e << YAML::Key << "bucket" << YAML::Value << *c.metrics.bucket;
  e << YAML::Key << "rate_window" << YAML::Value << c.metrics.rate_window;
  if (c.metrics.credit) e << YAML::Key << "credit" << YAML::Value << *c.metrics.credit;
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

inline ResourceSpec resource_of(const CampaignConfig& c) {
  const auto& r = c.resource;
  if (r.cpu_cores)
    return make_resource(r.preset, r.nodes, *r.cpu_cores, r.gpus.value_or(0), r.usable_cpu_cores);
  auto p = find_node_preset(r.preset);
  if (!p) throw ConfigError("resource.preset", "unknown preset '" + r.preset + "'");
  ResourceSpec spec = make_resource(*p, r.nodes);
  if (r.usable_cpu_cores || r.gpus) {
    for (auto& n : spec.nodes) {
      if (r.usable_cpu_cores) n.usable_cpu_cores = *r.usable_cpu_cores;
      if (r.gpus) n.gpus = *r.gpus;
    }
  }
  return spec;
}

// Workload preset with the config's overrides applied.
inline WorkloadPreset workload_of(const CampaignConfig& c) {
  WorkloadPreset w;
  if (!c.workload.preset.empty()) w = make_preset(c.workload.preset);
  if (c.workload.items) w.item_count = *c.workload.items;
  if (c.workload.bundle_size) w.bundle_size = *c.workload.bundle_size;
  if (c.workload.duration) {
    const auto& d = *c.workload.duration;
    try {
      w.durations = d.kind == "lognormal" ? DurationModel::lognormal(d.mean, d.min, d.max, d.sigma)
                                          : DurationModel::constant(d.seconds);
    } catch (const InvalidSpec& e) {
      throw ConfigError("workload.duration", e.what());
    }
  }
  if (c.workload.time_scale != 1.0) w.durations = w.durations.scaled(c.workload.time_scale);
  w.durations.seed = c.seed;
  return w;
}

inline double param(const CampaignConfig& c, const std::string& key) {
  if (auto it = c.workflow.params.find(key); it != c.workflow.params.end()) return it->second;
  return template_defaults(c.workflow.name).at(key);
}

inline int int_param(const CampaignConfig& c, const std::string& key) {
  const double v = param(c, key);
  if (v < 0 || v != std::floor(v)) throw ConfigError("workflow.params." + key, "expected a non-negative integer");
  return static_cast<int>(v);
}

struct CampaignResult {
  EventLog log;
  Trace trace;
  UtilizationReport utilization;
  OverheadReport overhead;
  RateSeries rate;
  CompletionCounts counts;
  bool success = false;
};

inline Micros bucket_of(const CampaignConfig& c) {
  if (c.metrics.bucket) return from_seconds(*c.metrics.bucket);
  return c.flavor == Flavor::real ? from_seconds(0.1) : kMicrosPerSecond;
}

// Recomputes every report from a trace; used both inline and by `report`.
inline void compute_reports(const CampaignConfig& c, CampaignResult& r) {
  r.utilization = utilization(r.trace, bucket_of(c));
  r.overhead = overhead(r.trace);
  r.rate = rate(r.trace, c.metrics.rate_window, c.metrics.credit);
  r.counts = completion_counts(r.trace.tasks);
  r.success = r.counts.total > 0 && r.counts.done_fraction() >= c.completion_threshold;
}

inline CampaignResult run_campaign(const CampaignConfig& c) {
  validate(c);
  CampaignResult res;
  std::unique_ptr<EventLoop> loop;
  if (c.flavor == Flavor::real)
    loop = std::make_unique<RealLoop>(c.payload);
  else
    loop = std::make_unique<SimLoop>();

  PilotDescription pd;
  pd.resource = resource_of(c);
  pd.walltime = from_seconds(c.walltime);
  pd.startup_latency = from_seconds(c.startup_latency);

  const std::string& t = c.workflow.name;
  if (t == "wf1-overlay") {
    Overlay ov(*loop, res.log, pd, c.overlay, workload_of(c), c.seed);
    ov.start();
    loop->run();
  } else {
    Agent agent(*loop, res.log, pd, c.scheduler, c.executor, c.seed);
    std::vector<Pipeline> pipelines;
    WorkflowConfig wc;
    if (t == "wf2-deepdrive") {
      DeepDriveParams p;
      p.nodes = c.resource.nodes;
      p.gpus_per_node = pd.resource.nodes.front().gpus;
      p.md_seconds = param(c, "md_seconds");
      p.aggregate_seconds = param(c, "aggregate_seconds");
      p.train_seconds = param(c, "train_seconds");
      p.infer_seconds = param(c, "infer_seconds");
      p.nodes_per_train = int_param(c, "nodes_per_train");
      p.time_scale = c.workload.time_scale;
      AdaptiveLoopConfig lc;
      lc.max_iterations = int_param(c, "iterations");
      lc.outlier_probability = param(c, "outlier_probability");
      lc.comm_latency = param(c, "comm_latency");
      try {
        validate(lc);
      } catch (const InvalidSpec& e) {
        throw ConfigError("workflow.params", e.what());
      }
      Pipeline pl = deepdrive_pipeline(p);
      pl.adapt = bernoulli_adaptation(lc, p, c.seed);
      pipelines.push_back(std::move(pl));
      wc.comm_latency = lc.comm_latency;
    } else if (t == "wf3-esmacs" || t == "wf4-ties") {
      const bool gpu = t == "wf3-esmacs";
      const int n = int_param(c, "pipelines");
      const int stages = int_param(c, "stages");
      const double secs = param(c, "seconds") * c.workload.time_scale;
      for (int i = 0; i < n; ++i) {
        Pipeline p = gpu ? wf3_pipeline(i, secs) : wf4_pipeline(i, secs);
        p.stages.resize(static_cast<std::size_t>(std::max(1, stages)), p.stages.front());
        for (std::size_t s = 0; s < p.stages.size(); ++s) {
          p.stages[s].stage_id = "s" + std::to_string(s);
          p.stages[s].tasks.front().name = p.pipeline_id + ".s" + std::to_string(s);
        }
        pipelines.push_back(std::move(p));
      }
      wc.comm_latency = param(c, "comm_latency");
    } else if (t == "hybrid-lb") {
      HybridParams hp;
      hp.wf3_seconds = param(c, "wf3_seconds") * c.workload.time_scale;
      hp.wf4_seconds = param(c, "wf4_seconds") * c.workload.time_scale;
      pipelines = hybrid_pipelines(int_param(c, "wf3_pipelines"), int_param(c, "wf4_pipelines"), hp);
      wc.comm_latency = param(c, "comm_latency");
    }
    run_pipelines(std::move(pipelines), agent, wc);
  }
  res.trace = build_trace(res.log.rows());
  compute_reports(c, res);
  return res;
}

inline json summary_json(const CampaignConfig& c, const CampaignResult& r) {
  return {{"seed", c.seed},
          {"template", c.workflow.name},
          {"backend", std::string(to_string(c.executor.backend))},
          {"flavor", detail::name_of(c.flavor)},
          {"counts", to_json(r.counts)},
          {"completion_threshold", c.completion_threshold},
          {"success", r.success},
          {"utilization", r.utilization.combined_fraction},
          {"core_utilization", r.utilization.core_fraction},
          {"gpu_utilization", r.utilization.gpu_fraction},
          {"overhead_fraction", r.overhead.fraction()},
          {"steady_state_rate_per_hour", steady_state_rate(r.rate)}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << s;
}

inline void write_reports(const std::filesystem::path& dir, const CampaignConfig& c, const CampaignResult& r) {
  std::filesystem::create_directories(dir);
  write_text(dir / "utilization.json", to_json(r.utilization).dump(2) + "\n");
  write_text(dir / "overhead.json", to_json(r.overhead).dump(2) + "\n");
  write_text(dir / "rate.json", to_json(r.rate).dump(2) + "\n");
  std::ostringstream tl;
  write_timeline_csv(tl, r.utilization);
  write_text(dir / "timeline.csv", tl.str());
  write_text(dir / "summary.json", summary_json(c, r).dump(2) + "\n");
}

inline void write_artifacts(const std::filesystem::path& dir, const CampaignConfig& c, const CampaignResult& r) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "events.jsonl", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "events.jsonl").string());
    r.log.write_jsonl(os);
  }
  write_text(dir / "config.resolved.yaml", dump_config(c));
  write_reports(dir, c, r);
}

// Recomputes the reports of a run from its event log alone.
inline CampaignResult report_from_log(const std::filesystem::path& log_path, const CampaignConfig& c) {
  std::ifstream is(log_path, std::ios::binary);
  if (!is) throw Error("cannot read " + log_path.string());
  CampaignResult r;
  r.trace = read_trace(is);
  compute_reports(c, r);
  return r;
}

}  // namespace rct
