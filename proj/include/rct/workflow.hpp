#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "executors.hpp"
#include "rng.hpp"
#include "task.hpp"

namespace rct {

struct Stage {
  std::string stage_id;
  std::vector<TaskDescription> tasks;
};

enum class Branch { new_tasks, continue_same, stop };
enum class FailurePolicy { continue_on_failure, abort };

struct StageRecord {
  std::string stage_id;
  int iteration = 0;
  std::vector<TaskId> task_ids;
  std::vector<std::string> names;
  Micros submitted = 0;
  std::optional<Micros> collected;
  int failed = 0;
};

struct IterationResult {
  std::string pipeline_id;
  int iteration = 0;
  std::vector<StageRecord> stages;
};

// Decision taken at pipeline end. With new_tasks, `first_stage` replaces the
// task list of the first stage for the next iteration.
struct Adaptation {
  Branch branch = Branch::stop;
  std::vector<TaskDescription> first_stage;
};

struct Pipeline {
  std::string pipeline_id;
  std::vector<Stage> stages;
  std::function<Adaptation(const IterationResult&)> adapt;
};

struct AdaptiveLoopConfig {
  int max_iterations = 8;
  double outlier_probability = 0.0;
  // Seconds per engine<->executor interaction.
  double comm_latency = 0.0;
};

inline void validate(const AdaptiveLoopConfig& c) {
  if (c.max_iterations < 1) throw InvalidSpec("max_iterations must be >= 1");
  if (!(c.outlier_probability >= 0.0 && c.outlier_probability <= 1.0))
    throw InvalidSpec("outlier_probability must lie in [0,1]");
  if (!(c.comm_latency >= 0.0)) throw InvalidSpec("comm_latency must be >= 0");
}

inline void validate(const Pipeline& p) {
  if (p.stages.empty()) throw InvalidSpec("pipeline '" + p.pipeline_id + "' has no stages");
  for (const auto& s : p.stages)
    if (s.tasks.empty()) throw InvalidSpec("stage '" + s.stage_id + "' of '" + p.pipeline_id + "' has no tasks");
}

struct WorkflowConfig {
  double comm_latency = 0.0;
  FailurePolicy on_failure = FailurePolicy::continue_on_failure;
};

struct PipelineRecord {
  std::string pipeline_id;
  std::vector<StageRecord> stages;
  int iterations = 0;
  bool aborted = false;
  std::optional<Micros> finished;
};

// Single control loop over an agent: stages of a pipeline run in order,
// tasks of a stage and distinct pipelines run concurrently. Every stage
// submit and stage collect costs one comm_latency.
class WorkflowEngine {
 public:
  WorkflowEngine(Agent& agent, WorkflowConfig cfg) : agent_(agent), cfg_(cfg) {
    if (!(cfg_.comm_latency >= 0.0)) throw InvalidSpec("comm_latency must be >= 0");
    latency_ = from_seconds(cfg_.comm_latency);
  }

  WorkflowEngine(const WorkflowEngine&) = delete;
  WorkflowEngine& operator=(const WorkflowEngine&) = delete;

  std::size_t add(Pipeline p) {
    validate(p);
    State s;
    s.rec.pipeline_id = p.pipeline_id;
    s.pipeline = std::move(p);
    states_.push_back(std::move(s));
    return states_.size() - 1;
  }

  // Starts the agent if needed and schedules the first stage of every
  // pipeline. The agent is shut down once every pipeline is finished.
  void start() {
    agent_.start();
    remaining_ = states_.size();
    if (remaining_ == 0) {
      agent_.shutdown();
      return;
    }
    for (std::size_t i = 0; i < states_.size(); ++i) engine_step([this, i] { submit_stage(i); });
  }

  const std::vector<PipelineRecord> records() const {
    std::vector<PipelineRecord> out;
    for (const auto& s : states_) out.push_back(s.rec);
    return out;
  }
  const PipelineRecord& record(std::size_t i) const { return states_.at(i).rec; }
  bool finished() const { return remaining_ == 0; }

 private:
  struct State {
    Pipeline pipeline;
    PipelineRecord rec;
    std::size_t stage = 0;
    int iteration = 0;
    std::size_t pending = 0;
    std::size_t first_record = 0;
  };

  template <class F>
  void engine_step(F&& f) {
    auto& loop = agent_.loop();
    loop.at(loop.now() + latency_, std::forward<F>(f));
  }

  void submit_stage(std::size_t pi) {
    State& s = states_[pi];
    if (agent_.ended()) {
      finish_pipeline(pi, true);
      return;
    }
    const Stage& stage = s.pipeline.stages[s.stage];
    StageRecord sr;
    sr.stage_id = stage.stage_id;
    sr.iteration = s.iteration;
    sr.submitted = agent_.loop().now();
    s.rec.stages.push_back(sr);
    const std::size_t ri = s.rec.stages.size() - 1;
    s.pending = stage.tasks.size();
    for (TaskDescription t : stage.tasks) {
      t.id = agent_.next_id();
      t.stage_ref = s.pipeline.pipeline_id + "/" + stage.stage_id;
      s.rec.stages[ri].task_ids.push_back(t.id);
      s.rec.stages[ri].names.push_back(t.name);
      agent_.submit(std::move(t), [this, pi, ri](const TaskRecord& r) { on_task(pi, ri, r); });
    }
  }

  void on_task(std::size_t pi, std::size_t ri, const TaskRecord& r) {
    State& s = states_[pi];
    if (r.state != TaskState::done) ++s.rec.stages[ri].failed;
    if (--s.pending > 0) return;
    engine_step([this, pi, ri] { collect_stage(pi, ri); });
  }

  void collect_stage(std::size_t pi, std::size_t ri) {
    State& s = states_[pi];
    s.rec.stages[ri].collected = agent_.loop().now();
    if (s.rec.stages[ri].failed > 0 && cfg_.on_failure == FailurePolicy::abort) {
      finish_pipeline(pi, true);
      return;
    }
    if (++s.stage < s.pipeline.stages.size()) {
      engine_step([this, pi] { submit_stage(pi); });
      return;
    }
    // End of an iteration.
    ++s.rec.iterations;
    if (!s.pipeline.adapt) {
      finish_pipeline(pi, false);
      return;
    }
    IterationResult res;
    res.pipeline_id = s.pipeline.pipeline_id;
    res.iteration = s.iteration;
    res.stages.assign(s.rec.stages.begin() + static_cast<std::ptrdiff_t>(s.first_record), s.rec.stages.end());
    Adaptation a = s.pipeline.adapt(res);
    if (a.branch == Branch::stop) {
      finish_pipeline(pi, false);
      return;
    }
    if (a.branch == Branch::new_tasks) {
      if (a.first_stage.empty()) throw InvalidSpec("adaptation produced an empty first stage");
      s.pipeline.stages.front().tasks = std::move(a.first_stage);
    }
    ++s.iteration;
    s.stage = 0;
    s.first_record = s.rec.stages.size();
    engine_step([this, pi] { submit_stage(pi); });
  }

  void finish_pipeline(std::size_t pi, bool aborted) {
    State& s = states_[pi];
    if (s.rec.finished) return;
    s.rec.aborted = aborted;
    s.rec.finished = agent_.loop().now();
    if (--remaining_ == 0) agent_.shutdown();
  }

  Agent& agent_;
  WorkflowConfig cfg_;
  Micros latency_ = 0;
  std::vector<State> states_;
  std::size_t remaining_ = 0;
};

struct WorkflowRun {
  std::vector<PipelineRecord> pipelines;
  std::vector<TaskRecord> tasks;
  // First task queued to last task terminal.
  Micros ttx = 0;
};

inline Micros ttx_of(const std::vector<TaskRecord>& tasks) {
  Micros first = kNever;
  Micros last = 0;
  for (const auto& t : tasks) {
    if (t.ts.queued) first = std::min(first, *t.ts.queued);
    if (t.ts.done) last = std::max(last, *t.ts.done);
  }
  return first == kNever ? 0 : std::max<Micros>(0, last - first);
}

// Runs pipelines to completion on `agent` (driving its event loop).
inline WorkflowRun run_pipelines(std::vector<Pipeline> pipelines, Agent& agent, WorkflowConfig cfg = {}) {
  WorkflowEngine engine(agent, cfg);
  for (auto& p : pipelines) engine.add(std::move(p));
  engine.start();
  agent.loop().run();
  WorkflowRun out;
  out.pipelines = engine.records();
  out.tasks = agent.records();
  out.ttx = ttx_of(out.tasks);
  return out;
}

inline WorkflowRun run_pipeline(Pipeline p, Agent& agent, WorkflowConfig cfg = {}) {
  std::vector<Pipeline> v;
  v.push_back(std::move(p));
  return run_pipelines(std::move(v), agent, cfg);
}

// --- templates -------------------------------------------------------------

inline TaskDescription make_task(std::string name, int cores_per_rank, int ranks, int gpus, double seconds,
                                 std::optional<std::string> tag = std::nullopt) {
  TaskDescription t;
  t.name = std::move(name);
  t.cpu_cores_per_rank = cores_per_rank;
  t.ranks = ranks;
  t.gpus = gpus;
  t.payload.duration = from_seconds(seconds);
  t.tag = std::move(tag);
  return t;
}

// Four-stage adaptive ML-driven MD loop: simulate, aggregate, train, infer.
struct DeepDriveParams {
  int nodes = 20;
  int gpus_per_node = 6;
  double md_seconds = 900.0;
  double aggregate_seconds = 30.0;
  double train_seconds = 40.0;
  double infer_seconds = 20.0;
  // One training task (one GPU) per this many nodes.
  int nodes_per_train = 20;
  double time_scale = 1.0;
};

inline std::vector<TaskDescription> deepdrive_md_tasks(const DeepDriveParams& p, int generation) {
  std::vector<TaskDescription> out;
  const int n = p.nodes * p.gpus_per_node;
  const std::string prefix = generation == 0 ? "md." : "md.g" + std::to_string(generation) + ".";
  for (int i = 0; i < n; ++i) out.push_back(make_task(prefix + std::to_string(i), 1, 1, 1, p.md_seconds * p.time_scale));
  return out;
}

inline Pipeline deepdrive_pipeline(const DeepDriveParams& p, std::string id = "wf2") {
  if (p.nodes < 1 || p.gpus_per_node < 1 || p.nodes_per_train < 1) throw InvalidSpec("bad deepdrive parameters");
  Pipeline pl;
  pl.pipeline_id = std::move(id);
  pl.stages.push_back({"simulate", deepdrive_md_tasks(p, 0)});
  pl.stages.push_back({"aggregate", {make_task("aggregate.0", 1, 1, 0, p.aggregate_seconds * p.time_scale)}});
  Stage train{"train", {}};
  const int trainers = (p.nodes + p.nodes_per_train - 1) / p.nodes_per_train;
  for (int i = 0; i < trainers; ++i)
    train.tasks.push_back(make_task("train." + std::to_string(i), 1, 1, 1, p.train_seconds * p.time_scale));
  pl.stages.push_back(std::move(train));
  pl.stages.push_back({"infer", {make_task("infer.0", 1, 1, 1, p.infer_seconds * p.time_scale)}});
  return pl;
}

// Outlier branch as a Bernoulli draw. The draw for an iteration depends only
// on (seed, iteration), so the hook is a pure function of its input.
inline std::function<Adaptation(const IterationResult&)> bernoulli_adaptation(AdaptiveLoopConfig cfg,
                                                                              DeepDriveParams p,
                                                                              std::uint64_t seed) {
  validate(cfg);
  return [cfg, p, seed](const IterationResult& r) {
    Adaptation a;
    if (r.iteration + 1 >= cfg.max_iterations) return a;
    Rng rng = make_stream(seed + static_cast<std::uint64_t>(r.iteration), stream::outliers);
    const bool outliers = std::bernoulli_distribution(cfg.outlier_probability)(rng);
    if (outliers) {
      a.branch = Branch::new_tasks;
      a.first_stage = deepdrive_md_tasks(p, r.iteration + 1);
    } else {
      a.branch = Branch::continue_same;
    }
    return a;
  };
}

struct AdaptiveRun {
  WorkflowRun run;
  std::vector<IterationResult> iterations;
  std::vector<Branch> branches;
};

inline AdaptiveRun iterate_adaptive(const AdaptiveLoopConfig& cfg, Pipeline pipeline, Agent& agent,
                                    std::uint64_t seed, const DeepDriveParams& params = {}) {
  validate(cfg);
  if (pipeline.stages.size() != 4) throw InvalidSpec("adaptive loop template needs 4 stages");
  AdaptiveRun out;
  auto hook = bernoulli_adaptation(cfg, params, seed);
  pipeline.adapt = [&out, hook](const IterationResult& r) {
    out.iterations.push_back(r);
    Adaptation a = hook(r);
    out.branches.push_back(a.branch);
    return a;
  };
  out.run = run_pipeline(std::move(pipeline), agent, WorkflowConfig{cfg.comm_latency, {}});
  return out;
}

// ESMACS-like GPU ensemble: 4 single-task stages of 1 GPU + 1 core.
inline Pipeline wf3_pipeline(int index, double seconds) {
  Pipeline p;
  p.pipeline_id = "wf3." + std::to_string(index);
  for (int s = 0; s < 4; ++s)
    p.stages.push_back({"s" + std::to_string(s),
                        {make_task("wf3." + std::to_string(index) + ".s" + std::to_string(s), 1, 1, 1, seconds)}});
  return p;
}

// TIES-like CPU MPI ensemble: 3 single-task stages of 36 single-core ranks.
inline Pipeline wf4_pipeline(int index, double seconds) {
  Pipeline p;
  p.pipeline_id = "wf4." + std::to_string(index);
  for (int s = 0; s < 3; ++s)
    p.stages.push_back({"s" + std::to_string(s),
                        {make_task("wf4." + std::to_string(index) + ".s" + std::to_string(s), 1, 36, 0, seconds)}});
  return p;
}

struct HybridParams {
  double wf3_seconds = 30.0;
  double wf4_seconds = 90.0;
};

inline std::vector<Pipeline> hybrid_pipelines(int wf3_count, int wf4_count, const HybridParams& p = {}) {
  if (wf3_count < 0 || wf4_count < 0) throw InvalidSpec("hybrid counts must be >= 0");
  std::vector<Pipeline> out;
  // Interleave so both kinds are in the queue from the start.
  for (int i = 0, j = 0; i < wf3_count || j < wf4_count;) {
    if (j < wf4_count) out.push_back(wf4_pipeline(j++, p.wf4_seconds));
    if (i < wf3_count) out.push_back(wf3_pipeline(i++, p.wf3_seconds));
  }
  return out;
}

inline WorkflowRun run_hybrid(int wf3_count, int wf4_count, Agent& agent, const HybridParams& p = {},
                              WorkflowConfig cfg = {}) {
  return run_pipelines(hybrid_pipelines(wf3_count, wf4_count, p), agent, cfg);
}

}  // namespace rct
