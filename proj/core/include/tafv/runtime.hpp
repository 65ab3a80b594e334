#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tafv/common.hpp"

namespace tafv {

enum class Access { read, write, read_write };

using HandleId = int;
using TaskId = int;

// Persistent helper threads for one worker with k > 1 lanes.  run() chunks
// [0, n) contiguously across the k lanes and joins before returning, so a
// parallel task completes as a unit on its worker.
class LaneGang {
 public:
  explicit LaneGang(int lanes);
  ~LaneGang();
  LaneGang(const LaneGang&) = delete;
  LaneGang& operator=(const LaneGang&) = delete;

  int lanes() const { return lanes_; }
  void run(int n, const std::function<void(int, int)>& chunk);

 private:
  void helper(int lane);

  int lanes_;
  std::vector<std::thread> helpers_;
  std::mutex mu_;
  std::condition_variable start_;
  std::condition_variable done_;
  const std::function<void(int, int)>* chunk_ = nullptr;
  int n_ = 0;
  std::uint64_t generation_ = 0;
  int remaining_ = 0;
  bool stop_ = false;
};

// Handed to every task body.  parallel_for splits the index range across the
// executing worker's lanes; a one-lane worker runs the whole range inline.
class ExecutionContext {
 public:
  int worker = -1;
  int lanes = 1;

  void parallel_for(int n, const std::function<void(int, int)>& chunk) const {
    if (gang_ != nullptr)
      gang_->run(n, chunk);
    else
      chunk(0, n);
  }

 private:
  friend class Runtime;
  LaneGang* gang_ = nullptr;
};

struct TaskDesc {
  std::string kind;
  int ce = -1;
  int subiteration = -1;
  int priority = 0;
  std::vector<std::pair<HandleId, Access>> accesses;
  std::function<void(const ExecutionContext&)> body;  // empty = no-op
  // Detached tasks are never given to workers: once their predecessors finish
  // they queue for an external progress thread, which runs the body in its own
  // time and reports completion through complete_detached.
  bool detached = false;
};

// Ready-task container shared by the two scheduling policies.  "prio" keeps
// one FIFO per priority level and pops by decreasing priority; "fifo" is a
// single queue that ignores priorities.  Not thread-safe on its own; the
// runtime guards it with its one mutex.
class ReadyQueue {
 public:
  ReadyQueue(const std::string& policy, int priority_levels);

  void push(TaskId id, int priority);
  std::optional<TaskId> pop();
  int size() const { return size_; }

 private:
  bool by_priority_;
  int size_ = 0;
  std::vector<std::deque<TaskId>> levels_;  // one entry when FIFO
};

struct WorkerProfile {
  double executing = 0.0;  // seconds inside task bodies
  double sleeping = 0.0;   // seconds parked on the ready condition
  double overhead = 0.0;   // interval - executing - sleeping
  double interval = 0.0;   // seconds since the runtime started
};

struct TraceRecord {
  int worker = -1;  // -1 marks completions driven by an external thread
  char state = 'x';  // 'x' executing, 's' sleeping
  double t_begin = 0.0;
  double t_end = 0.0;
  std::string kind;
  int ce = -1;
  int subiteration = -1;
};

struct ReadySample {
  double t = 0.0;
  int ready = 0;
};

struct RuntimeOptions {
  std::vector<int> worker_lanes = {1};  // one entry per worker
  std::string scheduler = "prio";       // "prio" | "fifo"
  int priority_levels = 5;
  int max_execution_units = 0;  // 0 = unlimited
  double probe_period_ms = 1.0;  // 0 = no ready-count probe thread
  bool record_trace = true;
};

// Sequential-task-flow runtime: tasks inserted from one coordinator thread,
// dependencies inferred from each data handle's insertion-order access log
// (read depends on the prior writer; a write depends on the prior writer and
// every reader since), executed by a worker pool under one of two scheduling
// policies.  Execution starts as soon as a task is ready, concurrently with
// further insertion.
class Runtime {
 public:
  explicit Runtime(RuntimeOptions options = {});
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  HandleId register_handle(std::string name = "");
  TaskId insert(TaskDesc desc);

  // Returns once every inserted task (detached ones included) has completed.
  void wait_all();

  // While paused, workers finish what they hold and then execute nothing;
  // insertion stays open and queues.  Host code may touch handle-guarded data
  // directly between wait_all() and resume().
  void pause();
  void resume();

  // Joins all threads; pending tasks are abandoned.  Implied by destruction.
  void shutdown();

  // External progress-thread interface for detached tasks.
  std::optional<TaskId> next_detached(double timeout_ms);
  void execute_detached(TaskId id);  // runs the body now, timed for the trace
  void complete_detached(TaskId id);

  int worker_count() const { return static_cast<int>(options_.worker_lanes.size()); }
  int worker_lanes(int worker) const { return options_.worker_lanes[worker]; }
  const RuntimeOptions& options() const { return options_; }

  WorkerProfile profile_query(int worker) const;
  std::vector<TraceRecord> trace() const;
  std::vector<ReadySample> ready_samples() const;
  std::vector<TaskId> predecessors(TaskId id) const;
  const TaskDesc& task_desc(TaskId id) const;
  int inserted_count() const;
  int completed_count() const;
  int ready_count() const;

  // Seconds since construction on the trace clock.
  double now() const;

 private:
  struct TaskNode {
    TaskDesc desc;
    int unsatisfied = 0;
    std::vector<TaskId> successors;  // duplicates kept, counted symmetrically
    std::vector<TaskId> preds;
    bool completed = false;
    double exec_begin = 0.0;  // detached: body timing stashed for the trace
    double exec_end = 0.0;
  };

  struct HandleRec {
    std::string name;
    TaskId last_writer = -1;
    std::vector<TaskId> readers_since_write;
  };

  struct Worker {
    int id = -1;
    std::unique_ptr<LaneGang> gang;  // null for one-lane workers
    std::thread thread;
    double executing = 0.0;
    double sleeping = 0.0;
  };

  void worker_loop(Worker& w);
  void probe_loop();
  void link_dependency(TaskId pred, TaskId succ);
  void make_ready_locked(TaskId id);
  void complete_locked(TaskId id);

  RuntimeOptions options_;
  std::chrono::steady_clock::time_point epoch_;

  mutable std::mutex mu_;
  std::condition_variable worker_cv_;
  std::condition_variable done_cv_;
  std::condition_variable detached_cv_;

  std::vector<HandleRec> handles_;
  std::deque<TaskNode> nodes_;  // deque: stable references while growing
  ReadyQueue queue_;
  std::deque<TaskId> detached_ready_;
  int inserted_ = 0;
  int completed_ = 0;
  bool paused_ = false;
  bool shutdown_ = false;

  std::vector<std::unique_ptr<Worker>> workers_;
  std::thread probe_;
  std::vector<TraceRecord> trace_;
  std::vector<ReadySample> samples_;
};

}  // namespace tafv
