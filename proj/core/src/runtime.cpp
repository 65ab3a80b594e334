#include "tafv/runtime.hpp"

#include <algorithm>
#include <chrono>

namespace tafv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point epoch) {
  return std::chrono::duration<double>(Clock::now() - epoch).count();
}

// Contiguous chunk of [0, n) for one lane of k.
std::pair<int, int> lane_chunk(int lane, int lanes, int n) {
  const auto begin = static_cast<int>(static_cast<std::int64_t>(lane) * n / lanes);
  const auto end = static_cast<int>(static_cast<std::int64_t>(lane + 1) * n / lanes);
  return {begin, end};
}

}  // namespace

LaneGang::LaneGang(int lanes) : lanes_(lanes) {
  require(lanes >= 1, "lane gang needs at least one lane");
  helpers_.reserve(lanes_ - 1);
  for (int lane = 1; lane < lanes_; ++lane)
    helpers_.emplace_back([this, lane] { helper(lane); });
}

LaneGang::~LaneGang() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  start_.notify_all();
  for (std::thread& t : helpers_) t.join();
}

void LaneGang::run(int n, const std::function<void(int, int)>& chunk) {
  if (lanes_ == 1) {
    chunk(0, n);
    return;
  }
  std::unique_lock<std::mutex> lk(mu_);
  chunk_ = &chunk;
  n_ = n;
  remaining_ = lanes_;
  ++generation_;
  lk.unlock();
  start_.notify_all();

  const auto [begin, end] = lane_chunk(0, lanes_, n);
  chunk(begin, end);

  lk.lock();
  if (--remaining_ > 0) done_.wait(lk, [this] { return remaining_ == 0; });
  chunk_ = nullptr;
}

void LaneGang::helper(int lane) {
  std::uint64_t seen = 0;
  for (;;) {
    std::unique_lock<std::mutex> lk(mu_);
    start_.wait(lk, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    const std::function<void(int, int)>* chunk = chunk_;
    const int n = n_;
    lk.unlock();

    const auto [begin, end] = lane_chunk(lane, lanes_, n);
    (*chunk)(begin, end);

    lk.lock();
    if (--remaining_ == 0) done_.notify_all();
  }
}

ReadyQueue::ReadyQueue(const std::string& policy, int priority_levels)
    : by_priority_(policy == "prio") {
  require(policy == "prio" || policy == "fifo", "unknown scheduler policy: " + policy);
  require(priority_levels >= 1, "priority level count must be positive");
  levels_.resize(by_priority_ ? priority_levels : 1);
}

void ReadyQueue::push(TaskId id, int priority) {
  int level = 0;
  if (by_priority_)
    level = std::clamp(priority, 0, static_cast<int>(levels_.size()) - 1);
  levels_[level].push_back(id);
  ++size_;
}

std::optional<TaskId> ReadyQueue::pop() {
  for (auto level = levels_.rbegin(); level != levels_.rend(); ++level) {
    if (level->empty()) continue;
    const TaskId id = level->front();
    level->pop_front();
    --size_;
    return id;
  }
  return std::nullopt;
}

Runtime::Runtime(RuntimeOptions options)
    : options_(std::move(options)),
      epoch_(Clock::now()),
      queue_(options_.scheduler, options_.priority_levels) {
  require(!options_.worker_lanes.empty(), "worker pool must not be empty");
  int total_lanes = 0;
  for (const int lanes : options_.worker_lanes) {
    require(lanes >= 1, "worker lane count must be positive");
    total_lanes += lanes;
  }
  require(options_.max_execution_units == 0 || total_lanes <= options_.max_execution_units,
          "worker lanes exceed available execution units");

  workers_.reserve(options_.worker_lanes.size());
  for (std::size_t i = 0; i < options_.worker_lanes.size(); ++i) {
    auto w = std::make_unique<Worker>();
    w->id = static_cast<int>(i);
    if (options_.worker_lanes[i] > 1)
      w->gang = std::make_unique<LaneGang>(options_.worker_lanes[i]);
    workers_.push_back(std::move(w));
  }
  for (auto& w : workers_) w->thread = std::thread([this, &w] { worker_loop(*w); });
  if (options_.probe_period_ms > 0.0) probe_ = std::thread([this] { probe_loop(); });
}

Runtime::~Runtime() { shutdown(); }

void Runtime::shutdown() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (shutdown_) return;
    shutdown_ = true;
  }
  worker_cv_.notify_all();
  detached_cv_.notify_all();
  done_cv_.notify_all();
  for (auto& w : workers_) w->thread.join();
  if (probe_.joinable()) probe_.join();
}

double Runtime::now() const { return seconds_since(epoch_); }

HandleId Runtime::register_handle(std::string name) {
  std::lock_guard<std::mutex> lk(mu_);
  require(!shutdown_, "runtime is shut down");
  handles_.push_back(HandleRec{std::move(name), -1, {}});
  return static_cast<HandleId>(handles_.size()) - 1;
}

void Runtime::link_dependency(TaskId pred, TaskId succ) {
  if (pred < 0 || pred == succ) return;
  TaskNode& p = nodes_[pred];
  nodes_[succ].preds.push_back(pred);
  if (p.completed) return;
  // Duplicate edges through several handles stay duplicated on both sides:
  // each completion notification pays down one unsatisfied count.
  p.successors.push_back(succ);
  ++nodes_[succ].unsatisfied;
}

TaskId Runtime::insert(TaskDesc desc) {
  std::lock_guard<std::mutex> lk(mu_);
  require(!shutdown_, "runtime is shut down");
  for (const auto& [handle, mode] : desc.accesses) {
    (void)mode;
    require(handle >= 0 && handle < static_cast<HandleId>(handles_.size()),
            "unknown data handle");
  }

  const TaskId id = static_cast<TaskId>(nodes_.size());
  nodes_.push_back(TaskNode{std::move(desc), 0, {}, {}, false, 0.0, 0.0});
  TaskNode& node = nodes_.back();

  for (const auto& [handle, mode] : node.desc.accesses) {
    HandleRec& rec = handles_[handle];
    if (mode == Access::read) {
      link_dependency(rec.last_writer, id);
      rec.readers_since_write.push_back(id);
    } else {
      link_dependency(rec.last_writer, id);
      for (const TaskId reader : rec.readers_since_write) link_dependency(reader, id);
      rec.last_writer = id;
      rec.readers_since_write.clear();
    }
  }

  ++inserted_;
  if (node.unsatisfied == 0) make_ready_locked(id);
  return id;
}

void Runtime::make_ready_locked(TaskId id) {
  if (nodes_[id].desc.detached) {
    detached_ready_.push_back(id);
    detached_cv_.notify_all();
  } else {
    queue_.push(id, nodes_[id].desc.priority);
    worker_cv_.notify_one();
  }
}

void Runtime::complete_locked(TaskId id) {
  TaskNode& node = nodes_[id];
  TAFV_ASSERT(!node.completed, "task completed twice");
  node.completed = true;
  node.desc.body = nullptr;  // release captures early
  for (const TaskId succ : node.successors)
    if (--nodes_[succ].unsatisfied == 0) make_ready_locked(succ);
  if (++completed_ == inserted_) done_cv_.notify_all();
}

void Runtime::worker_loop(Worker& w) {
  ExecutionContext ctx;
  ctx.worker = w.id;
  ctx.lanes = options_.worker_lanes[w.id];
  ctx.gang_ = w.gang.get();

  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    if (paused_ || queue_.size() == 0) {
      const double sleep_begin = now();
      double slice_end = sleep_begin;  // accrue per slice so queries stay current
      while (!shutdown_ && (paused_ || queue_.size() == 0)) {
        worker_cv_.wait_for(lk, std::chrono::microseconds(200));
        const double t = now();
        w.sleeping += t - slice_end;
        slice_end = t;
      }
      if (options_.record_trace)
        trace_.push_back({w.id, 's', sleep_begin, slice_end, "", -1, -1});
    }
    if (shutdown_) return;

    const std::optional<TaskId> id = queue_.pop();
    if (!id) continue;
    TaskNode& node = nodes_[*id];
    const std::function<void(const ExecutionContext&)> body = std::move(node.desc.body);
    lk.unlock();

    const double t_begin = now();
    if (body) body(ctx);
    const double t_end = now();

    lk.lock();
    w.executing += t_end - t_begin;
    if (options_.record_trace)
      trace_.push_back({w.id, 'x', t_begin, t_end, node.desc.kind, node.desc.ce,
                        node.desc.subiteration});
    complete_locked(*id);
  }
}

void Runtime::probe_loop() {
  const auto period =
      std::chrono::duration<double, std::milli>(options_.probe_period_ms);
  for (;;) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (shutdown_) return;
      samples_.push_back({now(), queue_.size()});
    }
    std::this_thread::sleep_for(period);
  }
}

void Runtime::wait_all() {
  std::unique_lock<std::mutex> lk(mu_);
  done_cv_.wait(lk, [this] { return shutdown_ || completed_ == inserted_; });
}

void Runtime::pause() {
  std::lock_guard<std::mutex> lk(mu_);
  paused_ = true;
}

void Runtime::resume() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    paused_ = false;
  }
  worker_cv_.notify_all();
}

std::optional<TaskId> Runtime::next_detached(double timeout_ms) {
  std::unique_lock<std::mutex> lk(mu_);
  detached_cv_.wait_for(lk, std::chrono::duration<double, std::milli>(timeout_ms),
                        [this] { return shutdown_ || !detached_ready_.empty(); });
  if (detached_ready_.empty()) return std::nullopt;
  const TaskId id = detached_ready_.front();
  detached_ready_.pop_front();
  return id;
}

void Runtime::execute_detached(TaskId id) {
  std::function<void(const ExecutionContext&)> body;
  {
    std::lock_guard<std::mutex> lk(mu_);
    TAFV_ASSERT(nodes_[id].desc.detached, "task is not detached");
    body = std::move(nodes_[id].desc.body);
    nodes_[id].exec_begin = now();
  }
  ExecutionContext ctx;  // worker -1, one lane
  if (body) body(ctx);
  std::lock_guard<std::mutex> lk(mu_);
  nodes_[id].exec_end = now();
}

void Runtime::complete_detached(TaskId id) {
  std::lock_guard<std::mutex> lk(mu_);
  TAFV_ASSERT(nodes_[id].desc.detached, "task is not detached");
  if (options_.record_trace && nodes_[id].exec_end > 0.0)
    trace_.push_back({-1, 'x', nodes_[id].exec_begin, nodes_[id].exec_end,
                      nodes_[id].desc.kind, nodes_[id].desc.ce,
                      nodes_[id].desc.subiteration});
  complete_locked(id);
}

WorkerProfile Runtime::profile_query(int worker) const {
  std::lock_guard<std::mutex> lk(mu_);
  const Worker& w = *workers_[worker];
  WorkerProfile p;
  p.executing = w.executing;
  p.sleeping = w.sleeping;
  p.interval = now();
  p.overhead = p.interval - p.executing - p.sleeping;
  return p;
}

std::vector<TraceRecord> Runtime::trace() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<TraceRecord> out = trace_;
  std::stable_sort(out.begin(), out.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.t_begin < b.t_begin;
                   });
  return out;
}

std::vector<ReadySample> Runtime::ready_samples() const {
  std::lock_guard<std::mutex> lk(mu_);
  return samples_;
}

std::vector<TaskId> Runtime::predecessors(TaskId id) const {
  std::lock_guard<std::mutex> lk(mu_);
  return nodes_[id].preds;
}

const TaskDesc& Runtime::task_desc(TaskId id) const {
  std::lock_guard<std::mutex> lk(mu_);
  return nodes_[id].desc;
}

int Runtime::inserted_count() const {
  std::lock_guard<std::mutex> lk(mu_);
  return inserted_;
}

int Runtime::completed_count() const {
  std::lock_guard<std::mutex> lk(mu_);
  return completed_;
}

int Runtime::ready_count() const {
  std::lock_guard<std::mutex> lk(mu_);
  return queue_.size();
}

}  // namespace tafv
