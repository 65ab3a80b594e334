#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "tafv/ce.hpp"
#include "tafv/levels.hpp"
#include "tafv/mesh.hpp"
#include "tafv/partition.hpp"
#include "tafv/runtime.hpp"
#include "tafv/state.hpp"
#include "tafv/taskgen.hpp"
#include "tafv/transport.hpp"

namespace tafv {

// One ghost stream between a local and a foreign CE, in one direction. For a
// send entry `cells` are this rank's cells mirrored by the peer; for a receive
// entry they are the foreign cells this rank mirrors. Always ascending global
// ids, so both ends lay out payloads identically without negotiation.
struct ExchangeComponent {
  int local_ce = -1;
  int foreign_ce = -1;
  int peer_rank = -1;
  std::vector<int> cells;
  std::vector<std::vector<int>> cells_of_level;  // cells split by temporal level
  size_t staging_bytes = 0;                      // widest payload (all levels)
};

struct ExchangePlan {
  std::vector<ExchangeComponent> send, recv;  // ascending (local_ce, foreign_ce)
  bool empty() const { return send.empty() && recv.empty(); }
};

// Built identically on every rank from replicated inputs; a send entry here
// equals the matching receive entry built on the peer, which is what lets the
// two sides agree on payload contents by construction.
ExchangePlan build_exchange_plan(const CESet& ces, const Partition& part, const LevelMap& levels,
                                 int rank);
// Partition-static part of the plan: components with their full cell lists
// but no per-level split (empty cells_of_level).
ExchangePlan build_exchange_components(const CESet& ces, const Partition& part, int rank);

// Cells of the component whose temporal level is inside `level_mask`
// (bit l = level l), ascending. The per-subiteration payload domain.
std::vector<int> masked_cells(const ExchangeComponent& comp, uint64_t level_mask);
inline uint64_t level_mask_up_to(int level) { return (uint64_t(2) << level) - 1; }

// Rank collectives over the point-to-point transport: gather to rank 0,
// reduce in ascending rank order (deterministic), broadcast back. SPMD: every
// rank must call the same sequence of operations.
class RankComm {
 public:
  explicit RankComm(Transport& tp) : tp_(tp) {}

  double allreduce_min(double v);
  double allreduce_sum(double v);
  // Publishes `values` at the owned indices of every rank into the full-size
  // array: gather owned slices to rank 0, broadcast the assembled array.
  void sync_ints(std::vector<int>& values, const std::vector<std::vector<int>>& owned_by_rank);
  void sync_doubles(std::vector<double>& values,
                    const std::vector<std::vector<int>>& owned_by_rank);

  int rank() const { return tp_.rank(); }
  int size() const { return tp_.size(); }

 private:
  std::vector<std::byte> exchange(uint32_t opcode, int dest, std::span<const std::byte> payload,
                                  int src);
  Transport& tp_;
  uint32_t seq_ = 0;  // collective sequence number; keys the matched receives
};

// Emits the four ghost-exchange task kinds at the engine's insertion points:
// pack border values into a staging buffer, send it (detached), receive the
// peer's buffer (detached), unpack into the foreign border component. The
// unpack write to the foreign CE's border handle is what serializes every
// local ghost read after the network delivery.
class GhostExchange {
 public:
  // Registers one staging buffer + handle per component and direction; the
  // component set is partition-static, so this happens once per partition.
  GhostExchange(Runtime& rt, Transport& tp, const CESet& ces, const Partition& part);

  // Per iteration, once levels are known (first hook call): fixes the payload
  // domains and registers this iteration's message tag.
  void begin_iteration(const ExchangePlan& plan, uint32_t iteration_tag);
  void bind(SolverState* st, const TaskEngine* engine) {
    st_ = st;
    engine_ = engine;
  }

  // The engine's comm hook body. Round 0 ships staged values and window
  // fronts (levels <= subiteration level + 1, covering the fringe); round 1
  // ships the freshly limited gradients (levels <= subiteration level).
  void insert(Packer& pk, Phase phase, int sub, int front, int level, int round);

  // Progress-thread probe: true when `id` can run without blocking (sends and
  // unknown tasks always; receives once their message arrived).
  bool ready(TaskId id) const;
  void completed(TaskId id);  // drop the probe entry of a finished receive

  // First failure recorded by a communication task body (empty = none); the
  // driver turns it into a rank-tagged iteration abort. Bodies must not throw
  // because worker and progress threads have no handler above them.
  std::string take_error();

 private:
  struct Stream {
    ExchangeComponent comp;
    std::shared_ptr<std::vector<std::byte>> buffer;  // staging, reused per round
    HandleId handle = -1;                            // guards the buffer
  };

  void emit_send(Packer& pk, Stream& s, int sub, uint64_t mask, uint32_t code);
  void emit_recv(Packer& pk, Stream& s, int sub, uint64_t mask, uint32_t code, int stamp);
  void record_error(std::string what);

  Runtime& rt_;
  Transport& tp_;
  SolverState* st_ = nullptr;
  const TaskEngine* engine_ = nullptr;
  std::vector<Stream> send_, recv_;
  uint32_t tag_ = 0;

  mutable std::mutex mu_;
  std::map<TaskId, MessageKey> pending_recv_;
  std::string error_;
};

struct DistOptions {
  RuntimeOptions runtime;
  bool packing = true;
  int p_max = 4;
  // Rebuild the partition from level-cost weights every N iterations
  // (0 = keep the initial partition for the whole run).
  int repartition_every = 0;
  int ces_per_rank = 1;  // CE count per rank when repartitioning
};

// One rank of the distributed integrator: owns the runtime, task engine,
// ghost exchange, and the communication progress thread that drives detached
// sends/receives so compute workers never touch the network.
class DistDriver {
 public:
  DistDriver(const Mesh& mesh, Partition part, Transport& tp, DistOptions opt = {});
  ~DistDriver();

  std::vector<IterationRecord> integrate(SolverState& st, const SolverOptions& opt, int iterations,
                                         std::vector<IterationStats>* stats = nullptr);

  Runtime& runtime() { return *rt_; }
  const CESet& ces() const { return *ces_; }
  const Partition& partition() const { return part_; }

 private:
  void rebuild();
  void repartition(SolverState& st);
  void comm_loop();

  const Mesh& mesh_;
  Partition part_;
  Transport& tp_;
  DistOptions opt_;

  std::unique_ptr<Runtime> rt_;
  std::unique_ptr<RankComm> comm_;
  std::unique_ptr<CESet> ces_;
  std::unique_ptr<GhostExchange> exchange_;
  std::unique_ptr<TaskEngine> engine_;
  std::vector<std::vector<int>> owned_cells_by_rank_;
  std::vector<int> owned_ces_;

  bool plan_ready_ = false;
  uint32_t iter_tag_ = 0;

  std::mutex comm_mu_;  // guards exchange_ swap vs. the progress thread
  std::atomic<bool> stop_{false};
  std::thread comm_thread_;
};

}  // namespace tafv
