#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tafv/ce.hpp"
#include "tafv/kernels.hpp"
#include "tafv/levels.hpp"
#include "tafv/mesh.hpp"
#include "tafv/reference.hpp"
#include "tafv/runtime.hpp"
#include "tafv/state.hpp"

namespace tafv {

class Packer;

struct TaskgenOptions {
  bool packing = true;
  // Priorities span [0, p_max]; keep p_max < the runtime's priority_levels.
  int p_max = 4;

  // Distribution extension points; all default to single-rank no-ops.
  std::vector<int> owned_ces;  // CEs this engine emits work for (empty = all)
  // Cross-rank reductions over one double: the stable step and the blow-up
  // flag go through min, the conservation record through sum.
  std::function<double(double)> allreduce_min;
  std::function<double(double)> allreduce_sum;
  // Publishes this rank's raw classification levels to the others before the
  // (replicated) smoothing pass; runs on the host with workers paused.
  std::function<void(SolverState&)> classify_sync;
  // Ghost-exchange insertion point, called mid-emission of each phase: round
  // 0 after border staging (ships staged values and window bookkeeping),
  // round 1 after border gradients (ships limited slopes).
  std::function<void(Packer&, Phase, int sub, int front, int level, int round)> comm_hook;
};

// Per-iteration task-graph accounting.
struct IterationStats {
  std::int64_t elementary = 0;   // kernel closures before packing
  std::int64_t inserted = 0;     // runtime tasks actually inserted
  std::int64_t large_packs = 0;  // whole-subiteration single-task fusions
  double submission_seconds = 0.0;
};

// Hop-count priorities: CEs holding cells of the two finest temporal levels
// get p_max, everyone else p_max minus the BFS distance to the nearest such
// CE, floored at zero. No prioritized CE at all degenerates to uniform p_max;
// a CE disconnected from every prioritized one gets 0.
std::vector<int> compute_ce_priorities(const std::vector<std::vector<int>>& adjacency,
                                       const std::vector<bool>& prioritized, int p_max);

enum class PackKind { border_cells, inner_cells, faces, large };

// One kernel closure before packing: the unit the generators emit and the
// packer fuses. `body` must be a pure function of handle-guarded data so that
// running pieces back to back inside one runtime task equals running them as
// separate tasks.
struct TaskPiece {
  std::string kind;
  int ce = -1;
  int subiteration = -1;
  int priority = 0;
  std::vector<std::pair<HandleId, Access>> accesses;
  std::function<void(const ExecutionContext&)> body;
};

// Fuses consecutive same-kind pieces of one owner (a CE, or a CE pair for
// inter-CE face work) into a single runtime task whose access set is the
// union of its members'. Before a piece joins or opens a pack, every *other*
// open pack it conflicts with (some handle touched by both, written by at
// least one side) is flushed, so the runtime's access log stays a legal
// serialization of the emission order even though insertions are deferred.
class Packer {
 public:
  Packer(Runtime& rt, bool enabled);

  // Owner key: (ce, -1) for CE-owned kinds, (min, max) for a CE pair.
  void submit(std::pair<int, int> key, PackKind kind, TaskPiece piece);
  // Inserts `pieces` as one sealed task immediately (no later fusion); used
  // for whole-subiteration fusions of a CE whose active work is all interior.
  void submit_sealed(std::pair<int, int> key, PackKind kind, std::vector<TaskPiece> pieces);
  // Bypasses packing for one-off tasks (reductions, ghost exchange); still
  // conflict-flushes so the access log keeps the emission order.
  TaskId insert_single(TaskPiece piece, bool detached = false);
  void flush_all();

  std::int64_t elementary() const { return elementary_; }
  std::int64_t inserted() const { return inserted_; }
  std::int64_t large_packs() const { return large_; }

 private:
  struct OpenPack {
    PackKind kind;
    std::vector<TaskPiece> pieces;
    std::map<HandleId, bool> touched;  // true once any member writes
  };

  static bool conflicts(const OpenPack& pack,
                        const std::vector<std::pair<HandleId, Access>>& accesses);
  void flush_conflicting(const std::pair<int, int>& key,
                         const std::vector<std::pair<HandleId, Access>>& accesses);
  void flush(const std::pair<int, int>& key);
  void insert_fused(PackKind kind, std::vector<TaskPiece> pieces);
  TaskId insert_raw(TaskPiece piece, bool detached);

  Runtime& rt_;
  bool enabled_;
  std::map<std::pair<int, int>, OpenPack> open_;  // ascending key = flush order
  std::int64_t elementary_ = 0;
  std::int64_t inserted_ = 0;
  std::int64_t large_ = 0;
};

// Task-based twin of the sequential integrator: one iteration becomes a task
// graph over per-CE border-cell / inner-cell / intra-face components plus one
// shared buffer per adjacent CE pair. Kernels are emitted in the exact order
// the sequential integrator calls them, restricted per component and temporal
// level, so the committed state matches it bitwise under any worker count or
// scheduling policy.
class TaskEngine {
 public:
  TaskEngine(const Mesh& mesh, const CESet& ces, Runtime& rt, TaskgenOptions options = {});

  IterationRecord run_iteration(SolverState& st, const SolverOptions& opt,
                                IterationStats* stats = nullptr);
  std::vector<IterationRecord> integrate(SolverState& st, const SolverOptions& opt, int iterations,
                                         std::vector<IterationStats>* stats = nullptr);

  HandleId border_handle(int ce) const { return h_border_[ce]; }
  HandleId inner_handle(int ce) const { return h_inner_[ce]; }
  HandleId faces_handle(int ce) const { return h_faces_[ce]; }
  HandleId dt_handle() const { return h_dt_; }
  // Priorities used for the most recent iteration's subiteration sweep.
  const std::vector<int>& ce_priorities() const { return prio_; }
  const IterationPlan& plan() const { return plan_; }

 private:
  // Item lists of one CE for the current iteration, filtered per temporal
  // level (cells) or cadence (faces); fringe lists are indexed by the
  // subiteration level they are staged for.
  struct CEItems {
    std::vector<std::vector<int>> border_cells, inner_cells;
    std::vector<std::vector<int>> fringe_border, fringe_inner;
    std::vector<std::vector<int>> intra_faces;
    int min_level = 0;         // smallest tau over the CE's cells
    int min_border_level = 0;  // smallest tau over its border cells
  };
  struct PairItems {
    std::vector<std::vector<int>> faces;  // per cadence
  };

  void build_items();

  using Kernel = std::function<void(kernels::Items)>;
  using Extra = std::vector<std::pair<HandleId, Access>>;
  void emit_cells(Packer& pk, std::vector<TaskPiece>* fused_out, std::string kind, int ce, int sub,
                  bool border, const std::vector<int>& items, Kernel kernel,
                  const Extra& extra = {});
  void emit_faces(Packer& pk, std::vector<TaskPiece>* fused_out, std::string kind, int ce, int peer,
                  int sub, const std::vector<int>& items, Kernel kernel, const Extra& extra = {});

  void emit_phase(Packer& pk, Phase phase, int sub, int front, int level,
                  const SolverOptions& opt);
  void emit_phase_for_ce(Packer& pk, std::vector<TaskPiece>* fused_out, int pass, Phase phase,
                         int ce, int sub, int front, int level, const SolverOptions& opt);

  const Mesh& mesh_;
  const CESet& ces_;
  Runtime& rt_;
  TaskgenOptions options_;

  std::vector<HandleId> h_border_, h_inner_, h_faces_;
  HandleId h_dt_ = -1;
  std::vector<std::pair<std::pair<int, int>, HandleId>> pairs_;  // ascending (a, b)
  std::map<std::pair<int, int>, int> pair_index_;
  // Read-access lists reused by every border-cell gradient / flux-sum task.
  std::vector<std::vector<std::pair<HandleId, Access>>> neighbor_border_reads_;
  std::vector<std::vector<std::pair<HandleId, Access>>> pair_reads_;

  std::vector<int> cell_ce_;
  std::vector<bool> cell_border_;
  std::vector<int> face_ce_;    // owning CE for intra faces, -1 for pair faces
  std::vector<int> face_pair_;  // pair index for inter-CE faces, -1 otherwise
  std::vector<bool> owned_;
  bool owns_all_ = true;
  std::vector<int> owned_cells_;  // ascending; reduction and blow-up domain

  // Per-iteration data; stable while the iteration's tasks run.
  IterationPlan plan_;
  std::vector<CEItems> items_;
  std::vector<PairItems> pair_items_;
  std::vector<int> prio_;
  std::vector<bool> fuse_;  // per CE: whole-subiteration fusion this subiteration
  std::vector<std::vector<TaskPiece>> fused_acc_;
  SolverState* st_ = nullptr;
  double dt_min_ = 0.0;
};

}  // namespace tafv
