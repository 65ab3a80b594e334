#include "tafv/taskgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "tafv/common.hpp"
#include "tafv/kernels.hpp"

namespace tafv {

std::vector<int> compute_ce_priorities(const std::vector<std::vector<int>>& adjacency,
                                       const std::vector<bool>& prioritized, int p_max) {
  const int n = static_cast<int>(adjacency.size());
  require(static_cast<int>(prioritized.size()) == n, "priorities: flag/adjacency size mismatch");
  require(p_max >= 0, "priorities: negative p_max");

  std::vector<int> dist(n, -1);
  std::deque<int> frontier;
  for (int ce = 0; ce < n; ++ce)
    if (prioritized[ce]) {
      dist[ce] = 0;
      frontier.push_back(ce);
    }
  if (frontier.empty()) return std::vector<int>(n, p_max);

  while (!frontier.empty()) {
    const int ce = frontier.front();
    frontier.pop_front();
    for (int nb : adjacency[ce])
      if (dist[nb] < 0) {
        dist[nb] = dist[ce] + 1;
        frontier.push_back(nb);
      }
  }
  std::vector<int> prio(n, 0);  // CEs unreachable from any hot spot stay at the floor
  for (int ce = 0; ce < n; ++ce)
    if (dist[ce] >= 0) prio[ce] = std::max(0, p_max - dist[ce]);
  return prio;
}

// ---------------------------------------------------------------------------
// Packer

Packer::Packer(Runtime& rt, bool enabled) : rt_(rt), enabled_(enabled) {}

bool Packer::conflicts(const OpenPack& pack,
                       const std::vector<std::pair<HandleId, Access>>& accesses) {
  for (const auto& [handle, mode] : accesses) {
    auto it = pack.touched.find(handle);
    if (it != pack.touched.end() && (it->second || mode != Access::read)) return true;
  }
  return false;
}

void Packer::flush_conflicting(const std::pair<int, int>& key,
                               const std::vector<std::pair<HandleId, Access>>& accesses) {
  std::vector<std::pair<int, int>> victims;  // map order keeps this ascending
  for (const auto& [k, pack] : open_)
    if (k != key && conflicts(pack, accesses)) victims.push_back(k);
  for (const auto& k : victims) flush(k);
}

void Packer::insert_fused(PackKind kind, std::vector<TaskPiece> pieces) {
  TaskDesc desc;
  if (pieces.size() == 1) {
    desc.kind = pieces.front().kind;
  } else {
    switch (kind) {
      case PackKind::border_cells: desc.kind = "pk.b"; break;
      case PackKind::inner_cells: desc.kind = "pk.i"; break;
      case PackKind::faces: desc.kind = "pk.f"; break;
      case PackKind::large: desc.kind = "large"; break;
    }
  }
  desc.ce = pieces.front().ce;
  desc.subiteration = pieces.front().subiteration;
  desc.priority = pieces.front().priority;

  std::map<HandleId, bool> merged;
  for (const TaskPiece& p : pieces)
    for (const auto& [handle, mode] : p.accesses) merged[handle] |= mode != Access::read;
  desc.accesses.reserve(merged.size());
  for (const auto& [handle, writes] : merged)
    desc.accesses.emplace_back(handle, writes ? Access::read_write : Access::read);

  desc.body = [pieces = std::move(pieces)](const ExecutionContext& ctx) {
    for (const TaskPiece& p : pieces) p.body(ctx);
  };
  inserted_ += 1;
  rt_.insert(std::move(desc));
}

void Packer::flush(const std::pair<int, int>& key) {
  auto it = open_.find(key);
  if (it == open_.end()) return;
  OpenPack pack = std::move(it->second);
  open_.erase(it);
  insert_fused(pack.kind, std::move(pack.pieces));
}

TaskId Packer::insert_raw(TaskPiece piece, bool detached) {
  TaskDesc desc;
  desc.kind = std::move(piece.kind);
  desc.ce = piece.ce;
  desc.subiteration = piece.subiteration;
  desc.priority = piece.priority;
  desc.accesses = std::move(piece.accesses);
  desc.body = std::move(piece.body);
  desc.detached = detached;
  inserted_ += 1;
  return rt_.insert(std::move(desc));
}

void Packer::submit(std::pair<int, int> key, PackKind kind, TaskPiece piece) {
  elementary_ += 1;
  if (!enabled_) {
    insert_raw(std::move(piece), false);
    return;
  }

  flush_conflicting(key, piece.accesses);
  auto it = open_.find(key);
  if (it != open_.end() && it->second.kind != kind) {
    flush(key);
    it = open_.end();
  }
  if (it == open_.end()) {
    OpenPack pack;
    pack.kind = kind;
    for (const auto& [handle, mode] : piece.accesses) pack.touched[handle] |= mode != Access::read;
    pack.pieces.push_back(std::move(piece));
    open_.emplace(std::move(key), std::move(pack));
  } else {
    for (const auto& [handle, mode] : piece.accesses)
      it->second.touched[handle] |= mode != Access::read;
    it->second.pieces.push_back(std::move(piece));
  }
}

void Packer::submit_sealed(std::pair<int, int> key, PackKind kind, std::vector<TaskPiece> pieces) {
  require(!pieces.empty(), "packer: sealed pack without pieces");
  elementary_ += static_cast<std::int64_t>(pieces.size());
  if (!enabled_) {
    for (TaskPiece& piece : pieces) insert_raw(std::move(piece), false);
    return;
  }
  if (kind == PackKind::large) large_ += 1;

  std::vector<std::pair<HandleId, Access>> merged;
  for (const TaskPiece& p : pieces)
    merged.insert(merged.end(), p.accesses.begin(), p.accesses.end());
  flush(key);
  flush_conflicting(key, merged);
  insert_fused(kind, std::move(pieces));
}

TaskId Packer::insert_single(TaskPiece piece, bool detached) {
  elementary_ += 1;
  if (enabled_) flush_conflicting({-1, -1}, piece.accesses);
  return insert_raw(std::move(piece), detached);
}

void Packer::flush_all() {
  while (!open_.empty()) flush(open_.begin()->first);
}

// ---------------------------------------------------------------------------
// TaskEngine

TaskEngine::TaskEngine(const Mesh& mesh, const CESet& ces, Runtime& rt, TaskgenOptions options)
    : mesh_(mesh), ces_(ces), rt_(rt), options_(std::move(options)) {
  require(ces_.size() > 0, "taskgen: empty CE set");
  require(options_.p_max >= 0, "taskgen: negative p_max");

  const int n = ces_.size();
  owned_.assign(n, options_.owned_ces.empty());
  owns_all_ = options_.owned_ces.empty();
  for (int ce : options_.owned_ces) {
    require(ce >= 0 && ce < n, "taskgen: owned CE out of range");
    owned_[ce] = true;
  }

  h_border_.resize(n);
  h_inner_.resize(n);
  h_faces_.resize(n);
  for (int ce = 0; ce < n; ++ce) {
    h_border_[ce] = rt_.register_handle("b" + std::to_string(ce));
    h_inner_[ce] = rt_.register_handle("i" + std::to_string(ce));
    h_faces_[ce] = rt_.register_handle("f" + std::to_string(ce));
  }
  h_dt_ = rt_.register_handle("dt");

  cell_ce_.assign(mesh_.cell_count(), -1);
  cell_border_.assign(mesh_.cell_count(), false);
  for (int ce = 0; ce < n; ++ce) {
    for (int c : ces_.ce(ce).inner_cells) cell_ce_[c] = ce;
    for (int c : ces_.ce(ce).border_cells) {
      cell_ce_[c] = ce;
      cell_border_[c] = true;
    }
  }
  for (int c = 0; c < mesh_.cell_count(); ++c)
    require(cell_ce_[c] >= 0, "taskgen: cell missing from every CE");
  for (int c = 0; c < mesh_.cell_count(); ++c)
    if (owned_[cell_ce_[c]]) owned_cells_.push_back(c);

  face_ce_.assign(mesh_.face_count(), -1);
  face_pair_.assign(mesh_.face_count(), -1);
  for (int ce = 0; ce < n; ++ce) {
    for (int f : ces_.ce(ce).intra_faces) face_ce_[f] = ce;
    for (const auto& [peer, faces] : ces_.ce(ce).inter_faces) {
      if (peer < ce) continue;  // each pair registered once, from the low side
      const int index = static_cast<int>(pairs_.size());
      pair_index_[{ce, peer}] = index;
      pairs_.push_back(
          {{ce, peer}, rt_.register_handle("x" + std::to_string(ce) + "." + std::to_string(peer))});
      for (int f : faces) face_pair_[f] = index;
    }
  }
  for (int f = 0; f < mesh_.face_count(); ++f)
    require(face_ce_[f] >= 0 || face_pair_[f] >= 0, "taskgen: face missing from every CE");

  neighbor_border_reads_.resize(n);
  pair_reads_.resize(n);
  for (int ce = 0; ce < n; ++ce) {
    for (int nb : ces_.adjacency[ce])
      neighbor_border_reads_[ce].emplace_back(h_border_[nb], Access::read);
    for (const auto& [peer, faces] : ces_.ce(ce).inter_faces) {
      const std::pair<int, int> key{std::min(ce, peer), std::max(ce, peer)};
      pair_reads_[ce].emplace_back(pairs_[pair_index_.at(key)].second, Access::read);
    }
  }

  prio_.assign(n, options_.p_max);
}

void TaskEngine::build_items() {
  const int n = ces_.size();
  const int theta = plan_.theta();
  items_.assign(n, CEItems{});
  pair_items_.assign(pairs_.size(), PairItems{});
  for (CEItems& it : items_) {
    it.border_cells.assign(theta + 1, {});
    it.inner_cells.assign(theta + 1, {});
    it.fringe_border.assign(theta + 1, {});
    it.fringe_inner.assign(theta + 1, {});
    it.intra_faces.assign(theta + 1, {});
    it.min_level = theta + 1;
    it.min_border_level = std::numeric_limits<int>::max() / 2;
  }
  for (PairItems& it : pair_items_) it.faces.assign(theta + 1, {});

  for (int level = 0; level <= theta; ++level)
    for (int c : plan_.levels.cells_of_level[level]) {
      CEItems& it = items_[cell_ce_[c]];
      (cell_border_[c] ? it.border_cells : it.inner_cells)[level].push_back(c);
      it.min_level = std::min(it.min_level, level);
      if (cell_border_[c]) it.min_border_level = std::min(it.min_border_level, level);
    }
  const int fringe_levels = std::min(theta, static_cast<int>(plan_.fringe.size()));
  for (int level = 0; level < fringe_levels; ++level)
    for (int c : plan_.fringe[level]) {
      CEItems& it = items_[cell_ce_[c]];
      (cell_border_[c] ? it.fringe_border : it.fringe_inner)[level].push_back(c);
    }
  for (int cadence = 0; cadence <= theta; ++cadence)
    for (int f : plan_.faces_of_cadence[cadence]) {
      if (face_pair_[f] >= 0)
        pair_items_[face_pair_[f]].faces[cadence].push_back(f);
      else
        items_[face_ce_[f]].intra_faces[cadence].push_back(f);
    }

#if defined(TAFV_ASSERTS) && TAFV_ASSERTS
  // Write-contract check: the per-component lists must partition the mesh, so
  // no kernel can touch an item outside the component its task declares.
  std::int64_t cells = 0, faces = 0;
  for (const CEItems& it : items_)
    for (int l = 0; l <= theta; ++l) {
      cells += static_cast<std::int64_t>(it.border_cells[l].size() + it.inner_cells[l].size());
      faces += static_cast<std::int64_t>(it.intra_faces[l].size());
    }
  for (const PairItems& it : pair_items_)
    for (int l = 0; l <= theta; ++l) faces += static_cast<std::int64_t>(it.faces[l].size());
  TAFV_ASSERT(cells == mesh_.cell_count() && faces == mesh_.face_count(),
              "taskgen: component item lists do not partition the mesh");
#endif
}

void TaskEngine::emit_cells(Packer& pk, std::vector<TaskPiece>* fused_out, std::string kind,
                            int ce, int sub, bool border, const std::vector<int>& items,
                            Kernel kernel, const Extra& extra) {
  if (items.empty()) return;
  TaskPiece piece;
  piece.kind = std::move(kind);
  piece.ce = ce;
  piece.subiteration = sub;
  piece.priority = prio_[ce];
  piece.accesses.emplace_back(border ? h_border_[ce] : h_inner_[ce], Access::read_write);
  piece.accesses.insert(piece.accesses.end(), extra.begin(), extra.end());
  piece.body = [kernel = std::move(kernel), items = &items](const ExecutionContext& ctx) {
    ctx.parallel_for(static_cast<int>(items->size()), [&](int begin, int end) {
      kernel(kernels::Items(items->data() + begin, static_cast<size_t>(end - begin)));
    });
  };
  if (fused_out != nullptr)
    fused_out->push_back(std::move(piece));
  else
    pk.submit({ce, -1}, border ? PackKind::border_cells : PackKind::inner_cells,
              std::move(piece));
}

void TaskEngine::emit_faces(Packer& pk, std::vector<TaskPiece>* fused_out, std::string kind,
                            int ce, int peer, int sub, const std::vector<int>& items,
                            Kernel kernel, const Extra& extra) {
  if (items.empty()) return;
  TaskPiece piece;
  piece.kind = std::move(kind);
  piece.ce = ce;
  piece.subiteration = sub;
  piece.priority = peer < 0 ? prio_[ce] : std::max(prio_[ce], prio_[peer]);
  const std::pair<int, int> key =
      peer < 0 ? std::pair<int, int>{ce, -1}
               : std::pair<int, int>{std::min(ce, peer), std::max(ce, peer)};
  const HandleId own = peer < 0 ? h_faces_[ce] : pairs_[pair_index_.at(key)].second;
  piece.accesses.emplace_back(own, Access::read_write);
  piece.accesses.insert(piece.accesses.end(), extra.begin(), extra.end());
  piece.body = [kernel = std::move(kernel), items = &items](const ExecutionContext& ctx) {
    ctx.parallel_for(static_cast<int>(items->size()), [&](int begin, int end) {
      kernel(kernels::Items(items->data() + begin, static_cast<size_t>(end - begin)));
    });
  };
  if (fused_out != nullptr)
    fused_out->push_back(std::move(piece));
  else
    pk.submit(key, PackKind::faces, std::move(piece));
}

// One pass of one phase for one CE. Pass 0 stages border cells of every CE
// before pass 1 computes any gradient that reads a neighbor's border; pass 2
// evaluates faces after every gradient; pass 3 sums fluxes after every face.
// Within a CE the kernels keep the exact call order of the sequential
// integrator, so per-item purity makes the decomposition bitwise-neutral.
// Empty item lists generate nothing, which also covers CEs with no active
// cells (their fringe lists may still stage).
void TaskEngine::emit_phase_for_ce(Packer& pk, std::vector<TaskPiece>* fused_out, int pass,
                                   Phase phase, int ce, int sub, int front, int level,
                                   const SolverOptions& opt) {
  const CEItems& it = items_[ce];
  const bool corr = phase == Phase::corrector;
  const char* pre = corr ? "c." : "p.";
  const FluxModel* model = &opt.model;
  const bool has_fringe = level < plan_.theta();

  auto lstr = [pre](const char* base, int l) {
    return std::string(pre) + base + std::to_string(l);
  };
  auto stage_kernel = [&]() -> Kernel {
    if (corr)
      return [this, front](kernels::Items cells) {
        kernels::stage_predicted(*st_, plan_.levels.tau, cells, front);
      };
    return [this, front](kernels::Items cells) { kernels::stage_committed(*st_, cells, front); };
  };
  auto interp_kernel = [&]() -> Kernel {
    return [this, front, phase](kernels::Items cells) {
      kernels::stage_interpolated(*st_, plan_.levels.tau, cells, front, phase);
    };
  };

  if (pass == 0) {
    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("stage.b.l", l), ce, sub, true, it.border_cells[l],
                 stage_kernel());
    if (has_fringe)
      emit_cells(pk, fused_out, lstr("stage.bf.l", level), ce, sub, true,
                 it.fringe_border[level], interp_kernel());
    return;
  }

  if (pass == 1) {
    // Whole-subiteration fusion is only legal when no active inner cell (nor
    // any of its neighbors) is a border cell, so the fused pieces drop the
    // border-handle read; the staging stamps assert the invariant at runtime.
    const Extra own_border =
        fused_out != nullptr ? Extra{} : Extra{{h_border_[ce], Access::read}};
    Extra border_grad = {{h_inner_[ce], Access::read}};
    border_grad.insert(border_grad.end(), neighbor_border_reads_[ce].begin(),
                       neighbor_border_reads_[ce].end());
    const Kernel grad = [this, front, phase](kernels::Items cells) {
      kernels::green_gauss_gradient(mesh_, *st_, cells, front, phase);
    };
    const Kernel lim = [this, front, phase](kernels::Items cells) {
      kernels::limit_gradients(mesh_, *st_, cells, front, phase);
    };

    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("stage.i.l", l), ce, sub, false, it.inner_cells[l],
                 stage_kernel());
    if (has_fringe)
      emit_cells(pk, fused_out, lstr("stage.if.l", level), ce, sub, false,
                 it.fringe_inner[level], interp_kernel());
    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("grad.i.l", l), ce, sub, false, it.inner_cells[l], grad,
                 own_border);
    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("lim.i.l", l), ce, sub, false, it.inner_cells[l], lim,
                 own_border);
    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("grad.b.l", l), ce, sub, true, it.border_cells[l], grad,
                 border_grad);
    for (int l = 0; l <= level; ++l)
      emit_cells(pk, fused_out, lstr("lim.b.l", l), ce, sub, true, it.border_cells[l], lim,
                 border_grad);
    return;
  }

  if (pass == 2) {
    const Kernel reset = [this, front](kernels::Items faces) {
      kernels::reset_windows(mesh_, *st_, faces, front);
    };
    const Kernel recon = [this, front, phase](kernels::Items faces) {
      kernels::reconstruct_faces(mesh_, *st_, faces, front, phase);
    };
    Kernel riemann;
    if (corr)
      riemann = [this, model, front](kernels::Items faces) {
        kernels::riemann_correct(mesh_, *model, *st_, plan_.face_cadence, plan_.levels.dt, faces,
                                 front);
      };
    else
      riemann = [this, model, front](kernels::Items faces) {
        kernels::riemann_predict(mesh_, *model, *st_, faces, front);
      };

    const Extra cell_reads =
        fused_out != nullptr
            ? Extra{{h_inner_[ce], Access::read}}
            : Extra{{h_border_[ce], Access::read}, {h_inner_[ce], Access::read}};
    if (!corr)
      for (int l = 0; l <= level; ++l)
        emit_faces(pk, fused_out, lstr("reset.f.l", l), ce, -1, sub, it.intra_faces[l], reset,
                   cell_reads);
    for (int l = 0; l <= level; ++l)
      emit_faces(pk, fused_out, lstr("recon.f.l", l), ce, -1, sub, it.intra_faces[l], recon,
                 cell_reads);
    for (int l = 0; l <= level; ++l)
      emit_faces(pk, fused_out, lstr("rie.f.l", l), ce, -1, sub, it.intra_faces[l], riemann);

    // Inter-CE face groups, owned by the pair: emitted once, from the low
    // side when both sides are local, else from whichever side is local.
    for (const auto& [peer, faces] : ces_.ce(ce).inter_faces) {
      if (peer < ce && owned_[peer]) continue;
      const std::pair<int, int> key{std::min(ce, peer), std::max(ce, peer)};
      const PairItems& pit = pair_items_[pair_index_.at(key)];
      const Extra pair_reads = {{h_border_[ce], Access::read}, {h_border_[peer], Access::read}};
      if (!corr)
        for (int l = 0; l <= level; ++l)
          emit_faces(pk, nullptr, lstr("reset.x.l", l), ce, peer, sub, pit.faces[l], reset,
                     pair_reads);
      for (int l = 0; l <= level; ++l)
        emit_faces(pk, nullptr, lstr("recon.x.l", l), ce, peer, sub, pit.faces[l], recon,
                   pair_reads);
      for (int l = 0; l <= level; ++l)
        emit_faces(pk, nullptr, lstr("rie.x.l", l), ce, peer, sub, pit.faces[l], riemann);
    }
    return;
  }

  // pass 3: flux sums and the extensive/intensive updates.
  const Extra own_faces = {{h_faces_[ce], Access::read}};
  Extra border_faces = own_faces;
  border_faces.insert(border_faces.end(), pair_reads_[ce].begin(), pair_reads_[ce].end());

  Kernel sum, ext, intens;
  if (corr) {
    sum = [this, front](kernels::Items cells) {
      kernels::flux_sum_correct(mesh_, *st_, plan_.levels.tau, plan_.face_cadence, cells, front);
    };
    ext = [this](kernels::Items cells) { kernels::extensive_correct(*st_, cells); };
    intens = [this, front](kernels::Items cells) {
      kernels::intensive_correct(mesh_, *st_, plan_.levels.tau, cells, front);
    };
  } else {
    sum = [this, front](kernels::Items cells) { kernels::flux_sum_predict(mesh_, *st_, cells, front); };
    ext = [this](kernels::Items cells) {
      kernels::extensive_predict(*st_, plan_.levels.tau, plan_.levels.dt, cells);
    };
    intens = [this](kernels::Items cells) { kernels::intensive_predict(mesh_, *st_, cells); };
  }

  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("sum.i.l", l), ce, sub, false, it.inner_cells[l], sum,
               own_faces);
  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("ext.i.l", l), ce, sub, false, it.inner_cells[l], ext);
  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("int.i.l", l), ce, sub, false, it.inner_cells[l], intens);
  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("sum.b.l", l), ce, sub, true, it.border_cells[l], sum,
               border_faces);
  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("ext.b.l", l), ce, sub, true, it.border_cells[l], ext);
  for (int l = 0; l <= level; ++l)
    emit_cells(pk, fused_out, lstr("int.b.l", l), ce, sub, true, it.border_cells[l], intens);
}

void TaskEngine::emit_phase(Packer& pk, Phase phase, int sub, int front, int level,
                            const SolverOptions& opt) {
  for (int pass = 0; pass < 4; ++pass) {
    for (int ce = 0; ce < ces_.size(); ++ce) {
      if (!owned_[ce]) continue;
      emit_phase_for_ce(pk, fuse_[ce] ? &fused_acc_[ce] : nullptr, pass, phase, ce, sub, front,
                        level, opt);
    }
    if (options_.comm_hook && (pass == 0 || pass == 1))
      options_.comm_hook(pk, phase, sub, front, level, pass);
  }
}

IterationRecord TaskEngine::run_iteration(SolverState& st, const SolverOptions& opt,
                                          IterationStats* stats) {
  require(static_cast<int>(st.w.size()) == mesh_.cell_count(),
          "taskgen: state does not match the mesh");
  st_ = &st;
  Packer pk(rt_, options_.packing);
  double submit_seconds = 0.0;
  const auto timed = [&submit_seconds](auto&& emit) {
    const auto begin = std::chrono::steady_clock::now();
    emit();
    submit_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  };

  // Stable-step and classification pre-pass, under the previous iteration's
  // priorities (this iteration's levels are not known yet).
  timed([&] {
    const Kernel dt_kernel = [this, &opt](kernels::Items cells) {
      kernels::compute_dt_max(mesh_, opt.model, *st_, opt.cfl, opt.dt_cap, cells);
    };
    for (int ce = 0; ce < ces_.size(); ++ce) {
      if (!owned_[ce]) continue;
      emit_cells(pk, nullptr, "dt.b", ce, 0, true, ces_.ce(ce).border_cells, dt_kernel);
      emit_cells(pk, nullptr, "dt.i", ce, 0, false, ces_.ce(ce).inner_cells, dt_kernel);
    }
    TaskPiece reduce;
    reduce.kind = "dt.min";
    reduce.subiteration = 0;
    reduce.priority = options_.p_max;
    for (int ce = 0; ce < ces_.size(); ++ce)
      if (owned_[ce]) {
        reduce.accesses.emplace_back(h_border_[ce], Access::read);
        reduce.accesses.emplace_back(h_inner_[ce], Access::read);
      }
    reduce.accesses.emplace_back(h_dt_, Access::write);
    reduce.body = [this](const ExecutionContext&) {
      const double local = kernels::min_dt(*st_, owned_cells_);
      dt_min_ = options_.allreduce_min ? options_.allreduce_min(local) : local;
    };
    pk.insert_single(std::move(reduce));
    const Kernel cls = [this, &opt](kernels::Items cells) {
      // A collapsed step is surfaced by the require() after the drain; do not
      // let it reach the classifier from a worker thread.
      if (!std::isfinite(dt_min_) || dt_min_ <= 0.0) return;
      kernels::classify_cells(*st_, dt_min_, opt.theta_max, cells);
    };
    const Extra dt_read = {{h_dt_, Access::read}};
    for (int ce = 0; ce < ces_.size(); ++ce) {
      if (!owned_[ce]) continue;
      emit_cells(pk, nullptr, "cls.b", ce, 0, true, ces_.ce(ce).border_cells, cls, dt_read);
      emit_cells(pk, nullptr, "cls.i", ce, 0, false, ces_.ce(ce).inner_cells, cls, dt_read);
    }
    pk.flush_all();
  });
  rt_.wait_all();
  require(std::isfinite(dt_min_) && dt_min_ > 0.0, "integrate: stable step collapsed");

  // Host phase: levels, plan, per-component item lists, priorities.
  rt_.pause();
  if (options_.classify_sync) options_.classify_sync(st);
  std::vector<int> tau = st.raw_level;
  smooth_to_fixpoint(mesh_, tau);
  plan_ = build_iteration_plan(mesh_, make_level_map(std::move(tau), dt_min_));
  build_items();
  std::vector<bool> prioritized(ces_.size(), false);
  for (int c = 0; c < mesh_.cell_count(); ++c)
    if (plan_.levels.tau[c] <= 1) prioritized[cell_ce_[c]] = true;
  prio_ = compute_ce_priorities(ces_.adjacency, prioritized, options_.p_max);
  reset_fronts(st);
  rt_.resume();

  const int theta = plan_.theta();
  const int subiterations = plan_.subiterations();
  const double t_start = st.t0;

  for (int s = 1; s <= subiterations; ++s) {
    const int level = subiteration_level(s, theta);
    const int front = s - 1;
    timed([&] {
      // A CE whose cells at or below level+1 are all interior exchanges
      // nothing this subiteration in either direction: its corrector and
      // predictor kernels fuse into one sealed task touching only its own
      // inner-cell and intra-face components.
      fuse_.assign(ces_.size(), false);
      fused_acc_.assign(ces_.size(), {});
      if (options_.packing)
        for (int ce = 0; ce < ces_.size(); ++ce)
          fuse_[ce] = owned_[ce] && items_[ce].min_level <= level &&
                      items_[ce].min_border_level >= level + 2;
      if (s > 1) emit_phase(pk, Phase::corrector, s, front, level, opt);
      emit_phase(pk, Phase::predictor, s, front, level, opt);
      for (int ce = 0; ce < ces_.size(); ++ce)
        if (fuse_[ce] && !fused_acc_[ce].empty())
          pk.submit_sealed({ce, -1}, PackKind::large, std::move(fused_acc_[ce]));
    });
  }
  // Trailing corrector: every window ends at front 2^theta.
  timed([&] {
    fuse_.assign(ces_.size(), false);
    emit_phase(pk, Phase::corrector, subiterations + 1, subiterations, theta, opt);
    pk.flush_all();
  });
  rt_.wait_all();

  double finite = kernels::finite_state(st, owned_cells_) ? 1.0 : 0.0;
  if (options_.allreduce_min) finite = options_.allreduce_min(finite);
  if (finite == 0.0) throw std::runtime_error("integrate: solution diverged to a non-finite state");

  timed([&] {
    const Kernel fin = [this](kernels::Items cells) { kernels::finalize_cells(mesh_, *st_, cells); };
    for (int ce = 0; ce < ces_.size(); ++ce) {
      if (!owned_[ce]) continue;
      emit_cells(pk, nullptr, "fin.b", ce, subiterations + 2, true, ces_.ce(ce).border_cells, fin);
      emit_cells(pk, nullptr, "fin.i", ce, subiterations + 2, false, ces_.ce(ce).inner_cells, fin);
    }
    pk.flush_all();
  });
  rt_.wait_all();

  st.t0 = t_start + plan_.levels.dt * static_cast<double>(subiterations);
  st.iteration += 1;
  IterationRecord rec = make_iteration_record(st, plan_, t_start);
  if (!owns_all_) {
    double partial = 0.0;
    for (int c : owned_cells_) partial += st.W[c];
    rec.total_extensive = options_.allreduce_sum ? options_.allreduce_sum(partial) : partial;
  }

  if (stats != nullptr) {
    stats->elementary = pk.elementary();
    stats->inserted = pk.inserted();
    stats->large_packs = pk.large_packs();
    stats->submission_seconds = submit_seconds;
  }
  st_ = nullptr;
  return rec;
}

std::vector<IterationRecord> TaskEngine::integrate(SolverState& st, const SolverOptions& opt,
                                                   int iterations,
                                                   std::vector<IterationStats>* stats) {
  require(iterations >= 0, "integrate: negative iteration count");
  std::vector<IterationRecord> records;
  records.reserve(iterations);
  for (int i = 0; i < iterations; ++i) {
    IterationStats it_stats;
    records.push_back(run_iteration(st, opt, &it_stats));
    if (stats != nullptr) stats->push_back(it_stats);
  }
  return records;
}

}  // namespace tafv
