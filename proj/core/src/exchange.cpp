#include "tafv/exchange.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tafv {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

[[noreturn]] void fail(int rank, const std::string& what) {
  throw std::runtime_error("rank " + std::to_string(rank) + ": " + what);
}

// Payload codec: little-endian f64/i32, matching the envelope's byte order.
std::byte* put_f64(std::byte* out, double v) {
  uint64_t u = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out[i] = std::byte((u >> (8 * i)) & 0xff);
  return out + 8;
}

std::byte* put_i32(std::byte* out, int32_t v) {
  uint32_t u = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out[i] = std::byte((u >> (8 * i)) & 0xff);
  return out + 4;
}

const std::byte* get_f64(const std::byte* in, double& v) {
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(in[i]) << (8 * i);
  v = std::bit_cast<double>(u);
  return in + 8;
}

const std::byte* get_i32(const std::byte* in, int32_t& v) {
  uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= uint32_t(in[i]) << (8 * i);
  v = std::bit_cast<int32_t>(u);
  return in + 4;
}

// Both payload layouts are 16 bytes per cell: {w_eval f64, committed_front
// i32, staged_front i32} for round 0, {gx f64, gy f64} for round 1.
constexpr size_t kCellStride = 16;

uint32_t phase_code(Phase phase, int sub, int round) {
  return (uint32_t(sub) << 3) | (uint32_t(phase == Phase::predictor ? 1 : 0) << 1) |
         uint32_t(round);
}

// Collective opcodes; the wire phase_code is (opcode << 1) | leg, leg 0 being
// the gather into rank 0 and leg 1 the broadcast back.
constexpr uint32_t kOpMin = 1;
constexpr uint32_t kOpSum = 2;
constexpr uint32_t kOpSyncInts = 3;
constexpr uint32_t kOpSyncDoubles = 4;

}  // namespace

// ---------------------------------------------------------------------------
// Exchange plan

ExchangePlan build_exchange_components(const CESet& ces, const Partition& part, int rank) {
  require(rank >= 0 && rank < part.n_ranks, "exchange: rank outside the partition");
  ExchangePlan plan;
  for (const auto& ce : ces.ces) {
    const bool owned = part.rank_of_ce(ce.id) == rank;
    for (const auto& gc : ce.ghosts) {
      const int peer = part.rank_of_ce(gc.foreign_ce);
      if (owned) {
        // Ghost component on an owned CE: the foreign cells this rank mirrors.
        plan.recv.push_back({gc.local_ce, gc.foreign_ce, peer, gc.slots, {}, 0});
      } else if (peer == rank) {
        // Ghost component on a foreign CE mirroring one of ours: the cells of
        // ours its rank needs, i.e. this rank's send side of the pairing.
        plan.send.push_back({gc.foreign_ce, gc.local_ce, part.rank_of_ce(gc.local_ce),
                             gc.slots, {}, 0});
      }
    }
  }
  auto by_pair = [](const ExchangeComponent& a, const ExchangeComponent& b) {
    return std::pair(a.local_ce, a.foreign_ce) < std::pair(b.local_ce, b.foreign_ce);
  };
  std::sort(plan.send.begin(), plan.send.end(), by_pair);
  std::sort(plan.recv.begin(), plan.recv.end(), by_pair);
  return plan;
}

ExchangePlan build_exchange_plan(const CESet& ces, const Partition& part, const LevelMap& levels,
                                 int rank) {
  ExchangePlan plan = build_exchange_components(ces, part, rank);
  auto split = [&](ExchangeComponent& comp) {
    comp.cells_of_level.assign(size_t(levels.theta) + 1, {});
    for (int c : comp.cells) {
      require(levels.tau[size_t(c)] <= levels.theta, "exchange: cell level above theta");
      comp.cells_of_level[size_t(levels.tau[size_t(c)])].push_back(c);
    }
    comp.staging_bytes = comp.cells.size() * kCellStride;
  };
  for (auto& comp : plan.send) split(comp);
  for (auto& comp : plan.recv) split(comp);
  return plan;
}

std::vector<int> masked_cells(const ExchangeComponent& comp, uint64_t level_mask) {
  std::vector<int> out;
  for (size_t l = 0; l < comp.cells_of_level.size(); ++l) {
    if ((level_mask >> l) & 1u) {
      out.insert(out.end(), comp.cells_of_level[l].begin(), comp.cells_of_level[l].end());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Collectives

std::vector<std::byte> RankComm::exchange(uint32_t opcode, int dest,
                                          std::span<const std::byte> payload, int src) {
  Envelope env;
  env.source_rank = uint32_t(rank());
  env.sender_ce = kCollectiveCe;
  env.receiver_ce = kCollectiveCe;
  env.iteration = seq_;
  env.phase_code = opcode;
  env.payload_bytes = payload.size();
  tp_.send(dest, env, payload);
  return tp_.recv(MessageKey{src, kCollectiveCe, kCollectiveCe, seq_, opcode});
}

namespace {

std::vector<std::byte> f64_bytes(double v) {
  std::vector<std::byte> out(8);
  put_f64(out.data(), v);
  return out;
}

double f64_value(const std::vector<std::byte>& bytes) {
  double v = 0.0;
  if (bytes.size() == 8) get_f64(bytes.data(), v);
  return v;
}

}  // namespace

double RankComm::allreduce_min(double v) {
  if (size() == 1) return v;
  const uint32_t gather = kOpMin << 1, bcast = (kOpMin << 1) | 1;
  double acc = v;
  if (rank() == 0) {
    for (int r = 1; r < size(); ++r) {
      const double x = f64_value(tp_.recv(MessageKey{r, kCollectiveCe, kCollectiveCe, seq_, gather}));
      // Ascending rank order; any non-finite contribution poisons the result
      // so every rank sees the blow-up regardless of reduction order.
      if (!std::isfinite(x) || !std::isfinite(acc)) {
        acc = std::numeric_limits<double>::quiet_NaN();
      } else {
        acc = std::min(acc, x);
      }
    }
    Envelope env;
    env.source_rank = 0;
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = bcast;
    env.payload_bytes = 8;
    const auto bytes = f64_bytes(acc);
    for (int r = 1; r < size(); ++r) tp_.send(r, env, bytes);
  } else {
    Envelope env;
    env.source_rank = uint32_t(rank());
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = gather;
    env.payload_bytes = 8;
    tp_.send(0, env, f64_bytes(v));
    acc = f64_value(tp_.recv(MessageKey{0, kCollectiveCe, kCollectiveCe, seq_, bcast}));
  }
  seq_ += 1;
  return acc;
}

double RankComm::allreduce_sum(double v) {
  if (size() == 1) return v;
  const uint32_t gather = kOpSum << 1, bcast = (kOpSum << 1) | 1;
  double acc = v;
  if (rank() == 0) {
    for (int r = 1; r < size(); ++r) {
      acc += f64_value(tp_.recv(MessageKey{r, kCollectiveCe, kCollectiveCe, seq_, gather}));
    }
    Envelope env;
    env.source_rank = 0;
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = bcast;
    env.payload_bytes = 8;
    const auto bytes = f64_bytes(acc);
    for (int r = 1; r < size(); ++r) tp_.send(r, env, bytes);
  } else {
    Envelope env;
    env.source_rank = uint32_t(rank());
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = gather;
    env.payload_bytes = 8;
    tp_.send(0, env, f64_bytes(v));
    acc = f64_value(tp_.recv(MessageKey{0, kCollectiveCe, kCollectiveCe, seq_, bcast}));
  }
  seq_ += 1;
  return acc;
}

void RankComm::sync_ints(std::vector<int>& values,
                         const std::vector<std::vector<int>>& owned_by_rank) {
  if (size() == 1) return;
  require(int(owned_by_rank.size()) == size(), "sync: one owned-cell list per rank");
  const uint32_t gather = kOpSyncInts << 1, bcast = (kOpSyncInts << 1) | 1;
  if (rank() == 0) {
    for (int r = 1; r < size(); ++r) {
      const auto& owned = owned_by_rank[size_t(r)];
      auto bytes = tp_.recv(MessageKey{r, kCollectiveCe, kCollectiveCe, seq_, gather});
      if (bytes.size() != owned.size() * 4) fail(0, "level sync payload size mismatch");
      const std::byte* in = bytes.data();
      for (int c : owned) {
        int32_t v;
        in = get_i32(in, v);
        values[size_t(c)] = v;
      }
    }
    std::vector<std::byte> full(values.size() * 4);
    std::byte* out = full.data();
    for (int v : values) out = put_i32(out, v);
    Envelope env;
    env.source_rank = 0;
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = bcast;
    env.payload_bytes = full.size();
    for (int r = 1; r < size(); ++r) tp_.send(r, env, full);
  } else {
    const auto& owned = owned_by_rank[size_t(rank())];
    std::vector<std::byte> mine(owned.size() * 4);
    std::byte* out = mine.data();
    for (int c : owned) out = put_i32(out, values[size_t(c)]);
    Envelope env;
    env.source_rank = uint32_t(rank());
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = gather;
    env.payload_bytes = mine.size();
    tp_.send(0, env, mine);
    auto full = tp_.recv(MessageKey{0, kCollectiveCe, kCollectiveCe, seq_, bcast});
    if (full.size() != values.size() * 4) fail(rank(), "level sync broadcast size mismatch");
    const std::byte* in = full.data();
    for (auto& v : values) {
      int32_t x;
      in = get_i32(in, x);
      v = x;
    }
  }
  seq_ += 1;
}

void RankComm::sync_doubles(std::vector<double>& values,
                            const std::vector<std::vector<int>>& owned_by_rank) {
  if (size() == 1) return;
  require(int(owned_by_rank.size()) == size(), "sync: one owned-cell list per rank");
  const uint32_t gather = kOpSyncDoubles << 1, bcast = (kOpSyncDoubles << 1) | 1;
  if (rank() == 0) {
    for (int r = 1; r < size(); ++r) {
      const auto& owned = owned_by_rank[size_t(r)];
      auto bytes = tp_.recv(MessageKey{r, kCollectiveCe, kCollectiveCe, seq_, gather});
      if (bytes.size() != owned.size() * 8) fail(0, "state sync payload size mismatch");
      const std::byte* in = bytes.data();
      for (int c : owned) in = get_f64(in, values[size_t(c)]);
    }
    std::vector<std::byte> full(values.size() * 8);
    std::byte* out = full.data();
    for (double v : values) out = put_f64(out, v);
    Envelope env;
    env.source_rank = 0;
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = bcast;
    env.payload_bytes = full.size();
    for (int r = 1; r < size(); ++r) tp_.send(r, env, full);
  } else {
    const auto& owned = owned_by_rank[size_t(rank())];
    std::vector<std::byte> mine(owned.size() * 8);
    std::byte* out = mine.data();
    for (int c : owned) out = put_f64(out, values[size_t(c)]);
    Envelope env;
    env.source_rank = uint32_t(rank());
    env.sender_ce = kCollectiveCe;
    env.receiver_ce = kCollectiveCe;
    env.iteration = seq_;
    env.phase_code = gather;
    env.payload_bytes = mine.size();
    tp_.send(0, env, mine);
    auto full = tp_.recv(MessageKey{0, kCollectiveCe, kCollectiveCe, seq_, bcast});
    if (full.size() != values.size() * 8) fail(rank(), "state sync broadcast size mismatch");
    const std::byte* in = full.data();
    for (auto& v : values) in = get_f64(in, v);
  }
  seq_ += 1;
}

// ---------------------------------------------------------------------------
// Ghost exchange

GhostExchange::GhostExchange(Runtime& rt, Transport& tp, const CESet& ces, const Partition& part)
    : rt_(rt), tp_(tp) {
  ExchangePlan comps = build_exchange_components(ces, part, tp.rank());
  auto init = [&](std::vector<Stream>& dst, std::vector<ExchangeComponent>& src,
                  const char* prefix) {
    dst.resize(src.size());
    for (size_t i = 0; i < src.size(); ++i) {
      dst[i].comp = std::move(src[i]);
      dst[i].handle = rt_.register_handle(prefix + std::to_string(dst[i].comp.local_ce) + "." +
                                          std::to_string(dst[i].comp.foreign_ce));
      dst[i].buffer = std::make_shared<std::vector<std::byte>>();
      dst[i].buffer->reserve(dst[i].comp.cells.size() * kCellStride);
    }
  };
  init(send_, comps.send, "cs");
  init(recv_, comps.recv, "cr");
}

void GhostExchange::begin_iteration(const ExchangePlan& plan, uint32_t iteration_tag) {
  tag_ = iteration_tag;
  require(plan.send.size() == send_.size() && plan.recv.size() == recv_.size(),
          "exchange: plan does not match this partition's components");
  for (size_t i = 0; i < send_.size(); ++i) {
    require(plan.send[i].local_ce == send_[i].comp.local_ce &&
                plan.send[i].foreign_ce == send_[i].comp.foreign_ce,
            "exchange: send component mismatch");
    send_[i].comp = plan.send[i];
  }
  for (size_t i = 0; i < recv_.size(); ++i) {
    require(plan.recv[i].local_ce == recv_[i].comp.local_ce &&
                plan.recv[i].foreign_ce == recv_[i].comp.foreign_ce,
            "exchange: recv component mismatch");
    recv_[i].comp = plan.recv[i];
  }
}

void GhostExchange::insert(Packer& pk, Phase phase, int sub, int front, int level, int round) {
  const int theta = engine_->plan().theta();
  // Round 0 re-ships everything staged this subiteration: active levels plus
  // the fringe one level up. Round 1 ships only the recomputed gradients;
  // fringe gradients stay frozen, and the mirrors keep the owner's last
  // shipped values, which is exactly the frozen state.
  const int top = round == 0 ? std::min(level + 1, theta) : level;
  const uint64_t mask = level_mask_up_to(top);
  const uint32_t code = phase_code(phase, sub, round);
  const int stamp = stage_stamp(front, phase);
  for (auto& s : send_) emit_send(pk, s, sub, mask, code);
  for (auto& s : recv_) emit_recv(pk, s, sub, mask, code, stamp);
}

void GhostExchange::emit_send(Packer& pk, Stream& s, int sub, uint64_t mask, uint32_t code) {
  auto cells = std::make_shared<const std::vector<int>>(masked_cells(s.comp, mask));
  if (cells->empty()) return;
  const size_t bytes = cells->size() * kCellStride;
  const int prio = engine_->ce_priorities()[size_t(s.comp.local_ce)];
  const bool grads = (code & 1u) != 0;
  SolverState* st = st_;
  auto buf = s.buffer;

  TaskPiece pack;
  pack.kind = "comm.pack";
  pack.ce = s.comp.local_ce;
  pack.subiteration = sub;
  pack.priority = prio;
  pack.accesses = {{engine_->border_handle(s.comp.local_ce), Access::read},
                   {s.handle, Access::write}};
  pack.body = [st, buf, cells, grads, bytes](const ExecutionContext&) {
    buf->resize(bytes);
    std::byte* out = buf->data();
    for (int c : *cells) {
      if (grads) {
        out = put_f64(out, st->gx[size_t(c)]);
        out = put_f64(out, st->gy[size_t(c)]);
      } else {
        out = put_f64(out, st->w_eval[size_t(c)]);
        out = put_i32(out, st->committed_front[size_t(c)]);
        out = put_i32(out, st->staged_front[size_t(c)]);
      }
    }
  };
  pk.insert_single(std::move(pack), false);

  Envelope env;
  env.source_rank = uint32_t(tp_.rank());
  env.sender_ce = uint32_t(s.comp.local_ce);
  env.receiver_ce = uint32_t(s.comp.foreign_ce);
  env.iteration = tag_;
  env.phase_code = code;
  env.level_mask = mask;
  env.payload_bytes = bytes;
  Transport* tp = &tp_;
  const int dest = s.comp.peer_rank;
  GhostExchange* self = this;

  TaskPiece send;
  send.kind = "comm.send";
  send.ce = s.comp.local_ce;
  send.subiteration = sub;
  send.priority = prio;
  send.accesses = {{s.handle, Access::read}};
  send.body = [tp, dest, env, buf, self](const ExecutionContext&) {
    try {
      tp->send(dest, env, std::span<const std::byte>(buf->data(), buf->size()));
    } catch (const std::exception& e) {
      self->record_error(e.what());
    }
  };
  pk.insert_single(std::move(send), true);
}

void GhostExchange::emit_recv(Packer& pk, Stream& s, int sub, uint64_t mask, uint32_t code,
                              int stamp) {
  auto cells = std::make_shared<const std::vector<int>>(masked_cells(s.comp, mask));
  if (cells->empty()) return;
  const size_t bytes = cells->size() * kCellStride;
  const int prio = engine_->ce_priorities()[size_t(s.comp.local_ce)];
  const bool grads = (code & 1u) != 0;
  SolverState* st = st_;
  auto buf = s.buffer;
  const MessageKey key{s.comp.peer_rank, uint32_t(s.comp.foreign_ce), uint32_t(s.comp.local_ce),
                       tag_, code};
  Transport* tp = &tp_;
  GhostExchange* self = this;
  const int rank = tp_.rank();
  const int a = s.comp.local_ce, b = s.comp.foreign_ce;

  TaskPiece recv;
  recv.kind = "comm.recv";
  recv.ce = s.comp.local_ce;
  recv.subiteration = sub;
  recv.priority = prio;
  recv.accesses = {{s.handle, Access::write}};
  recv.body = [tp, key, buf, bytes, self, rank, a, b](const ExecutionContext&) {
    buf->clear();
    try {
      auto payload = tp->recv(key);
      if (payload.size() != bytes) {
        self->record_error("rank " + std::to_string(rank) + ": ghost payload for CE pair (" +
                           std::to_string(a) + ", " + std::to_string(b) + ") is " +
                           std::to_string(payload.size()) + " bytes, expected " +
                           std::to_string(bytes));
        return;
      }
      *buf = std::move(payload);
    } catch (const std::exception& e) {
      self->record_error(e.what());
    }
  };
  const TaskId id = pk.insert_single(std::move(recv), true);
  {
    std::lock_guard lock(mu_);
    pending_recv_[id] = key;
  }

  TaskPiece unpack;
  unpack.kind = "comm.unpack";
  unpack.ce = s.comp.local_ce;
  unpack.subiteration = sub;
  unpack.priority = prio;
  unpack.accesses = {{s.handle, Access::read},
                     {engine_->border_handle(s.comp.foreign_ce), Access::write}};
  unpack.body = [st, buf, cells, grads, bytes, stamp](const ExecutionContext&) {
    if (buf->size() != bytes) {
      // Receive failed and the error is recorded; the driver discards this
      // iteration. Stamp the mirrors anyway so downstream staging checks do
      // not abort the process before the rank-tagged diagnostic is raised.
      if (!grads) {
        for (int c : *cells) st->staged_front[size_t(c)] = stamp;
      }
      return;
    }
    const std::byte* in = buf->data();
    for (int c : *cells) {
      if (grads) {
        in = get_f64(in, st->gx[size_t(c)]);
        in = get_f64(in, st->gy[size_t(c)]);
      } else {
        int32_t front;
        in = get_f64(in, st->w_eval[size_t(c)]);
        in = get_i32(in, front);
        st->committed_front[size_t(c)] = front;
        in = get_i32(in, front);
        st->staged_front[size_t(c)] = front;
      }
    }
  };
  pk.insert_single(std::move(unpack), false);
}

bool GhostExchange::ready(TaskId id) const {
  std::lock_guard lock(mu_);
  auto it = pending_recv_.find(id);
  if (it == pending_recv_.end()) return true;
  return tp_.poll(it->second);
}

void GhostExchange::completed(TaskId id) {
  std::lock_guard lock(mu_);
  pending_recv_.erase(id);
}

void GhostExchange::record_error(std::string what) {
  std::lock_guard lock(mu_);
  if (error_.empty()) error_ = std::move(what);
}

std::string GhostExchange::take_error() {
  std::lock_guard lock(mu_);
  return std::exchange(error_, std::string());
}

// ---------------------------------------------------------------------------
// Per-rank driver

DistDriver::DistDriver(const Mesh& mesh, Partition part, Transport& tp, DistOptions opt)
    : mesh_(mesh), part_(std::move(part)), tp_(tp), opt_(std::move(opt)) {
  require(part_.n_ranks == tp_.size(), "dist: partition rank count differs from the transport");
  require(int(part_.rank_of_cell.size()) == mesh_.cell_count(), "dist: partition sized to the mesh");
  rt_ = std::make_unique<Runtime>(opt_.runtime);
  comm_ = std::make_unique<RankComm>(tp_);
  rebuild();
  comm_thread_ = std::thread([this] { comm_loop(); });
}

DistDriver::~DistDriver() {
  stop_.store(true);
  if (comm_thread_.joinable()) comm_thread_.join();
}

void DistDriver::rebuild() {
  ces_ = std::make_unique<CESet>(build_ces(mesh_, part_));
  owned_cells_by_rank_.assign(size_t(part_.n_ranks), {});
  for (int c = 0; c < mesh_.cell_count(); ++c) {
    owned_cells_by_rank_[size_t(part_.rank_of_cell[size_t(c)])].push_back(c);
  }
  owned_ces_.clear();
  for (int ce = 0; ce < ces_->size(); ++ce) {
    if (part_.rank_of_ce(ce) == tp_.rank()) owned_ces_.push_back(ce);
  }

  auto ex = std::make_unique<GhostExchange>(*rt_, tp_, *ces_, part_);
  TaskgenOptions topt;
  topt.packing = opt_.packing;
  topt.p_max = opt_.p_max;
  topt.owned_ces = owned_ces_;
  if (tp_.size() > 1) {
    topt.allreduce_min = [this](double v) { return comm_->allreduce_min(v); };
    topt.allreduce_sum = [this](double v) { return comm_->allreduce_sum(v); };
    topt.classify_sync = [this](SolverState& st) {
      comm_->sync_ints(st.raw_level, owned_cells_by_rank_);
    };
    topt.comm_hook = [this](Packer& pk, Phase phase, int sub, int front, int level, int round) {
      if (!plan_ready_) {
        exchange_->begin_iteration(
            build_exchange_plan(*ces_, part_, engine_->plan().levels, tp_.rank()), iter_tag_);
        plan_ready_ = true;
      }
      exchange_->insert(pk, phase, sub, front, level, round);
    };
  }
  auto eng = std::make_unique<TaskEngine>(mesh_, *ces_, *rt_, std::move(topt));
  {
    std::lock_guard lock(comm_mu_);
    exchange_ = std::move(ex);
    engine_ = std::move(eng);
  }
}

void DistDriver::repartition(SolverState& st) {
  const LevelMap& levels = engine_->plan().levels;
  require(int(levels.tau.size()) == mesh_.cell_count(), "dist: repartition before any iteration");
  // Balance next iterations by level cost; a level-tau cell costs 2^(theta-tau)
  // kernel visits per iteration.
  std::vector<int64_t> weights(size_t(mesh_.cell_count()));
  for (int c = 0; c < mesh_.cell_count(); ++c) {
    weights[size_t(c)] = int64_t(1) << (levels.theta - levels.tau[size_t(c)]);
  }
  // Every rank must hold the committed state of any cell it might acquire.
  comm_->sync_doubles(st.w, owned_cells_by_rank_);
  comm_->sync_doubles(st.W, owned_cells_by_rank_);
  part_ = make_partition(mesh_, part_.n_ranks, opt_.ces_per_rank, weights);
  rebuild();
}

std::vector<IterationRecord> DistDriver::integrate(SolverState& st, const SolverOptions& opt,
                                                   int iterations,
                                                   std::vector<IterationStats>* stats) {
  std::vector<IterationRecord> records;
  records.reserve(size_t(iterations));
  for (int i = 0; i < iterations; ++i) {
    if (opt_.repartition_every > 0 && i > 0 && i % opt_.repartition_every == 0) repartition(st);
    exchange_->bind(&st, engine_.get());
    plan_ready_ = false;
    iter_tag_ = uint32_t(st.iteration);
    IterationStats s;
    records.push_back(engine_->run_iteration(st, opt, stats != nullptr ? &s : nullptr));
    if (stats != nullptr) stats->push_back(s);
    std::string err = exchange_->take_error();
    if (!err.empty()) {
      throw std::runtime_error("rank " + std::to_string(tp_.rank()) +
                               ": iteration aborted by a transport failure: " + err);
    }
  }
  return records;
}

void DistDriver::comm_loop() {
  std::vector<TaskId> pending;
  while (!stop_.load(std::memory_order_relaxed)) {
    while (auto id = rt_->next_detached(0.0)) pending.push_back(*id);
    bool progressed = false;
    {
      std::lock_guard lock(comm_mu_);
      for (auto it = pending.begin(); it != pending.end();) {
        if (exchange_ != nullptr && !exchange_->ready(*it)) {
          ++it;
          continue;
        }
        rt_->execute_detached(*it);
        rt_->complete_detached(*it);
        if (exchange_ != nullptr) exchange_->completed(*it);
        it = pending.erase(it);
        progressed = true;
      }
    }
    if (!progressed) {
      if (pending.empty()) {
        if (auto id = rt_->next_detached(2.0)) pending.push_back(*id);
      } else {
        std::this_thread::sleep_for(std::chrono::microseconds(50));
      }
    }
  }
}

}  // namespace tafv
