#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tafv/mesh.hpp"

namespace tafv {

// Per-cell and per-face solver arrays. Arrays are full-size (global cell and
// face counts) on every rank; a rank only touches the slots of its own cells
// plus the ghost slots its exchange plans fill. Fronts count in units of the
// iteration's dt: a level-tau cell steps 2^tau fronts at a time, an iteration
// spans 2^theta fronts.
struct SolverState {
  // Committed state at committed_front.
  std::vector<double> w;   // intensive
  std::vector<double> W;   // extensive, w * volume
  // Predictor over [committed_front, committed_front + 2^tau].
  std::vector<double> W_pred;
  std::vector<double> w_pred;
  // Staged value all flux/gradient evaluations read; every face evaluation
  // needs both sides staged to the same front.
  std::vector<double> w_eval;
  std::vector<double> gx, gy;      // limited gradient of w_eval
  std::vector<double> residual;    // flux-sum output (predictor rate or window integral)
  std::vector<double> dt_max;      // classification input
  std::vector<int> raw_level;      // classification output before smoothing
  std::vector<int32_t> committed_front;
  std::vector<int32_t> staged_front;

  // Per face record. phi_pred is the instantaneous predictor flux F.n.area;
  // int_substep the trapezoid integral of the face's last substep; int_window
  // accumulates substep integrals since the coarser side's window start.
  std::vector<double> face_wL, face_wR;
  std::vector<double> phi_pred;
  std::vector<double> int_substep;
  std::vector<double> int_window;
  std::vector<int32_t> face_staged;  // stamp of the last reconstruction
  std::vector<int32_t> face_front;   // stamp of the last flux evaluation

  double t0 = 0.0;  // physical time at front 0 of the current iteration
  int iteration = 0;

  void init(const Mesh& mesh);
  // Sum of W in ascending cell id (the conservation oracle's fixed order).
  double total_extensive() const;
};

struct GaussianProfile {
  double base = 1.0;
  double amplitude = 1.0;
  Vec2 center{0.5, 0.5};
  double sigma = 0.1;
};

void init_gaussian(const Mesh& mesh, SolverState& st, const GaussianProfile& p);
void init_uniform(const Mesh& mesh, SolverState& st, double value);
// Rederives W (and the staging bookkeeping) after w was written directly.
void sync_extensive(const Mesh& mesh, SolverState& st);
// Zeroes the front/stamp bookkeeping at the start of an iteration.
void reset_fronts(SolverState& st);

void save_snapshot(std::ostream& os, const Mesh& mesh, const SolverState& st);

struct Snapshot {
  uint64_t mesh_hash = 0;
  double time = 0.0;
  int iteration = 0;
  std::vector<double> w, W;

  static Snapshot load(std::istream& is);
};

// Max relative per-cell difference over w and W; throws when the snapshots
// describe different meshes.
double compare_snapshots(const Snapshot& a, const Snapshot& b);

}  // namespace tafv
