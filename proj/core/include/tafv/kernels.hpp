#pragma once

#include <span>
#include <vector>

#include "tafv/mesh.hpp"
#include "tafv/physics.hpp"
#include "tafv/state.hpp"

namespace tafv {

// Every kernel below is a pure per-item loop over an explicit item list: the
// result for one cell or face depends only on mesh geometry, the state
// arrays, and that item — never on how the caller batches items. That
// invariance is what lets decomposed and distributed runs reproduce the
// whole-mesh integrator bitwise.
//
// Each front k runs a corrector phase (closing windows that end at k) before
// a predictor phase (opening windows that start at k). Staging stamps encode
// front and phase as 2k + phase so every consumer can verify its inputs were
// staged for the evaluation it is about to do.

enum class Phase : int { corrector = 0, predictor = 1 };

inline int stage_stamp(int front, Phase phase) {
  return 2 * front + static_cast<int>(phase);
}

namespace kernels {

using Items = std::span<const int>;

// w_eval <- w for cells whose window starts at `front` (predictor staging).
void stage_committed(SolverState& st, Items cells, int front);

// w_eval <- w_pred for cells whose window ends at `front` (corrector staging).
void stage_predicted(SolverState& st, const std::vector<int>& tau, Items cells, int front);

// w_eval <- w + theta_f * (w_pred - w) with theta_f = (front - committed)/2^tau,
// for cells whose window strictly straddles `front`. theta_f is a ratio of
// powers of two, so the repositioning weight is exact.
void stage_interpolated(SolverState& st, const std::vector<int>& tau, Items cells, int front,
                        Phase phase);

// Green-Gauss gradient of w_eval from face-averaged values. Boundary faces
// use the cell's own value; periodic neighbors are resolved by the adjacency.
void green_gauss_gradient(const Mesh& mesh, SolverState& st, Items cells, int front, Phase phase);

// Barth-Jespersen slope limiting: scale the gradient by the largest alpha
// in [0, 1] keeping every face extrapolation inside the neighbor value range
// (minmod of increment and headroom). Local extrema flatten to alpha = 0.
void limit_gradients(const Mesh& mesh, SolverState& st, Items cells, int front, Phase phase);

// Zero the window integral of faces whose sides all committed at `front`
// (a shared window start; the fine side alone never resets a window).
void reset_windows(const Mesh& mesh, SolverState& st, Items faces, int front);

// Limited linear extrapolation of both sides to the face centroid.
// Transmissive boundaries copy the interior value; periodic faces evaluate
// the partner cell at the partner record's centroid, which makes the two
// records of a physical face bitwise mirrors.
void reconstruct_faces(const Mesh& mesh, SolverState& st, Items faces, int front, Phase phase);

// phi_pred <- rusanov(face states) * area: the instantaneous flux the
// predictor integrates over the substep about to open.
void riemann_predict(const Mesh& mesh, const FluxModel& model, SolverState& st, Items faces,
                     int front);

// Close the face substep: int_substep <- dt_sub/2 * (phi_pred + phi_corr)
// (trapezoid of start and end fluxes) and accumulate it into int_window.
void riemann_correct(const Mesh& mesh, const FluxModel& model, SolverState& st,
                     const std::vector<int>& face_cadence, double dt, Items faces, int front);

// residual <- -sum of signed phi_pred over the cell's faces (ascending face
// id, the global summation order).
void flux_sum_predict(const Mesh& mesh, SolverState& st, Items cells, int front);

// residual <- -sum of signed time-integrated face fluxes: a cell coarser
// than the face cadence consumes the accumulated window integral, otherwise
// the last substep integral. Any face not evaluated at this front is a
// consistency error.
void flux_sum_correct(const Mesh& mesh, SolverState& st, const std::vector<int>& tau,
                      const std::vector<int>& face_cadence, Items cells, int front);

// W_pred <- W + (dt * 2^tau) * residual (forward step over the cell's window).
void extensive_predict(SolverState& st, const std::vector<int>& tau, double dt, Items cells);

void intensive_predict(const Mesh& mesh, SolverState& st, Items cells);

// W <- W + residual; the corrector residual is already time-integrated.
void extensive_correct(SolverState& st, Items cells);

// w <- W / V and commit the window at `front`.
void intensive_correct(const Mesh& mesh, SolverState& st, const std::vector<int>& tau, Items cells,
                       int front);

// w <- W / V with no window bookkeeping (end-of-iteration refresh).
void finalize_cells(const Mesh& mesh, SolverState& st, Items cells);

// Largest stable step per cell: cfl * h / wave_speed, capped by dt_cap
// (which also covers zero wave speed).
void compute_dt_max(const Mesh& mesh, const FluxModel& model, SolverState& st, double cfl,
                    double dt_cap, Items cells);

// raw_level <- floor(log2(dt_max / dt_min)) clamped to [0, theta_max].
void classify_cells(SolverState& st, double dt_min, int theta_max, Items cells);

double min_dt(const SolverState& st, Items cells);

// False as soon as any committed value went non-finite (blow-up detection).
bool finite_state(const SolverState& st, Items cells);

}  // namespace kernels
}  // namespace tafv
