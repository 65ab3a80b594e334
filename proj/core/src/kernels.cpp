#include "tafv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tafv/common.hpp"
#include "tafv/levels.hpp"

namespace tafv::kernels {
namespace {

// Cell across face f from the left side's point of view, with periodic
// partners resolved; -1 across transmissive boundaries.
int resolved_right(const Mesh& mesh, int f) {
  const Face& face = mesh.faces[f];
  if (face.right >= 0) return face.right;
  if (face.periodic_partner >= 0) return mesh.faces[face.periodic_partner].left;
  return -1;
}

// Linear extrapolation from a cell centroid to a face centroid. The
// association order is part of the numerical contract: both records of a
// periodic pair call this with identical arguments.
double extrapolate(double w, double gx, double gy, Vec2 from, Vec2 to) {
  return (w + gx * (to.x - from.x)) + gy * (to.y - from.y);
}

}  // namespace

void stage_committed(SolverState& st, Items cells, int front) {
  const int stamp = stage_stamp(front, Phase::predictor);
  for (int c : cells) {
    TAFV_ASSERT(st.committed_front[c] == front,
                "predictor staging requires a window starting at this front");
    st.w_eval[c] = st.w[c];
    st.staged_front[c] = stamp;
  }
}

void stage_predicted(SolverState& st, const std::vector<int>& tau, Items cells, int front) {
  const int stamp = stage_stamp(front, Phase::corrector);
  for (int c : cells) {
    TAFV_ASSERT(st.committed_front[c] + (1 << tau[c]) == front,
                "corrector staging requires a window ending at this front");
    st.w_eval[c] = st.w_pred[c];
    st.staged_front[c] = stamp;
  }
}

void stage_interpolated(SolverState& st, const std::vector<int>& tau, Items cells, int front,
                        Phase phase) {
  const int stamp = stage_stamp(front, phase);
  for (int c : cells) {
    const int window = 1 << tau[c];
    const int offset = front - st.committed_front[c];
    TAFV_ASSERT(offset > 0 && offset < window,
                "repositioning requires a window strictly straddling this front");
    const double theta_f = static_cast<double>(offset) / static_cast<double>(window);
    st.w_eval[c] = st.w[c] + theta_f * (st.w_pred[c] - st.w[c]);
    st.staged_front[c] = stamp;
  }
}

void green_gauss_gradient(const Mesh& mesh, SolverState& st, Items cells, int front, Phase phase) {
  const int stamp = stage_stamp(front, phase);
  for (int c : cells) {
    TAFV_ASSERT(st.staged_front[c] == stamp, "gradient requires the cell staged at this front");
    double gx = 0.0, gy = 0.0;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int nb = mesh.adj_neighbor[t];
      double w_face;
      if (nb >= 0) {
        TAFV_ASSERT(st.staged_front[nb] == stamp,
                    "gradient requires every neighbor staged at this front");
        w_face = 0.5 * (st.w_eval[c] + st.w_eval[nb]);
      } else {
        w_face = st.w_eval[c];
      }
      const Face& face = mesh.faces[mesh.adj_face[t]];
      const double scale = mesh.adj_sign[t] * face.area;
      gx += w_face * face.normal.x * scale;
      gy += w_face * face.normal.y * scale;
    }
    const double inv_v = 1.0 / mesh.cells[c].volume;
    st.gx[c] = gx * inv_v;
    st.gy[c] = gy * inv_v;
  }
}

void limit_gradients(const Mesh& mesh, SolverState& st, Items cells, int front, Phase phase) {
  const int stamp = stage_stamp(front, phase);
  for (int c : cells) {
    TAFV_ASSERT(st.staged_front[c] == stamp, "limiter requires the cell staged at this front");
    double w_min = std::numeric_limits<double>::infinity();
    double w_max = -std::numeric_limits<double>::infinity();
    bool any_neighbor = false;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int nb = mesh.adj_neighbor[t];
      if (nb < 0) continue;
      TAFV_ASSERT(st.staged_front[nb] == stamp,
                  "limiter requires every neighbor staged at this front");
      w_min = std::min(w_min, st.w_eval[nb]);
      w_max = std::max(w_max, st.w_eval[nb]);
      any_neighbor = true;
    }
    if (!any_neighbor) continue;
    double alpha = 1.0;
    const Vec2 cc = mesh.cells[c].centroid;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const Face& face = mesh.faces[mesh.adj_face[t]];
      const double delta =
          st.gx[c] * (face.centroid.x - cc.x) + st.gy[c] * (face.centroid.y - cc.y);
      if (delta == 0.0) continue;
      const double headroom = delta > 0.0 ? w_max - st.w_eval[c] : w_min - st.w_eval[c];
      alpha = std::min(alpha, minmod(delta, headroom) / delta);
    }
    st.gx[c] *= alpha;
    st.gy[c] *= alpha;
  }
}

void reset_windows(const Mesh& mesh, SolverState& st, Items faces, int front) {
  for (int f : faces) {
    const int nb = resolved_right(mesh, f);
    bool shared_start = st.committed_front[mesh.faces[f].left] == front;
    if (nb >= 0) shared_start = shared_start && st.committed_front[nb] == front;
    if (shared_start) st.int_window[f] = 0.0;
  }
}

void reconstruct_faces(const Mesh& mesh, SolverState& st, Items faces, int front, Phase phase) {
  const int stamp = stage_stamp(front, phase);
  for (int f : faces) {
    const Face& face = mesh.faces[f];
    const int left = face.left;
    TAFV_ASSERT(st.staged_front[left] == stamp,
                "face evaluation requires the left cell staged at this front");
    st.face_wL[f] = extrapolate(st.w_eval[left], st.gx[left], st.gy[left],
                                mesh.cells[left].centroid, face.centroid);
    if (face.right >= 0) {
      const int right = face.right;
      TAFV_ASSERT(st.staged_front[right] == stamp,
                  "face evaluation requires the right cell staged at this front");
      st.face_wR[f] = extrapolate(st.w_eval[right], st.gx[right], st.gy[right],
                                  mesh.cells[right].centroid, face.centroid);
    } else if (face.periodic_partner >= 0) {
      const Face& partner = mesh.faces[face.periodic_partner];
      const int right = partner.left;
      TAFV_ASSERT(st.staged_front[right] == stamp,
                  "face evaluation requires the periodic cell staged at this front");
      st.face_wR[f] = extrapolate(st.w_eval[right], st.gx[right], st.gy[right],
                                  mesh.cells[right].centroid, partner.centroid);
    } else {
      st.face_wR[f] = st.face_wL[f];
    }
    st.face_staged[f] = stamp;
  }
}

void riemann_predict(const Mesh& mesh, const FluxModel& model, SolverState& st, Items faces,
                     int front) {
  const int stamp = stage_stamp(front, Phase::predictor);
  for (int f : faces) {
    TAFV_ASSERT(st.face_staged[f] == stamp,
                "predictor flux requires face states reconstructed at this front");
    const Face& face = mesh.faces[f];
    st.phi_pred[f] = rusanov(model, st.face_wL[f], st.face_wR[f], face.normal) * face.area;
    st.face_front[f] = stamp;
  }
}

void riemann_correct(const Mesh& mesh, const FluxModel& model, SolverState& st,
                     const std::vector<int>& face_cadence, double dt, Items faces, int front) {
  const int stamp = stage_stamp(front, Phase::corrector);
  for (int f : faces) {
    TAFV_ASSERT(st.face_staged[f] == stamp,
                "corrector flux requires face states reconstructed at this front");
    const Face& face = mesh.faces[f];
    const double phi_corr = rusanov(model, st.face_wL[f], st.face_wR[f], face.normal) * face.area;
    const double dt_sub = dt * static_cast<double>(1 << face_cadence[f]);
    st.int_substep[f] = 0.5 * dt_sub * (st.phi_pred[f] + phi_corr);
    st.int_window[f] += st.int_substep[f];
    st.face_front[f] = stamp;
  }
}

void flux_sum_predict(const Mesh& mesh, SolverState& st, Items cells, int front) {
  const int stamp = stage_stamp(front, Phase::predictor);
  for (int c : cells) {
    double sum = 0.0;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int f = mesh.adj_face[t];
      TAFV_ASSERT(st.face_front[f] == stamp,
                  "predictor residual requires every face flux evaluated at this front");
      sum += mesh.adj_sign[t] * st.phi_pred[f];
    }
    st.residual[c] = -sum;
  }
}

void flux_sum_correct(const Mesh& mesh, SolverState& st, const std::vector<int>& tau,
                      const std::vector<int>& face_cadence, Items cells, int front) {
  const int stamp = stage_stamp(front, Phase::corrector);
  for (int c : cells) {
    double sum = 0.0;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int f = mesh.adj_face[t];
      TAFV_ASSERT(st.face_front[f] == stamp,
                  "correction requires every face integral evaluated at this front");
      const double phi = tau[c] > face_cadence[f] ? st.int_window[f] : st.int_substep[f];
      sum += mesh.adj_sign[t] * phi;
    }
    st.residual[c] = -sum;
  }
}

void extensive_predict(SolverState& st, const std::vector<int>& tau, double dt, Items cells) {
  for (int c : cells) {
    const double dt_window = dt * static_cast<double>(1 << tau[c]);
    st.W_pred[c] = st.W[c] + dt_window * st.residual[c];
  }
}

void intensive_predict(const Mesh& mesh, SolverState& st, Items cells) {
  for (int c : cells) st.w_pred[c] = st.W_pred[c] / mesh.cells[c].volume;
}

void extensive_correct(SolverState& st, Items cells) {
  for (int c : cells) st.W[c] += st.residual[c];
}

void intensive_correct(const Mesh& mesh, SolverState& st, const std::vector<int>& tau, Items cells,
                       int front) {
  for (int c : cells) {
    TAFV_ASSERT(st.committed_front[c] + (1 << tau[c]) == front,
                "a correction must close exactly one window");
    st.w[c] = st.W[c] / mesh.cells[c].volume;
    st.committed_front[c] = front;
  }
}

void finalize_cells(const Mesh& mesh, SolverState& st, Items cells) {
  for (int c : cells) st.w[c] = st.W[c] / mesh.cells[c].volume;
}

void compute_dt_max(const Mesh& mesh, const FluxModel& model, SolverState& st, double cfl,
                    double dt_cap, Items cells) {
  for (int c : cells) {
    const double speed = model.wave_speed(st.w[c]);
    st.dt_max[c] =
        speed > 0.0 ? std::min(dt_cap, cfl * mesh.cells[c].char_length / speed) : dt_cap;
  }
}

void classify_cells(SolverState& st, double dt_min, int theta_max, Items cells) {
  for (int c : cells) st.raw_level[c] = classify_raw(st.dt_max[c], dt_min, theta_max);
}

double min_dt(const SolverState& st, Items cells) {
  double lowest = std::numeric_limits<double>::infinity();
  for (int c : cells) lowest = std::min(lowest, st.dt_max[c]);
  return lowest;
}

bool finite_state(const SolverState& st, Items cells) {
  for (int c : cells) {
    if (!std::isfinite(st.w[c]) || !std::isfinite(st.W[c])) return false;
  }
  return true;
}

}  // namespace tafv::kernels
