#include "tafv/state.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "tafv/common.hpp"

namespace tafv {

void SolverState::init(const Mesh& mesh) {
  const size_t nc = mesh.cells.size();
  const size_t nf = mesh.faces.size();
  w.assign(nc, 0.0);
  W.assign(nc, 0.0);
  W_pred.assign(nc, 0.0);
  w_pred.assign(nc, 0.0);
  w_eval.assign(nc, 0.0);
  gx.assign(nc, 0.0);
  gy.assign(nc, 0.0);
  residual.assign(nc, 0.0);
  dt_max.assign(nc, 0.0);
  raw_level.assign(nc, 0);
  committed_front.assign(nc, 0);
  staged_front.assign(nc, 0);
  face_wL.assign(nf, 0.0);
  face_wR.assign(nf, 0.0);
  phi_pred.assign(nf, 0.0);
  int_substep.assign(nf, 0.0);
  int_window.assign(nf, 0.0);
  face_staged.assign(nf, -1);
  face_front.assign(nf, -1);
  t0 = 0.0;
  iteration = 0;
}

double SolverState::total_extensive() const {
  double total = 0.0;
  for (double v : W) total += v;
  return total;
}

void init_gaussian(const Mesh& mesh, SolverState& st, const GaussianProfile& p) {
  st.init(mesh);
  for (int c = 0; c < mesh.cell_count(); ++c) {
    const Vec2 d = mesh.cells[c].centroid - p.center;
    st.w[c] = p.base + p.amplitude * std::exp(-dot(d, d) / (2.0 * p.sigma * p.sigma));
  }
  sync_extensive(mesh, st);
}

void init_uniform(const Mesh& mesh, SolverState& st, double value) {
  st.init(mesh);
  for (double& v : st.w) v = value;
  sync_extensive(mesh, st);
}

void sync_extensive(const Mesh& mesh, SolverState& st) {
  for (int c = 0; c < mesh.cell_count(); ++c) {
    st.W[c] = st.w[c] * mesh.cells[c].volume;
    st.w_eval[c] = st.w[c];
    st.committed_front[c] = 0;
    st.staged_front[c] = 0;
  }
}

void reset_fronts(SolverState& st) {
  std::fill(st.committed_front.begin(), st.committed_front.end(), 0);
  std::fill(st.staged_front.begin(), st.staged_front.end(), -1);
  std::fill(st.face_staged.begin(), st.face_staged.end(), -1);
  std::fill(st.face_front.begin(), st.face_front.end(), -1);
}

void save_snapshot(std::ostream& os, const Mesh& mesh, const SolverState& st) {
  char buf[128];
  os << "tafv-snapshot 1\n";
  std::snprintf(buf, sizeof buf, "mesh_hash %016llx\n",
                static_cast<unsigned long long>(mesh.hash()));
  os << buf;
  os << "cells " << mesh.cell_count() << "\n";
  std::snprintf(buf, sizeof buf, "time %.17g\n", st.t0);
  os << buf;
  os << "iteration " << st.iteration << "\n";
  for (int c = 0; c < mesh.cell_count(); ++c) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g\n", c, st.w[c], st.W[c]);
    os << buf;
  }
}

Snapshot Snapshot::load(std::istream& is) {
  Snapshot snap;
  std::string word;
  int version = 0;
  is >> word >> version;
  require(is.good() && word == "tafv-snapshot" && version == 1, "snapshot: bad header");
  is >> word >> std::hex >> snap.mesh_hash >> std::dec;
  require(is.good() && word == "mesh_hash", "snapshot: missing mesh_hash");
  int cells = 0;
  is >> word >> cells;
  require(is.good() && word == "cells" && cells >= 0, "snapshot: missing cell count");
  is >> word >> snap.time;
  require(is.good() && word == "time", "snapshot: missing time");
  is >> word >> snap.iteration;
  require(is.good() && word == "iteration", "snapshot: missing iteration");
  snap.w.resize(cells);
  snap.W.resize(cells);
  for (int c = 0; c < cells; ++c) {
    int id = -1;
    is >> id >> snap.w[c] >> snap.W[c];
    require(is.good() && id == c, "snapshot: truncated or misordered cell rows");
  }
  return snap;
}

double compare_snapshots(const Snapshot& a, const Snapshot& b) {
  require(a.mesh_hash == b.mesh_hash && a.w.size() == b.w.size(),
          "compare: snapshots come from different meshes");
  double worst = 0.0;
  auto rel = [](double x, double y) {
    const double diff = std::abs(x - y);
    if (diff == 0.0) return 0.0;
    return diff / std::max({std::abs(x), std::abs(y), 1e-300});
  };
  for (size_t c = 0; c < a.w.size(); ++c) {
    worst = std::max(worst, rel(a.w[c], b.w[c]));
    worst = std::max(worst, rel(a.W[c], b.W[c]));
  }
  return worst;
}

}  // namespace tafv
