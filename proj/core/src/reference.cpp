#include "tafv/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tafv/common.hpp"
#include "tafv/kernels.hpp"

namespace tafv {
namespace {

std::vector<int> iota_items(int n) {
  std::vector<int> items(n);
  std::iota(items.begin(), items.end(), 0);
  return items;
}

// Prefix unions over levels: entry l holds every item of level <= l in
// ascending id, the sets active whenever subiteration level l runs.
struct ActiveSets {
  std::vector<std::vector<int>> cells;
  std::vector<std::vector<int>> faces;
};

ActiveSets build_active_sets(const Mesh& mesh, const IterationPlan& plan) {
  ActiveSets sets;
  const int theta = plan.theta();
  sets.cells.resize(theta + 1);
  sets.faces.resize(theta + 1);
  for (int l = 0; l <= theta; ++l) {
    for (int c = 0; c < mesh.cell_count(); ++c)
      if (plan.levels.tau[c] <= l) sets.cells[l].push_back(c);
    for (int f = 0; f < mesh.face_count(); ++f)
      if (plan.face_cadence[f] <= l) sets.faces[l].push_back(f);
  }
  return sets;
}

void corrector_phase(const Mesh& mesh, SolverState& st, const IterationPlan& plan,
                     const FluxModel& model, double dt, kernels::Items cells, kernels::Items faces,
                     kernels::Items fringe, int front) {
  const std::vector<int>& tau = plan.levels.tau;
  kernels::stage_predicted(st, tau, cells, front);
  kernels::stage_interpolated(st, tau, fringe, front, Phase::corrector);
  kernels::green_gauss_gradient(mesh, st, cells, front, Phase::corrector);
  kernels::limit_gradients(mesh, st, cells, front, Phase::corrector);
  kernels::reconstruct_faces(mesh, st, faces, front, Phase::corrector);
  kernels::riemann_correct(mesh, model, st, plan.face_cadence, dt, faces, front);
  kernels::flux_sum_correct(mesh, st, tau, plan.face_cadence, cells, front);
  kernels::extensive_correct(st, cells);
  kernels::intensive_correct(mesh, st, tau, cells, front);
}

void predictor_phase(const Mesh& mesh, SolverState& st, const IterationPlan& plan,
                     const FluxModel& model, double dt, kernels::Items cells, kernels::Items faces,
                     kernels::Items fringe, int front) {
  const std::vector<int>& tau = plan.levels.tau;
  kernels::stage_committed(st, cells, front);
  kernels::stage_interpolated(st, tau, fringe, front, Phase::predictor);
  kernels::green_gauss_gradient(mesh, st, cells, front, Phase::predictor);
  kernels::limit_gradients(mesh, st, cells, front, Phase::predictor);
  kernels::reset_windows(mesh, st, faces, front);
  kernels::reconstruct_faces(mesh, st, faces, front, Phase::predictor);
  kernels::riemann_predict(mesh, model, st, faces, front);
  kernels::flux_sum_predict(mesh, st, cells, front);
  kernels::extensive_predict(st, tau, dt, cells);
  kernels::intensive_predict(mesh, st, cells);
}

}  // namespace

IterationRecord make_iteration_record(const SolverState& st, const IterationPlan& plan,
                                      double t_start) {
  IterationRecord rec;
  rec.iteration = st.iteration;
  rec.t_start = t_start;
  rec.dt = plan.levels.dt;
  rec.theta = plan.theta();
  rec.advance = plan.levels.dt * static_cast<double>(plan.subiterations());
  rec.total_extensive = st.total_extensive();
  rec.cost_ratio = plan.levels.cost_ratio();
  for (const std::vector<int>& level : plan.levels.cells_of_level)
    rec.level_cells.push_back(static_cast<int64_t>(level.size()));
  return rec;
}

IterationPlan plan_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt) {
  const std::vector<int> cells = iota_items(mesh.cell_count());
  kernels::compute_dt_max(mesh, opt.model, st, opt.cfl, opt.dt_cap, cells);
  const double dt_min = kernels::min_dt(st, cells);
  require(std::isfinite(dt_min) && dt_min > 0.0, "integrate: stable step collapsed");
  kernels::classify_cells(st, dt_min, opt.theta_max, cells);
  std::vector<int> tau = st.raw_level;
  smooth_to_fixpoint(mesh, tau);
  return build_iteration_plan(mesh, make_level_map(std::move(tau), dt_min));
}

IterationRecord run_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt,
                              const IterationPlan& plan) {
  const int theta = plan.theta();
  const double dt = plan.levels.dt;
  const std::vector<int> all_cells = iota_items(mesh.cell_count());
  const std::vector<int> all_faces = iota_items(mesh.face_count());
  const ActiveSets sets = build_active_sets(mesh, plan);
  const double t_start = st.t0;

  reset_fronts(st);
  const int subiterations = plan.subiterations();
  for (int s = 1; s <= subiterations; ++s) {
    const int level = subiteration_level(s, theta);
    const int front = s - 1;
    const kernels::Items cells = sets.cells[level];
    const kernels::Items faces = sets.faces[level];
    const kernels::Items fringe =
        level < theta ? kernels::Items(plan.fringe[level]) : kernels::Items();
    if (s > 1) corrector_phase(mesh, st, plan, opt.model, dt, cells, faces, fringe, front);
    predictor_phase(mesh, st, plan, opt.model, dt, cells, faces, fringe, front);
  }
  corrector_phase(mesh, st, plan, opt.model, dt, all_cells, all_faces, {}, subiterations);

  if (!kernels::finite_state(st, all_cells))
    throw std::runtime_error("integrate: solution diverged to a non-finite state");
  kernels::finalize_cells(mesh, st, all_cells);
  st.t0 = t_start + dt * static_cast<double>(subiterations);
  st.iteration += 1;
  return make_iteration_record(st, plan, t_start);
}

IterationRecord reference_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt) {
  return run_iteration(mesh, st, opt, plan_iteration(mesh, st, opt));
}

std::vector<IterationRecord> reference_integrate(const Mesh& mesh, SolverState& st,
                                                 const SolverOptions& opt, int iterations) {
  require(iterations >= 0, "integrate: negative iteration count");
  std::vector<IterationRecord> records;
  records.reserve(iterations);
  for (int i = 0; i < iterations; ++i) records.push_back(reference_iteration(mesh, st, opt));
  return records;
}

std::vector<IterationRecord> plain_heun_integrate(const Mesh& mesh, SolverState& st,
                                                  const SolverOptions& opt, int iterations) {
  require(iterations >= 0, "integrate: negative iteration count");
  const std::vector<int> cells = iota_items(mesh.cell_count());
  const std::vector<int> faces = iota_items(mesh.face_count());
  const std::vector<int> tau(mesh.cell_count(), 0);
  const std::vector<int> cadence(mesh.face_count(), 0);
  std::vector<IterationRecord> records;
  records.reserve(iterations);

  for (int i = 0; i < iterations; ++i) {
    kernels::compute_dt_max(mesh, opt.model, st, opt.cfl, opt.dt_cap, cells);
    const double dt = kernels::min_dt(st, cells);
    require(std::isfinite(dt) && dt > 0.0, "integrate: stable step collapsed");
    reset_fronts(st);

    // Predictor: forward step of the whole mesh from t to t + dt.
    kernels::stage_committed(st, cells, 0);
    kernels::green_gauss_gradient(mesh, st, cells, 0, Phase::predictor);
    kernels::limit_gradients(mesh, st, cells, 0, Phase::predictor);
    kernels::reset_windows(mesh, st, faces, 0);
    kernels::reconstruct_faces(mesh, st, faces, 0, Phase::predictor);
    kernels::riemann_predict(mesh, opt.model, st, faces, 0);
    kernels::flux_sum_predict(mesh, st, cells, 0);
    kernels::extensive_predict(st, tau, dt, cells);
    kernels::intensive_predict(mesh, st, cells);

    // Corrector: re-evaluate the fluxes at the predicted state and commit
    // the trapezoidal average of both evaluations.
    kernels::stage_predicted(st, tau, cells, 1);
    kernels::green_gauss_gradient(mesh, st, cells, 1, Phase::corrector);
    kernels::limit_gradients(mesh, st, cells, 1, Phase::corrector);
    kernels::reconstruct_faces(mesh, st, faces, 1, Phase::corrector);
    kernels::riemann_correct(mesh, opt.model, st, cadence, dt, faces, 1);
    kernels::flux_sum_correct(mesh, st, tau, cadence, cells, 1);
    kernels::extensive_correct(st, cells);
    kernels::intensive_correct(mesh, st, tau, cells, 1);

    if (!kernels::finite_state(st, cells))
      throw std::runtime_error("integrate: solution diverged to a non-finite state");
    kernels::finalize_cells(mesh, st, cells);

    IterationRecord rec;
    rec.iteration = ++st.iteration;
    rec.t_start = st.t0;
    rec.dt = dt;
    rec.theta = 0;
    rec.advance = dt;
    rec.total_extensive = st.total_extensive();
    rec.cost_ratio = 1.0;
    rec.level_cells = {mesh.cell_count()};
    st.t0 += dt;
    records.push_back(rec);
  }
  return records;
}

}  // namespace tafv
