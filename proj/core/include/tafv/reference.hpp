#pragma once

#include <cstdint>
#include <vector>

#include "tafv/levels.hpp"
#include "tafv/mesh.hpp"
#include "tafv/physics.hpp"
#include "tafv/state.hpp"

namespace tafv {

struct SolverOptions {
  FluxModel model;
  int theta_max = 3;
  double cfl = 0.9;
  double dt_cap = 1.0;
};

struct IterationRecord {
  int iteration = 0;
  double t_start = 0.0;
  double dt = 0.0;       // front width (the global stable step)
  int theta = 0;         // deepest level this iteration
  double advance = 0.0;  // 2^theta * dt
  double total_extensive = 0.0;
  double cost_ratio = 1.0;
  std::vector<int64_t> level_cells;
};

// Classify every cell from its stable-step bound, smooth the levels to the
// one-level-jump fixpoint, and derive the iteration structure. Shared by the
// sequential integrator and the task-based drivers so both hand identical
// item sets to the kernels.
IterationPlan plan_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt);

// Execute one iteration under an already-built plan (tests inject
// hand-constructed level maps through this entry).
IterationRecord run_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt,
                              const IterationPlan& plan);

// Record layout shared by every driver; reads st.iteration and the summed
// extensive state after the iteration committed.
IterationRecord make_iteration_record(const SolverState& st, const IterationPlan& plan,
                                      double t_start);

// One adaptive iteration over the whole mesh, phase by phase, single thread.
// This is the ground truth every decomposed execution must reproduce.
IterationRecord reference_iteration(const Mesh& mesh, SolverState& st, const SolverOptions& opt);

std::vector<IterationRecord> reference_integrate(const Mesh& mesh, SolverState& st,
                                                 const SolverOptions& opt, int iterations);

// Uniform two-stage predictor/corrector step over the whole mesh with one
// global dt, written as a straight line. The adaptive integrator restricted
// to a single level must match this bitwise.
std::vector<IterationRecord> plain_heun_integrate(const Mesh& mesh, SolverState& st,
                                                  const SolverOptions& opt, int iterations);

}  // namespace tafv
