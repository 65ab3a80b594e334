#pragma once

#include <cstdint>
#include <vector>

#include "tafv/mesh.hpp"

namespace tafv {

// Per-cell temporal level tau in [0, theta]; a level-tau cell advances with
// step 2^tau * dt. An iteration spans 2^theta * dt in 2^theta subiterations.
struct LevelMap {
  std::vector<int> tau;
  int theta = 0;
  double dt = 0.0;
  std::vector<std::vector<int>> cells_of_level;  // ascending ids per level

  int64_t level_cost(int level) const;  // 2^(theta-level) * |cells_of_level[level]|
  double cost_ratio() const;            // 2^theta * n_cells / sum of level costs
  std::vector<double> cell_shares() const;
  std::vector<double> cost_shares() const;
};

// Level of subiteration s in [1, 2^theta]: the largest tmp with
// (s-1) mod 2^tmp == 0. Levels <= this value start a new substep at s.
int subiteration_level(int s, int theta);

// floor(log2(dt_max/dt_min)) clamped to [0, theta_max].
int classify_raw(double dt_max, double dt_min, int theta_max);
std::vector<int> classify_raw(const std::vector<double>& dt_max, double dt_min, int theta_max);

// One Jacobi sweep of tau[i] <- min(tau[i], 1 + min over face neighbors).
// Returns true when something changed. Jacobi (not in-place) so that ranks
// sweeping disjoint cell subsets of a replicated array reach the same
// fixpoint as a single rank.
bool smooth_sweep(const Mesh& mesh, const std::vector<int>& in, std::vector<int>& out);
void smooth_to_fixpoint(const Mesh& mesh, std::vector<int>& tau);

LevelMap make_level_map(std::vector<int> tau, double dt);

// Cost-model helpers over share vectors (index = level), for running the
// model on published occupancy tables without a mesh.
std::vector<double> cost_shares_from_cell_shares(const std::vector<double>& cell_shares);
double cost_ratio_from_cell_shares(const std::vector<double>& cell_shares);

// Level-derived structure fixed for one iteration and shared by the
// sequential integrator and the task generator, so both hand identical item
// sets to the kernels.
struct IterationPlan {
  LevelMap levels;
  // Face cadence = min of the two side levels (periodic partner resolved,
  // boundary faces take their single cell); the face steps 2^cadence fronts.
  std::vector<int> face_cadence;
  std::vector<std::vector<int>> faces_of_cadence;  // ascending face ids per cadence
  // fringe[l]: cells of level l+1 with a level-l neighbor. These are the
  // repositioning targets whenever subiteration level l is active.
  std::vector<std::vector<int>> fringe;

  int theta() const { return levels.theta; }
  int subiterations() const { return 1 << levels.theta; }
};

IterationPlan build_iteration_plan(const Mesh& mesh, LevelMap levels);

}  // namespace tafv
