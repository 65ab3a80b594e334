#include "tafv/levels.hpp"

#include <algorithm>
#include <cmath>

#include "tafv/common.hpp"

namespace tafv {

int subiteration_level(int s, int theta) {
  require(theta >= 0, "subiteration_level: theta must be >= 0");
  require(s >= 1 && s <= (1 << theta), "subiteration_level: s out of [1, 2^theta]");
  for (int tmp = theta; tmp > 0; --tmp)
    if ((s - 1) % (1 << tmp) == 0) return tmp;
  return 0;
}

int classify_raw(double dt_max, double dt_min, int theta_max) {
  require(dt_min > 0.0, "classify: dt_min must be positive");
  require(theta_max >= 0, "classify: theta_max must be >= 0");
  // ilogb is an exact floor(log2) of the quotient's magnitude.
  const double ratio = dt_max / dt_min;
  const int raw = ratio >= 1.0 ? std::ilogb(ratio) : 0;
  return std::clamp(raw, 0, theta_max);
}

std::vector<int> classify_raw(const std::vector<double>& dt_max, double dt_min, int theta_max) {
  std::vector<int> tau(dt_max.size());
  for (size_t i = 0; i < dt_max.size(); ++i) tau[i] = classify_raw(dt_max[i], dt_min, theta_max);
  return tau;
}

bool smooth_sweep(const Mesh& mesh, const std::vector<int>& in, std::vector<int>& out) {
  out.resize(in.size());
  bool changed = false;
  for (int c = 0; c < mesh.cell_count(); ++c) {
    int bound = in[c];
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int nb = mesh.adj_neighbor[t];
      if (nb >= 0) bound = std::min(bound, in[nb] + 1);
    }
    out[c] = bound;
    changed = changed || bound != in[c];
  }
  return changed;
}

void smooth_to_fixpoint(const Mesh& mesh, std::vector<int>& tau) {
  std::vector<int> next;
  while (smooth_sweep(mesh, tau, next)) tau.swap(next);
}

LevelMap make_level_map(std::vector<int> tau, double dt) {
  require(dt > 0.0, "level map: dt must be positive");
  LevelMap map;
  map.tau = std::move(tau);
  map.dt = dt;
  map.theta = 0;
  for (int t : map.tau) map.theta = std::max(map.theta, t);
  map.cells_of_level.assign(map.theta + 1, {});
  for (size_t c = 0; c < map.tau.size(); ++c) {
    require(map.tau[c] >= 0, "level map: negative level");
    map.cells_of_level[map.tau[c]].push_back(static_cast<int>(c));
  }
  return map;
}

int64_t LevelMap::level_cost(int level) const {
  return (int64_t{1} << (theta - level)) *
         static_cast<int64_t>(cells_of_level[level].size());
}

double LevelMap::cost_ratio() const {
  int64_t total = 0;
  for (int l = 0; l <= theta; ++l) total += level_cost(l);
  if (total == 0) return 1.0;
  const int64_t plain = (int64_t{1} << theta) * static_cast<int64_t>(tau.size());
  return static_cast<double>(plain) / static_cast<double>(total);
}

std::vector<double> LevelMap::cell_shares() const {
  std::vector<double> shares(theta + 1, 0.0);
  if (tau.empty()) return shares;
  for (int l = 0; l <= theta; ++l)
    shares[l] = static_cast<double>(cells_of_level[l].size()) / static_cast<double>(tau.size());
  return shares;
}

std::vector<double> LevelMap::cost_shares() const {
  std::vector<double> shares(theta + 1, 0.0);
  int64_t total = 0;
  for (int l = 0; l <= theta; ++l) total += level_cost(l);
  if (total == 0) return shares;
  for (int l = 0; l <= theta; ++l)
    shares[l] = static_cast<double>(level_cost(l)) / static_cast<double>(total);
  return shares;
}

std::vector<double> cost_shares_from_cell_shares(const std::vector<double>& cell_shares) {
  require(!cell_shares.empty(), "cost model: empty share vector");
  const int theta = static_cast<int>(cell_shares.size()) - 1;
  std::vector<double> cost(cell_shares.size());
  double total = 0.0;
  for (int l = 0; l <= theta; ++l) {
    cost[l] = static_cast<double>(int64_t{1} << (theta - l)) * cell_shares[l];
    total += cost[l];
  }
  for (double& v : cost) v /= total;
  return cost;
}

double cost_ratio_from_cell_shares(const std::vector<double>& cell_shares) {
  require(!cell_shares.empty(), "cost model: empty share vector");
  const int theta = static_cast<int>(cell_shares.size()) - 1;
  double whole = 0.0, total = 0.0;
  for (int l = 0; l <= theta; ++l) {
    whole += cell_shares[l];
    total += static_cast<double>(int64_t{1} << (theta - l)) * cell_shares[l];
  }
  return static_cast<double>(int64_t{1} << theta) * whole / total;
}

IterationPlan build_iteration_plan(const Mesh& mesh, LevelMap levels) {
  IterationPlan plan;
  plan.levels = std::move(levels);
  const std::vector<int>& tau = plan.levels.tau;
  require(tau.size() == static_cast<size_t>(mesh.cell_count()), "plan: level/mesh mismatch");

  plan.face_cadence.resize(mesh.face_count());
  plan.faces_of_cadence.assign(plan.levels.theta + 1, {});
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces[f];
    int nb = face.right;
    if (nb < 0 && face.periodic_partner >= 0) nb = mesh.faces[face.periodic_partner].left;
    const int cadence = nb >= 0 ? std::min(tau[face.left], tau[nb]) : tau[face.left];
    plan.face_cadence[f] = cadence;
    plan.faces_of_cadence[cadence].push_back(f);
  }

  plan.fringe.assign(std::max(plan.levels.theta, 0), {});
  for (int c = 0; c < mesh.cell_count(); ++c) {
    if (tau[c] == 0) continue;
    const int l = tau[c] - 1;
    if (l >= plan.levels.theta) continue;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int nb = mesh.adj_neighbor[t];
      if (nb >= 0 && tau[nb] == l) {
        plan.fringe[l].push_back(c);
        break;
      }
    }
  }
  return plan;
}

}  // namespace tafv
