#include "tafv/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tafv/common.hpp"

namespace tafv {

namespace {

// Neighbor cells of `c` (periodic partners included) restricted to `in_subset`.
template <typename Fn>
void for_neighbors(const Mesh& mesh, int c, Fn&& fn) {
  for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
    const int nb = mesh.adj_neighbor[t];
    if (nb >= 0) fn(nb);
  }
}

void improve_balance(const Mesh& mesh, const std::vector<int>& cells,
                     const std::vector<int64_t>& weights, int n_parts, std::vector<int>& part_of,
                     std::vector<int64_t>& part_weight, std::vector<int>& part_size) {
  const double mean =
      static_cast<double>(std::accumulate(part_weight.begin(), part_weight.end(), int64_t{0})) /
      n_parts;
  std::vector<int> local(mesh.cell_count(), -1);
  for (size_t k = 0; k < cells.size(); ++k) local[cells[k]] = static_cast<int>(k);

  const int max_rounds = 4;
  for (int round = 0; round < max_rounds; ++round) {
    double worst = 0.0;
    for (int p = 0; p < n_parts; ++p) worst = std::max(worst, std::abs(part_weight[p] - mean));
    if (worst <= 0.25 * mean) return;

    bool moved = false;
    for (size_t k = 0; k < cells.size(); ++k) {
      const int c = cells[k];
      const int a = part_of[k];
      if (part_size[a] <= 1) continue;
      // Candidate destination parts, ascending, via face neighbors.
      std::set<int> dests;
      for_neighbors(mesh, c, [&](int nb) {
        if (local[nb] >= 0 && part_of[local[nb]] != a) dests.insert(part_of[local[nb]]);
      });
      const int64_t w = weights[c];
      const double before_a = std::abs(part_weight[a] - mean);
      for (int b : dests) {
        const double before = std::max(before_a, std::abs(part_weight[b] - mean));
        const double after = std::max(std::abs(part_weight[a] - w - mean),
                                      std::abs(part_weight[b] + w - mean));
        if (after + 1e-12 < before) {
          part_of[k] = b;
          part_weight[a] -= w;
          part_weight[b] += w;
          --part_size[a];
          ++part_size[b];
          moved = true;
          break;
        }
      }
    }
    if (!moved) return;
  }
}

}  // namespace

std::vector<int> partition_cells(const Mesh& mesh, const std::vector<int>& cells, int n_parts,
                                 const std::vector<int64_t>& weights) {
  require(n_parts >= 1, "partition: n_parts must be >= 1");
  require(n_parts <= static_cast<int>(cells.size()),
          "partition: more parts than cells");
  require(weights.size() == static_cast<size_t>(mesh.cell_count()),
          "partition: one weight per mesh cell required");
  for (int c : cells) require(weights[c] > 0, "partition: weights must be positive");

  const int n = static_cast<int>(cells.size());
  std::vector<int> local(mesh.cell_count(), -1);
  for (int k = 0; k < n; ++k) local[cells[k]] = k;

  std::vector<int> part_of(n, -1);
  std::vector<int64_t> part_weight(n_parts, 0);
  std::vector<int> part_size(n_parts, 0);
  std::set<int> unassigned(cells.begin(), cells.end());

  int64_t remaining =
      std::accumulate(cells.begin(), cells.end(), int64_t{0}, [&](int64_t s, int c) {
        return s + weights[c];
      });

  for (int p = 0; p < n_parts; ++p) {
    if (p == n_parts - 1) {
      for (int c : unassigned) {
        part_of[local[c]] = p;
        part_weight[p] += weights[c];
        ++part_size[p];
      }
      unassigned.clear();
      break;
    }
    // Leave at least one cell per remaining part.
    const int reserve = n_parts - 1 - p;
    const double target = static_cast<double>(remaining) / (n_parts - p);
    std::set<int> frontier;
    int64_t weight = 0;

    auto assign = [&](int c) {
      part_of[local[c]] = p;
      weight += weights[c];
      ++part_size[p];
      unassigned.erase(c);
      frontier.erase(c);
      for_neighbors(mesh, c, [&](int nb) {
        if (local[nb] >= 0 && part_of[local[nb]] < 0) frontier.insert(nb);
      });
    };

    assign(*unassigned.begin());
    while (weight < target && static_cast<int>(unassigned.size()) > reserve) {
      int c;
      if (!frontier.empty())
        c = *frontier.begin();
      else
        c = *unassigned.begin();  // disconnected jump; growth stays deterministic
      const double under = target - weight;
      const double over = static_cast<double>(weight + weights[c]) - target;
      if (over > under) break;
      assign(c);
    }
    part_weight[p] = weight;
    remaining -= weight;
  }

  improve_balance(mesh, cells, weights, n_parts, part_of, part_weight, part_size);
  return part_of;
}

Partition make_partition(const Mesh& mesh, int n_ranks, int ces_per_rank,
                         const std::vector<int64_t>& weights) {
  require(n_ranks >= 1 && ces_per_rank >= 1, "partition: rank and CE counts must be >= 1");
  const int nc = mesh.cell_count();
  std::vector<int> all(nc);
  std::iota(all.begin(), all.end(), 0);

  Partition part;
  part.n_ranks = n_ranks;
  part.ces_per_rank = ces_per_rank;
  part.cell_weight = weights;
  part.rank_of_cell = partition_cells(mesh, all, n_ranks, weights);
  part.ce_of_cell.assign(nc, -1);

  for (int r = 0; r < n_ranks; ++r) {
    std::vector<int> owned;
    for (int c = 0; c < nc; ++c)
      if (part.rank_of_cell[c] == r) owned.push_back(c);
    const std::vector<int> ce_local = partition_cells(mesh, owned, ces_per_rank, weights);
    for (size_t k = 0; k < owned.size(); ++k)
      part.ce_of_cell[owned[k]] = r * ces_per_rank + ce_local[k];
  }
  return part;
}

}  // namespace tafv
