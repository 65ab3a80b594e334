#pragma once

#include <cstdint>
#include <vector>

#include "tafv/mesh.hpp"

namespace tafv {

// Rank and CE assignment. CE ids are global and grouped by rank: rank r owns
// the contiguous id range [r*ces_per_rank, (r+1)*ces_per_rank).
struct Partition {
  int n_ranks = 1;
  int ces_per_rank = 1;
  std::vector<int> rank_of_cell;
  std::vector<int> ce_of_cell;        // global CE id per cell
  std::vector<int64_t> cell_weight;

  int n_ces() const { return n_ranks * ces_per_rank; }
  int rank_of_ce(int ce) const { return ce / ces_per_rank; }
};

// Greedy weighted region growing over the face-adjacency graph restricted to
// `cells` (ascending cell ids). Deterministic: seeds and frontier picks take
// the lowest id; a local improvement pass then moves boundary cells toward a
// per-part weight within 25% of the mean where the weights allow it.
// Returns a part id in [0, n_parts) per entry of `cells`.
std::vector<int> partition_cells(const Mesh& mesh, const std::vector<int>& cells, int n_parts,
                                 const std::vector<int64_t>& weights);

// Two-level split: cells into ranks, then each rank's cells into CEs.
Partition make_partition(const Mesh& mesh, int n_ranks, int ces_per_rank,
                         const std::vector<int64_t>& weights);

}  // namespace tafv
