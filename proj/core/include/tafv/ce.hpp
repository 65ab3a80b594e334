#pragma once

#include <utility>
#include <vector>

#include "tafv/mesh.hpp"
#include "tafv/partition.hpp"

namespace tafv {

// Mirror of a foreign CE's rank-border cells that are adjacent to a local CE.
// Slots hold global cell ids (ascending); state arrays are full-size on every
// rank, so a slot is read/written at its global index with no translation.
struct GhostComponent {
  int local_ce = -1;
  int foreign_ce = -1;
  std::vector<int> slots;
};

struct ComputationElement {
  int id = -1;
  int rank = -1;
  std::vector<int> inner_cells;   // not adjacent to any other CE
  std::vector<int> border_cells;  // adjacent to another CE (any rank)
  std::vector<int> mpi_border_cells;  // subset of border: adjacent to another rank
  std::vector<int> intra_faces;       // face records fully inside this CE
  // (neighbor CE, face records joining the two CEs), ascending neighbor id.
  std::vector<std::pair<int, std::vector<int>>> inter_faces;
  std::vector<GhostComponent> ghosts;  // one per cross-rank neighbor CE, ascending

  int cell_count() const {
    return static_cast<int>(inner_cells.size() + border_cells.size());
  }
};

// Global CE view, built identically on every rank from the replicated mesh and
// partition; immutable until a repartition.
struct CESet {
  std::vector<ComputationElement> ces;
  std::vector<std::vector<int>> adjacency;  // neighbor CE ids per CE, ascending

  const ComputationElement& ce(int id) const { return ces[id]; }
  int size() const { return static_cast<int>(ces.size()); }
};

CESet build_ces(const Mesh& mesh, const Partition& part);

}  // namespace tafv
