#include "tafv/ce.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tafv/common.hpp"

namespace tafv {

CESet build_ces(const Mesh& mesh, const Partition& part) {
  const int nc = mesh.cell_count();
  require(static_cast<int>(part.ce_of_cell.size()) == nc, "build_ces: partition/mesh mismatch");

  CESet set;
  set.ces.resize(part.n_ces());
  set.adjacency.resize(part.n_ces());
  for (int ce = 0; ce < part.n_ces(); ++ce) {
    set.ces[ce].id = ce;
    set.ces[ce].rank = part.rank_of_ce(ce);
  }

  // Cells: split into inner and border, flag rank borders.
  for (int c = 0; c < nc; ++c) {
    const int ce = part.ce_of_cell[c];
    bool border = false, mpi_border = false;
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) {
      const int nb = mesh.adj_neighbor[t];
      if (nb < 0) continue;
      if (part.ce_of_cell[nb] != ce) border = true;
      if (part.rank_of_cell[nb] != part.rank_of_cell[c]) mpi_border = true;
    }
    (border ? set.ces[ce].border_cells : set.ces[ce].inner_cells).push_back(c);
    if (mpi_border) set.ces[ce].mpi_border_cells.push_back(c);
  }

  // Face records: intra when both sides (periodic partner resolved) share the
  // CE; otherwise the record joins a CE pair. Records of a pair are listed
  // symmetrically on both CEs.
  std::map<std::pair<int, int>, std::vector<int>> pair_faces;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces[f];
    int nb = face.right;
    if (nb < 0 && face.periodic_partner >= 0) nb = mesh.faces[face.periodic_partner].left;
    const int ce_l = part.ce_of_cell[face.left];
    if (nb < 0 || part.ce_of_cell[nb] == ce_l) {
      set.ces[ce_l].intra_faces.push_back(f);
    } else {
      const int ce_n = part.ce_of_cell[nb];
      pair_faces[{std::min(ce_l, ce_n), std::max(ce_l, ce_n)}].push_back(f);
    }
  }

  for (const auto& [key, faces] : pair_faces) {
    const auto [a, b] = key;
    set.ces[a].inter_faces.emplace_back(b, faces);
    set.ces[b].inter_faces.emplace_back(a, faces);
    set.adjacency[a].push_back(b);
    set.adjacency[b].push_back(a);
  }
  for (auto& ce : set.ces)
    std::sort(ce.inter_faces.begin(), ce.inter_faces.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
  for (auto& adj : set.adjacency) std::sort(adj.begin(), adj.end());

  // Ghost components for cross-rank CE pairs: the slots are the foreign CE's
  // rank-border cells adjacent to this CE, in ascending global id so both
  // ranks derive byte-identical exchange plans.
  for (const auto& [key, faces] : pair_faces) {
    const auto [a, b] = key;
    if (part.rank_of_ce(a) == part.rank_of_ce(b)) continue;
    std::set<int> a_side, b_side;
    for (int f : faces) {
      const Face& face = mesh.faces[f];
      int nb = face.right;
      if (nb < 0 && face.periodic_partner >= 0) nb = mesh.faces[face.periodic_partner].left;
      const int ce_l = part.ce_of_cell[face.left];
      const int cell_a = ce_l == a ? face.left : nb;
      const int cell_b = ce_l == a ? nb : face.left;
      a_side.insert(cell_a);
      b_side.insert(cell_b);
    }
    set.ces[a].ghosts.push_back({a, b, {b_side.begin(), b_side.end()}});
    set.ces[b].ghosts.push_back({b, a, {a_side.begin(), a_side.end()}});
  }
  for (auto& ce : set.ces)
    std::sort(ce.ghosts.begin(), ce.ghosts.end(),
              [](const GhostComponent& x, const GhostComponent& y) {
                return x.foreign_ce < y.foreign_ce;
              });

  return set;
}

}  // namespace tafv
