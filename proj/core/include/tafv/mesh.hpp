#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tafv/geometry.hpp"

namespace tafv {

struct RefinementRegion {
  Box bbox;
  int scale = 1;  // power of two; base cells whose centroid lies in bbox split scale^dim ways
};

struct MeshSpec {
  int dim = 2;
  int nx = 1;
  int ny = 1;  // ignored for dim == 1
  Box domain{{0.0, 0.0}, {1.0, 1.0}};
  bool periodic_x = false;
  bool periodic_y = false;
  std::vector<RefinementRegion> regions;
};

struct Cell {
  Vec2 centroid;
  double volume = 0.0;       // area in 2D, length in 1D
  double char_length = 0.0;  // shortest side
};

struct Face {
  int left = -1;   // boundary faces keep their single cell here
  int right = -1;  // -1 on boundary faces
  Vec2 normal;     // unit, oriented left -> right; outward on boundary faces
  double area = 0.0;
  Vec2 centroid;
  int periodic_partner = -1;  // matching boundary face on the opposite side, or -1
};

// Immutable after generate_mesh/load; shared read-only by all workers and ranks.
struct Mesh {
  MeshSpec spec;
  int dim = 2;
  std::vector<Cell> cells;
  std::vector<Face> faces;

  // Per-cell face adjacency in ascending face-id order (fixes every summation
  // order in the solver). adj_sign is +1 where the cell is faces[f].left.
  std::vector<int> adj_offset;    // size cells+1
  std::vector<int> adj_face;
  std::vector<int> adj_neighbor;  // -1 across transmissive faces; periodic resolves to the partner cell
  std::vector<double> adj_sign;

  int cell_count() const { return static_cast<int>(cells.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
  // Periodic faces are stored as matched record pairs; a pair is one physical face.
  int distinct_face_count() const;
  int adj_begin(int cell) const { return adj_offset[cell]; }
  int adj_end(int cell) const { return adj_offset[cell + 1]; }

  uint64_t hash() const;
  void save(std::ostream& os) const;
  static Mesh load(std::istream& is);
};

Mesh generate_mesh(const MeshSpec& spec);

}  // namespace tafv
