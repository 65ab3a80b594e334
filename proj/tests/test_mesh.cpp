#include <stdexcept>
#include <map>
#include <sstream>

#include "doctest.h"
#include "tafv/mesh.hpp"

using namespace tafv;

namespace {

MeshSpec line_spec(int nx, bool periodic) {
  MeshSpec spec;
  spec.dim = 1;
  spec.nx = nx;
  spec.domain = {{0.0, 0.0}, {1.0, 1.0}};
  spec.periodic_x = periodic;
  return spec;
}

double closure_defect(const Mesh& mesh, int cell) {
  Vec2 sum{0.0, 0.0};
  for (int t = mesh.adj_begin(cell); t < mesh.adj_end(cell); ++t) {
    const Face& f = mesh.faces[mesh.adj_face[t]];
    sum = sum + mesh.adj_sign[t] * f.area * f.normal;
  }
  return norm(sum);
}

}  // namespace

TEST_CASE("uniform periodic line: counts, partners, closure") {
  const Mesh mesh = generate_mesh(line_spec(4, true));
  CHECK(mesh.cell_count() == 4);
  CHECK(mesh.face_count() == 5);
  CHECK(mesh.distinct_face_count() == 4);

  int paired = 0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces[f];
    CHECK(face.area > 0.0);
    if (face.periodic_partner >= 0) {
      const Face& partner = mesh.faces[face.periodic_partner];
      CHECK(partner.periodic_partner == f);
      CHECK(partner.area == face.area);
      ++paired;
    }
  }
  CHECK(paired == 2);
  for (int c = 0; c < mesh.cell_count(); ++c) {
    CHECK(closure_defect(mesh, c) <= 1e-12);
    CHECK(mesh.cells[c].volume == doctest::Approx(0.25));
  }

  // Wrap-around adjacency: cell 0 sees cell 3 through its periodic record.
  bool wraps = false;
  for (int t = mesh.adj_begin(0); t < mesh.adj_end(0); ++t) wraps = wraps || mesh.adj_neighbor[t] == 3;
  CHECK(wraps);
}

TEST_CASE("line with right half refined x4") {
  MeshSpec spec = line_spec(4, false);
  spec.regions.push_back({{{0.5, 0.0}, {1.0, 1.0}}, 4});
  const Mesh mesh = generate_mesh(spec);

  int coarse = 0, fine = 0;
  for (const Cell& c : mesh.cells) {
    if (c.volume == doctest::Approx(0.25)) ++coarse;
    if (c.volume == doctest::Approx(0.0625)) ++fine;
  }
  CHECK(coarse == 2);
  CHECK(fine == 8);
  CHECK(mesh.cell_count() == 10);
  CHECK(mesh.face_count() == 11);  // 9 interior + 2 transmissive ends
  for (int c = 0; c < mesh.cell_count(); ++c) CHECK(closure_defect(mesh, c) <= 1e-12);
}

TEST_CASE("2D 8x8 with one quadrant refined x2") {
  MeshSpec spec;
  spec.nx = 8;
  spec.ny = 8;
  spec.regions.push_back({{{0.0, 0.0}, {0.5, 0.5}}, 2});
  const Mesh mesh = generate_mesh(spec);

  CHECK(mesh.cell_count() == 112);
  int coarse = 0, fine = 0;
  for (const Cell& c : mesh.cells) {
    if (c.volume == doctest::Approx(1.0 / 64.0)) ++coarse;
    if (c.volume == doctest::Approx(1.0 / 256.0)) ++fine;
  }
  CHECK(coarse == 48);
  CHECK(fine == 64);

  // Every interior face is referenced by exactly two cells, boundary faces by one.
  std::map<int, int> refs;
  for (int c = 0; c < mesh.cell_count(); ++c)
    for (int t = mesh.adj_begin(c); t < mesh.adj_end(c); ++t) ++refs[mesh.adj_face[t]];
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int expected = mesh.faces[f].right >= 0 ? 2 : 1;
    CHECK(refs[f] == expected);
  }
  for (int c = 0; c < mesh.cell_count(); ++c) CHECK(closure_defect(mesh, c) <= 1e-12);

  // Adjacency lists are ascending by face id (the fixed summation order).
  for (int c = 0; c < mesh.cell_count(); ++c)
    for (int t = mesh.adj_begin(c) + 1; t < mesh.adj_end(c); ++t)
      CHECK(mesh.adj_face[t - 1] < mesh.adj_face[t]);
}

TEST_CASE("2D periodic torus: record and distinct counts") {
  MeshSpec spec;
  spec.nx = 8;
  spec.ny = 8;
  spec.periodic_x = true;
  spec.periodic_y = true;
  const Mesh mesh = generate_mesh(spec);
  CHECK(mesh.cell_count() == 64);
  CHECK(mesh.face_count() == 144);
  CHECK(mesh.distinct_face_count() == 128);
  for (int c = 0; c < mesh.cell_count(); ++c) CHECK(closure_defect(mesh, c) <= 1e-12);
}

TEST_CASE("conflicting refinement scales are rejected") {
  MeshSpec spec;
  spec.nx = 4;
  spec.ny = 4;
  spec.regions.push_back({{{0.0, 0.0}, {0.5, 0.5}}, 2});
  spec.regions.push_back({{{0.0, 0.0}, {0.5, 0.5}}, 4});
  CHECK_THROWS_AS(generate_mesh(spec), std::invalid_argument);

  // Same scale twice over the same cells is not a conflict.
  spec.regions[1].scale = 2;
  CHECK_NOTHROW(generate_mesh(spec));
}

TEST_CASE("non-power-of-two refinement scale is rejected") {
  MeshSpec spec;
  spec.nx = 4;
  spec.ny = 4;
  spec.regions.push_back({{{0.0, 0.0}, {0.5, 0.5}}, 3});
  CHECK_THROWS_AS(generate_mesh(spec), std::invalid_argument);
}

TEST_CASE("mesh save/load round trip preserves everything") {
  MeshSpec spec;
  spec.nx = 6;
  spec.ny = 4;
  spec.periodic_x = true;
  spec.regions.push_back({{{0.25, 0.25}, {0.5, 0.75}}, 2});
  const Mesh mesh = generate_mesh(spec);

  std::stringstream buf;
  mesh.save(buf);
  const Mesh copy = Mesh::load(buf);

  CHECK(copy.cell_count() == mesh.cell_count());
  CHECK(copy.face_count() == mesh.face_count());
  CHECK(copy.hash() == mesh.hash());
  for (int c = 0; c < mesh.cell_count(); ++c) {
    CHECK(copy.cells[c].centroid.x == mesh.cells[c].centroid.x);
    CHECK(copy.cells[c].volume == mesh.cells[c].volume);
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    CHECK(copy.faces[f].left == mesh.faces[f].left);
    CHECK(copy.faces[f].right == mesh.faces[f].right);
    CHECK(copy.faces[f].periodic_partner == mesh.faces[f].periodic_partner);
    CHECK(copy.faces[f].normal.x == mesh.faces[f].normal.x);
    CHECK(copy.faces[f].area == mesh.faces[f].area);
  }
}

TEST_CASE("periodic refinement mismatch across the boundary is rejected") {
  // Refining only the left edge makes the two periodic sides nonconforming.
  MeshSpec spec;
  spec.nx = 4;
  spec.ny = 4;
  spec.periodic_x = true;
  spec.regions.push_back({{{0.0, 0.0}, {0.25, 1.0}}, 2});
  CHECK_THROWS_AS(generate_mesh(spec), std::invalid_argument);
}
