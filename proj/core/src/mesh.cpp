#include "tafv/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "tafv/binio.hpp"
#include "tafv/common.hpp"

namespace tafv {

namespace {

constexpr uint32_t kMeshMagic = 0x4d564654u;  // "TFVM"
constexpr uint32_t kMeshVersion = 1;

bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

struct Builder {
  const MeshSpec& spec;
  int nx, ny, dim;
  double dx, dy;
  std::vector<int> scale;        // per base cell
  std::vector<int> cell_offset;  // per base cell, id of its first subcell
  Mesh m;

  explicit Builder(const MeshSpec& s)
      : spec(s),
        nx(s.nx),
        ny(s.dim == 2 ? s.ny : 1),
        dim(s.dim),
        dx((s.domain.hi.x - s.domain.lo.x) / s.nx),
        dy(s.dim == 2 ? (s.domain.hi.y - s.domain.lo.y) / ny : 1.0) {}

  int base(int i, int j) const { return j * nx + i; }

  // Id of subcell (ii, jj) of base cell (i, j); jj ignored in 1D.
  int sub(int i, int j, int ii, int jj) const {
    const int b = base(i, j);
    const int s = scale[b];
    return cell_offset[b] + (dim == 2 ? jj * s : 0) + ii;
  }

  void assign_scales() {
    scale.assign(static_cast<size_t>(nx) * ny, 1);
    std::vector<bool> pinned(scale.size(), false);
    for (const RefinementRegion& r : spec.regions) {
      require(is_pow2(r.scale), "mesh: refinement scale must be a power of two >= 1");
      require(r.bbox.lo.x >= spec.domain.lo.x && r.bbox.hi.x <= spec.domain.hi.x,
              "mesh: refinement region outside the domain box");
      if (dim == 2)
        require(r.bbox.lo.y >= spec.domain.lo.y && r.bbox.hi.y <= spec.domain.hi.y,
                "mesh: refinement region outside the domain box");
    }
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec2 c{spec.domain.lo.x + (i + 0.5) * dx,
                     dim == 2 ? spec.domain.lo.y + (j + 0.5) * dy : 0.0};
        for (const RefinementRegion& r : spec.regions) {
          const bool inside = c.x >= r.bbox.lo.x && c.x <= r.bbox.hi.x &&
                              (dim == 1 || (c.y >= r.bbox.lo.y && c.y <= r.bbox.hi.y));
          if (!inside) continue;
          const int b = base(i, j);
          require(!pinned[b] || scale[b] == r.scale,
                  "mesh: overlapping refinement regions with conflicting scales");
          scale[b] = r.scale;
          pinned[b] = true;
        }
      }
    }
  }

  void build_cells() {
    cell_offset.assign(scale.size() + 1, 0);
    for (size_t b = 0; b < scale.size(); ++b) {
      const int s = scale[b];
      cell_offset[b + 1] = cell_offset[b] + (dim == 2 ? s * s : s);
    }
    m.cells.resize(cell_offset.back());
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int s = scale[base(i, j)];
        const double hx = dx / s;
        const double hy = dy / s;
        const int jmax = dim == 2 ? s : 1;
        for (int jj = 0; jj < jmax; ++jj) {
          for (int ii = 0; ii < s; ++ii) {
            Cell& c = m.cells[sub(i, j, ii, jj)];
            c.centroid.x = spec.domain.lo.x + i * dx + (ii + 0.5) * hx;
            c.centroid.y = dim == 2 ? spec.domain.lo.y + j * dy + (jj + 0.5) * hy : 0.0;
            c.volume = dim == 2 ? hx * hy : hx;
            c.char_length = dim == 2 ? std::min(hx, hy) : hx;
          }
        }
      }
    }
  }

  int add_face(int left, int right, Vec2 n, double area, Vec2 c) {
    m.faces.push_back(Face{left, right, n, area, c, -1});
    return static_cast<int>(m.faces.size()) - 1;
  }

  // Faces between the subcells of base cell (i, j) and across the interface to
  // base neighbor along +x or +y. Segment count at a nonconforming interface is
  // the finer side's subdivision; integer k*s/m picks the owning subcell.
  void vertical_internal(int i, int j) {
    const int s = scale[base(i, j)];
    if (s == 1) return;
    const double hx = dx / s, hy = dy / s;
    const double x0 = spec.domain.lo.x + i * dx;
    const double y0 = dim == 2 ? spec.domain.lo.y + j * dy : 0.0;
    const int jmax = dim == 2 ? s : 1;
    for (int jj = 0; jj < jmax; ++jj)
      for (int ii = 0; ii + 1 < s; ++ii)
        add_face(sub(i, j, ii, jj), sub(i, j, ii + 1, jj), {1.0, 0.0},
                 dim == 2 ? hy : 1.0, {x0 + (ii + 1) * hx, y0 + (jj + 0.5) * hy});
  }

  void vertical_interface(int iA, int iB, int j, double x_edge) {
    const int sA = scale[base(iA, j)];
    const int sB = scale[base(iB, j)];
    if (dim == 1) {
      add_face(sub(iA, j, sA - 1, 0), sub(iB, j, 0, 0), {1.0, 0.0}, 1.0, {x_edge, 0.0});
      return;
    }
    const int seg = std::max(sA, sB);
    const double len = dy / seg;
    const double y0 = spec.domain.lo.y + j * dy;
    for (int k = 0; k < seg; ++k)
      add_face(sub(iA, j, sA - 1, k * sA / seg), sub(iB, j, 0, k * sB / seg), {1.0, 0.0}, len,
               {x_edge, y0 + (k + 0.5) * len});
  }

  void horizontal_internal(int i, int j) {
    const int s = scale[base(i, j)];
    if (s == 1) return;
    const double hx = dx / s, hy = dy / s;
    const double x0 = spec.domain.lo.x + i * dx;
    const double y0 = spec.domain.lo.y + j * dy;
    for (int jj = 0; jj + 1 < s; ++jj)
      for (int ii = 0; ii < s; ++ii)
        add_face(sub(i, j, ii, jj), sub(i, j, ii, jj + 1), {0.0, 1.0}, hx,
                 {x0 + (ii + 0.5) * hx, y0 + (jj + 1) * hy});
  }

  void horizontal_interface(int i, int jA, int jB, double y_edge) {
    const int sA = scale[base(i, jA)];
    const int sB = scale[base(i, jB)];
    const int seg = std::max(sA, sB);
    const double len = dx / seg;
    const double x0 = spec.domain.lo.x + i * dx;
    for (int k = 0; k < seg; ++k)
      add_face(sub(i, jA, k * sA / seg, sA - 1), sub(i, jB, k * sB / seg, 0), {0.0, 1.0}, len,
               {x0 + (k + 0.5) * len, y_edge});
  }

  void x_boundary(int j) {
    const int s0 = scale[base(0, j)];
    const int s1 = scale[base(nx - 1, j)];
    const double y0 = dim == 2 ? spec.domain.lo.y + j * dy : 0.0;
    const int k0 = dim == 2 ? s0 : 1;
    const int k1 = dim == 2 ? s1 : 1;
    if (spec.periodic_x) {
      require(s0 == s1, "mesh: periodic x boundary needs matching refinement on both sides");
      for (int k = 0; k < k1; ++k) {
        const double len = dim == 2 ? dy / s1 : 1.0;
        const double yk = dim == 2 ? y0 + (k + 0.5) * len : 0.0;
        const int fr = add_face(sub(nx - 1, j, s1 - 1, k), -1, {1.0, 0.0}, len,
                                {spec.domain.hi.x, yk});
        const int fl = add_face(sub(0, j, 0, k), -1, {-1.0, 0.0}, len, {spec.domain.lo.x, yk});
        m.faces[fr].periodic_partner = fl;
        m.faces[fl].periodic_partner = fr;
      }
      return;
    }
    for (int k = 0; k < k0; ++k) {
      const double len = dim == 2 ? dy / s0 : 1.0;
      add_face(sub(0, j, 0, k), -1, {-1.0, 0.0}, len,
               {spec.domain.lo.x, dim == 2 ? y0 + (k + 0.5) * len : 0.0});
    }
    for (int k = 0; k < k1; ++k) {
      const double len = dim == 2 ? dy / s1 : 1.0;
      add_face(sub(nx - 1, j, s1 - 1, k), -1, {1.0, 0.0}, len,
               {spec.domain.hi.x, dim == 2 ? y0 + (k + 0.5) * len : 0.0});
    }
  }

  void y_boundary(int i) {
    const int s0 = scale[base(i, 0)];
    const int s1 = scale[base(i, ny - 1)];
    const double x0 = spec.domain.lo.x + i * dx;
    if (spec.periodic_y) {
      require(s0 == s1, "mesh: periodic y boundary needs matching refinement on both sides");
      for (int k = 0; k < s1; ++k) {
        const double len = dx / s1;
        const double xk = x0 + (k + 0.5) * len;
        const int ft = add_face(sub(i, ny - 1, k, s1 - 1), -1, {0.0, 1.0}, len,
                                {xk, spec.domain.hi.y});
        const int fb = add_face(sub(i, 0, k, 0), -1, {0.0, -1.0}, len, {xk, spec.domain.lo.y});
        m.faces[ft].periodic_partner = fb;
        m.faces[fb].periodic_partner = ft;
      }
      return;
    }
    for (int k = 0; k < s0; ++k) {
      const double len = dx / s0;
      add_face(sub(i, 0, k, 0), -1, {0.0, -1.0}, len, {x0 + (k + 0.5) * len, spec.domain.lo.y});
    }
    for (int k = 0; k < s1; ++k) {
      const double len = dx / s1;
      add_face(sub(i, ny - 1, k, s1 - 1), -1, {0.0, 1.0}, len,
               {x0 + (k + 0.5) * len, spec.domain.hi.y});
    }
  }

  void build_faces() {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        vertical_internal(i, j);
        if (i + 1 < nx)
          vertical_interface(i, i + 1, j, spec.domain.lo.x + (i + 1) * dx);
      }
    }
    for (int j = 0; j < ny; ++j) x_boundary(j);
    if (dim == 2) {
      for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
          horizontal_internal(i, j);
          if (j + 1 < ny)
            horizontal_interface(i, j, j + 1, spec.domain.lo.y + (j + 1) * dy);
        }
      }
      for (int i = 0; i < nx; ++i) y_boundary(i);
    }
  }
};

void build_adjacency(Mesh& m) {
  const int nc = m.cell_count();
  std::vector<int> count(nc, 0);
  for (const Face& f : m.faces) {
    ++count[f.left];
    if (f.right >= 0) ++count[f.right];
  }
  m.adj_offset.assign(nc + 1, 0);
  for (int c = 0; c < nc; ++c) m.adj_offset[c + 1] = m.adj_offset[c] + count[c];
  const int total = m.adj_offset.back();
  m.adj_face.resize(total);
  m.adj_neighbor.resize(total);
  m.adj_sign.resize(total);
  std::vector<int> cursor(m.adj_offset.begin(), m.adj_offset.end() - 1);
  // Faces are visited in ascending id, so each cell's slots come out sorted.
  for (int f = 0; f < m.face_count(); ++f) {
    const Face& face = m.faces[f];
    int nb = face.right;
    if (nb < 0 && face.periodic_partner >= 0) nb = m.faces[face.periodic_partner].left;
    const int sl = cursor[face.left]++;
    m.adj_face[sl] = f;
    m.adj_neighbor[sl] = nb;
    m.adj_sign[sl] = 1.0;
    if (face.right >= 0) {
      const int sr = cursor[face.right]++;
      m.adj_face[sr] = f;
      m.adj_neighbor[sr] = face.left;
      m.adj_sign[sr] = -1.0;
    }
  }
}

void check_closure(const Mesh& m) {
  for (int c = 0; c < m.cell_count(); ++c) {
    double sx = 0.0, sy = 0.0;
    for (int t = m.adj_begin(c); t < m.adj_end(c); ++t) {
      const Face& f = m.faces[m.adj_face[t]];
      sx += m.adj_sign[t] * f.normal.x * f.area;
      sy += m.adj_sign[t] * f.normal.y * f.area;
    }
    if (std::abs(sx) > 1e-12 || std::abs(sy) > 1e-12)
      throw std::logic_error("mesh: geometric closure violated for a cell");
  }
}

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a_f64(uint64_t h, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  return fnv1a(h, &bits, sizeof bits);
}

}  // namespace

Mesh generate_mesh(const MeshSpec& spec) {
  require(spec.dim == 1 || spec.dim == 2, "mesh: dim must be 1 or 2");
  require(spec.nx >= 1 && (spec.dim == 1 || spec.ny >= 1), "mesh: base resolution must be >= 1");
  require(spec.domain.hi.x > spec.domain.lo.x, "mesh: empty domain extent in x");
  if (spec.dim == 2) require(spec.domain.hi.y > spec.domain.lo.y, "mesh: empty domain extent in y");

  Builder b(spec);
  b.assign_scales();
  b.build_cells();
  b.build_faces();
  b.m.spec = spec;
  b.m.dim = spec.dim;
  build_adjacency(b.m);
  check_closure(b.m);
  return std::move(b.m);
}

int Mesh::distinct_face_count() const {
  int paired = 0;
  for (const Face& f : faces)
    if (f.periodic_partner >= 0) ++paired;
  return face_count() - paired / 2;
}

uint64_t Mesh::hash() const {
  uint64_t h = 1469598103934665603ull;
  const int32_t header[3] = {dim, cell_count(), face_count()};
  h = fnv1a(h, header, sizeof header);
  for (const Cell& c : cells) {
    h = fnv1a_f64(h, c.centroid.x);
    h = fnv1a_f64(h, c.centroid.y);
    h = fnv1a_f64(h, c.volume);
  }
  for (const Face& f : faces) {
    const int32_t ids[3] = {f.left, f.right, f.periodic_partner};
    h = fnv1a(h, ids, sizeof ids);
    h = fnv1a_f64(h, f.normal.x);
    h = fnv1a_f64(h, f.normal.y);
    h = fnv1a_f64(h, f.area);
  }
  return h;
}

void Mesh::save(std::ostream& os) const {
  write_u32(os, kMeshMagic);
  write_u32(os, kMeshVersion);
  write_u32(os, static_cast<uint32_t>(dim));
  write_u32(os, static_cast<uint32_t>(spec.nx));
  write_u32(os, static_cast<uint32_t>(spec.ny));
  write_u32(os, (spec.periodic_x ? 1u : 0u) | (spec.periodic_y ? 2u : 0u));
  write_f64(os, spec.domain.lo.x);
  write_f64(os, spec.domain.lo.y);
  write_f64(os, spec.domain.hi.x);
  write_f64(os, spec.domain.hi.y);
  write_u32(os, static_cast<uint32_t>(spec.regions.size()));
  for (const RefinementRegion& r : spec.regions) {
    write_f64(os, r.bbox.lo.x);
    write_f64(os, r.bbox.lo.y);
    write_f64(os, r.bbox.hi.x);
    write_f64(os, r.bbox.hi.y);
    write_u32(os, static_cast<uint32_t>(r.scale));
  }
  write_u32(os, static_cast<uint32_t>(cell_count()));
  write_u32(os, static_cast<uint32_t>(face_count()));
  for (const Cell& c : cells) {
    write_f64(os, c.centroid.x);
    write_f64(os, c.centroid.y);
    write_f64(os, c.volume);
    write_f64(os, c.char_length);
  }
  for (const Face& f : faces) {
    write_i32(os, f.left);
    write_i32(os, f.right);
    write_f64(os, f.normal.x);
    write_f64(os, f.normal.y);
    write_f64(os, f.area);
    write_f64(os, f.centroid.x);
    write_f64(os, f.centroid.y);
    write_i32(os, f.periodic_partner);
  }
}

Mesh Mesh::load(std::istream& is) {
  require(read_u32(is) == kMeshMagic, "mesh file: bad magic");
  require(read_u32(is) == kMeshVersion, "mesh file: unsupported version");
  Mesh m;
  m.dim = static_cast<int>(read_u32(is));
  m.spec.dim = m.dim;
  m.spec.nx = static_cast<int>(read_u32(is));
  m.spec.ny = static_cast<int>(read_u32(is));
  const uint32_t periodic = read_u32(is);
  m.spec.periodic_x = (periodic & 1u) != 0;
  m.spec.periodic_y = (periodic & 2u) != 0;
  m.spec.domain.lo.x = read_f64(is);
  m.spec.domain.lo.y = read_f64(is);
  m.spec.domain.hi.x = read_f64(is);
  m.spec.domain.hi.y = read_f64(is);
  m.spec.regions.resize(read_u32(is));
  for (RefinementRegion& r : m.spec.regions) {
    r.bbox.lo.x = read_f64(is);
    r.bbox.lo.y = read_f64(is);
    r.bbox.hi.x = read_f64(is);
    r.bbox.hi.y = read_f64(is);
    r.scale = static_cast<int>(read_u32(is));
  }
  m.cells.resize(read_u32(is));
  m.faces.resize(read_u32(is));
  for (Cell& c : m.cells) {
    c.centroid.x = read_f64(is);
    c.centroid.y = read_f64(is);
    c.volume = read_f64(is);
    c.char_length = read_f64(is);
  }
  for (Face& f : m.faces) {
    f.left = read_i32(is);
    f.right = read_i32(is);
    f.normal.x = read_f64(is);
    f.normal.y = read_f64(is);
    f.area = read_f64(is);
    f.centroid.x = read_f64(is);
    f.centroid.y = read_f64(is);
    f.periodic_partner = read_i32(is);
  }
  build_adjacency(m);
  check_closure(m);
  return m;
}

}  // namespace tafv
