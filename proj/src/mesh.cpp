#include "afw2d/mesh.hpp"

#include "afw2d/reference_element.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace afw2d {

namespace {

using Key = std::pair<int, int>;
Key key_of(int a, int b) { return a < b ? Key{a, b} : Key{b, a}; }

const std::array<Vec2, 3> kLambdaGrad{Vec2(-1, -1), Vec2(1, 0), Vec2(0, 1)};

double norm2(const Mat2& m) { return Eigen::JacobiSVD<Mat2>(m).singularValues()(0); }

struct ArcSample {
  Vec2 x, dx, ddx;
};

ArcSample arc_at(const CurveGeom& g, double s) {
  const double d = g.theta1 - g.theta0, th = g.theta0 + s * d;
  Vec2 u(std::cos(th), std::sin(th)), up(-std::sin(th), std::cos(th));
  return {g.center + g.radius * u, g.radius * d * up, -g.radius * d * d * u};
}

double sinc(double u) { return std::abs(u) < 1e-4 ? 1.0 - u * u / 6.0 : std::sin(u) / u; }

// Blending kernel psi(s) = (x(s) - (1-s) x(0) - s x(1)) / (s (1-s)) of an arc and
// its derivative, evaluated without cancellation near the endpoints.
std::pair<Vec2, Vec2> arc_kernel(const CurveGeom& g, double s) {
  const double d = g.theta1 - g.theta0;
  const Vec2 x0 = arc_at(g, 0).x, x1 = arc_at(g, 1).x, chord = x1 - x0;
  Vec2 psi;
  if (s <= 0.5) {
    double mid = g.theta0 + 0.5 * s * d;
    Vec2 gs = g.radius * d * sinc(0.5 * s * d) * Vec2(-std::sin(mid), std::cos(mid));
    psi = (gs - chord) / (1.0 - s);
  } else {
    double th = g.theta0 + s * d, mid = 0.5 * (g.theta1 + th);
    Vec2 hs = g.radius * d * sinc(0.5 * (1 - s) * d) * Vec2(-std::sin(mid), std::cos(mid));
    psi = (chord - hs) / s;
  }
  Vec2 dpsi;
  const double tiny = 1e-6;
  if (s < tiny) {
    ArcSample a = arc_at(g, 0);
    dpsi = (a.dx - chord) + 0.5 * a.ddx;
  } else if (s > 1 - tiny) {
    ArcSample a = arc_at(g, 1);
    dpsi = (a.dx - chord) - 0.5 * a.ddx;
  } else {
    ArcSample a = arc_at(g, s);
    dpsi = ((a.dx - chord) - (1 - 2 * s) * psi) / (s * (1 - s));
  }
  return {psi, dpsi};
}

CurveGeom sub_curve(const CurveGeom& g, double s0, double s1) {
  CurveGeom out = g;
  if (g.kind == CurveKind::circular_arc) {
    out.theta0 = g.theta0 + s0 * (g.theta1 - g.theta0);
    out.theta1 = g.theta0 + s1 * (g.theta1 - g.theta0);
  } else if (g.kind == CurveKind::transfinite_edge) {
    out.ref0 = g.ref0 + s0 * (g.ref1 - g.ref0);
    out.ref1 = g.ref0 + s1 * (g.ref1 - g.ref0);
  }
  return out;
}

Vec2 curve_point(const CurveGeom& g, const Vec2& p0, const Vec2& p1, const std::vector<Patch>& patches, double s) {
  switch (g.kind) {
    case CurveKind::straight: return (1 - s) * p0 + s * p1;
    case CurveKind::circular_arc: return arc_at(g, s).x;
    case CurveKind::transfinite_edge: return patch_map(patches[g.patch], g.ref0 + s * (g.ref1 - g.ref0)).x;
  }
  return p0;
}

Vec2 curve_derivative(const CurveGeom& g, const Vec2& p0, const Vec2& p1, const std::vector<Patch>& patches,
                      double s) {
  switch (g.kind) {
    case CurveKind::straight: return p1 - p0;
    case CurveKind::circular_arc: return arc_at(g, s).dx;
    case CurveKind::transfinite_edge:
      return patch_map(patches[g.patch], g.ref0 + s * (g.ref1 - g.ref0)).jac * (g.ref1 - g.ref0);
  }
  return p1 - p0;
}

// Mutable triangulation used by the constructors and refinement routines.
struct Work {
  std::vector<Patch> patches;
  std::vector<Vec2> verts;
  std::map<Key, std::pair<CurveGeom, int>> edge_info;  // oriented low -> high id
  std::map<Key, int> mids;
  std::vector<Triangle> tris;
  std::vector<bool> alive;
  std::vector<int> origin;
  std::map<Key, std::vector<int>> adj;

  explicit Work(const Mesh& m) : patches(m.patches), verts(m.vertices) {
    for (const auto& e : m.edges) edge_info[key_of(e.v[0], e.v[1])] = {e.geom, e.boundary};
    for (std::size_t t = 0; t < m.triangles.size(); ++t) add(m.triangles[t], static_cast<int>(t));
  }
  Work() = default;

  int add(const Triangle& t, int from) {
    int id = static_cast<int>(tris.size());
    tris.push_back(t);
    alive.push_back(true);
    origin.push_back(from);
    for (int i = 0; i < 3; ++i) adj[key_of(t.v[(i + 1) % 3], t.v[(i + 2) % 3])].push_back(id);
    return id;
  }

  void kill(int id) {
    alive[id] = false;
    const auto& t = tris[id];
    for (int i = 0; i < 3; ++i) {
      auto& list = adj[key_of(t.v[(i + 1) % 3], t.v[(i + 2) % 3])];
      std::erase(list, id);
    }
  }

  int neighbor(int id, Key k) const {
    auto it = adj.find(k);
    if (it == adj.end()) return -1;
    for (int o : it->second)
      if (o != id) return o;
    return -1;
  }

  int midpoint(Key k) {
    auto it = mids.find(k);
    if (it != mids.end()) return it->second;
    const auto& [geom, tag] = edge_info.at(k);
    Vec2 x = curve_point(geom, verts[k.first], verts[k.second], patches, 0.5);
    int m = static_cast<int>(verts.size());
    verts.push_back(x);
    edge_info[{k.first, m}] = {sub_curve(geom, 0.0, 0.5), tag};
    edge_info[{k.second, m}] = {sub_curve(geom, 1.0, 0.5), tag};
    mids[k] = m;
    return m;
  }

  void interior_edge(int a, int b, const Vec2& ra, const Vec2& rb, int patch) {
    CurveGeom g = CurveGeom::straight();
    if (patches[patch].kind == PatchKind::transfinite)
      g = a < b ? CurveGeom::transfinite(patch, ra, rb) : CurveGeom::transfinite(patch, rb, ra);
    edge_info[key_of(a, b)] = {g, 0};
  }

  void red(int id) {
    Triangle t = tris[id];
    int m0 = midpoint(key_of(t.v[1], t.v[2]));
    int m1 = midpoint(key_of(t.v[2], t.v[0]));
    int m2 = midpoint(key_of(t.v[0], t.v[1]));
    Vec2 r0 = 0.5 * (t.ref[1] + t.ref[2]), r1 = 0.5 * (t.ref[2] + t.ref[0]), r2 = 0.5 * (t.ref[0] + t.ref[1]);
    interior_edge(m0, m1, r0, r1, t.patch);
    interior_edge(m1, m2, r1, r2, t.patch);
    interior_edge(m2, m0, r2, r0, t.patch);
    kill(id);
    int from = origin[id];
    add({{t.v[0], m2, m1}, {}, t.patch, {t.ref[0], r2, r1}}, from);
    add({{m2, t.v[1], m0}, {}, t.patch, {r2, t.ref[1], r0}}, from);
    add({{m1, m0, t.v[2]}, {}, t.patch, {r1, r0, t.ref[2]}}, from);
    add({{m0, m1, m2}, {}, t.patch, {r0, r1, r2}}, from);
  }

  void bisect(int id) {
    Triangle t = tris[id];
    int m = midpoint(key_of(t.v[1], t.v[2]));
    Vec2 rm = 0.5 * (t.ref[1] + t.ref[2]);
    interior_edge(m, t.v[0], rm, t.ref[0], t.patch);
    kill(id);
    int from = origin[id];
    add({{m, t.v[0], t.v[1]}, {}, t.patch, {rm, t.ref[0], t.ref[1]}}, from);
    add({{m, t.v[2], t.v[0]}, {}, t.patch, {rm, t.ref[2], t.ref[0]}}, from);
  }

  Key refinement_edge(int id) const { return key_of(tris[id].v[1], tris[id].v[2]); }

  void refine(int id, int depth) {
    if (depth > 200) throw NumericalError("newest-vertex bisection closure did not terminate");
    while (alive[id]) {
      Key k = refinement_edge(id);
      int nb = neighbor(id, k);
      if (nb < 0) {
        bisect(id);
      } else if (refinement_edge(nb) == k) {
        bisect(id);
        bisect(nb);
      } else {
        refine(nb, depth + 1);
      }
    }
  }

  Mesh finish(std::vector<int>* parent) const {
    Mesh out;
    out.vertices = verts;
    out.patches = patches;
    std::map<Key, int> ids;
    if (parent) parent->clear();
    for (std::size_t id = 0; id < tris.size(); ++id) {
      if (!alive[id]) continue;
      Triangle t = tris[id];
      for (int i = 0; i < 3; ++i) {
        Key k = key_of(t.v[(i + 1) % 3], t.v[(i + 2) % 3]);
        auto it = ids.find(k);
        if (it == ids.end()) {
          const auto& [geom, tag] = edge_info.at(k);
          it = ids.emplace(k, static_cast<int>(out.edges.size())).first;
          out.edges.push_back({{k.first, k.second}, geom, tag});
        }
        t.e[i] = it->second;
      }
      out.triangles.push_back(t);
      if (parent) parent->push_back(origin[id]);
    }
    return out;
  }
};

Patch affine_patch(const std::array<Vec2, 3>& c) {
  Patch p;
  p.kind = PatchKind::affine;
  p.corners = c;
  return p;
}

const std::array<Vec2, 3> kRefCorners{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};

}  // namespace

CurveGeom CurveGeom::arc(Vec2 c, double r, double t0, double t1) {
  CurveGeom g;
  g.kind = CurveKind::circular_arc;
  g.center = c;
  g.radius = r;
  g.theta0 = t0;
  g.theta1 = t1;
  return g;
}

CurveGeom CurveGeom::transfinite(int patch, Vec2 a, Vec2 b) {
  CurveGeom g;
  g.kind = CurveKind::transfinite_edge;
  g.patch = patch;
  g.ref0 = a;
  g.ref1 = b;
  return g;
}

int Mesh::edge_sign(int t, int i) const {
  const auto& tri = triangles[t];
  return tri.v[(i + 1) % 3] < tri.v[(i + 2) % 3] ? 1 : -1;
}

MapEval patch_map(const Patch& patch, const Vec2& xi) {
  const std::array<double, 3> lam{1.0 - xi.x() - xi.y(), xi.x(), xi.y()};
  MapEval out;
  out.x.setZero();
  out.jac.setZero();
  for (int i = 0; i < 3; ++i) {
    out.x += lam[i] * patch.corners[i];
    out.jac += patch.corners[i] * kLambdaGrad[i].transpose();
  }
  if (patch.kind == PatchKind::transfinite) {
    for (int i = 0; i < 3; ++i) {
      const auto& side = patch.sides[i];
      if (side.kind != CurveKind::circular_arc) continue;
      const int a = (i + 1) % 3, b = (i + 2) % 3;
      const double la = lam[a], lb = lam[b], sum = la + lb;
      if (sum < 1e-14) continue;
      const double s = std::clamp(lb / sum, 0.0, 1.0);
      auto [psi, dpsi] = arc_kernel(side, s);
      out.x += la * lb * psi;
      Vec2 grad_prod = la * kLambdaGrad[b] + lb * kLambdaGrad[a];
      Vec2 grad_s = la * lb * (la * kLambdaGrad[b] - lb * kLambdaGrad[a]) / (sum * sum);
      out.jac += psi * grad_prod.transpose() + dpsi * grad_s.transpose();
    }
  }
  out.det = out.jac.determinant();
  return out;
}

MapEval map_eval(const Mesh& mesh, int t, const Vec2& xhat) {
  const auto& tri = mesh.triangles[t];
  Mat2 a;
  a.col(0) = tri.ref[1] - tri.ref[0];
  a.col(1) = tri.ref[2] - tri.ref[0];
  MapEval pm = patch_map(mesh.patches[tri.patch], tri.ref[0] + a * xhat);
  pm.jac = pm.jac * a;
  pm.det = pm.jac.determinant();
  return pm;
}

Vec2 inverse_map(const Mesh& mesh, int t, const Vec2& x, double tol, int max_iter) {
  Vec2 xhat(1.0 / 3.0, 1.0 / 3.0);
  const auto& tri = mesh.triangles[t];
  double scale = 0.0;
  for (int i = 0; i < 3; ++i)
    scale = std::max(scale, (mesh.vertices[tri.v[i]] - mesh.vertices[tri.v[(i + 1) % 3]]).norm());
  MapEval g = map_eval(mesh, t, xhat);
  double res = (g.x - x).norm();
  for (int it = 0; it < max_iter; ++it) {
    if (res <= tol * scale) return xhat;
    Vec2 step = g.jac.inverse() * (g.x - x);
    double alpha = 1.0;
    for (;;) {
      Vec2 trial = xhat - alpha * step;
      MapEval gt = map_eval(mesh, t, trial);
      double rt = (gt.x - x).norm();
      if (rt < res || alpha < 1e-4) {
        xhat = trial;
        g = gt;
        res = rt;
        break;
      }
      alpha *= 0.5;
    }
  }
  if (res <= tol * scale) return xhat;
  throw NumericalError("inverse map did not converge on triangle " + std::to_string(t));
}

AffinePart affine_part(const Mesh& mesh, int t) {
  const Vec2 c(1.0 / 3.0, 1.0 / 3.0);
  MapEval g = map_eval(mesh, t, c);
  return {g.jac, g.x - g.jac * c};
}

Vec2 edge_point(const Mesh& mesh, int e, double s) {
  const auto& ed = mesh.edges[e];
  return curve_point(ed.geom, mesh.vertices[ed.v[0]], mesh.vertices[ed.v[1]], mesh.patches, s);
}

Vec2 edge_derivative(const Mesh& mesh, int e, double s) {
  const auto& ed = mesh.edges[e];
  return curve_derivative(ed.geom, mesh.vertices[ed.v[0]], mesh.vertices[ed.v[1]], mesh.patches, s);
}

Mesh build_domain(const std::string& name, const DomainParams& params) {
  Work w;
  // Vertex lists and triangles with their refinement edges placed first.
  std::vector<std::array<int, 3>> tris;
  bool circular = false;
  if (name == "unit_square") {
    w.verts = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    tris = {{1, 2, 0}, {3, 0, 2}};
  } else if (name == "lshape_affine" || name == "lshape_circular") {
    circular = name == "lshape_circular";
    if (circular && !(params.radius > 0)) throw ValidationError("radius must be positive");
    w.verts.push_back({0, 0});
    const std::array<Vec2, 7> ring{Vec2(1, 0), Vec2(1, 1), Vec2(0, 1), Vec2(-1, 1),
                                   Vec2(-1, 0), Vec2(-1, -1), Vec2(0, -1)};
    for (int k = 0; k < 7; ++k) {
      double th = k * std::numbers::pi / 4;
      w.verts.push_back(circular ? Vec2(params.radius * std::cos(th), params.radius * std::sin(th)) : ring[k]);
    }
    tris = {{1, 2, 0}, {3, 0, 2}, {3, 4, 0}, {5, 0, 4}, {5, 6, 0}, {7, 0, 6}};
  } else {
    throw ValidationError("unknown domain '" + name + "'");
  }
  auto angle = [](int v) { return (v - 1) * std::numbers::pi / 4; };
  auto is_arc = [&](int a, int b) { return circular && a > 0 && b > 0; };

  for (std::size_t t = 0; t < tris.size(); ++t) {
    const auto& v = tris[t];
    Patch p = affine_patch({w.verts[v[0]], w.verts[v[1]], w.verts[v[2]]});
    if (circular) {
      p.kind = PatchKind::transfinite;
      for (int i = 0; i < 3; ++i) {
        int a = v[(i + 1) % 3], b = v[(i + 2) % 3];
        p.sides[i] = is_arc(a, b) ? CurveGeom::arc({0, 0}, params.radius, angle(a), angle(b)) : CurveGeom::straight();
      }
    }
    w.patches.push_back(p);
    Triangle tri;
    tri.v = v;
    tri.patch = static_cast<int>(t);
    tri.ref = kRefCorners;
    w.add(tri, static_cast<int>(t));
  }
  for (const auto& [k, list] : w.adj) {
    CurveGeom g = is_arc(k.first, k.second) ? CurveGeom::arc({0, 0}, params.radius, angle(k.first), angle(k.second))
                                            : CurveGeom::straight();
    w.edge_info[k] = {g, list.size() == 1 ? 1 : 0};
  }
  return w.finish(nullptr);
}

Mesh refine_uniform(const Mesh& mesh, std::vector<int>* parent) {
  Work w(mesh);
  const int n = static_cast<int>(mesh.triangles.size());
  for (int t = 0; t < n; ++t) w.red(t);
  return w.finish(parent);
}

Mesh refine_bisect(const Mesh& mesh, const std::set<int>& marked, std::vector<int>* parent) {
  Work w(mesh);
  for (int t : marked) {
    if (t < 0 || t >= static_cast<int>(mesh.triangles.size()))
      throw ValidationError("marked triangle id out of range");
    if (w.alive[t]) w.refine(t, 0);
  }
  return w.finish(parent);
}

RegularityReport regularity(const Mesh& mesh) {
  RegularityReport rep;
  rep.min_det = std::numeric_limits<double>::infinity();
  const auto& quad = quadrature(6);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    ElementRegularity er;
    er.triangle = static_cast<int>(t);
    AffinePart ap = affine_part(mesh, static_cast<int>(t));
    Mat2 binv = ap.B.inverse();
    double nb = norm2(ap.B), nbi = norm2(binv);
    er.cond_b = nb * nbi;
    er.min_det = std::numeric_limits<double>::infinity();
    double sup_dphi = 0.0;
    auto sample = [&](const Vec2& xh) {
      MapEval g = map_eval(mesh, static_cast<int>(t), xh);
      sup_dphi = std::max(sup_dphi, norm2(g.jac - ap.B));
      er.min_det = std::min(er.min_det, g.det);
    };
    for (const auto& p : quad.points) sample(p);
    for (int i = 0; i < 3; ++i) sample(ref_vertex(i));
    er.distortion = sup_dphi * nbi;
    std::array<Vec2, 3> p;
    for (int i = 0; i < 3; ++i) p[i] = ap.B * ref_vertex(i) + ap.b;
    double perim = 0.0, diam = 0.0;
    for (int i = 0; i < 3; ++i) {
      double l = (p[i] - p[(i + 1) % 3]).norm();
      perim += l;
      diam = std::max(diam, l);
    }
    double area = 0.5 * std::abs(ap.B.determinant());
    er.shape_ratio = diam / (4.0 * area / perim);
    for (int i = 0; i < 3; ++i)
      er.diameter = std::max(er.diameter, (mesh.vertices[mesh.triangles[t].v[i]] -
                                           mesh.vertices[mesh.triangles[t].v[(i + 1) % 3]]).norm());
    rep.c_h = std::max(rep.c_h, er.distortion);
    rep.max_shape_ratio = std::max(rep.max_shape_ratio, er.shape_ratio);
    rep.h = std::max(rep.h, er.diameter);
    rep.min_det = std::min(rep.min_det, er.min_det);
    rep.elements.push_back(er);
  }
  return rep;
}

int singular_vertex(const Mesh& mesh, int t) {
  const Triangle& tri = mesh.triangles[t];
  const Patch& patch = mesh.patches[tri.patch];
  if (patch.kind != PatchKind::transfinite) return -1;
  for (int i = 0; i < 3; ++i) {
    if (patch.sides[i].kind != CurveKind::circular_arc) continue;
    for (int j = 0; j < 3; ++j)
      if ((tri.ref[j] - ref_vertex(i)).norm() < 1e-14) return j;
  }
  return -1;
}

const QuadRule& element_quadrature(const Mesh& mesh, int t, int degree) {
  int v = singular_vertex(mesh, t);
  return v < 0 ? quadrature(degree) : quadrature_collapsed(degree, v);
}

double mesh_size(const Mesh& mesh) {
  double h = 0.0;
  for (const auto& t : mesh.triangles)
    for (int i = 0; i < 3; ++i) h = std::max(h, (mesh.vertices[t.v[i]] - mesh.vertices[t.v[(i + 1) % 3]]).norm());
  return h;
}

CompatibilityReport check_compatibility(const Mesh& mesh) {
  CompatibilityReport rep;
  const int n = std::max(10, 2 * kDefaultRMax + 3);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int i = 0; i < 3; ++i) {
      int e = mesh.triangles[t].e[i];
      int sign = mesh.edge_sign(static_cast<int>(t), i);
      double worst = 0.0;
      for (int j = 0; j < n; ++j) {
        double s = static_cast<double>(j) / (n - 1);
        Vec2 a = map_eval(mesh, static_cast<int>(t), ref_edge_point(i, s)).x;
        Vec2 b = edge_point(mesh, e, sign > 0 ? s : 1.0 - s);
        worst = std::max(worst, (a - b).norm());
      }
      double& slot = rep.per_edge[e];
      slot = std::max(slot, worst);
      if (worst > rep.max_mismatch || rep.worst_edge < 0) {
        rep.max_mismatch = worst;
        rep.worst_edge = e;
      }
    }
  }
  return rep;
}

void validate_mesh(const Mesh& mesh, double tol) {
  const int nv = static_cast<int>(mesh.vertices.size());
  const int ne = static_cast<int>(mesh.edges.size());
  std::vector<int> uses(ne, 0);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const std::string where = "triangle " + std::to_string(t) + ": ";
    if (tri.patch < 0 || tri.patch >= static_cast<int>(mesh.patches.size()))
      throw ValidationError(where + "patch id out of range");
    for (int i = 0; i < 3; ++i) {
      if (tri.v[i] < 0 || tri.v[i] >= nv) throw ValidationError(where + "vertex id out of range");
      if (tri.e[i] < 0 || tri.e[i] >= ne) throw ValidationError(where + "edge id out of range");
      const auto& ed = mesh.edges[tri.e[i]];
      if (key_of(ed.v[0], ed.v[1]) != key_of(tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]))
        throw ValidationError(where + "edge " + std::to_string(tri.e[i]) + " does not join the expected vertices");
      ++uses[tri.e[i]];
    }
  }
  for (int e = 0; e < ne; ++e) {
    const auto& ed = mesh.edges[e];
    if (ed.v[0] >= ed.v[1]) throw ValidationError("edge " + std::to_string(e) + ": vertices must be increasing");
    if (uses[e] == 0 || uses[e] > 2)
      throw ValidationError("non-conforming mesh: edge " + std::to_string(e) + " used by " + std::to_string(uses[e]) +
                            " triangles");
    if ((uses[e] == 1) != (ed.boundary == 1))
      throw ValidationError("edge " + std::to_string(e) + ": boundary tag does not match its adjacency");
    if (ed.geom.kind == CurveKind::transfinite_edge &&
        (ed.geom.patch < 0 || ed.geom.patch >= static_cast<int>(mesh.patches.size())))
      throw ValidationError("edge " + std::to_string(e) + ": patch id out of range");
  }
  const auto& quad = quadrature(6);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (const auto& p : quad.points)
      if (!(map_eval(mesh, static_cast<int>(t), p).det > 0))
        throw ValidationError("triangle " + std::to_string(t) + ": non-positive Jacobian");
  auto rep = check_compatibility(mesh);
  if (rep.max_mismatch > tol)
    throw ValidationError("edge " + std::to_string(rep.worst_edge) + ": element maps disagree with the edge curve (" +
                          std::to_string(rep.max_mismatch) + ")");
}

namespace {

void write_curve(std::ostream& os, const CurveGeom& g) {
  switch (g.kind) {
    case CurveKind::straight: os << "straight"; break;
    case CurveKind::circular_arc:
      os << "arc " << g.center.x() << ' ' << g.center.y() << ' ' << g.radius << ' ' << g.theta0 << ' ' << g.theta1;
      break;
    case CurveKind::transfinite_edge:
      os << "transfinite " << g.patch << ' ' << g.ref0.x() << ' ' << g.ref0.y() << ' ' << g.ref1.x() << ' '
         << g.ref1.y();
      break;
  }
}

struct LineReader {
  std::vector<std::string> lines;
  std::vector<int> numbers;
  std::size_t pos = 0;

  explicit LineReader(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      lines.push_back(line);
      numbers.push_back(n);
    }
  }
  bool done() const { return pos >= lines.size(); }
  std::vector<std::string> next(const std::string& what) {
    if (done()) throw ValidationError("unexpected end of file while reading " + what);
    std::istringstream is(lines[pos++]);
    std::vector<std::string> tok;
    for (std::string s; is >> s;) tok.push_back(s);
    return tok;
  }
  int line() const { return numbers[pos - 1]; }
};

struct FieldParser {
  const std::vector<std::string>& tok;
  std::string where;
  std::size_t i = 0;
  double num() {
    if (i >= tok.size()) throw ValidationError(where + ": missing field " + std::to_string(i));
    try {
      std::size_t used = 0;
      double v = std::stod(tok[i], &used);
      if (used != tok[i].size()) throw std::invalid_argument("trailing");
      ++i;
      return v;
    } catch (const std::exception&) {
      throw ValidationError(where + ": field " + std::to_string(i) + " ('" + tok[i] + "') is not a number");
    }
  }
  int integer() {
    double v = num();
    if (v != std::floor(v)) throw ValidationError(where + ": field " + std::to_string(i - 1) + " is not an integer");
    return static_cast<int>(v);
  }
  std::string word() {
    if (i >= tok.size()) throw ValidationError(where + ": missing field " + std::to_string(i));
    return tok[i++];
  }
  Vec2 vec() {
    double x = num();
    return {x, num()};
  }
  void end() {
    if (i != tok.size()) throw ValidationError(where + ": unexpected trailing fields");
  }
  CurveGeom curve() {
    std::string kind = word();
    if (kind == "straight") return CurveGeom::straight();
    if (kind == "arc") {
      Vec2 c = vec();
      double r = num(), t0 = num();
      return CurveGeom::arc(c, r, t0, num());
    }
    if (kind == "transfinite") {
      int p = integer();
      Vec2 a = vec();
      return CurveGeom::transfinite(p, a, vec());
    }
    throw ValidationError(where + ": unknown curve kind '" + kind + "'");
  }
};

int section(LineReader& in, const std::string& name) {
  auto tok = in.next(name + " header");
  if (tok.size() != 2 || tok[0] != name)
    throw ValidationError("line " + std::to_string(in.line()) + ": expected '" + name + " <count>'");
  FieldParser fp{tok, "line " + std::to_string(in.line())};
  fp.i = 1;
  int n = fp.integer();
  if (n < 0) throw ValidationError("line " + std::to_string(in.line()) + ": negative count");
  return n;
}

}  // namespace

std::string mesh_to_string(const Mesh& mesh) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "afw2d-mesh v1\n";
  os << "vertices " << mesh.vertices.size() << '\n';
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    os << i << ' ' << mesh.vertices[i].x() << ' ' << mesh.vertices[i].y() << '\n';
  os << "edges " << mesh.edges.size() << '\n';
  for (std::size_t i = 0; i < mesh.edges.size(); ++i) {
    const auto& e = mesh.edges[i];
    os << i << ' ' << e.v[0] << ' ' << e.v[1] << ' ';
    write_curve(os, e.geom);
    os << ' ' << e.boundary << '\n';
  }
  os << "triangles " << mesh.triangles.size() << '\n';
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    os << i << ' ' << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << t.e[0] << ' ' << t.e[1] << ' ' << t.e[2]
       << ' ' << t.patch;
    for (const auto& r : t.ref) os << ' ' << r.x() << ' ' << r.y();
    os << '\n';
  }
  os << "patches " << mesh.patches.size() << '\n';
  for (std::size_t i = 0; i < mesh.patches.size(); ++i) {
    const auto& p = mesh.patches[i];
    os << i << ' ' << (p.kind == PatchKind::affine ? "affine" : "transfinite");
    for (const auto& c : p.corners) os << ' ' << c.x() << ' ' << c.y();
    if (p.kind == PatchKind::transfinite)
      for (const auto& s : p.sides) {
        os << ' ';
        write_curve(os, s);
      }
    os << '\n';
  }
  return os.str();
}

Mesh mesh_from_string(const std::string& text) {
  LineReader in(text);
  auto head = in.next("header");
  if (head.size() != 2 || head[0] != "afw2d-mesh" || head[1] != "v1")
    throw ValidationError("line " + std::to_string(in.line()) + ": expected header 'afw2d-mesh v1'");
  Mesh m;
  auto record = [&](const std::string& what, int idx) {
    return what + " record " + std::to_string(idx) + " (line " + std::to_string(in.line()) + ")";
  };
  int nv = section(in, "vertices");
  for (int i = 0; i < nv; ++i) {
    auto tok = in.next("vertices");
    FieldParser fp{tok, record("vertex", i)};
    if (fp.integer() != i) throw ValidationError(fp.where + ": ids must be consecutive");
    m.vertices.push_back(fp.vec());
    fp.end();
  }
  int ne = section(in, "edges");
  for (int i = 0; i < ne; ++i) {
    auto tok = in.next("edges");
    FieldParser fp{tok, record("edge", i)};
    if (fp.integer() != i) throw ValidationError(fp.where + ": ids must be consecutive");
    Edge e;
    e.v[0] = fp.integer();
    e.v[1] = fp.integer();
    e.geom = fp.curve();
    e.boundary = fp.integer();
    fp.end();
    m.edges.push_back(e);
  }
  int nt = section(in, "triangles");
  for (int i = 0; i < nt; ++i) {
    auto tok = in.next("triangles");
    FieldParser fp{tok, record("triangle", i)};
    if (tok.size() != 14) throw ValidationError(fp.where + ": expected 14 fields, got " + std::to_string(tok.size()));
    if (fp.integer() != i) throw ValidationError(fp.where + ": ids must be consecutive");
    Triangle t;
    for (auto& v : t.v) v = fp.integer();
    for (auto& e : t.e) e = fp.integer();
    t.patch = fp.integer();
    for (auto& r : t.ref) r = fp.vec();
    fp.end();
    m.triangles.push_back(t);
  }
  int np = section(in, "patches");
  for (int i = 0; i < np; ++i) {
    auto tok = in.next("patches");
    FieldParser fp{tok, record("patch", i)};
    if (fp.integer() != i) throw ValidationError(fp.where + ": ids must be consecutive");
    Patch p;
    std::string kind = fp.word();
    if (kind == "affine")
      p.kind = PatchKind::affine;
    else if (kind == "transfinite")
      p.kind = PatchKind::transfinite;
    else
      throw ValidationError(fp.where + ": unknown patch kind '" + kind + "'");
    for (auto& c : p.corners) c = fp.vec();
    if (p.kind == PatchKind::transfinite)
      for (auto& s : p.sides) {
        s = fp.curve();
        if (s.kind == CurveKind::transfinite_edge) throw ValidationError(fp.where + ": patch sides must be explicit");
      }
    fp.end();
    m.patches.push_back(p);
  }
  if (!in.done()) throw ValidationError("line " + std::to_string(in.numbers[in.pos]) + ": trailing content");
  validate_mesh(m);
  return m;
}

void store_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << mesh_to_string(mesh);
}

Mesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open mesh file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return mesh_from_string(ss.str());
}

}  // namespace afw2d
