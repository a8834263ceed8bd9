#pragma once

#include "afw2d/common.hpp"
#include "afw2d/reference_element.hpp"

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace afw2d {

enum class CurveKind { straight, circular_arc, transfinite_edge };

/// Parametrized edge x(s), s in [0,1]. Straight edges take their endpoints
/// from the mesh vertices; transfinite edges are images of a reference segment
/// under a patch map.
struct CurveGeom {
  CurveKind kind = CurveKind::straight;
  Vec2 center{0, 0};
  double radius = 0.0;
  double theta0 = 0.0, theta1 = 0.0;
  int patch = -1;
  Vec2 ref0{0, 0}, ref1{0, 0};

  static CurveGeom straight() { return {}; }
  static CurveGeom arc(Vec2 c, double r, double t0, double t1);
  static CurveGeom transfinite(int patch, Vec2 a, Vec2 b);
};

enum class PatchKind { affine, transfinite };

/// Map from the reference triangle onto one initial-mesh triangle. Side i runs
/// from corner (i+1)%3 to corner (i+2)%3; only straight and arc sides occur.
struct Patch {
  PatchKind kind = PatchKind::affine;
  std::array<Vec2, 3> corners;
  std::array<CurveGeom, 3> sides;
};

struct Edge {
  std::array<int, 2> v{};  // v[0] < v[1]; x(0) is v[0]
  CurveGeom geom;
  int boundary = 0;  // 1 on the Dirichlet boundary, 0 inside
};

struct Triangle {
  std::array<int, 3> v{};  // counterclockwise; local edge 0 = (v1, v2) is the refinement edge
  std::array<int, 3> e{};  // e[i] joins v[(i+1)%3] and v[(i+2)%3]
  int patch = -1;
  std::array<Vec2, 3> ref;  // vertex positions in the patch reference triangle
};

struct MapEval {
  Vec2 x;
  Mat2 jac;
  double det = 0.0;
};

struct Mesh {
  std::vector<Vec2> vertices;
  std::vector<Edge> edges;
  std::vector<Triangle> triangles;
  std::vector<Patch> patches;

  std::size_t num_triangles() const { return triangles.size(); }
  bool is_affine(int t) const { return patches[triangles[t].patch].kind == PatchKind::affine; }
  /// +1 if local edge i is traversed in the global direction (lower to higher id).
  int edge_sign(int t, int i) const;
};

MapEval patch_map(const Patch& patch, const Vec2& xi);
MapEval map_eval(const Mesh& mesh, int t, const Vec2& xhat);
/// Damped Newton from the centroid; throws NumericalError on failure.
Vec2 inverse_map(const Mesh& mesh, int t, const Vec2& x, double tol = 1e-12, int max_iter = 50);

/// Affine part of the element map: B_T = DG_T(centroid), b_T.
struct AffinePart {
  Mat2 B;
  Vec2 b;
};
AffinePart affine_part(const Mesh& mesh, int t);

Vec2 edge_point(const Mesh& mesh, int e, double s);
Vec2 edge_derivative(const Mesh& mesh, int e, double s);

struct DomainParams {
  double radius = 1.0;
};
Mesh build_domain(const std::string& name, const DomainParams& params = {});

/// Red refinement of every triangle in its patch reference space.
Mesh refine_uniform(const Mesh& mesh, std::vector<int>* parent = nullptr);
/// Newest-vertex bisection of the marked triangles with conforming closure.
Mesh refine_bisect(const Mesh& mesh, const std::set<int>& marked, std::vector<int>* parent = nullptr);

struct ElementRegularity {
  int triangle = -1;
  double distortion = 0.0;  // sup |DPhi_T| * |B_T^{-1}|
  double shape_ratio = 0.0; // diameter over inscribed-circle diameter of the affine part
  double cond_b = 0.0;      // |B_T| |B_T^{-1}|
  double diameter = 0.0;
  double min_det = 0.0;
};

struct RegularityReport {
  double c_h = 0.0;
  double max_shape_ratio = 0.0;
  double h = 0.0;
  double min_det = 0.0;
  std::vector<ElementRegularity> elements;
};
RegularityReport regularity(const Mesh& mesh);

struct CompatibilityReport {
  double max_mismatch = 0.0;
  int worst_edge = -1;
  std::map<int, double> per_edge;  // shared or boundary edge -> mismatch
};
CompatibilityReport check_compatibility(const Mesh& mesh);

/// Conformity, positive Jacobians and compatibility; throws ValidationError.
void validate_mesh(const Mesh& mesh, double tol = 1e-10);

std::string mesh_to_string(const Mesh& mesh);
Mesh mesh_from_string(const std::string& text);
void store_mesh(const Mesh& mesh, const std::string& path);
Mesh load_mesh(const std::string& path);

/// Local vertex of t sitting on the patch corner opposite an arc, where the
/// transfinite map is only piecewise smooth; -1 if there is none.
int singular_vertex(const Mesh& mesh, int t);
/// Quadrature for integrals over t, collapsed onto its singular vertex if any.
const QuadRule& element_quadrature(const Mesh& mesh, int t, int degree);

/// Largest vertex distance over all triangles.
double mesh_size(const Mesh& mesh);

}  // namespace afw2d
