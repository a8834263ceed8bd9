#pragma once

#include "afw2d/common.hpp"

#include <array>
#include <memory>
#include <vector>

namespace afw2d {

// Reference triangle: vertices (0,0), (1,0), (0,1). Local edge i runs from
// vertex (i+1)%3 to vertex (i+2)%3, so the boundary is traversed
// counterclockwise and rotate_cw(edge tangent) points outward.

Vec2 ref_vertex(int i);
/// Point on local edge i at parameter s in [0,1].
Vec2 ref_edge_point(int edge, double s);
/// d/ds of ref_edge_point.
Vec2 ref_edge_tangent(int edge);

/// Orthonormal Legendre polynomial of degree k on [0,1].
double legendre01(int k, double s);

/// Gauss-Legendre rule on [0,1] with n points.
struct LineRule {
  std::vector<double> points;
  std::vector<double> weights;
};
const LineRule& gauss_line(int n);
/// Gauss rule on [0,1] exact for polynomials of the given degree.
const LineRule& line_quadrature(int degree);

struct QuadRule {
  std::vector<Vec2> points;  // cartesian reference coordinates
  std::vector<double> weights;
  int degree = 0;

  std::size_t size() const { return points.size(); }
  /// Barycentric coordinates (lambda_0, lambda_1, lambda_2) of point q.
  std::array<double, 3> barycentric(std::size_t q) const;
};

inline constexpr int kMaxQuadDegree = 48;

/// Rule on the reference triangle, exact up to `degree`.
const QuadRule& quadrature(int degree);
/// Same rule with its collapsed corner moved to reference vertex `vertex`, so
/// integrands that are smooth in polar-like coordinates around it stay smooth.
const QuadRule& quadrature_collapsed(int degree, int vertex);

/// Collapsed rule refined geometrically toward reference vertex `vertex`:
/// the radial variable is split at ratio^layers, ..., ratio, 1 and each piece
/// gets a Gauss rule exact to `degree`.
const QuadRule& quadrature_graded(int degree, int vertex, int layers, double ratio = 0.15);
/// Gauss rule on [0,1] graded the same way toward s = 0.
LineRule line_quadrature_graded(int degree, int layers, double ratio = 0.15);

/// Orthonormal hierarchical basis of P_n(T̂): the first dim P_m functions span
/// P_m for every m <= n. Built from the Dubiner (collapsed Jacobi) functions.
class ScalarPolySet {
 public:
  explicit ScalarPolySet(int order);

  int order() const { return order_; }
  int size() const { return static_cast<int>(coef_.cols()); }

  void eval(const Vec2& x, Eigen::Ref<VectorXd> val) const;
  /// grad is size() x 2.
  void eval(const Vec2& x, Eigen::Ref<VectorXd> val, Eigen::Ref<Eigen::MatrixX2d> grad) const;

 private:
  int order_;
  std::vector<std::array<int, 2>> powers_;
  MatrixXd coef_;  // dictionary -> orthonormal
};

const ScalarPolySet& ortho_basis(int order);
inline int dim_p(int order) { return order < 0 ? 0 : (order + 1) * (order + 2) / 2; }

enum class FormKind { L0, L1, L1minus, L2 };
enum class DerivKind { none, grad, curl };

struct PolySpaceSpec {
  FormKind form_kind = FormKind::L2;
  int interior = 0;
  std::array<int, 3> edge{0, 0, 0};
  int r_max = kDefaultRMax;

  static PolySpaceSpec uniform(FormKind kind, int r) { return {kind, r, {r, r, r}}; }
  bool operator==(const PolySpaceSpec&) const = default;
};

enum class EntityKind { vertex, edge, interior };

struct TraceMeta {
  EntityKind entity = EntityKind::interior;
  int index = -1;   // local vertex or edge number
  int degree = -1;  // edge-polynomial degree of the trace moment this function is dual to
};

/// Polynomial functions on T̂ stored as coefficients against ortho_basis(degree),
/// one block of rows per component.
struct BasisSet {
  FormKind kind = FormKind::L2;
  int components = 1;
  int degree = 0;
  MatrixXd coef;  // (components * dim_p(degree)) x size()
  std::vector<TraceMeta> meta;

  int size() const { return static_cast<int>(coef.cols()); }
  int block() const { return dim_p(degree); }

  /// components x size()
  MatrixXd values(const Vec2& x) const;
  /// Row-wise Jacobian: entry (c, d) of function k is jac[k](c, d) = d(phi_c)/dx_d.
  void values_and_jacobians(const Vec2& x, MatrixXd& val, std::vector<Eigen::MatrixXd>& jac) const;
  /// Divergence of every function (vector-valued sets only).
  Eigen::RowVectorXd divergence(const Vec2& x) const;
};

/// Values and first derivatives of a set at one point.
struct PointTable {
  MatrixXd val;   // components x n
  MatrixXd dx;    // components x n, d/dx
  MatrixXd dy;    // components x n, d/dy
};
PointTable tabulate(const BasisSet& set, const Vec2& x);

BasisSet scalar_basis(int order, DerivKind derivative = DerivKind::none);
/// Constrained reference space; results are cached and immutable.
std::shared_ptr<const BasisSet> vector_space(const PolySpaceSpec& spec);
/// Basis of curl P̊_order(T̂) (empty for order < 3), L²-orthonormal.
BasisSet bubble_curl_basis(int order);

struct HFamily {
  int order = 0;
  int k = 0;
  BasisSet f_basis;  // curl of interior bubbles
  BasisSet g_basis;  // complement of gradients, embedded in the same ambient degree
  /// Coefficients of h_i(., t) = (1 - t) f_i + t g_i.
  BasisSet at(double t) const;
};
const HFamily& h_family(int order);

/// Lifts coefficients of a degree-`from` set into degree `to` >= from.
MatrixXd embed_coefficients(const MatrixXd& coef, int components, int from, int to);

}  // namespace afw2d
