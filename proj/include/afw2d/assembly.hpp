#pragma once

#include "afw2d/spaces.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace afw2d {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Isotropic material. lambda may be +infinity (incompressible limit).
struct MaterialIso {
  double mu = 1.0;
  double lambda = 1.0;

  /// Factor c in A sigma = (sigma - c tr(sigma) I) / (2 mu).
  double trace_factor() const;
  void validate() const;
};

struct ProblemSpec {
  MaterialIso material;
  std::function<Vec2(const Vec2&)> body_force;             // empty: zero
  std::function<Vec2(const Vec2&)> boundary_displacement;  // empty: zero
  /// Point where data or solution are singular; integrals over elements and
  /// boundary edges touching it use graded rules.
  std::optional<Vec2> singular_point;
};

/// Mesh, orders and numbering shared by a system and its solutions.
struct Discretization {
  Mesh mesh;
  OrderMap orders;
  DofMap dofs;
  std::vector<std::shared_ptr<const BasisSet>> stress_sets;  // one row space per element

  static std::shared_ptr<const Discretization> build(Mesh mesh, OrderMap orders);
  /// Degree used for element integrals of discrete fields on t.
  int quad_degree(int t) const;
};

/// Local vertex of t at `point`, or -1.
int local_vertex_at(const Mesh& mesh, int t, const std::optional<Vec2>& point);
/// element_quadrature, or a rule graded toward the singular point when t touches it.
const QuadRule& integration_rule(const Mesh& mesh, int t, int degree, const std::optional<Vec2>& singular_point,
                                 int layers = 3);

/// Saddle system
///   [ A       B_div  -B_skew ] [sigma]   [g ]
///   [ B_div^T  0       0     ] [u    ] = [-F]
///   [-B_skew^T 0       0     ] [p    ]   [0 ]
/// with A the compliance mass, B_div(tau, v) = <div tau, v>,
/// B_skew(tau, q) = <S1 tau, q>, g the boundary term and F the load.
struct MixedSystem {
  std::shared_ptr<const Discretization> disc;
  MaterialIso material;
  SparseMatrix a, b_div, b_skew;
  SparseMatrix mass_stress;  // <sigma, tau>
  SparseMatrix hdiv_gram;  // <sigma, tau> + <div sigma, div tau>
  SparseMatrix mass_disp;  // L2 Gram of the displacement space
  SparseMatrix mass_rot;   // L2 Gram of the rotation space
  SparseMatrix matrix;     // full symmetric saddle matrix
  VectorXd rhs;
};

MixedSystem assemble(const Mesh& mesh, const OrderMap& orders, const ProblemSpec& spec);
MixedSystem assemble(std::shared_ptr<const Discretization> disc, const ProblemSpec& spec);

struct SolveReport {
  double residual = 0.0;       // |K x - b| / |b| (absolute if b = 0)
  double weak_symmetry = 0.0;  // max_q |<S1 sigma_h, q>| / |sigma_h|_{L2}
  double sigma_norm = 0.0;
};

struct SolutionTriple {
  std::shared_ptr<const Discretization> disc;
  VectorXd sigma, u, p;
  SolveReport report;
};

/// Sparse LU of the saddle matrix; throws NumericalError when it is singular.
SolutionTriple solve(const MixedSystem& system);

struct FieldValues {
  Mat2 sigma = Mat2::Zero();
  Vec2 div_sigma = Vec2::Zero();
  Vec2 u = Vec2::Zero();
  double p = 0.0;
};

/// Evaluation inside one element at a reference point.
FieldValues evaluate(const SolutionTriple& sol, const ElementPoint& point);
/// Finds the element containing x; throws ValidationError if none does.
ElementPoint locate_point(const Mesh& mesh, const Vec2& x);
std::vector<FieldValues> eval_solution(const SolutionTriple& sol, std::span<const Vec2> points);

/// Generalized inf-sup constant of [B_div B_skew] between the H(div) norm on
/// stresses and the L2 norm on (v, q).
struct InfSupResult {
  double beta = 0.0;
  int iterations = 0;
  double ritz_residual = 0.0;
};
InfSupResult estimate_inf_sup(const Mesh& mesh, const OrderMap& orders);
InfSupResult estimate_inf_sup(const MixedSystem& system);

/// Coordinate text dump: one "row col value" line per stored entry.
void write_matrix(std::ostream& os, const SparseMatrix& m);
/// CSV field,id,value for every coefficient.
void write_solution(std::ostream& os, const SolutionTriple& sol);

}  // namespace afw2d
