#pragma once

#include "afw2d/spaces.hpp"

#include <functional>
#include <vector>

namespace afw2d {

using ScalarField = std::function<double(const ElementPoint&)>;

/// Quadrature degree shared by every moment computed on triangle t. Using one
/// rule per element for all operators keeps their identities exact to round-off.
int element_quad_degree(const Mesh& mesh, const OrderMap& orders, int t);
/// Extra degree added on curved elements, on top of the affine +4.
inline constexpr int kCurvedQuadBoost = 16;

/// Parameter of the h-family chosen for one interior order.
struct TSelection {
  double t = 0.0;
  double min_sv_pi_minus = 0.0;
  double min_sv_c = 0.0;
  int order = 0;
};

/// Scans t in {0, 1/16, ..., 1} and keeps the best; cached per order.
TSelection select_t(int order);
/// Smallest singular values of the reference systems at one t.
std::pair<double, double> reference_singular_values(int order, double t);
/// Determinant of the reference Π^{1,-}_t system.
double pi_minus_determinant(int order, double t);

enum class OperatorKind { pi1, pi1_minus, w };

/// Element map used by a local operator: the true map or its affine part.
enum class Geometry { exact, affine_part };

/// Square moment system of one operator on one element, factorized once.
class LocalInterpolant {
 public:
  /// A negative `t_param` takes select_t(order).
  LocalInterpolant(const Mesh& mesh, const OrderMap& orders, int t, OperatorKind kind,
                   Geometry geometry = Geometry::exact, double t_param = -1.0);

  /// Coefficients against target(). For the W operator the vector is
  /// component-major: first the x component, then the y component.
  VectorXd apply(const VectorField& field) const;
  /// Moment values of a field (vertex rows are zero).
  VectorXd moments(const VectorField& field) const;

  const BasisSet& target() const { return *target_; }
  const MatrixXd& system() const { return system_; }
  double condition() const { return cond_; }
  int element() const { return t_; }
  int quad_degree() const { return quad_degree_; }

 private:
  MapEval map_at(const Vec2& xhat) const;
  void evaluate(const std::function<void(const ElementPoint&, MatrixXd&, Eigen::RowVectorXd&)>& f, int ncols,
                bool with_vertices, MatrixXd& out) const;
  void target_values(const ElementPoint& p, MatrixXd& val, Eigen::RowVectorXd& div) const;

  const Mesh* mesh_;
  int t_;
  OperatorKind kind_;
  Geometry geometry_;
  int quad_degree_;
  int order_;
  std::array<int, 3> edge_orders_{};
  BasisSet interior_tests_;  // reference vectors tested through DG^{-T}
  std::shared_ptr<const BasisSet> target_;
  MatrixXd system_;
  Eigen::ColPivHouseholderQR<MatrixXd> qr_;
  double cond_ = 0.0;
  AffinePart affine_;
};

/// Coefficients of the reference density d·u against ortho_basis(order).
VectorXd proj_pi2(const Mesh& mesh, const OrderMap& orders, int t, const ScalarField& u);
/// Same projection for the divergence of a vector field.
VectorXd proj_pi2_div(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w);
/// Reference divergence of target coefficients, expanded in ortho_basis(order).
VectorXd divergence_coefficients(const BasisSet& set, const VectorXd& coef, int order);

VectorXd proj_pi1(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w);
VectorXd proj_pi1_minus(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w);
/// Throws NumericalError naming the element and its distortion when singular.
VectorXd op_w(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w);

/// Vertex values of the patch-wise P1 regression.
std::vector<Vec2> clement(const Mesh& mesh, const VectorField& w);
/// Piecewise-linear (in x̂) field through given vertex values.
VectorField vertex_field(const Mesh& mesh, std::vector<Vec2> values);

struct WtildeResult {
  std::vector<std::shared_ptr<const BasisSet>> sets;  // scalar Λ⁰ sets per element
  std::vector<MatrixXd> coef;                          // per element, one column per component
  std::vector<Vec2> vertex_values;                     // Clément part
  VectorField field(const Mesh& mesh) const;
};
WtildeResult op_wtilde(const Mesh& mesh, const OrderMap& orders, const VectorField& w);

/// Random smooth test field: a polynomial of the given degree in physical
/// coordinates with standard normal coefficients.
VectorField random_polynomial_field(int degree, unsigned seed, double scale = 1.0);

/// Residuals are max-norm coefficient differences relative to the larger of
/// the two coefficient vectors, maximized over elements and samples.
struct CommutingReport {
  double div_pi_minus = 0.0;  // div Π^{1,-} - Π² div
  double div_pi1 = 0.0;       // div Π¹ - Π² div
  double wtilde = 0.0;        // Π^{1,-} W̃ - Π^{1,-}
  double max_condition = 0.0;
  bool wtilde_defined = true;
  std::string note;
};
/// Never throws; a singular W system is reported through wtilde_defined/note.
CommutingReport check_commuting(const Mesh& mesh, const OrderMap& orders, int n_samples, unsigned seed = 1);

/// Operator-norm gap between the weighted projection Π² and the standard L²
/// projection onto the pushed-forward space, sup of |Π²u - Pu| / |u| over
/// physical polynomials u of `probe_degree` on each curved element, max over
/// elements. Zero on affine meshes.
double projection_gap(const Mesh& mesh, const OrderMap& orders, int probe_degree);

/// L² norm and H¹ seminorm of a vector field. The row-wise curl of a vector
/// field has the same L² norm as its gradient.
struct FieldNorms {
  double l2 = 0.0;
  double h1_semi = 0.0;
};
FieldNorms field_norms(const Mesh& mesh, const VectorField& w, int quad_degree, int only_element = -1);

}  // namespace afw2d
