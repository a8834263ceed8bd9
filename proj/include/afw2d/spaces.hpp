#pragma once

#include "afw2d/mesh.hpp"
#include "afw2d/reference_element.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace afw2d {

/// Displacement order per triangle and edge. Stress rows use order + 1.
struct OrderMap {
  std::vector<int> tri;
  std::vector<int> edge;
  int r_max = kDefaultRMax;

  int max_order() const;
};

OrderMap make_order_map(const Mesh& mesh, int uniform, int r_max = kDefaultRMax);
/// Edge orders become the minimum over the adjacent triangles.
OrderMap make_order_map(const Mesh& mesh, std::span<const int> per_triangle, int r_max = kDefaultRMax);
/// Re-applies the minimum rule to an existing map (idempotent).
OrderMap enforce_minimum_rule(const Mesh& mesh, const OrderMap& orders);
/// Throws ValidationError on size mismatch, range errors or minimum-rule violations.
void validate_order_map(const Mesh& mesh, const OrderMap& orders);

struct LocalOrders {
  int interior = 0;
  std::array<int, 3> edge{};
};
LocalOrders local_orders(const Mesh& mesh, const OrderMap& orders, int t);

/// Reference spaces on triangle t; `shift` raises interior and edge orders together.
PolySpaceSpec local_spec(const Mesh& mesh, const OrderMap& orders, int t, FormKind kind, int shift);
std::shared_ptr<const BasisSet> stress_row_space(const Mesh& mesh, const OrderMap& orders, int t);
std::shared_ptr<const BasisSet> scalar_space(const Mesh& mesh, const OrderMap& orders, int t);

enum class FieldKind { stress, displacement, rotation };

/// Global numbering. Layout: [stress row 0 | stress row 1 | displacement | rotation].
/// Displacement blocks per element are component-major.
struct DofMap {
  int stress_row = 0;  // size of one stress row block
  int n_stress = 0, n_disp = 0, n_rot = 0, total = 0;

  std::vector<int> edge_first, edge_count;     // stress row numbering of edge moments
  std::vector<int> interior_first, interior_count;
  std::vector<int> disp_first, rot_first;      // per element, absolute index
  std::vector<int> scalar_count;               // dim P_r per element

  // Per element and local stress-row basis function: index inside a row block and sign.
  std::vector<std::vector<int>> stress_index;
  std::vector<std::vector<double>> stress_sign;

  int disp_offset() const { return n_stress; }
  int rot_offset() const { return n_stress + n_disp; }
  /// Absolute indices of the local stress functions in row `row` (0 or 1).
  std::vector<int> stress_gather(int t, int row) const;
};

DofMap build_dofs(const Mesh& mesh, const OrderMap& orders);

/// CSV: field,entity,entity_id,local,global
void write_dof_report(std::ostream& os, const Mesh& mesh, const DofMap& dofs);

enum class Direction { push, pull };

/// Transforms point values between reference and physical element. Columns are
/// independent values; Λ¹ kinds take 2 rows, the others any number of rows.
MatrixXd piola(FormKind kind, Direction dir, const MapEval& map, const MatrixXd& values);

/// Physical values of the Λ¹ or Λ² images of a reference set at x̂.
/// For Λ¹ kinds `val` is 2 x n and `div` 1 x n; for Λ² `val` is components x n.
struct PhysicalValues {
  MatrixXd val;
  Eigen::RowVectorXd div;
};
PhysicalValues physical_values(const BasisSet& set, const MapEval& map, const Vec2& xhat);

/// Where a field is sampled: element, reference point, and the map there.
struct ElementPoint {
  int element = -1;
  Vec2 xhat;
  MapEval map;
};

/// A vector sample with its physical Jacobian (row c, column d = d v_c / dx_d)
/// and divergence. The divergence is kept separately because Piola fields on
/// curved elements know it exactly while their full Jacobian needs DG'.
struct VectorSample {
  Vec2 value{0, 0};
  Mat2 jac = Mat2::Zero();
  double div = 0.0;

  static VectorSample from(const Vec2& v, const Mat2& j) { return {v, j, j.trace()}; }
};
using VectorField = std::function<VectorSample(const ElementPoint&)>;

/// Wraps a field given in physical coordinates.
VectorField physical_field(std::function<VectorSample(const Vec2&)> f);

/// Λ⁰ field with coefficients against a reference Λ⁰ set per element, one
/// coefficient column per component.
VectorField composition_field(std::vector<std::shared_ptr<const BasisSet>> sets, std::vector<MatrixXd> coef);

}  // namespace afw2d
