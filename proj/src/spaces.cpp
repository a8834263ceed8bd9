#include "afw2d/spaces.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <ostream>

namespace afw2d {

int OrderMap::max_order() const { return tri.empty() ? 0 : *std::max_element(tri.begin(), tri.end()); }

OrderMap make_order_map(const Mesh& mesh, int uniform, int r_max) {
  std::vector<int> per(mesh.triangles.size(), uniform);
  return make_order_map(mesh, per, r_max);
}

OrderMap make_order_map(const Mesh& mesh, std::span<const int> per_triangle, int r_max) {
  if (per_triangle.size() != mesh.triangles.size())
    throw ValidationError("order list has " + std::to_string(per_triangle.size()) + " entries for " +
                          std::to_string(mesh.triangles.size()) + " triangles");
  for (std::size_t t = 0; t < per_triangle.size(); ++t)
    if (per_triangle[t] < 0 || per_triangle[t] > r_max)
      throw ValidationError("order " + std::to_string(per_triangle[t]) + " of triangle " + std::to_string(t) +
                            " outside [0, " + std::to_string(r_max) + "]");
  OrderMap om;
  om.r_max = r_max;
  om.tri.assign(per_triangle.begin(), per_triangle.end());
  om.edge.assign(mesh.edges.size(), r_max);
  return enforce_minimum_rule(mesh, om);
}

OrderMap enforce_minimum_rule(const Mesh& mesh, const OrderMap& orders) {
  OrderMap out = orders;
  out.edge.assign(mesh.edges.size(), std::numeric_limits<int>::max());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int e : mesh.triangles[t].e) out.edge[e] = std::min(out.edge[e], out.tri[t]);
  for (std::size_t e = 0; e < out.edge.size(); ++e)
    if (orders.edge.size() == out.edge.size()) out.edge[e] = std::min(out.edge[e], orders.edge[e]);
  return out;
}

void validate_order_map(const Mesh& mesh, const OrderMap& orders) {
  if (orders.tri.size() != mesh.triangles.size() || orders.edge.size() != mesh.edges.size())
    throw ValidationError("order map does not match the mesh");
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (orders.tri[t] < 0 || orders.tri[t] > orders.r_max)
      throw ValidationError("triangle " + std::to_string(t) + " order out of range");
    for (int e : mesh.triangles[t].e)
      if (orders.edge[e] < 0 || orders.edge[e] > orders.tri[t])
        throw ValidationError("minimum rule violated on edge " + std::to_string(e) + " of triangle " +
                              std::to_string(t));
  }
}

LocalOrders local_orders(const Mesh& mesh, const OrderMap& orders, int t) {
  LocalOrders lo;
  lo.interior = orders.tri[t];
  for (int i = 0; i < 3; ++i) lo.edge[i] = orders.edge[mesh.triangles[t].e[i]];
  return lo;
}

PolySpaceSpec local_spec(const Mesh& mesh, const OrderMap& orders, int t, FormKind kind, int shift) {
  LocalOrders lo = local_orders(mesh, orders, t);
  PolySpaceSpec s;
  s.form_kind = kind;
  s.interior = lo.interior + shift;
  for (int i = 0; i < 3; ++i) s.edge[i] = lo.edge[i] + shift;
  s.r_max = orders.r_max + shift;
  return s;
}

std::shared_ptr<const BasisSet> stress_row_space(const Mesh& mesh, const OrderMap& orders, int t) {
  return vector_space(local_spec(mesh, orders, t, FormKind::L1, 1));
}

std::shared_ptr<const BasisSet> scalar_space(const Mesh& mesh, const OrderMap& orders, int t) {
  return vector_space(local_spec(mesh, orders, t, FormKind::L2, 0));
}

std::vector<int> DofMap::stress_gather(int t, int row) const {
  std::vector<int> out = stress_index[t];
  for (int& i : out) i += row * stress_row;
  return out;
}

DofMap build_dofs(const Mesh& mesh, const OrderMap& orders) {
  validate_order_map(mesh, orders);
  const int nt = static_cast<int>(mesh.triangles.size());
  const int ne = static_cast<int>(mesh.edges.size());
  DofMap d;
  d.edge_first.resize(ne);
  d.edge_count.resize(ne);
  int next = 0;
  for (int e = 0; e < ne; ++e) {
    d.edge_first[e] = next;
    d.edge_count[e] = orders.edge[e] + 2;
    next += d.edge_count[e];
  }
  d.interior_first.resize(nt);
  d.interior_count.resize(nt);
  d.stress_index.resize(nt);
  d.stress_sign.resize(nt);
  for (int t = 0; t < nt; ++t) {
    auto set = stress_row_space(mesh, orders, t);
    d.interior_first[t] = next;
    int interior = 0;
    auto& idx = d.stress_index[t];
    auto& sgn = d.stress_sign[t];
    for (const TraceMeta& m : set->meta) {
      if (m.entity == EntityKind::edge) {
        int e = mesh.triangles[t].e[m.index];
        idx.push_back(d.edge_first[e] + m.degree);
        // A reversed traversal flips the normal and mirrors the Legendre parameter.
        bool forward = mesh.edge_sign(t, m.index) > 0;
        sgn.push_back(forward ? 1.0 : ((m.degree % 2 == 0) ? -1.0 : 1.0));
      } else {
        idx.push_back(d.interior_first[t] + interior++);
        sgn.push_back(1.0);
      }
    }
    d.interior_count[t] = interior;
    next += interior;
  }
  d.stress_row = next;
  d.n_stress = 2 * next;

  d.disp_first.resize(nt);
  d.rot_first.resize(nt);
  d.scalar_count.resize(nt);
  int disp = d.n_stress;
  for (int t = 0; t < nt; ++t) {
    d.scalar_count[t] = dim_p(orders.tri[t]);
    d.disp_first[t] = disp;
    disp += 2 * d.scalar_count[t];
  }
  d.n_disp = disp - d.n_stress;
  int rot = disp;
  for (int t = 0; t < nt; ++t) {
    d.rot_first[t] = rot;
    rot += d.scalar_count[t];
  }
  d.n_rot = rot - disp;
  d.total = rot;
  return d;
}

void write_dof_report(std::ostream& os, const Mesh& mesh, const DofMap& dofs) {
  os << "field,entity,entity_id,local,global\n";
  for (int row = 0; row < 2; ++row) {
    const int off = row * dofs.stress_row;
    for (std::size_t e = 0; e < mesh.edges.size(); ++e)
      for (int k = 0; k < dofs.edge_count[e]; ++k)
        os << "stress" << row << ",edge," << e << ',' << k << ',' << off + dofs.edge_first[e] + k << '\n';
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      for (int k = 0; k < dofs.interior_count[t]; ++k)
        os << "stress" << row << ",interior," << t << ',' << k << ',' << off + dofs.interior_first[t] + k << '\n';
  }
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int k = 0; k < 2 * dofs.scalar_count[t]; ++k)
      os << "displacement,interior," << t << ',' << k << ',' << dofs.disp_first[t] + k << '\n';
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int k = 0; k < dofs.scalar_count[t]; ++k)
      os << "rotation,interior," << t << ',' << k << ',' << dofs.rot_first[t] + k << '\n';
}

MatrixXd piola(FormKind kind, Direction dir, const MapEval& map, const MatrixXd& values) {
  switch (kind) {
    case FormKind::L0:
      return values;
    case FormKind::L2:
      return dir == Direction::push ? MatrixXd(values / map.det) : MatrixXd(values * map.det);
    case FormKind::L1:
    case FormKind::L1minus:
      if (values.rows() != 2) throw ValidationError("Λ1 values need two rows");
      if (dir == Direction::push) return map.jac * values / map.det;
      return map.det * map.jac.inverse() * values;
  }
  return values;
}

PhysicalValues physical_values(const BasisSet& set, const MapEval& map, const Vec2& xhat) {
  PhysicalValues out;
  if (set.kind == FormKind::L2) {
    out.val = set.values(xhat) / map.det;
    return out;
  }
  PointTable tab = tabulate(set, xhat);
  if (set.kind == FormKind::L0) {
    out.val = tab.val;
    return out;
  }
  out.val = map.jac * tab.val / map.det;
  out.div = (tab.dx.row(0) + tab.dy.row(1)) / map.det;
  return out;
}

VectorField physical_field(std::function<VectorSample(const Vec2&)> f) {
  return [f = std::move(f)](const ElementPoint& p) { return f(p.map.x); };
}

VectorField composition_field(std::vector<std::shared_ptr<const BasisSet>> sets, std::vector<MatrixXd> coef) {
  return [sets = std::move(sets), coef = std::move(coef)](const ElementPoint& p) {
    const BasisSet& set = *sets[p.element];
    const MatrixXd& c = coef[p.element];
    PointTable tab = tabulate(set, p.xhat);
    Vec2 v = (tab.val * c).transpose();
    Mat2 ref;  // d v_c / d xhat_d
    ref.col(0) = (tab.dx * c).transpose();
    ref.col(1) = (tab.dy * c).transpose();
    return VectorSample::from(v, ref * p.map.jac.inverse());
  };
}

}  // namespace afw2d
