#include "afw2d/assembly.hpp"

#include "afw2d/interpolation.hpp"
#include "afw2d/parallel.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <ostream>
#include <random>

namespace afw2d {

double MaterialIso::trace_factor() const {
  if (std::isinf(lambda)) return 0.5;
  return lambda / (2.0 * mu + 2.0 * lambda);
}

void MaterialIso::validate() const {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw ValidationError("shear modulus must be positive and finite");
  if (!(lambda >= 0.0)) throw ValidationError("Lame parameter lambda must be non-negative");
}

std::shared_ptr<const Discretization> Discretization::build(Mesh mesh, OrderMap orders) {
  auto d = std::make_shared<Discretization>();
  d->mesh = std::move(mesh);
  d->orders = std::move(orders);
  d->dofs = build_dofs(d->mesh, d->orders);
  d->stress_sets.resize(d->mesh.triangles.size());
  for (std::size_t t = 0; t < d->mesh.triangles.size(); ++t)
    d->stress_sets[t] = stress_row_space(d->mesh, d->orders, static_cast<int>(t));
  return d;
}

int local_vertex_at(const Mesh& mesh, int t, const std::optional<Vec2>& point) {
  if (!point) return -1;
  for (int i = 0; i < 3; ++i)
    if ((mesh.vertices[mesh.triangles[t].v[i]] - *point).norm() < 1e-12) return i;
  return -1;
}

const QuadRule& integration_rule(const Mesh& mesh, int t, int degree, const std::optional<Vec2>& singular_point,
                                 int layers) {
  degree = std::min(degree, kMaxQuadDegree);
  const int v = local_vertex_at(mesh, t, singular_point);
  if (v >= 0) return quadrature_graded(degree, v, layers);
  return element_quadrature(mesh, t, degree);
}

int Discretization::quad_degree(int t) const {
  int degree = 2 * stress_sets[t]->degree + 4;
  if (!mesh.is_affine(t)) degree += kCurvedQuadBoost;
  return std::min(degree, kMaxQuadDegree);
}

namespace {

constexpr int kSingularLayers = 3;
constexpr int kBoundaryLayers = 10;

struct LocalBlocks {
  MatrixXd a, gram, mass_stress, b_div, b_skew, mass_scalar;
  VectorXd g, f;
};

LocalBlocks local_blocks(const Discretization& d, int t, const ProblemSpec& spec) {
  const BasisSet& set = *d.stress_sets[t];
  const int n = set.size();
  const int r = d.orders.tri[t];
  const int nv = dim_p(r);
  const ScalarPolySet& psi_set = ortho_basis(r);
  const double c = spec.material.trace_factor();
  const double inv2mu = 1.0 / (2.0 * spec.material.mu);

  LocalBlocks lb;
  lb.a = MatrixXd::Zero(2 * n, 2 * n);
  lb.gram = MatrixXd::Zero(2 * n, 2 * n);
  lb.mass_stress = MatrixXd::Zero(2 * n, 2 * n);
  lb.b_div = MatrixXd::Zero(2 * n, 2 * nv);
  lb.b_skew = MatrixXd::Zero(2 * n, nv);
  lb.mass_scalar = MatrixXd::Zero(nv, nv);
  lb.g = VectorXd::Zero(2 * n);
  lb.f = VectorXd::Zero(2 * nv);

  const QuadRule& q = integration_rule(d.mesh, t, d.quad_degree(t), spec.singular_point, kSingularLayers);
  VectorXd psi(nv);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const MapEval g = map_eval(d.mesh, t, q.points[i]);
    const PhysicalValues pv = physical_values(set, g, q.points[i]);
    psi_set.eval(q.points[i], psi);
    const VectorXd phys = psi / g.det;
    const double w = q.weights[i] * g.det;
    const MatrixXd vv = w * pv.val.transpose() * pv.val;
    const MatrixXd dd = w * pv.div.transpose() * pv.div;
    for (int a = 0; a < 2; ++a) {
      lb.mass_stress.block(a * n, a * n, n, n) += vv;
      lb.gram.block(a * n, a * n, n, n) += vv + dd;
      lb.a.block(a * n, a * n, n, n) += inv2mu * vv;
      for (int b = 0; b < 2; ++b)
        lb.a.block(a * n, b * n, n, n) -= (inv2mu * c * w) * pv.val.row(a).transpose() * pv.val.row(b);
      lb.b_div.block(a * n, a * nv, n, nv) += w * pv.div.transpose() * phys.transpose();
    }
    // S1 tau = tau_12 - tau_21: row 0 contributes its y component, row 1 minus its x component.
    lb.b_skew.topRows(n) += w * pv.val.row(1).transpose() * phys.transpose();
    lb.b_skew.bottomRows(n) -= w * pv.val.row(0).transpose() * phys.transpose();
    lb.mass_scalar += w * phys * phys.transpose();
    if (spec.body_force) {
      const Vec2 f = spec.body_force(g.x);
      for (int comp = 0; comp < 2; ++comp) lb.f.segment(comp * nv, nv) -= (w * f(comp)) * phys;
    }
  }

  if (spec.boundary_displacement) {
    for (int i = 0; i < 3; ++i) {
      if (!d.mesh.edges[d.mesh.triangles[t].e[i]].boundary) continue;
      // Local edge i runs from vertex (i+1)%3 to (i+2)%3.
      LineRule line = line_quadrature(d.quad_degree(t));
      const int start = local_vertex_at(d.mesh, t, spec.singular_point);
      if (start == (i + 1) % 3 || start == (i + 2) % 3) {
        line = line_quadrature_graded(d.quad_degree(t), kBoundaryLayers);
        if (start == (i + 2) % 3)
          for (double& s : line.points) s = 1.0 - s;
      }
      for (std::size_t k = 0; k < line.points.size(); ++k) {
        const Vec2 xhat = ref_edge_point(i, line.points[k]);
        const MapEval g = map_eval(d.mesh, t, xhat);
        const Vec2 normal = rotate_cw(g.jac * ref_edge_tangent(i));  // scaled by the arclength factor
        const PhysicalValues pv = physical_values(set, g, xhat);
        const Vec2 u0 = spec.boundary_displacement(g.x);
        const Eigen::RowVectorXd flux = normal.transpose() * pv.val;
        for (int a = 0; a < 2; ++a) lb.g.segment(a * n, n) += (line.weights[k] * u0(a)) * flux.transpose();
      }
    }
  }
  return lb;
}

using Triplets = std::vector<Eigen::Triplet<double>>;

SparseMatrix from_triplets(int rows, int cols, const Triplets& tr) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(tr.begin(), tr.end());
  m.makeCompressed();
  return m;
}

}  // namespace

MixedSystem assemble(const Mesh& mesh, const OrderMap& orders, const ProblemSpec& spec) {
  return assemble(Discretization::build(mesh, orders), spec);
}

MixedSystem assemble(std::shared_ptr<const Discretization> disc, const ProblemSpec& spec) {
  spec.material.validate();
  const Discretization& d = *disc;
  const DofMap& dofs = d.dofs;
  const int nt = static_cast<int>(d.mesh.triangles.size());

  std::vector<LocalBlocks> blocks(nt);
  parallel_for(nt, [&](int t) { blocks[t] = local_blocks(d, t, spec); });

  Triplets ta, tg, tms, tbd, tbs, tmd, tmr, tk;
  VectorXd rhs = VectorXd::Zero(dofs.total);
  for (int t = 0; t < nt; ++t) {
    const LocalBlocks& lb = blocks[t];
    const int n = d.stress_sets[t]->size();
    const int nv = dofs.scalar_count[t];
    std::vector<int> gi(2 * n);
    std::vector<double> sg(2 * n);
    for (int a = 0; a < 2; ++a) {
      const std::vector<int> idx = dofs.stress_gather(t, a);
      for (int k = 0; k < n; ++k) {
        gi[a * n + k] = idx[k];
        sg[a * n + k] = dofs.stress_sign[t][k];
      }
    }
    for (int i = 0; i < 2 * n; ++i) {
      rhs(gi[i]) += sg[i] * lb.g(i);
      for (int j = 0; j < 2 * n; ++j) {
        const double s = sg[i] * sg[j];
        ta.emplace_back(gi[i], gi[j], s * lb.a(i, j));
        tg.emplace_back(gi[i], gi[j], s * lb.gram(i, j));
        tms.emplace_back(gi[i], gi[j], s * lb.mass_stress(i, j));
        tk.emplace_back(gi[i], gi[j], s * lb.a(i, j));
      }
      for (int j = 0; j < 2 * nv; ++j) {
        const double v = sg[i] * lb.b_div(i, j);
        const int col = dofs.disp_first[t] + j;
        tbd.emplace_back(gi[i], col - dofs.n_stress, v);
        tk.emplace_back(gi[i], col, v);
        tk.emplace_back(col, gi[i], v);
      }
      for (int j = 0; j < nv; ++j) {
        const double v = sg[i] * lb.b_skew(i, j);
        const int col = dofs.rot_first[t] + j;
        tbs.emplace_back(gi[i], col - dofs.n_stress - dofs.n_disp, v);
        tk.emplace_back(gi[i], col, -v);
        tk.emplace_back(col, gi[i], -v);
      }
    }
    for (int i = 0; i < nv; ++i)
      for (int j = 0; j < nv; ++j) {
        const double v = lb.mass_scalar(i, j);
        for (int comp = 0; comp < 2; ++comp)
          tmd.emplace_back(dofs.disp_first[t] - dofs.n_stress + comp * nv + i,
                           dofs.disp_first[t] - dofs.n_stress + comp * nv + j, v);
        tmr.emplace_back(dofs.rot_first[t] - dofs.n_stress - dofs.n_disp + i,
                         dofs.rot_first[t] - dofs.n_stress - dofs.n_disp + j, v);
      }
    rhs.segment(dofs.disp_first[t], 2 * nv) += lb.f;
  }

  MixedSystem sys;
  sys.disc = std::move(disc);
  sys.material = spec.material;
  sys.a = from_triplets(dofs.n_stress, dofs.n_stress, ta);
  sys.hdiv_gram = from_triplets(dofs.n_stress, dofs.n_stress, tg);
  sys.mass_stress = from_triplets(dofs.n_stress, dofs.n_stress, tms);
  sys.b_div = from_triplets(dofs.n_stress, dofs.n_disp, tbd);
  sys.b_skew = from_triplets(dofs.n_stress, dofs.n_rot, tbs);
  sys.mass_disp = from_triplets(dofs.n_disp, dofs.n_disp, tmd);
  sys.mass_rot = from_triplets(dofs.n_rot, dofs.n_rot, tmr);
  sys.matrix = from_triplets(dofs.total, dofs.total, tk);
  sys.rhs = std::move(rhs);
  return sys;
}

SolutionTriple solve(const MixedSystem& system) {
  const DofMap& dofs = system.disc->dofs;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(system.matrix);
  if (lu.info() != Eigen::Success)
    throw NumericalError("saddle factorization failed (" + std::to_string(dofs.total) + " unknowns): " +
                         lu.lastErrorMessage());
  VectorXd x = lu.solve(system.rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) throw NumericalError("saddle solve failed");

  SolutionTriple sol;
  sol.disc = system.disc;
  sol.sigma = x.head(dofs.n_stress);
  sol.u = x.segment(dofs.n_stress, dofs.n_disp);
  sol.p = x.tail(dofs.n_rot);

  const double bnorm = system.rhs.norm();
  const double rnorm = (system.matrix * x - system.rhs).norm();
  sol.report.residual = bnorm > 0.0 ? rnorm / bnorm : rnorm;
  sol.report.sigma_norm = std::sqrt(std::max(0.0, sol.sigma.dot(system.mass_stress * sol.sigma)));
  const VectorXd skew = system.b_skew.transpose() * sol.sigma;
  double worst = 0.0;
  for (int k = 0; k < skew.size(); ++k)
    worst = std::max(worst, std::abs(skew(k)) / std::sqrt(system.mass_rot.coeff(k, k)));
  sol.report.weak_symmetry = sol.report.sigma_norm > 0.0 ? worst / sol.report.sigma_norm : worst;
  return sol;
}

FieldValues evaluate(const SolutionTriple& sol, const ElementPoint& point) {
  const Discretization& d = *sol.disc;
  const int t = point.element;
  const BasisSet& set = *d.stress_sets[t];
  const int n = set.size();
  const PhysicalValues pv = physical_values(set, point.map, point.xhat);
  FieldValues out;
  for (int a = 0; a < 2; ++a) {
    const std::vector<int> idx = d.dofs.stress_gather(t, a);
    VectorXd c(n);
    for (int k = 0; k < n; ++k) c(k) = d.dofs.stress_sign[t][k] * sol.sigma(idx[k]);
    out.sigma.row(a) = (pv.val * c).transpose();
    out.div_sigma(a) = pv.div.dot(c);
  }
  const int nv = d.dofs.scalar_count[t];
  VectorXd psi(nv);
  ortho_basis(d.orders.tri[t]).eval(point.xhat, psi);
  psi /= point.map.det;
  const int du = d.dofs.disp_first[t] - d.dofs.n_stress;
  const int dp = d.dofs.rot_first[t] - d.dofs.n_stress - d.dofs.n_disp;
  for (int comp = 0; comp < 2; ++comp) out.u(comp) = psi.dot(sol.u.segment(du + comp * nv, nv));
  out.p = psi.dot(sol.p.segment(dp, nv));
  return out;
}

ElementPoint locate_point(const Mesh& mesh, const Vec2& x) {
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const auto& v = mesh.triangles[t].v;
    Eigen::AlignedBox2d box;
    for (int i = 0; i < 3; ++i) box.extend(mesh.vertices[v[i]]);
    const double pad = 0.25 * box.diagonal().norm();
    box.min().array() -= pad;
    box.max().array() += pad;
    if (!box.contains(x)) continue;
    try {
      const Vec2 xhat = inverse_map(mesh, t, x);
      const double tol = 1e-10;
      if (xhat.x() >= -tol && xhat.y() >= -tol && xhat.x() + xhat.y() <= 1.0 + tol)
        return ElementPoint{t, xhat, map_eval(mesh, t, xhat)};
    } catch (const NumericalError&) {
    }
  }
  throw ValidationError("point (" + std::to_string(x.x()) + ", " + std::to_string(x.y()) + ") is outside the mesh");
}

std::vector<FieldValues> eval_solution(const SolutionTriple& sol, std::span<const Vec2> points) {
  std::vector<FieldValues> out;
  out.reserve(points.size());
  for (const Vec2& x : points) out.push_back(evaluate(sol, locate_point(sol.disc->mesh, x)));
  return out;
}

InfSupResult estimate_inf_sup(const Mesh& mesh, const OrderMap& orders) {
  return estimate_inf_sup(assemble(mesh, orders, ProblemSpec{}));
}

InfSupResult estimate_inf_sup(const MixedSystem& system) {
  // beta^2 is the smallest eigenvalue of S x = mu M x with S = B^T G^{-1} B.
  // Lanczos on T = S^{-1} M (self-adjoint in the M product) finds 1/beta^2 as
  // its largest eigenvalue; S^{-1} comes from one saddle factorization.
  const int ns = static_cast<int>(system.hdiv_gram.rows());
  const int nd = static_cast<int>(system.b_div.cols());
  const int nq = nd + static_cast<int>(system.b_skew.cols());
  Triplets tr;
  for (int k = 0; k < system.hdiv_gram.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(system.hdiv_gram, k); it; ++it) tr.emplace_back(it.row(), it.col(), it.value());
  auto add_b = [&](const SparseMatrix& b, int off) {
    for (int k = 0; k < b.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(b, k); it; ++it) {
        tr.emplace_back(it.row(), ns + off + it.col(), it.value());
        tr.emplace_back(ns + off + it.col(), it.row(), it.value());
      }
  };
  add_b(system.b_div, 0);
  add_b(system.b_skew, nd);
  const SparseMatrix saddle = from_triplets(ns + nq, ns + nq, tr);
  Triplets tm;
  for (const auto* m : {&system.mass_disp, &system.mass_rot}) {
    const int off = m == &system.mass_disp ? 0 : nd;
    for (int k = 0; k < m->outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(*m, k); it; ++it) tm.emplace_back(off + it.row(), off + it.col(), it.value());
  }
  const SparseMatrix mass = from_triplets(nq, nq, tm);

  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(saddle);
  if (lu.info() != Eigen::Success) throw NumericalError("inf-sup saddle factorization failed");
  auto apply_t = [&](const VectorXd& y) {
    VectorXd rhs = VectorXd::Zero(ns + nq);
    rhs.tail(nq) = mass * y;
    return VectorXd(-lu.solve(rhs).tail(nq));
  };

  const int max_steps = std::min(nq, 400);
  std::vector<VectorXd> basis, mbasis;
  std::vector<double> alpha, beta;
  std::mt19937 gen(7);
  std::normal_distribution<double> nd_dist;
  VectorXd v(nq);
  for (int i = 0; i < nq; ++i) v(i) = nd_dist(gen);
  InfSupResult res;
  double theta = 0.0;
  for (int j = 0; j < max_steps; ++j) {
    VectorXd mv = mass * v;
    const double nrm = std::sqrt(v.dot(mv));
    if (!(nrm > 0.0)) break;
    v /= nrm;
    mv /= nrm;
    basis.push_back(v);
    mbasis.push_back(mv);
    VectorXd w = apply_t(v);
    alpha.push_back(w.dot(mv));
    // Full reorthogonalization in the M product, twice for safety.
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < basis.size(); ++k) w -= w.dot(mbasis[k]) * basis[k];
    const double b = std::sqrt(std::max(0.0, w.dot(mass * w)));
    const int m = static_cast<int>(alpha.size());
    MatrixXd tri = MatrixXd::Zero(m, m);
    for (int k = 0; k < m; ++k) {
      tri(k, k) = alpha[k];
      if (k + 1 < m) tri(k, k + 1) = tri(k + 1, k) = beta[k];
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(tri);
    theta = es.eigenvalues()(m - 1);
    res.iterations = m;
    res.ritz_residual = std::abs(b * es.eigenvectors()(m - 1, m - 1)) / theta;
    if (res.ritz_residual < 1e-10 || b < 1e-14 * theta || m == nq) break;
    beta.push_back(b);
    v = w;
  }
  if (!(theta > 0.0)) throw NumericalError("inf-sup eigen iteration failed");
  res.beta = 1.0 / std::sqrt(theta);
  return res;
}

void write_matrix(std::ostream& os, const SparseMatrix& m) {
  os.precision(17);
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

void write_solution(std::ostream& os, const SolutionTriple& sol) {
  os.precision(17);
  os << "field,id,value\n";
  for (int i = 0; i < sol.sigma.size(); ++i) os << "stress," << i << ',' << sol.sigma(i) << '\n';
  for (int i = 0; i < sol.u.size(); ++i) os << "displacement," << i << ',' << sol.u(i) << '\n';
  for (int i = 0; i < sol.p.size(); ++i) os << "rotation," << i << ',' << sol.p(i) << '\n';
}

}  // namespace afw2d
