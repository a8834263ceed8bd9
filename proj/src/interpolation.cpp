#include "afw2d/interpolation.hpp"

#include "afw2d/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

namespace afw2d {

namespace {

const Mesh& reference_mesh() {
  static const Mesh mesh = [] {
    Mesh m;
    m.vertices = {{0, 0}, {1, 0}, {0, 1}};
    Patch p;
    p.corners = {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
    m.patches = {p};
    m.edges = {{{1, 2}, {}, 1}, {{0, 2}, {}, 1}, {{0, 1}, {}, 1}};
    m.triangles = {{{0, 1, 2}, {0, 1, 2}, 0, {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)}}};
    return m;
  }();
  return mesh;
}

OrderMap reference_orders(int order) {
  return make_order_map(reference_mesh(), order, std::max(order, kDefaultRMax));
}

double min_singular_value(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues().size() ? svd.singularValues().tail(1)(0) : 0.0;
}

bool admissible(const MatrixXd& m, double sv) { return sv > 1e-8 * m.cwiseAbs().maxCoeff(); }

}  // namespace

int element_quad_degree(const Mesh& mesh, const OrderMap& orders, int t) {
  int deg = 2 * (orders.tri[t] + 3) + 4;
  if (!mesh.is_affine(t)) deg += kCurvedQuadBoost;
  return std::min(deg, kMaxQuadDegree);
}

std::pair<double, double> reference_singular_values(int order, double t) {
  OrderMap om = reference_orders(order);
  LocalInterpolant pm(reference_mesh(), om, 0, OperatorKind::pi1_minus, Geometry::exact, t);
  LocalInterpolant w(reference_mesh(), om, 0, OperatorKind::w, Geometry::exact, t);
  return {min_singular_value(pm.system()), min_singular_value(w.system())};
}

double pi_minus_determinant(int order, double t) {
  OrderMap om = reference_orders(order);
  LocalInterpolant pm(reference_mesh(), om, 0, OperatorKind::pi1_minus, Geometry::exact, t);
  return pm.system().determinant();
}

TSelection select_t(int order) {
  if (order < 0 || order > 20) throw ValidationError("order out of range for t selection");
  static std::mutex mtx;
  static std::map<int, TSelection> cache;
  {
    std::lock_guard lock(mtx);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;
  }
  OrderMap om = reference_orders(order);
  TSelection best;
  best.order = order;
  double best_score = -1.0;
  // With k = 0 the h-family is empty and every t gives the same systems.
  const int last = order * (order - 1) / 2 == 0 ? 0 : 16;
  for (int j = 0; j <= last; ++j) {
    double t = j / 16.0;
    LocalInterpolant pm(reference_mesh(), om, 0, OperatorKind::pi1_minus, Geometry::exact, t);
    LocalInterpolant w(reference_mesh(), om, 0, OperatorKind::w, Geometry::exact, t);
    double a = min_singular_value(pm.system()), c = min_singular_value(w.system());
    if (!admissible(pm.system(), a) || !admissible(w.system(), c)) continue;
    if (std::min(a, c) > best_score) {
      best_score = std::min(a, c);
      best = {t, a, c, order};
    }
  }
  if (best_score < 0)
    throw NumericalError("no admissible h-family parameter for order " + std::to_string(order));
  std::lock_guard lock(mtx);
  return cache.emplace(order, best).first->second;
}

LocalInterpolant::LocalInterpolant(const Mesh& mesh, const OrderMap& orders, int t, OperatorKind kind,
                                   Geometry geometry, double t_param)
    : mesh_(&mesh), t_(t), kind_(kind), geometry_(geometry) {
  LocalOrders lo = local_orders(mesh, orders, t);
  order_ = lo.interior;
  edge_orders_ = lo.edge;
  quad_degree_ = element_quad_degree(mesh, orders, t);
  if (geometry_ == Geometry::affine_part) affine_ = affine_part(mesh, t);

  switch (kind) {
    case OperatorKind::pi1:
      target_ = vector_space(local_spec(mesh, orders, t, FormKind::L1, 1));
      interior_tests_ = bubble_curl_basis(order_ + 2);
      break;
    case OperatorKind::pi1_minus:
    case OperatorKind::w: {
      double tp = t_param >= 0 ? t_param : select_t(order_).t;
      interior_tests_ = h_family(order_).at(tp);
      target_ = kind == OperatorKind::w ? vector_space(local_spec(mesh, orders, t, FormKind::L0, 2))
                                        : vector_space(local_spec(mesh, orders, t, FormKind::L1minus, 1));
      break;
    }
  }
  const int ncols = kind == OperatorKind::w ? 2 * target_->size() : target_->size();
  evaluate([this](const ElementPoint& p, MatrixXd& val, Eigen::RowVectorXd& div) { target_values(p, val, div); },
           ncols, true, system_);
  if (system_.rows() != system_.cols())
    throw NumericalError("moment system is " + std::to_string(system_.rows()) + " x " +
                         std::to_string(system_.cols()) + " on triangle " + std::to_string(t));
  qr_.setThreshold(1e-12);
  qr_.compute(system_);
  const auto r = qr_.matrixR().diagonal().cwiseAbs();
  cond_ = r.size() ? r.maxCoeff() / r.minCoeff() : 1.0;
  if (qr_.rank() < system_.cols() || !std::isfinite(cond_)) {
    std::ostringstream msg;
    msg << "singular local system on triangle " << t << " (distortion "
        << regularity(mesh).elements[t].distortion << ")";
    throw NumericalError(msg.str());
  }
}

MapEval LocalInterpolant::map_at(const Vec2& xhat) const {
  if (geometry_ == Geometry::exact) return map_eval(*mesh_, t_, xhat);
  return {affine_.B * xhat + affine_.b, affine_.B, affine_.B.determinant()};
}

void LocalInterpolant::target_values(const ElementPoint& p, MatrixXd& val, Eigen::RowVectorXd& div) const {
  if (kind_ != OperatorKind::w) {
    PhysicalValues pv = physical_values(*target_, p.map, p.xhat);
    val = std::move(pv.val);
    div = std::move(pv.div);
    return;
  }
  PointTable tab = tabulate(*target_, p.xhat);
  const int m = target_->size();
  const Mat2 jinv_t = p.map.jac.inverse().transpose();
  val = MatrixXd::Zero(2, 2 * m);
  val.row(0).head(m) = tab.val.row(0);
  val.row(1).tail(m) = tab.val.row(0);
  div.resize(2 * m);
  // Physical gradient J^{-T} grad_ref, first entry for x, second for y.
  div.head(m) = jinv_t(0, 0) * tab.dx.row(0) + jinv_t(0, 1) * tab.dy.row(0);
  div.tail(m) = jinv_t(1, 0) * tab.dx.row(0) + jinv_t(1, 1) * tab.dy.row(0);
}

void LocalInterpolant::evaluate(const std::function<void(const ElementPoint&, MatrixXd&, Eigen::RowVectorXd&)>& f,
                                int ncols, bool with_vertices, MatrixXd& out) const {
  const int ndiv = dim_p(order_) - 1;
  const int nint = interior_tests_.size();
  const bool tangents = kind_ == OperatorKind::w;
  const int extra = kind_ == OperatorKind::pi1 ? 1 : 0;
  int nrows = ndiv + nint;
  for (int i = 0; i < 3; ++i) nrows += (edge_orders_[i] + 1 + extra) * (tangents ? 2 : 1);
  if (kind_ == OperatorKind::w) nrows += 6;
  out = MatrixXd::Zero(nrows, ncols);

  ElementPoint p;
  p.element = t_;
  MatrixXd val;
  Eigen::RowVectorXd div;
  VectorXd psi(dim_p(order_));

  const QuadRule& quad = element_quadrature(*mesh_, t_, quad_degree_);
  for (std::size_t q = 0; q < quad.size(); ++q) {
    p.xhat = quad.points[q];
    p.map = map_at(p.xhat);
    f(p, val, div);
    const double wd = quad.weights[q] * p.map.det;
    if (ndiv > 0) {
      ortho_basis(order_).eval(p.xhat, psi);
      out.topRows(ndiv).noalias() += wd * psi.tail(ndiv) * div;
    }
    if (nint > 0) {
      MatrixXd tests = p.map.jac.inverse().transpose() * interior_tests_.values(p.xhat);
      out.middleRows(ndiv, nint).noalias() += wd * tests.transpose() * val;
    }
  }

  const LineRule& line = line_quadrature(quad_degree_);
  int row = ndiv + nint;
  for (int i = 0; i < 3; ++i) {
    const int nk = edge_orders_[i] + 1 + extra;
    for (std::size_t q = 0; q < line.points.size(); ++q) {
      const double s = line.points[q];
      p.xhat = ref_edge_point(i, s);
      p.map = map_at(p.xhat);
      f(p, val, div);
      const Vec2 tvec = p.map.jac * ref_edge_tangent(i);
      const Eigen::RowVectorXd nflux = rotate_cw(tvec).transpose() * val;
      Eigen::RowVectorXd tflux;
      if (tangents) tflux = tvec.transpose() * val;
      for (int k = 0; k < nk; ++k) {
        const double w = line.weights[q] * legendre01(k, s);
        out.row(row + k) += w * nflux;
        if (tangents) out.row(row + nk + k) += w * tflux;
      }
    }
    row += nk * (tangents ? 2 : 1);
  }
  if (kind_ == OperatorKind::w && with_vertices) {
    for (int v = 0; v < 3; ++v) {
      p.xhat = ref_vertex(v);
      p.map = map_at(p.xhat);
      f(p, val, div);
      out.middleRows(row + 2 * v, 2) = val;
    }
  }
}

VectorXd LocalInterpolant::moments(const VectorField& field) const {
  MatrixXd out;
  evaluate(
      [&field](const ElementPoint& p, MatrixXd& val, Eigen::RowVectorXd& div) {
        VectorSample s = field(p);
        val = s.value;
        div.resize(1);
        div(0) = s.div;
      },
      1, false, out);
  return out.col(0);
}

VectorXd LocalInterpolant::apply(const VectorField& field) const { return qr_.solve(moments(field)); }

VectorXd proj_pi2(const Mesh& mesh, const OrderMap& orders, int t, const ScalarField& u) {
  const int r = orders.tri[t];
  VectorXd out = VectorXd::Zero(dim_p(r)), psi(dim_p(r));
  const QuadRule& quad = element_quadrature(mesh, t, element_quad_degree(mesh, orders, t));
  ElementPoint p;
  p.element = t;
  for (std::size_t q = 0; q < quad.size(); ++q) {
    p.xhat = quad.points[q];
    p.map = map_eval(mesh, t, p.xhat);
    ortho_basis(r).eval(p.xhat, psi);
    out += quad.weights[q] * p.map.det * u(p) * psi;
  }
  return out;
}

VectorXd proj_pi2_div(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w) {
  return proj_pi2(mesh, orders, t, [&w](const ElementPoint& p) { return w(p).div; });
}

VectorXd divergence_coefficients(const BasisSet& set, const VectorXd& coef, int order) {
  VectorXd out = VectorXd::Zero(dim_p(order)), psi(dim_p(order));
  const QuadRule& quad = quadrature(std::min(set.degree + order, kMaxQuadDegree));
  for (std::size_t q = 0; q < quad.size(); ++q) {
    ortho_basis(order).eval(quad.points[q], psi);
    out += quad.weights[q] * set.divergence(quad.points[q]).dot(coef) * psi;
  }
  return out;
}

VectorXd proj_pi1(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w) {
  return LocalInterpolant(mesh, orders, t, OperatorKind::pi1).apply(w);
}

VectorXd proj_pi1_minus(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w) {
  return LocalInterpolant(mesh, orders, t, OperatorKind::pi1_minus).apply(w);
}

VectorXd op_w(const Mesh& mesh, const OrderMap& orders, int t, const VectorField& w) {
  return LocalInterpolant(mesh, orders, t, OperatorKind::w).apply(w);
}

std::vector<Vec2> clement(const Mesh& mesh, const VectorField& w) {
  const int nv = static_cast<int>(mesh.vertices.size());
  std::vector<std::vector<int>> patch(nv);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int v : mesh.triangles[t].v) patch[v].push_back(static_cast<int>(t));
  std::vector<Vec2> out(nv, Vec2::Zero());
  parallel_for(nv, [&](int v) {
    if (patch[v].empty()) return;
    const Vec2 xv = mesh.vertices[v];
    double h = 0.0;
    for (int t : patch[v])
      for (int u : mesh.triangles[t].v) h = std::max(h, (mesh.vertices[u] - xv).norm());
    Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
    Eigen::Matrix<double, 3, 2> rhs = Eigen::Matrix<double, 3, 2>::Zero();
    ElementPoint p;
    for (int t : patch[v]) {
      p.element = t;
      const QuadRule& quad = element_quadrature(mesh, t, 8);
      for (std::size_t q = 0; q < quad.size(); ++q) {
        p.xhat = quad.points[q];
        p.map = map_eval(mesh, t, p.xhat);
        const Eigen::Vector3d phi(1.0, (p.map.x.x() - xv.x()) / h, (p.map.x.y() - xv.y()) / h);
        const double wd = quad.weights[q] * p.map.det;
        gram += wd * phi * phi.transpose();
        rhs += wd * phi * w(p).value.transpose();
      }
    }
    out[v] = (gram.ldlt().solve(rhs)).row(0).transpose();
  });
  return out;
}

VectorField vertex_field(const Mesh& mesh, std::vector<Vec2> values) {
  return [&mesh, values = std::move(values)](const ElementPoint& p) {
    const auto& tri = mesh.triangles[p.element];
    const Vec2 c0 = values[tri.v[0]], c1 = values[tri.v[1]], c2 = values[tri.v[2]];
    const double x = p.xhat.x(), y = p.xhat.y();
    Vec2 v = (1 - x - y) * c0 + x * c1 + y * c2;
    Mat2 ref;
    ref.col(0) = c1 - c0;
    ref.col(1) = c2 - c0;
    return VectorSample::from(v, ref * p.map.jac.inverse());
  };
}

VectorField WtildeResult::field(const Mesh& mesh) const {
  VectorField high = composition_field(sets, coef);
  VectorField low = vertex_field(mesh, vertex_values);
  return [high, low](const ElementPoint& p) {
    VectorSample a = high(p), b = low(p);
    return VectorSample{a.value + b.value, a.jac + b.jac, a.div + b.div};
  };
}

WtildeResult op_wtilde(const Mesh& mesh, const OrderMap& orders, const VectorField& w) {
  WtildeResult out;
  out.vertex_values = clement(mesh, w);
  VectorField low = vertex_field(mesh, out.vertex_values);
  VectorField rest = [&w, low](const ElementPoint& p) {
    VectorSample a = w(p), b = low(p);
    return VectorSample{a.value - b.value, a.jac - b.jac, a.div - b.div};
  };
  const int nt = static_cast<int>(mesh.triangles.size());
  out.sets.resize(nt);
  out.coef.resize(nt);
  parallel_for(nt, [&](int t) {
    LocalInterpolant op(mesh, orders, t, OperatorKind::w);
    VectorXd c = op.apply(rest);
    const int m = op.target().size();
    out.sets[t] = vector_space(local_spec(mesh, orders, t, FormKind::L0, 2));
    out.coef[t].resize(m, 2);
    out.coef[t].col(0) = c.head(m);
    out.coef[t].col(1) = c.tail(m);
  });
  return out;
}

VectorField random_polynomial_field(int degree, unsigned seed, double scale) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<std::array<double, 2>> a(dim_p(degree));
  for (auto& c : a) c = {nd(gen), nd(gen)};
  return physical_field([a, degree, scale](const Vec2& x) {
    const double u = x.x() / scale, v = x.y() / scale;
    std::vector<double> pu(degree + 1, 1.0), pv(degree + 1, 1.0);
    for (int i = 1; i <= degree; ++i) {
      pu[i] = pu[i - 1] * u;
      pv[i] = pv[i - 1] * v;
    }
    Vec2 val(0, 0);
    Mat2 jac = Mat2::Zero();
    int idx = 0;
    for (int n = 0; n <= degree; ++n)
      for (int j = 0; j <= n; ++j, ++idx) {
        const int i = n - j;
        const double m = pu[i] * pv[j];
        const double mx = i > 0 ? i * pu[i - 1] * pv[j] / scale : 0.0;
        const double my = j > 0 ? j * pu[i] * pv[j - 1] / scale : 0.0;
        for (int c = 0; c < 2; ++c) {
          val(c) += a[idx][c] * m;
          jac(c, 0) += a[idx][c] * mx;
          jac(c, 1) += a[idx][c] * my;
        }
      }
    return VectorSample::from(val, jac);
  });
}

double projection_gap(const Mesh& mesh, const OrderMap& orders, int probe_degree) {
  if (probe_degree < 0) throw ValidationError("probe degree must be non-negative");
  const int nt = static_cast<int>(mesh.num_triangles());
  std::vector<double> gap(nt, 0.0);
  parallel_for(nt, [&](int t) {
    if (mesh.is_affine(t)) return;
    const int r = orders.tri[t];
    const int n = dim_p(r), m = dim_p(probe_degree);
    const auto& q = element_quadrature(mesh, t, std::min(kMaxQuadDegree, element_quad_degree(mesh, orders, t) + probe_degree));
    const AffinePart aff = affine_part(mesh, t);
    const double scale = std::sqrt(std::abs(aff.B.determinant()));
    // Probe monomials in coordinates centred on the element and scaled by its size.
    auto probe = [&](const Vec2& x, VectorXd& out) {
      const Vec2 y = (x - aff.b - aff.B * Vec2(1.0 / 3.0, 1.0 / 3.0)) / scale;
      int k = 0;
      for (int d = 0; d <= probe_degree; ++d)
        for (int j = 0; j <= d; ++j) out(k++) = std::pow(y.x(), d - j) * std::pow(y.y(), j);
    };
    MatrixXd gram = MatrixXd::Zero(n, n), mixed = MatrixXd::Zero(n, m), probe_mass = MatrixXd::Zero(m, m);
    VectorXd psi(n), phi(m);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const MapEval g = map_eval(mesh, t, q.points[i]);
      ortho_basis(r).eval(q.points[i], psi);
      probe(g.x, phi);
      gram += q.weights[i] * psi * psi.transpose() / g.det;
      mixed += q.weights[i] * psi * phi.transpose();
      probe_mass += q.weights[i] * g.det * phi * phi.transpose();
    }
    MatrixXd diff = gram.ldlt().solve(mixed);
    for (int c = 0; c < m; ++c) {
      const int k = c;
      diff.col(c) -= proj_pi2(mesh, orders, t, [&](const ElementPoint& p) {
        VectorXd v(m);
        probe(p.map.x, v);
        return v(k);
      });
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> eig(diff.transpose() * gram * diff, probe_mass,
                                                           Eigen::EigenvaluesOnly);
    gap[t] = std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
  });
  return *std::max_element(gap.begin(), gap.end());
}

namespace {

// |x - ref|_inf relative to |ref|_inf; zero when both vanish.
double relative_gap(const VectorXd& x, const VectorXd& ref) {
  const double diff = (x - ref).cwiseAbs().maxCoeff();
  const double scale = std::max(ref.cwiseAbs().maxCoeff(), x.cwiseAbs().maxCoeff());
  return scale > 0.0 ? diff / scale : 0.0;
}

}  // namespace

CommutingReport check_commuting(const Mesh& mesh, const OrderMap& orders, int n_samples, unsigned seed) {
  CommutingReport rep;
  const int nt = static_cast<int>(mesh.triangles.size());
  std::vector<VectorField> fields;
  for (int s = 0; s < n_samples; ++s) fields.push_back(random_polynomial_field(orders.max_order() + 3, seed + s));

  std::vector<std::unique_ptr<LocalInterpolant>> pm(nt);
  std::vector<double> a(nt, 0.0), b(nt, 0.0), cond(nt, 0.0);
  try {
    parallel_for(nt, [&](int t) {
      pm[t] = std::make_unique<LocalInterpolant>(mesh, orders, t, OperatorKind::pi1_minus);
      LocalInterpolant p1(mesh, orders, t, OperatorKind::pi1);
      cond[t] = std::max(pm[t]->condition(), p1.condition());
      const int r = orders.tri[t];
      for (const auto& f : fields) {
        VectorXd ref = proj_pi2_div(mesh, orders, t, f);
        a[t] = std::max(a[t], relative_gap(divergence_coefficients(pm[t]->target(), pm[t]->apply(f), r), ref));
        b[t] = std::max(b[t], relative_gap(divergence_coefficients(p1.target(), p1.apply(f), r), ref));
      }
    });
  } catch (const std::exception& e) {
    rep.note = e.what();
    rep.div_pi_minus = rep.div_pi1 = std::numeric_limits<double>::infinity();
    rep.wtilde_defined = false;
    return rep;
  }
  for (int t = 0; t < nt; ++t) {
    rep.div_pi_minus = std::max(rep.div_pi_minus, a[t]);
    rep.div_pi1 = std::max(rep.div_pi1, b[t]);
    rep.max_condition = std::max(rep.max_condition, cond[t]);
  }
  try {
    for (const auto& f : fields) {
      WtildeResult wt = op_wtilde(mesh, orders, f);
      VectorField g = wt.field(mesh);
      std::vector<double> c(nt, 0.0);
      parallel_for(nt, [&](int t) { c[t] = relative_gap(pm[t]->apply(g), pm[t]->apply(f)); });
      for (double v : c) rep.wtilde = std::max(rep.wtilde, v);
    }
  } catch (const NumericalError& e) {
    rep.wtilde_defined = false;
    rep.wtilde = std::numeric_limits<double>::infinity();
    rep.note = e.what();
  }
  return rep;
}

FieldNorms field_norms(const Mesh& mesh, const VectorField& w, int quad_degree, int only_element) {
  double l2 = 0.0, h1 = 0.0;
  ElementPoint p;
  const int nt = static_cast<int>(mesh.triangles.size());
  for (int t = 0; t < nt; ++t) {
    if (only_element >= 0 && t != only_element) continue;
    p.element = t;
    const QuadRule& quad = element_quadrature(mesh, t, std::min(quad_degree, kMaxQuadDegree));
    for (std::size_t q = 0; q < quad.size(); ++q) {
      p.xhat = quad.points[q];
      p.map = map_eval(mesh, t, p.xhat);
      VectorSample s = w(p);
      const double wd = quad.weights[q] * p.map.det;
      l2 += wd * s.value.squaredNorm();
      h1 += wd * s.jac.squaredNorm();
    }
  }
  return {std::sqrt(l2), std::sqrt(h1)};
}

}  // namespace afw2d
