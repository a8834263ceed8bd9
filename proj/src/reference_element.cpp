#include "afw2d/reference_element.hpp"

#include <cmath>
#include <map>
#include <tuple>
#include <mutex>
#include <numbers>

namespace afw2d {

namespace {

// Legendre P_k(z) and derivative on [-1,1] for k = 0..n.
void legendre_table(int n, double z, double* p, double* dp) {
  p[0] = 1.0;
  dp[0] = 0.0;
  if (n == 0) return;
  p[1] = z;
  dp[1] = 1.0;
  for (int k = 1; k < n; ++k) {
    p[k + 1] = ((2 * k + 1) * z * p[k] - k * p[k - 1]) / (k + 1);
    dp[k + 1] = dp[k - 1] + (2 * k + 1) * p[k];
  }
}

MatrixXd kernel(const MatrixXd& m, int ncols) {
  if (m.rows() == 0) return MatrixXd::Identity(ncols, ncols);
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  double smax = s.size() ? s(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > 1e-10 * std::max(1.0, smax)) ++rank;
  return svd.matrixV().rightCols(ncols - rank);
}

int rank_of(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  int rank = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > 1e-10 * std::max(1.0, s(0))) ++rank;
  return rank;
}

// Rows: functional k applied to ambient vector function j (component-blocked).
MatrixXd edge_normal_rows(int n, int edge, int kmin, int kmax) {
  const int nb = dim_p(n);
  const int nk = std::max(0, kmax - kmin + 1);
  MatrixXd rows = MatrixXd::Zero(nk, 2 * nb);
  if (nk == 0) return rows;
  const auto& line = line_quadrature(n + kmax);
  const auto& basis = ortho_basis(n);
  Vec2 nrm = rotate_cw(ref_edge_tangent(edge));
  VectorXd val(nb);
  for (std::size_t q = 0; q < line.points.size(); ++q) {
    double s = line.points[q];
    basis.eval(ref_edge_point(edge, s), val);
    for (int k = kmin; k <= kmax; ++k) {
      double w = line.weights[q] * legendre01(k, s);
      rows.row(k - kmin).head(nb) += w * nrm.x() * val.transpose();
      rows.row(k - kmin).tail(nb) += w * nrm.y() * val.transpose();
    }
  }
  return rows;
}

MatrixXd edge_trace_rows(int n, int edge, int kmin, int kmax) {
  const int nb = dim_p(n);
  const int nk = std::max(0, kmax - kmin + 1);
  MatrixXd rows = MatrixXd::Zero(nk, nb);
  if (nk == 0) return rows;
  const auto& line = line_quadrature(n + kmax);
  const auto& basis = ortho_basis(n);
  VectorXd val(nb);
  for (std::size_t q = 0; q < line.points.size(); ++q) {
    double s = line.points[q];
    basis.eval(ref_edge_point(edge, s), val);
    for (int k = kmin; k <= kmax; ++k)
      rows.row(k - kmin) += line.weights[q] * legendre01(k, s) * val.transpose();
  }
  return rows;
}

// Splits the space spanned by `space` (orthonormal columns) into functions dual
// to the independent functionals and an orthonormal kernel part.
BasisSet dual_split(FormKind kind, int comps, int degree, const MatrixXd& space,
                    const MatrixXd& functionals, const std::vector<TraceMeta>& fmeta) {
  MatrixXd fv = functionals * space;
  std::vector<int> chosen;
  MatrixXd sel(0, space.cols());
  for (int i = 0; i < fv.rows(); ++i) {
    MatrixXd trial(sel.rows() + 1, sel.cols());
    trial << sel, fv.row(i);
    if (rank_of(trial) > static_cast<int>(chosen.size())) {
      sel = std::move(trial);
      chosen.push_back(i);
    }
  }
  const int m = static_cast<int>(space.cols());
  MatrixXd dual;
  if (sel.rows() > 0)
    dual = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(sel).pseudoInverse();
  else
    dual.resize(m, 0);
  MatrixXd ker = kernel(sel, m);

  BasisSet out;
  out.kind = kind;
  out.components = comps;
  out.degree = degree;
  out.coef.resize(space.rows(), dual.cols() + ker.cols());
  out.coef << space * dual, space * ker;
  for (int i : chosen) out.meta.push_back(fmeta[i]);
  for (int i = 0; i < ker.cols(); ++i) out.meta.push_back({EntityKind::interior, -1, -1});
  return out;
}

void validate(const PolySpaceSpec& spec) {
  if (spec.interior < 0 || spec.interior > spec.r_max)
    throw ValidationError("interior order out of range [0, r_max]");
  for (int e : spec.edge) {
    if (e < 0) throw ValidationError("negative edge order");
    if (e > spec.interior) throw ValidationError("minimum rule violated: edge order exceeds interior order");
  }
}

BasisSet build_l2(const PolySpaceSpec& spec) {
  BasisSet out;
  out.kind = FormKind::L2;
  out.degree = spec.interior;
  out.coef = MatrixXd::Identity(dim_p(spec.interior), dim_p(spec.interior));
  out.meta.assign(out.coef.cols(), TraceMeta{});
  return out;
}

BasisSet build_l1(const PolySpaceSpec& spec) {
  const int n = spec.interior;
  const int nb = dim_p(n);
  MatrixXd cons(0, 2 * nb), fun(0, 2 * nb);
  std::vector<TraceMeta> fmeta;
  for (int e = 0; e < 3; ++e) {
    MatrixXd c = edge_normal_rows(n, e, spec.edge[e] + 1, n);
    MatrixXd f = edge_normal_rows(n, e, 0, spec.edge[e]);
    MatrixXd c2(cons.rows() + c.rows(), 2 * nb), f2(fun.rows() + f.rows(), 2 * nb);
    c2 << cons, c;
    f2 << fun, f;
    cons = std::move(c2);
    fun = std::move(f2);
    for (int k = 0; k <= spec.edge[e]; ++k) fmeta.push_back({EntityKind::edge, e, k});
  }
  return dual_split(FormKind::L1, 2, n, kernel(cons, 2 * nb), fun, fmeta);
}

BasisSet build_l1minus(const PolySpaceSpec& spec) {
  const int n = spec.interior;
  const int nb = dim_p(n);
  if (n == 0) {
    BasisSet out;
    out.kind = FormKind::L1minus;
    out.components = 2;
    out.degree = 0;
    out.coef.resize(2, 0);
    return out;
  }
  // Spanning set: [P_{n-1}]^2 plus x * (top-degree part of P_{n-1}).
  const int nlow = dim_p(n - 1);
  MatrixXd span = MatrixXd::Zero(2 * nb, 2 * nlow + n);
  for (int j = 0; j < nlow; ++j) {
    span(j, j) = 1.0;
    span(nb + j, nlow + j) = 1.0;
  }
  const auto& quad = quadrature(2 * n);
  const auto& hi = ortho_basis(n);
  const auto& lo = ortho_basis(n - 1);
  VectorXd vh(nb), vl(nlow);
  for (std::size_t q = 0; q < quad.size(); ++q) {
    const Vec2& x = quad.points[q];
    hi.eval(x, vh);
    lo.eval(x, vl);
    for (int j = 0; j < n; ++j) {
      double pj = vl(nlow - n + j);
      span.col(2 * nlow + j).head(nb) += quad.weights[q] * x.x() * pj * vh;
      span.col(2 * nlow + j).tail(nb) += quad.weights[q] * x.y() * pj * vh;
    }
  }
  Eigen::HouseholderQR<MatrixXd> qr(span);
  MatrixXd base = qr.householderQ() * MatrixXd::Identity(2 * nb, span.cols());

  MatrixXd cons(0, 2 * nb), fun(0, 2 * nb);
  std::vector<TraceMeta> fmeta;
  for (int e = 0; e < 3; ++e) {
    MatrixXd c = edge_normal_rows(n, e, spec.edge[e], n - 1);
    MatrixXd f = edge_normal_rows(n, e, 0, spec.edge[e] - 1);
    MatrixXd c2(cons.rows() + c.rows(), 2 * nb), f2(fun.rows() + f.rows(), 2 * nb);
    c2 << cons, c;
    f2 << fun, f;
    cons = std::move(c2);
    fun = std::move(f2);
    for (int k = 0; k < spec.edge[e]; ++k) fmeta.push_back({EntityKind::edge, e, k});
  }
  MatrixXd space = base * kernel(cons * base, static_cast<int>(base.cols()));
  return dual_split(FormKind::L1minus, 2, n, space, fun, fmeta);
}

BasisSet build_l0(const PolySpaceSpec& spec) {
  const int n = spec.interior;
  const int nb = dim_p(n);
  MatrixXd cons(0, nb);
  MatrixXd fun = MatrixXd::Zero(3, nb);
  std::vector<TraceMeta> fmeta;
  VectorXd val(nb);
  for (int v = 0; v < 3; ++v) {
    ortho_basis(n).eval(ref_vertex(v), val);
    fun.row(v) = val.transpose();
    fmeta.push_back({EntityKind::vertex, v, 0});
  }
  for (int e = 0; e < 3; ++e) {
    MatrixXd c = edge_trace_rows(n, e, spec.edge[e] + 1, n);
    MatrixXd f = edge_trace_rows(n, e, 0, spec.edge[e] - 2);
    MatrixXd c2(cons.rows() + c.rows(), nb), f2(fun.rows() + f.rows(), nb);
    c2 << cons, c;
    f2 << fun, f;
    cons = std::move(c2);
    fun = std::move(f2);
    for (int k = 0; k <= spec.edge[e] - 2; ++k) fmeta.push_back({EntityKind::edge, e, k});
  }
  return dual_split(FormKind::L0, 1, n, kernel(cons, nb), fun, fmeta);
}

}  // namespace

Vec2 ref_vertex(int i) {
  switch (i) {
    case 0: return {0.0, 0.0};
    case 1: return {1.0, 0.0};
    default: return {0.0, 1.0};
  }
}

Vec2 ref_edge_point(int edge, double s) {
  Vec2 a = ref_vertex((edge + 1) % 3), b = ref_vertex((edge + 2) % 3);
  return a + s * (b - a);
}

Vec2 ref_edge_tangent(int edge) { return ref_vertex((edge + 2) % 3) - ref_vertex((edge + 1) % 3); }

double legendre01(int k, double s) {
  double z = 2.0 * s - 1.0;
  double p0 = 1.0, p1 = z;
  if (k == 0) return 1.0;
  for (int j = 1; j < k; ++j) {
    double p2 = ((2 * j + 1) * z * p1 - j * p0) / (j + 1);
    p0 = p1;
    p1 = p2;
  }
  return std::sqrt(2.0 * k + 1.0) * p1;
}

const LineRule& gauss_line(int n) {
  static std::mutex mtx;
  static std::map<int, LineRule> cache;
  std::lock_guard lock(mtx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  LineRule rule;
  std::vector<double> p(n + 1), dp(n + 1);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it2 = 0; it2 < 100; ++it2) {
      legendre_table(n, z, p.data(), dp.data());
      double dz = p[n] / dp[n];
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    legendre_table(n, z, p.data(), dp.data());
    rule.points.push_back(0.5 * (1.0 - z));
    rule.weights.push_back(1.0 / ((1.0 - z * z) * dp[n] * dp[n]));
  }
  return cache.emplace(n, std::move(rule)).first->second;
}

const LineRule& line_quadrature(int degree) { return gauss_line(std::max(1, degree / 2 + 1)); }

std::array<double, 3> QuadRule::barycentric(std::size_t q) const {
  const Vec2& x = points[q];
  return {1.0 - x.x() - x.y(), x.x(), x.y()};
}

const QuadRule& quadrature(int degree) {
  if (degree < 0 || degree > kMaxQuadDegree)
    throw ValidationError("quadrature degree " + std::to_string(degree) + " outside supported range [0, " +
                          std::to_string(kMaxQuadDegree) + "]");
  static std::mutex mtx;
  static std::map<int, QuadRule> cache;
  {
    std::lock_guard lock(mtx);
    auto it = cache.find(degree);
    if (it != cache.end()) return it->second;
  }
  // Collapsed square: x = u, y = (1 - u) v, Jacobian (1 - u).
  const auto& g = gauss_line((degree + 3) / 2);
  QuadRule rule;
  rule.degree = degree;
  for (std::size_t i = 0; i < g.points.size(); ++i)
    for (std::size_t j = 0; j < g.points.size(); ++j) {
      double u = g.points[i], v = g.points[j];
      rule.points.emplace_back(u, (1.0 - u) * v);
      rule.weights.push_back(g.weights[i] * g.weights[j] * (1.0 - u));
    }
  std::lock_guard lock(mtx);
  return cache.emplace(degree, std::move(rule)).first->second;
}

const QuadRule& quadrature_collapsed(int degree, int vertex) {
  if (vertex < 0 || vertex > 2) throw ValidationError("collapse vertex must be 0, 1 or 2");
  const QuadRule& base = quadrature(degree);
  // The base rule collapses at vertex 1.
  if (vertex == 1) return base;
  static std::mutex mtx;
  static std::map<std::pair<int, int>, QuadRule> cache;
  {
    std::lock_guard lock(mtx);
    auto it = cache.find({degree, vertex});
    if (it != cache.end()) return it->second;
  }
  QuadRule rule = base;
  for (std::size_t q = 0; q < rule.size(); ++q) {
    auto lam = base.barycentric(q);
    std::array<double, 3> moved{};
    for (int k = 0; k < 3; ++k) moved[(k + vertex + 2) % 3] = lam[k];
    rule.points[q] = Vec2(moved[1], moved[2]);
  }
  std::lock_guard lock(mtx);
  return cache.emplace(std::pair{degree, vertex}, std::move(rule)).first->second;
}

LineRule line_quadrature_graded(int degree, int layers, double ratio) {
  if (layers < 0 || !(ratio > 0.0 && ratio < 1.0)) throw ValidationError("invalid grading");
  const LineRule& g = line_quadrature(degree);
  LineRule out;
  double hi = 1.0;
  for (int l = 0; l <= layers; ++l) {
    const double lo = l == layers ? 0.0 : hi * ratio;
    for (std::size_t i = 0; i < g.points.size(); ++i) {
      out.points.push_back(lo + (hi - lo) * g.points[i]);
      out.weights.push_back((hi - lo) * g.weights[i]);
    }
    hi = lo;
  }
  return out;
}

const QuadRule& quadrature_graded(int degree, int vertex, int layers, double ratio) {
  if (degree < 0 || degree > kMaxQuadDegree) throw ValidationError("quadrature degree out of range");
  if (vertex < 0 || vertex > 2) throw ValidationError("grading vertex must be 0, 1 or 2");
  static std::mutex mtx;
  static std::map<std::tuple<int, int, int, double>, QuadRule> cache;
  const auto key = std::tuple{degree, vertex, layers, ratio};
  {
    std::lock_guard lock(mtx);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  // Radial variable rho = 1 - u measured from vertex 1 of the base collapsed map.
  const LineRule radial = line_quadrature_graded(degree + 1, layers, ratio);
  const LineRule& g = line_quadrature(degree);
  QuadRule rule;
  rule.degree = degree;
  for (std::size_t i = 0; i < radial.points.size(); ++i)
    for (std::size_t j = 0; j < g.points.size(); ++j) {
      const double rho = radial.points[i], u = 1.0 - rho, v = g.points[j];
      std::array<double, 3> lam{1.0 - u - rho * v, u, rho * v};
      std::array<double, 3> moved{};
      for (int k = 0; k < 3; ++k) moved[(k + vertex + 2) % 3] = lam[k];
      rule.points.emplace_back(moved[1], moved[2]);
      rule.weights.push_back(radial.weights[i] * g.weights[j] * rho);
    }
  std::lock_guard lock(mtx);
  return cache.emplace(key, std::move(rule)).first->second;
}

namespace {

// Dubiner functions Q_p(x, y) J_q^{(2p+1,0)}(2y - 1) with derivatives; Q_p is the
// collapsed Legendre polynomial (1-y)^p P_p((2x+y-1)/(1-y)) written without division.
void dubiner_table(int order, const Vec2& x, const std::vector<std::array<int, 2>>& pq, double* val,
                   double* gx, double* gy) {
  std::array<double, 32> q{}, qx{}, qy{};
  const double a = 2 * x.x() + x.y() - 1, b = 1 - x.y();
  q[0] = 1.0;
  if (order >= 1) {
    q[1] = a;
    qx[1] = 2.0;
    qy[1] = 1.0;
  }
  for (int p = 1; p < order; ++p) {
    q[p + 1] = ((2 * p + 1) * a * q[p] - p * b * b * q[p - 1]) / (p + 1);
    qx[p + 1] = ((2 * p + 1) * (2.0 * q[p] + a * qx[p]) - p * b * b * qx[p - 1]) / (p + 1);
    qy[p + 1] = ((2 * p + 1) * (q[p] + a * qy[p]) - p * (-2.0 * b * q[p - 1] + b * b * qy[p - 1])) / (p + 1);
  }
  const double z = 2 * x.y() - 1;
  std::array<double, 32> j{}, dj{};
  int prev_p = -1;
  for (std::size_t k = 0; k < pq.size(); ++k) {
    auto [p, qq] = pq[k];
    if (p != prev_p) {
      // Jacobi P_n^{(alpha,0)} on [-1,1] for n = 0..order-p.
      const double al = 2 * p + 1;
      j[0] = 1.0;
      dj[0] = 0.0;
      const int nmax = order - p;
      if (nmax >= 1) {
        j[1] = ((al + 2) * z + al) / 2;
        dj[1] = (al + 2) / 2;
      }
      for (int n = 2; n <= nmax; ++n) {
        double c1 = 2.0 * n * (n + al) * (2 * n + al - 2);
        double c2 = (2 * n + al - 1) * al * al;
        double c3 = (2 * n + al - 2) * (2 * n + al - 1) * (2 * n + al);
        double c4 = 2.0 * (n + al - 1) * (n - 1) * (2 * n + al);
        j[n] = ((c2 + c3 * z) * j[n - 1] - c4 * j[n - 2]) / c1;
        dj[n] = (c3 * j[n - 1] + (c2 + c3 * z) * dj[n - 1] - c4 * dj[n - 2]) / c1;
      }
      prev_p = p;
    }
    val[k] = q[p] * j[qq];
    gx[k] = qx[p] * j[qq];
    gy[k] = qy[p] * j[qq] + q[p] * 2.0 * dj[qq];
  }
}

}  // namespace

ScalarPolySet::ScalarPolySet(int order) : order_(order) {
  // Ordered by total degree; within a degree by p so Jacobi tables are reused per p.
  for (int d = 0; d <= order; ++d)
    for (int p = d; p >= 0; --p) powers_.push_back({p, d - p});
  const int n = static_cast<int>(powers_.size());
  MatrixXd gram = MatrixXd::Zero(n, n);
  const auto& quad = quadrature(2 * order);
  VectorXd d(n), gx(n), gy(n);
  for (std::size_t q = 0; q < quad.size(); ++q) {
    dubiner_table(order, quad.points[q], powers_, d.data(), gx.data(), gy.data());
    gram.noalias() += quad.weights[q] * d * d.transpose();
  }
  // The dictionary is orthogonal already; the factorization only normalizes and
  // removes round-off coupling.
  Eigen::LLT<MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericalError("dictionary Gram matrix not positive definite");
  MatrixXd lower = llt.matrixL();
  coef_ = lower.transpose().triangularView<Eigen::Upper>().solve(MatrixXd::Identity(n, n));
}

void ScalarPolySet::eval(const Vec2& x, Eigen::Ref<VectorXd> val) const {
  const int n = size();
  VectorXd d(n), gx(n), gy(n);
  dubiner_table(order_, x, powers_, d.data(), gx.data(), gy.data());
  val.noalias() = coef_.transpose() * d;
}

void ScalarPolySet::eval(const Vec2& x, Eigen::Ref<VectorXd> val, Eigen::Ref<Eigen::MatrixX2d> grad) const {
  const int n = size();
  VectorXd d(n);
  Eigen::MatrixX2d dd(n, 2);
  VectorXd gx(n), gy(n);
  dubiner_table(order_, x, powers_, d.data(), gx.data(), gy.data());
  dd.col(0) = gx;
  dd.col(1) = gy;
  val.noalias() = coef_.transpose() * d;
  grad.noalias() = coef_.transpose() * dd;
}

const ScalarPolySet& ortho_basis(int order) {
  if (order < 0 || order > 20) throw ValidationError("polynomial order outside [0, 20]");
  static std::mutex mtx;
  static std::array<std::unique_ptr<ScalarPolySet>, 21> cache;
  {
    std::lock_guard lock(mtx);
    if (cache[order]) return *cache[order];
  }
  auto set = std::make_unique<ScalarPolySet>(order);
  std::lock_guard lock(mtx);
  if (!cache[order]) cache[order] = std::move(set);
  return *cache[order];
}

PointTable tabulate(const BasisSet& set, const Vec2& x) {
  const auto& basis = ortho_basis(set.degree);
  const int nb = basis.size();
  VectorXd val(nb);
  Eigen::MatrixX2d grad(nb, 2);
  basis.eval(x, val, grad);
  PointTable t;
  t.val.resize(set.components, set.size());
  t.dx.resize(set.components, set.size());
  t.dy.resize(set.components, set.size());
  for (int c = 0; c < set.components; ++c) {
    auto block = set.coef.middleRows(c * nb, nb);
    t.val.row(c).noalias() = val.transpose() * block;
    t.dx.row(c).noalias() = grad.col(0).transpose() * block;
    t.dy.row(c).noalias() = grad.col(1).transpose() * block;
  }
  return t;
}

MatrixXd BasisSet::values(const Vec2& x) const { return tabulate(*this, x).val; }

void BasisSet::values_and_jacobians(const Vec2& x, MatrixXd& val, std::vector<MatrixXd>& jac) const {
  PointTable t = tabulate(*this, x);
  val = t.val;
  jac.assign(size(), MatrixXd(components, 2));
  for (int k = 0; k < size(); ++k) {
    jac[k].col(0) = t.dx.col(k);
    jac[k].col(1) = t.dy.col(k);
  }
}

Eigen::RowVectorXd BasisSet::divergence(const Vec2& x) const {
  if (components != 2) throw ValidationError("divergence requires a vector-valued set");
  PointTable t = tabulate(*this, x);
  return t.dx.row(0) + t.dy.row(1);
}

MatrixXd embed_coefficients(const MatrixXd& coef, int components, int from, int to) {
  const int nf = dim_p(from), nt = dim_p(to);
  MatrixXd out = MatrixXd::Zero(components * nt, coef.cols());
  for (int c = 0; c < components; ++c) out.middleRows(c * nt, nf) = coef.middleRows(c * nf, nf);
  return out;
}

BasisSet scalar_basis(int order, DerivKind derivative) {
  if (order < 0) throw ValidationError("negative order");
  const int n = dim_p(order);
  BasisSet out;
  out.kind = FormKind::L0;
  out.degree = order;
  out.meta.assign(n, TraceMeta{});
  if (derivative == DerivKind::none) {
    out.coef = MatrixXd::Identity(n, n);
    return out;
  }
  // Derivatives of a degree-`order` set are exact in degree order-1.
  const int dn = std::max(order - 1, 0);
  const int nd = dim_p(dn);
  out.kind = FormKind::L1;
  out.components = 2;
  out.degree = dn;
  out.coef = MatrixXd::Zero(2 * nd, n);
  const auto& quad = quadrature(2 * order);
  VectorXd val(n), lo(nd);
  Eigen::MatrixX2d grad(n, 2);
  for (std::size_t q = 0; q < quad.size(); ++q) {
    ortho_basis(order).eval(quad.points[q], val, grad);
    ortho_basis(dn).eval(quad.points[q], lo);
    Eigen::MatrixX2d comp = grad;
    if (derivative == DerivKind::curl) {
      comp.col(0) = grad.col(1);
      comp.col(1) = -grad.col(0);
    }
    out.coef.topRows(nd).noalias() += quad.weights[q] * lo * comp.col(0).transpose();
    out.coef.bottomRows(nd).noalias() += quad.weights[q] * lo * comp.col(1).transpose();
  }
  return out;
}

std::shared_ptr<const BasisSet> vector_space(const PolySpaceSpec& spec) {
  validate(spec);
  using Key = std::array<int, 5>;
  static std::mutex mtx;
  static std::map<Key, std::shared_ptr<const BasisSet>> cache;
  Key key{static_cast<int>(spec.form_kind), spec.interior, spec.edge[0], spec.edge[1], spec.edge[2]};
  {
    std::lock_guard lock(mtx);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  BasisSet set;
  switch (spec.form_kind) {
    case FormKind::L0: set = build_l0(spec); break;
    case FormKind::L1: set = build_l1(spec); break;
    case FormKind::L1minus: set = build_l1minus(spec); break;
    case FormKind::L2: set = build_l2(spec); break;
  }
  auto ptr = std::make_shared<const BasisSet>(std::move(set));
  std::lock_guard lock(mtx);
  return cache.emplace(key, ptr).first->second;
}

BasisSet bubble_curl_basis(int order) {
  BasisSet out;
  out.kind = FormKind::L1;
  out.components = 2;
  out.degree = std::max(order - 1, 0);
  const int nb = dim_p(out.degree);
  if (order < 3) {
    out.coef.resize(2 * nb, 0);
    return out;
  }
  const int nq = dim_p(order - 3);
  MatrixXd coef = MatrixXd::Zero(2 * nb, nq);
  const auto& quad = quadrature(2 * order);
  VectorXd vq(nq), vb(nb);
  Eigen::MatrixX2d gq(nq, 2);
  for (std::size_t i = 0; i < quad.size(); ++i) {
    double x = quad.points[i].x(), y = quad.points[i].y();
    double chi = x * y * (1 - x - y);
    double chix = y * (1 - x - y) - x * y, chiy = x * (1 - x - y) - x * y;
    ortho_basis(order - 3).eval(quad.points[i], vq, gq);
    ortho_basis(out.degree).eval(quad.points[i], vb);
    VectorXd cx = chiy * vq + chi * gq.col(1);      // d/dy (chi q)
    VectorXd cy = -(chix * vq + chi * gq.col(0));   // -d/dx (chi q)
    coef.topRows(nb).noalias() += quad.weights[i] * vb * cx.transpose();
    coef.bottomRows(nb).noalias() += quad.weights[i] * vb * cy.transpose();
  }
  Eigen::HouseholderQR<MatrixXd> qr(coef);
  out.coef = qr.householderQ() * MatrixXd::Identity(2 * nb, nq);
  out.meta.assign(nq, TraceMeta{});
  return out;
}

BasisSet HFamily::at(double t) const {
  BasisSet out = f_basis;
  out.coef = (1.0 - t) * f_basis.coef + t * g_basis.coef;
  return out;
}

const HFamily& h_family(int order) {
  if (order < 0 || order > 20) throw ValidationError("h_family order out of range");
  static std::mutex mtx;
  static std::map<int, HFamily> cache;
  {
    std::lock_guard lock(mtx);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;
  }
  HFamily fam;
  fam.order = order;
  fam.k = order * (order - 1) / 2;
  const int deg = std::max(order, 0);
  fam.f_basis = bubble_curl_basis(order + 1);
  fam.f_basis.coef = embed_coefficients(fam.f_basis.coef, 2, fam.f_basis.degree, deg);
  fam.f_basis.degree = deg;
  fam.g_basis = fam.f_basis;
  if (fam.k > 0) {
    // Orthogonal complement of grad P_order inside [P_{order-1}]^2.
    BasisSet grads = scalar_basis(order, DerivKind::grad);
    MatrixXd g = grads.coef.rightCols(grads.size() - 1);
    Eigen::HouseholderQR<MatrixXd> qr(g);
    MatrixXd q = qr.householderQ();
    MatrixXd comp = q.rightCols(fam.k);
    fam.g_basis.coef = embed_coefficients(comp, 2, order - 1, deg);
  }
  std::lock_guard lock(mtx);
  return cache.emplace(order, std::move(fam)).first->second;
}

}  // namespace afw2d
