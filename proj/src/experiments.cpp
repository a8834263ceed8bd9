#include "afw2d/experiments.hpp"

#include "afw2d/parallel.hpp"

#include <Eigen/SparseCholesky>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace afw2d {

using cplx = std::complex<double>;

CornerBc parse_corner_bc(const std::string& name) {
  if (name == "clamped_clamped") return CornerBc::clamped_clamped;
  if (name == "free_free") return CornerBc::free_free;
  if (name == "clamped_free") return CornerBc::clamped_free;
  throw ValidationError("unknown corner condition '" + name + "'");
}

std::string to_string(CornerBc bc) {
  switch (bc) {
    case CornerBc::clamped_clamped: return "clamped_clamped";
    case CornerBc::free_free: return "free_free";
    case CornerBc::clamped_free: return "clamped_free";
  }
  return {};
}

double kolosov_kappa(const MaterialIso& m) {
  m.validate();
  if (std::isinf(m.lambda)) return 1.0;
  return (m.lambda + 3.0 * m.mu) / (m.lambda + m.mu);
}

namespace {

// Rows of one face at angle theta, unit radius. A clamped face asks for zero
// displacement kappa phi - z conj(phi') - conj(psi); a free face for zero
// resultant force, the same expression with kappa replaced by -1.
void face_rows(Eigen::Matrix4d& m, int row0, double theta, double k, double s) {
  const cplx z = std::polar(1.0, theta);
  const cplx zs = std::polar(1.0, s * theta);
  const cplx dzs = s * std::polar(1.0, (s - 1.0) * theta);
  const std::array<cplx, 2> unit{cplx(1, 0), cplx(0, 1)};
  for (int c = 0; c < 4; ++c) {
    const cplx coef = unit[c % 2];
    const cplx val = c < 2 ? k * coef * zs - z * std::conj(coef * dzs) : -std::conj(coef * zs);
    m(row0, c) = val.real();
    m(row0 + 1, c) = val.imag();
  }
}

Eigen::Matrix4d corner_matrix(const MaterialIso& material, double angle, CornerBc bc, double s) {
  const double kappa = kolosov_kappa(material);
  const double k0 = bc == CornerBc::free_free ? -1.0 : kappa;
  const double k1 = bc == CornerBc::clamped_clamped ? kappa : -1.0;
  Eigen::Matrix4d m;
  face_rows(m, 0, 0.0, k0, s);
  face_rows(m, 2, angle, k1, s);
  return m;
}

}  // namespace

double corner_determinant(const MaterialIso& material, double angle, CornerBc bc, double s) {
  return corner_matrix(material, angle, bc, s).determinant();
}

CornerExponent corner_exponent(const MaterialIso& material, double angle, CornerBc bc) {
  if (!(angle > 0.0 && angle < 2.0 * std::numbers::pi)) throw ValidationError("corner angle must lie in (0, 2 pi)");
  auto det = [&](double s) { return corner_determinant(material, angle, bc, s); };
  const double step = 0.005, s_max = 10.0;
  std::vector<double> grid, vals;
  for (double s = step; s <= s_max; s += step) {
    grid.push_back(s);
    vals.push_back(det(s));
  }
  double scale = 0.0;
  for (double v : vals) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (vals[k - 1] == 0.0) return {grid[k - 1], 0.0};
    if ((vals[k - 1] < 0.0) != (vals[k] < 0.0)) {
      std::uintmax_t iters = 200;
      auto [lo, hi] = boost::math::tools::toms748_solve(det, grid[k - 1], grid[k], vals[k - 1], vals[k],
                                                        boost::math::tools::eps_tolerance<double>(52), iters);
      const double root = std::abs(det(lo)) <= std::abs(det(hi)) ? lo : hi;
      return {root, std::abs(det(root))};
    }
    // Touching roots (double roots) show up as tiny local minima of |det|.
    if (k + 1 < grid.size() && std::abs(vals[k]) < std::abs(vals[k - 1]) && std::abs(vals[k]) < std::abs(vals[k + 1])) {
      auto [s, v] = boost::math::tools::brent_find_minima([&](double x) { return std::abs(det(x)); }, grid[k - 1],
                                                          grid[k + 1], 52);
      if (v < 1e-12 * std::max(1.0, scale)) return {s, v};
    }
  }
  throw NumericalError("no corner exponent in (0, " + std::to_string(s_max) + "]");
}

WilliamsConfig load_williams_config(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError("cannot read '" + path + "': " + e.message());
  }
  WilliamsConfig cfg;
  auto number = [&](const char* key, double fallback) {
    auto text = tree.get_optional<std::string>(std::string("williams.") + key);
    if (!text) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(*text, &used);
      if (used != text->size()) throw std::invalid_argument(*text);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("bad value '" + *text + "' for williams." + key + " in '" + path + "'");
    }
  };
  cfg.material.mu = number("mu", cfg.material.mu);
  cfg.material.lambda = number("lambda", cfg.material.lambda);
  cfg.angle = number("angle_deg", 270.0) * std::numbers::pi / 180.0;
  cfg.bc = parse_corner_bc(tree.get<std::string>("williams.bc", "clamped_clamped"));
  cfg.material.validate();
  return cfg;
}

SolutionKind parse_solution_kind(const std::string& name) {
  if (name == "lshape_singular") return SolutionKind::lshape_singular;
  if (name == "smooth_poly") return SolutionKind::smooth_poly;
  if (name == "smooth_trig") return SolutionKind::smooth_trig;
  throw ValidationError("unknown solution kind '" + name + "'");
}

std::string to_string(SolutionKind kind) {
  switch (kind) {
    case SolutionKind::lshape_singular: return "lshape_singular";
    case SolutionKind::smooth_poly: return "smooth_poly";
    case SolutionKind::smooth_trig: return "smooth_trig";
  }
  return {};
}

ProblemSpec ExactSolution::problem() const {
  ProblemSpec spec;
  spec.material = material;
  auto ev = eval;
  if (kind != SolutionKind::lshape_singular) spec.body_force = [ev](const Vec2& x) -> Vec2 { return -ev(x).div_sigma; };
  spec.boundary_displacement = [ev](const Vec2& x) { return ev(x).u; };
  spec.singular_point = singular_point;
  return spec;
}

namespace {

// Displacement with first and second derivatives; hess[c](i, j) = d2 u_c / dx_i dx_j.
struct Jet {
  Vec2 u = Vec2::Zero();
  Mat2 grad = Mat2::Zero();
  std::array<Mat2, 2> hess{Mat2::Zero(), Mat2::Zero()};
};

ExactSample from_jet(const Jet& j, const MaterialIso& m) {
  ExactSample s;
  s.u = j.u;
  s.grad_u = j.grad;
  const Mat2 eps = 0.5 * (j.grad + j.grad.transpose());
  s.sigma = 2.0 * m.mu * eps + m.lambda * eps.trace() * Mat2::Identity();
  for (int i = 0; i < 2; ++i) {
    const double lap = j.hess[i].trace();
    const double ddiv = j.hess[0](0, i) + j.hess[1](1, i);
    s.div_sigma(i) = m.mu * lap + (m.mu + m.lambda) * ddiv;
  }
  s.p = 0.5 * (j.grad(1, 0) - j.grad(0, 1));
  return s;
}

ExactSolution smooth_poly(const ExactParams& prm) {
  if (prm.degree < 0 || prm.degree > 12) throw ValidationError("polynomial degree must lie in [0, 12]");
  std::mt19937 gen(prm.seed);
  std::normal_distribution<double> nd;
  const int n = dim_p(prm.degree);
  std::vector<std::array<int, 2>> pw;
  for (int d = 0; d <= prm.degree; ++d)
    for (int j = 0; j <= d; ++j) pw.push_back({d - j, j});
  std::array<std::vector<double>, 2> a;
  for (auto& c : a) {
    c.resize(n);
    for (double& v : c) v = prm.amplitude * nd(gen);
  }
  ExactSolution ex;
  ex.kind = SolutionKind::smooth_poly;
  ex.material = prm.material;
  ex.eval = [pw, a, m = prm.material](const Vec2& x) {
    auto mono = [&](int i, int j) { return (i < 0 || j < 0) ? 0.0 : std::pow(x.x(), i) * std::pow(x.y(), j); };
    Jet jet;
    for (std::size_t k = 0; k < pw.size(); ++k) {
      const auto [i, j] = pw[k];
      for (int c = 0; c < 2; ++c) {
        const double co = a[c][k];
        jet.u(c) += co * mono(i, j);
        jet.grad(c, 0) += co * i * mono(i - 1, j);
        jet.grad(c, 1) += co * j * mono(i, j - 1);
        jet.hess[c](0, 0) += co * i * (i - 1) * mono(i - 2, j);
        jet.hess[c](1, 1) += co * j * (j - 1) * mono(i, j - 2);
        const double xy = co * i * j * mono(i - 1, j - 1);
        jet.hess[c](0, 1) += xy;
        jet.hess[c](1, 0) += xy;
      }
    }
    return from_jet(jet, m);
  };
  return ex;
}

ExactSolution smooth_trig(const ExactParams& prm) {
  ExactSolution ex;
  ex.kind = SolutionKind::smooth_trig;
  ex.material = prm.material;
  ex.eval = [amp = prm.amplitude, m = prm.material](const Vec2& x) {
    constexpr double pi = std::numbers::pi;
    Jet j;
    // u1 = sin(pi x + 0.3) cos(pi y)
    const double s = std::sin(pi * x.x() + 0.3), c = std::cos(pi * x.x() + 0.3);
    const double cy = std::cos(pi * x.y()), sy = std::sin(pi * x.y());
    j.u(0) = s * cy;
    j.grad.row(0) << pi * c * cy, -pi * s * sy;
    j.hess[0] << -pi * pi * s * cy, -pi * pi * c * sy, -pi * pi * c * sy, -pi * pi * s * cy;
    // u2 = exp(x / 2) sin(pi y + 0.2)
    const double e = std::exp(0.5 * x.x()), s2 = std::sin(pi * x.y() + 0.2), c2 = std::cos(pi * x.y() + 0.2);
    j.u(1) = e * s2;
    j.grad.row(1) << 0.5 * e * s2, pi * e * c2;
    j.hess[1] << 0.25 * e * s2, 0.5 * pi * e * c2, 0.5 * pi * e * c2, -pi * pi * e * s2;
    j.u *= amp;
    j.grad *= amp;
    j.hess[0] *= amp;
    j.hess[1] *= amp;
    return from_jet(j, m);
  };
  return ex;
}

ExactSolution lshape_singular(const ExactParams& prm) {
  const WilliamsConfig& cfg = prm.williams;
  const CornerExponent ce = corner_exponent(cfg.material, cfg.angle, cfg.bc);
  const double s = ce.lambda;
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(corner_matrix(cfg.material, cfg.angle, cfg.bc, s), Eigen::ComputeFullV);
  Eigen::Vector4d v = svd.matrixV().col(3);
  Eigen::Index big = 0;
  v.cwiseAbs().maxCoeff(&big);
  if (v(big) < 0) v = -v;
  v *= prm.amplitude;
  const cplx A(v(0), v(1)), B(v(2), v(3));
  const double mu = cfg.material.mu, kappa = kolosov_kappa(cfg.material);
  // Branch cut through the middle of the excluded wedge.
  const double cut = 0.5 * (cfg.angle + 2.0 * std::numbers::pi);
  Mat2 rot;
  rot << std::cos(prm.theta0), -std::sin(prm.theta0), std::sin(prm.theta0), std::cos(prm.theta0);

  ExactSolution ex;
  ex.kind = SolutionKind::lshape_singular;
  ex.material = cfg.material;
  ex.williams_lambda = s;
  ex.singular_point = prm.corner;
  ex.eval = [=](const Vec2& x) {
    ExactSample out;
    const Vec2 d = rot.transpose() * (x - prm.corner);
    const double r = d.norm();
    if (r < 1e-300) return out;
    double th = std::atan2(d.y(), d.x());
    if (th >= cut) th -= 2.0 * std::numbers::pi;
    if (th < cut - 2.0 * std::numbers::pi) th += 2.0 * std::numbers::pi;
    const cplx z = std::polar(r, th);
    const cplx zs = std::polar(std::pow(r, s), s * th);
    const cplx zs1 = std::polar(std::pow(r, s - 1.0), (s - 1.0) * th);
    const cplx zs2 = std::polar(std::pow(r, s - 2.0), (s - 2.0) * th);
    const cplx phi = A * zs, dphi = s * A * zs1, ddphi = s * (s - 1.0) * A * zs2;
    const cplx psi = B * zs, dpsi = s * B * zs1;
    const cplx U = (kappa * phi - z * std::conj(dphi) - std::conj(psi)) / (2.0 * mu);
    const cplx Uz = (kappa * dphi - std::conj(dphi)) / (2.0 * mu);
    const cplx Uzb = (-z * std::conj(ddphi) - std::conj(dpsi)) / (2.0 * mu);
    const cplx Ux = Uz + Uzb, Uy = cplx(0, 1) * (Uz - Uzb);
    Mat2 grad;
    grad << Ux.real(), Uy.real(), Ux.imag(), Uy.imag();
    const double sum = 4.0 * dphi.real();
    const cplx diff = 2.0 * (std::conj(z) * ddphi + dpsi);
    Mat2 sig;
    sig << 0.5 * (sum - diff.real()), 0.5 * diff.imag(), 0.5 * diff.imag(), 0.5 * (sum + diff.real());
    out.u = rot * Vec2(U.real(), U.imag());
    out.grad_u = rot * grad * rot.transpose();
    out.sigma = rot * sig * rot.transpose();
    out.p = 0.5 * (out.grad_u(1, 0) - out.grad_u(0, 1));
    return out;
  };
  return ex;
}

}  // namespace

ExactSolution exact_solution(SolutionKind kind, const ExactParams& params) {
  switch (kind) {
    case SolutionKind::lshape_singular:
      return lshape_singular(params);
    case SolutionKind::smooth_poly:
      params.material.validate();
      if (std::isinf(params.material.lambda)) throw ValidationError("exact solutions need a finite lambda");
      return smooth_poly(params);
    case SolutionKind::smooth_trig:
      params.material.validate();
      if (std::isinf(params.material.lambda)) throw ValidationError("exact solutions need a finite lambda");
      return smooth_trig(params);
  }
  throw ValidationError("unknown solution kind");
}

namespace {

constexpr int kErrorExtraDegree = 4;

const QuadRule& error_rule(const Discretization& d, int t, const ExactSolution& exact) {
  return integration_rule(d.mesh, t, d.quad_degree(t) + kErrorExtraDegree, exact.singular_point);
}

}  // namespace

ErrorRecord compute_errors(const SolutionTriple& sol, const ExactSolution& exact) {
  const Discretization& d = *sol.disc;
  const int nt = static_cast<int>(d.mesh.triangles.size());
  std::vector<std::array<double, 8>> acc(nt);
  parallel_for(nt, [&](int t) {
    std::array<double, 8> a{};
    const QuadRule& q = error_rule(d, t, exact);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const ElementPoint pt{t, q.points[i], map_eval(d.mesh, t, q.points[i])};
      const FieldValues v = evaluate(sol, pt);
      const ExactSample e = exact.eval(pt.map.x);
      const double w = q.weights[i] * pt.map.det;
      a[0] += w * (e.sigma - v.sigma).squaredNorm();
      a[1] += w * (e.div_sigma - v.div_sigma).squaredNorm();
      a[2] += w * (e.u - v.u).squaredNorm();
      a[3] += w * (e.p - v.p) * (e.p - v.p);
      a[4] += w * e.sigma.squaredNorm();
      a[5] += w * e.div_sigma.squaredNorm();
      a[6] += w * e.u.squaredNorm();
      a[7] += w * e.p * e.p;
    }
    acc[t] = a;
  });
  std::array<double, 8> sum{};
  ErrorRecord rec;
  rec.element_sq.resize(nt);
  for (int t = 0; t < nt; ++t) {
    for (int k = 0; k < 8; ++k) sum[k] += acc[t][k];
    rec.element_sq[t] = acc[t][0] + acc[t][1] + acc[t][2] + acc[t][3];
  }
  rec.sigma_l2 = std::sqrt(sum[0]);
  rec.div_l2 = std::sqrt(sum[1]);
  rec.u_l2 = std::sqrt(sum[2]);
  rec.p_l2 = std::sqrt(sum[3]);
  rec.sigma_hdiv = std::sqrt(sum[0] + sum[1]);
  rec.total = std::sqrt(sum[0] + sum[1] + sum[2] + sum[3]);
  rec.norm_total = std::sqrt(sum[4] + sum[5] + sum[6] + sum[7]);
  rec.total_pct = rec.norm_total > 0.0 ? 100.0 * rec.total / rec.norm_total : 0.0;
  return rec;
}

BestApprox best_approx(const ExactSolution& exact, const MixedSystem& system) {
  const Discretization& d = *system.disc;
  const DofMap& dofs = d.dofs;
  const int nt = static_cast<int>(d.mesh.triangles.size());
  std::vector<VectorXd> ls(nt), lu(nt), lp(nt);
  parallel_for(nt, [&](int t) {
    const BasisSet& set = *d.stress_sets[t];
    const int n = set.size(), nv = dofs.scalar_count[t];
    VectorXd s = VectorXd::Zero(2 * n), u = VectorXd::Zero(2 * nv), p = VectorXd::Zero(nv), psi(nv);
    const QuadRule& q = error_rule(d, t, exact);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const MapEval g = map_eval(d.mesh, t, q.points[i]);
      const PhysicalValues pv = physical_values(set, g, q.points[i]);
      const ExactSample e = exact.eval(g.x);
      ortho_basis(d.orders.tri[t]).eval(q.points[i], psi);
      const double w = q.weights[i] * g.det;
      for (int a = 0; a < 2; ++a) {
        s.segment(a * n, n) += w * (pv.val.transpose() * e.sigma.row(a).transpose() + e.div_sigma(a) * pv.div.transpose());
        u.segment(a * nv, nv) += (w * e.u(a) / g.det) * psi;
      }
      p += (w * e.p / g.det) * psi;
    }
    ls[t] = s;
    lu[t] = u;
    lp[t] = p;
  });
  VectorXd rs = VectorXd::Zero(dofs.n_stress), ru = VectorXd::Zero(dofs.n_disp), rp = VectorXd::Zero(dofs.n_rot);
  for (int t = 0; t < nt; ++t) {
    const int n = d.stress_sets[t]->size(), nv = dofs.scalar_count[t];
    for (int a = 0; a < 2; ++a) {
      const std::vector<int> idx = dofs.stress_gather(t, a);
      for (int k = 0; k < n; ++k) rs(idx[k]) += dofs.stress_sign[t][k] * ls[t](a * n + k);
    }
    ru.segment(dofs.disp_first[t] - dofs.n_stress, 2 * nv) += lu[t];
    rp.segment(dofs.rot_first[t] - dofs.n_stress - dofs.n_disp, nv) += lp[t];
  }
  auto spd_solve = [](const SparseMatrix& m, const VectorXd& b, const char* what) {
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(m);
    if (ldlt.info() != Eigen::Success) throw NumericalError(std::string("singular ") + what + " Gram matrix");
    return VectorXd(ldlt.solve(b));
  };
  BestApprox out;
  out.projection.disc = system.disc;
  out.projection.sigma = spd_solve(system.hdiv_gram, rs, "stress");
  out.projection.u = spd_solve(system.mass_disp, ru, "displacement");
  out.projection.p = spd_solve(system.mass_rot, rp, "rotation");
  out.error = compute_errors(out.projection, exact);
  return out;
}

BestApprox best_approx(const ExactSolution& exact, const Mesh& mesh, const OrderMap& orders) {
  ProblemSpec spec;
  spec.material = exact.material;
  return best_approx(exact, assemble(mesh, orders, spec));
}

namespace {

void fill_slopes(std::vector<ConvergenceRecord>& recs) {
  for (std::size_t k = 1; k < recs.size(); ++k) {
    const auto& a = recs[k - 1];
    auto& b = recs[k];
    const double ln = std::log(double(b.ndof) / a.ndof);
    if (ln != 0.0) {
      b.slope = std::log(b.fe.total / a.fe.total) / ln;
      b.best_slope = std::log(b.best_total / a.best_total) / ln;
    }
    const double lh = std::log(b.h / a.h);
    if (lh != 0.0) b.u_rate = std::log(b.fe.u_l2 / a.fe.u_l2) / lh;
  }
}

ConvergenceRecord solve_level(const Mesh& mesh, const OrderMap& om, const ExactSolution& exact,
                              const StudyOptions& options, int level) {
  MixedSystem sys = assemble(mesh, om, exact.problem());
  SolutionTriple sol = solve(sys);
  ConvergenceRecord rec;
  rec.level = level;
  rec.ndof = sys.disc->dofs.total;
  rec.h = mesh_size(mesh);
  rec.fe = compute_errors(sol, exact);
  rec.residual = sol.report.residual;
  rec.weak_symmetry = sol.report.weak_symmetry;
  if (options.best_approximation) {
    BestApprox ba = best_approx(exact, sys);
    rec.best_total = ba.error.total;
    rec.best_pct = ba.error.total_pct;
  }
  return rec;
}

Mesh refine_with_orders(const Mesh& mesh, std::vector<int>& orders) {
  std::vector<int> parent;
  Mesh fine = refine_uniform(mesh, &parent);
  std::vector<int> next(fine.triangles.size());
  for (std::size_t t = 0; t < next.size(); ++t) next[t] = orders[parent[t]];
  orders = std::move(next);
  return fine;
}

}  // namespace

std::vector<ConvergenceRecord> run_convergence(const Mesh& initial, const std::vector<int>& orders, int n_levels,
                                               const ExactSolution& exact, const StudyOptions& options) {
  if (n_levels < 1) throw ValidationError("at least one level is needed");
  if (orders.size() != initial.triangles.size())
    throw ValidationError("order list has " + std::to_string(orders.size()) + " entries for " +
                          std::to_string(initial.triangles.size()) + " triangles");
  Mesh mesh = initial;
  std::vector<int> ord = orders;
  for (int i = 0; i < options.initial_refinements; ++i) mesh = refine_with_orders(mesh, ord);
  std::vector<ConvergenceRecord> recs;
  for (int level = 0; level < n_levels; ++level) {
    recs.push_back(solve_level(mesh, make_order_map(mesh, ord), exact, options, level));
    if (level + 1 < n_levels) mesh = refine_with_orders(mesh, ord);
  }
  fill_slopes(recs);
  return recs;
}

AdaptiveResult run_adaptive(const Mesh& initial, int order, int n_steps, double marking_fraction,
                            const ExactSolution& exact, const StudyOptions& options) {
  if (n_steps < 1) throw ValidationError("at least one step is needed");
  if (!(marking_fraction > 0.0 && marking_fraction <= 1.0)) throw ValidationError("marking fraction must lie in (0, 1]");
  AdaptiveResult out;
  Mesh mesh = initial;
  std::vector<int> ord(mesh.triangles.size(), order);
  for (int i = 0; i < options.initial_refinements; ++i) mesh = refine_with_orders(mesh, ord);
  for (int step = 0; step < n_steps; ++step) {
    ConvergenceRecord rec = solve_level(mesh, make_order_map(mesh, order), exact, options, step);
    const int nt = static_cast<int>(mesh.triangles.size());
    std::vector<int> idx(nt);
    for (int t = 0; t < nt; ++t) idx[t] = t;
    // Stable order keeps the marking deterministic under ties.
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return rec.fe.element_sq[a] > rec.fe.element_sq[b]; });
    const int n_mark = std::max(1, static_cast<int>(std::ceil(marking_fraction * nt - 1e-9)));
    std::set<int> marked(idx.begin(), idx.begin() + n_mark);
    rec.n_marked = n_mark;
    if (exact.singular_point) {
      int near = 0;
      for (int t : marked)
        near += (map_eval(mesh, t, Vec2(1.0 / 3, 1.0 / 3)).x - *exact.singular_point).norm() < 0.25;
      rec.marked_near_corner = double(near) / n_mark;
    }
    out.records.push_back(rec);
    if (step + 1 < n_steps) mesh = refine_bisect(mesh, marked);
  }
  fill_slopes(out.records);
  out.final_mesh = std::move(mesh);
  return out;
}

double total_at_ndof(const std::vector<ConvergenceRecord>& records, double ndof) {
  if (records.empty()) throw ValidationError("empty study");
  if (records.size() == 1) return records.front().fe.total;
  std::size_t k = 1;
  while (k + 1 < records.size() && records[k].ndof < ndof) ++k;
  const auto& a = records[k - 1];
  const auto& b = records[k];
  const double t = std::log(ndof / a.ndof) / std::log(double(b.ndof) / a.ndof);
  return std::exp((1.0 - t) * std::log(a.fe.total) + t * std::log(b.fe.total));
}

void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRecord>& records) {
  os << "level,ndof,h,err_sigma_hdiv,err_u_l2,err_p_l2,total_pct,best_pct,slope\n";
  os << std::setprecision(10);
  for (const auto& r : records)
    os << r.level << ',' << r.ndof << ',' << r.h << ',' << r.fe.sigma_hdiv << ',' << r.fe.u_l2 << ',' << r.fe.p_l2
       << ',' << r.fe.total_pct << ',' << r.best_pct << ',' << r.slope << '\n';
}

void write_loglog_svg(std::ostream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<PlotSeries>& series) {
  const double width = 640, height = 480, left = 80, right = 160, top = 40, bottom = 60;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0 && s.y[i] > 0)) continue;
      x0 = std::min(x0, std::log10(s.x[i]));
      x1 = std::max(x1, std::log10(s.x[i]));
      y0 = std::min(y0, std::log10(s.y[i]));
      y1 = std::max(y1, std::log10(s.y[i]));
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  x0 = std::floor(x0), x1 = std::max(std::ceil(x1), x0 + 1);
  y0 = std::floor(y0), y1 = std::max(std::ceil(y1), y0 + 1);
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double v) { return left + (std::log10(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + (y1 - std::log10(v)) / (y1 - y0) * ph; };
  static const std::array<const char*, 6> colors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = int(x0); e <= int(x1); ++e) {
    const double x = left + (e - x0) / (x1 - x0) * pw;
    os << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << top + ph
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << x << "\" y=\"" << top + ph + 18
       << "\" text-anchor=\"middle\" font-size=\"12\">1e" << e << "</text>\n";
  }
  for (int e = int(y0); e <= int(y1); ++e) {
    const double y = top + (y1 - e) / (y1 - y0) * ph;
    os << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-size=\"12\">1e" << e << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
     << xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << top + ph / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = colors[k % colors.size()];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (s.x[i] > 0 && s.y[i] > 0) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (s.x[i] > 0 && s.y[i] > 0)
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    const double ly = top + 16 + 20 * k;
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4
       << "\" font-size=\"12\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace afw2d
