#include "afw2d/assembly.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace afw2d;

namespace {

// Quadratic displacement with the matching stress, rotation and load.
struct Quadratic {
  std::array<std::array<double, 6>, 2> a{};  // 1, x, y, x^2, xy, y^2
  MaterialIso mat;

  Vec2 u(const Vec2& x) const {
    Vec2 out;
    for (int c = 0; c < 2; ++c)
      out(c) = a[c][0] + a[c][1] * x.x() + a[c][2] * x.y() + a[c][3] * x.x() * x.x() + a[c][4] * x.x() * x.y() +
               a[c][5] * x.y() * x.y();
    return out;
  }
  Mat2 grad(const Vec2& x) const {
    Mat2 g;
    for (int c = 0; c < 2; ++c) {
      g(c, 0) = a[c][1] + 2 * a[c][3] * x.x() + a[c][4] * x.y();
      g(c, 1) = a[c][2] + a[c][4] * x.x() + 2 * a[c][5] * x.y();
    }
    return g;
  }
  Mat2 sigma(const Vec2& x) const {
    Mat2 g = grad(x);
    Mat2 eps = 0.5 * (g + g.transpose());
    return 2 * mat.mu * eps + mat.lambda * eps.trace() * Mat2::Identity();
  }
  double p(const Vec2& x) const {
    Mat2 g = grad(x);
    return 0.5 * (g(1, 0) - g(0, 1));
  }
  Vec2 f(const Vec2&) const {
    // u_{c,xx}, u_{c,xy}, u_{c,yy}
    auto h = [&](int c) { return std::array<double, 3>{2 * a[c][3], a[c][4], 2 * a[c][5]}; };
    auto h0 = h(0), h1 = h(1);
    const double lap0 = h0[0] + h0[2], lap1 = h1[0] + h1[2];
    const double ddiv_x = h0[0] + h1[1], ddiv_y = h0[1] + h1[2];
    return -Vec2(mat.mu * lap0 + (mat.mu + mat.lambda) * ddiv_x, mat.mu * lap1 + (mat.mu + mat.lambda) * ddiv_y);
  }
  ProblemSpec spec() const {
    ProblemSpec s;
    s.material = mat;
    s.body_force = [*this](const Vec2& x) { return f(x); };
    s.boundary_displacement = [*this](const Vec2& x) { return u(x); };
    return s;
  }
};

Quadratic random_quadratic(unsigned seed, bool linear = false) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  Quadratic q;
  for (auto& c : q.a)
    for (int k = 0; k < 6; ++k) c[k] = (linear && k >= 3) ? 0.0 : nd(gen);
  q.mat = {1.3, 0.7};
  return q;
}

double sym_defect(const SparseMatrix& m) { return SparseMatrix(m - SparseMatrix(m.transpose())).norm(); }

struct Errors {
  double sigma = 0, u = 0, p = 0;
};

Errors max_errors(const SolutionTriple& sol, const Quadratic& ex) {
  Errors e;
  const Mesh& m = sol.disc->mesh;
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t)
    for (Vec2 xh : {Vec2(0.2, 0.3), Vec2(0.6, 0.1), Vec2(0.1, 0.8), Vec2(1.0 / 3, 1.0 / 3)}) {
      ElementPoint pt{t, xh, map_eval(m, t, xh)};
      FieldValues v = evaluate(sol, pt);
      e.sigma = std::max(e.sigma, (v.sigma - ex.sigma(pt.map.x)).norm());
      e.u = std::max(e.u, (v.u - ex.u(pt.map.x)).norm());
      e.p = std::max(e.p, std::abs(v.p - ex.p(pt.map.x)));
    }
  return e;
}

}  // namespace

TEST(Assemble, BlocksAreSymmetric) {
  Mesh m = refine_uniform(build_domain("lshape_circular"));
  std::vector<int> orders(m.triangles.size());
  for (std::size_t t = 0; t < orders.size(); ++t) orders[t] = static_cast<int>(t % 4);
  MixedSystem s = assemble(m, make_order_map(m, orders), random_quadratic(1).spec());
  EXPECT_LT(sym_defect(s.a), 1e-12 * s.a.norm());
  EXPECT_LT(sym_defect(s.matrix), 1e-12 * s.matrix.norm());
  EXPECT_LT(sym_defect(s.hdiv_gram), 1e-12 * s.hdiv_gram.norm());
}

TEST(Assemble, ComplianceStaysBoundedAsLambdaGrows) {
  Mesh m = build_domain("unit_square");
  OrderMap om = make_order_map(m, 1);
  ProblemSpec spec;
  spec.material = {1.0, 0.0};
  const double base = assemble(m, om, spec).a.norm();
  spec.material.lambda = std::numeric_limits<double>::infinity();
  const SparseMatrix limit = assemble(m, om, spec).a;
  for (double lambda : {1e2, 1e4, 1e8}) {
    spec.material.lambda = lambda;
    SparseMatrix a = assemble(m, om, spec).a;
    EXPECT_LE(a.norm(), base * (1 + 1e-12));
    EXPECT_LT(SparseMatrix(a - limit).norm(), 10.0 / lambda * base);
  }
}

TEST(Assemble, DivergenceBlockMatchesIndependentQuadrature) {
  for (const char* name : {"lshape_affine", "lshape_circular"}) {
    Mesh m = build_domain(name);
    std::vector<int> orders{0, 1, 2, 3, 4, 2};
    MixedSystem s = assemble(m, make_order_map(m, orders), ProblemSpec{});
    std::mt19937 gen(3);
    std::normal_distribution<double> nd;
    SolutionTriple sol;
    sol.disc = s.disc;
    sol.sigma = VectorXd(s.a.rows());
    for (int i = 0; i < sol.sigma.size(); ++i) sol.sigma(i) = nd(gen);
    sol.u = VectorXd::Zero(s.b_div.cols());
    sol.p = VectorXd::Zero(s.b_skew.cols());
    VectorXd fast = s.b_div.transpose() * sol.sigma;
    VectorXd slow = VectorXd::Zero(fast.size());
    const DofMap& dofs = s.disc->dofs;
    for (int t = 0; t < 6; ++t) {
      const int r = orders[t], nv = dim_p(r);
      const QuadRule& q = element_quadrature(m, t, 46);
      VectorXd psi(nv);
      for (std::size_t i = 0; i < q.size(); ++i) {
        ElementPoint pt{t, q.points[i], map_eval(m, t, q.points[i])};
        FieldValues v = evaluate(sol, pt);
        ortho_basis(r).eval(q.points[i], psi);
        // physical basis psi/det against the physical measure det dx̂
        for (int c = 0; c < 2; ++c)
          slow.segment(dofs.disp_first[t] - dofs.n_stress + c * nv, nv) += q.weights[i] * v.div_sigma(c) * psi;
      }
    }
    EXPECT_LT((fast - slow).norm(), 1e-11 * slow.norm()) << name;
  }
}

TEST(Solve, ZeroDataGivesZero) {
  Mesh m = build_domain("lshape_circular");
  SolutionTriple sol = solve(assemble(m, make_order_map(m, 2), ProblemSpec{}));
  EXPECT_EQ(sol.sigma.norm() + sol.u.norm() + sol.p.norm(), 0.0);
}

TEST(Solve, ReproducesRepresentableSolution) {
  // u in P2, sigma and p in P1: inside the order-2 spaces on affine meshes.
  for (const char* name : {"unit_square", "lshape_affine"}) {
    Mesh m = refine_uniform(build_domain(name));
    Quadratic ex = random_quadratic(11);
    SolutionTriple sol = solve(assemble(m, make_order_map(m, 2), ex.spec()));
    EXPECT_LT(sol.report.residual, 1e-9);
    EXPECT_LT(sol.report.weak_symmetry, 1e-9);
    Errors e = max_errors(sol, ex);
    EXPECT_LT(e.sigma, 1e-9) << name;
    EXPECT_LT(e.u, 1e-9) << name;
    EXPECT_LT(e.p, 1e-9) << name;
  }
}

TEST(Solve, LinearDisplacementAtLowestOrder) {
  // Constant stress and rotation are exact at r = 0; u is linear, so only its
  // element averages are recovered.
  Mesh m = refine_uniform(build_domain("unit_square"));
  Quadratic ex = random_quadratic(5, true);
  SolutionTriple sol = solve(assemble(m, make_order_map(m, 0), ex.spec()));
  Errors e = max_errors(sol, ex);
  EXPECT_LT(e.sigma, 1e-10);
  EXPECT_LT(e.p, 1e-10);
}

TEST(Solve, CurvedSmoothProblemContracts) {
  Quadratic ex = random_quadratic(17);
  Mesh m = build_domain("lshape_circular");
  for (int level = 0; level < 2; ++level) {
    std::vector<int> orders(m.triangles.size());
    for (std::size_t t = 0; t < orders.size(); ++t) orders[t] = 1 + static_cast<int>(t % 3);
    SolutionTriple sol = solve(assemble(m, make_order_map(m, orders), ex.spec()));
    EXPECT_LT(sol.report.residual, 1e-9);
    EXPECT_LT(sol.report.weak_symmetry, 1e-9);
    // Normal stress continuity seen from both sides of each interior edge.
    double jump = 0.0;
    for (std::size_t e = 0; e < m.edges.size(); ++e) {
      if (m.edges[e].boundary) continue;
      std::vector<std::pair<int, int>> sides;
      for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t)
        for (int i = 0; i < 3; ++i)
          if (m.triangles[t].e[i] == static_cast<int>(e)) sides.emplace_back(t, i);
      ASSERT_EQ(sides.size(), 2u);
      for (double s : {0.13, 0.5, 0.91}) {
        // Same physical point: the two traversals run in opposite directions.
        auto [t0, i0] = sides[0];
        auto [t1, i1] = sides[1];
        Vec2 xh0 = ref_edge_point(i0, s), xh1 = ref_edge_point(i1, 1.0 - s);
        ElementPoint p0{t0, xh0, map_eval(m, t0, xh0)}, p1{t1, xh1, map_eval(m, t1, xh1)};
        ASSERT_LT((p0.map.x - p1.map.x).norm(), 1e-12);
        Vec2 n = rotate_cw(p0.map.jac * ref_edge_tangent(i0)).normalized();
        jump = std::max(jump, (evaluate(sol, p0).sigma * n - evaluate(sol, p1).sigma * n).norm());
      }
    }
    EXPECT_LT(jump, 1e-9);
    m = refine_uniform(m);
  }
}

TEST(Solve, RotationSignMatchesSkewGradient) {
  // p_h approximates (u_{2,1} - u_{1,2}) / 2, not its negative.
  Quadratic ex = random_quadratic(23);
  for (auto& c : ex.a) c[4] += 2.0;
  Mesh m = refine_uniform(build_domain("unit_square"));
  SolutionTriple sol = solve(assemble(m, make_order_map(m, 1), ex.spec()));
  double same = 0.0, flipped = 0.0;
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
    ElementPoint pt{t, Vec2(1.0 / 3, 1.0 / 3), map_eval(m, t, Vec2(1.0 / 3, 1.0 / 3))};
    double ph = evaluate(sol, pt).p;
    same = std::max(same, std::abs(ph - ex.p(pt.map.x)));
    flipped = std::max(flipped, std::abs(ph + ex.p(pt.map.x)));
  }
  EXPECT_LT(same, 0.1 * flipped);
}

TEST(EvalSolution, PointLocationAgreesWithElementEvaluation) {
  Mesh m = refine_uniform(build_domain("lshape_circular"));
  Quadratic ex = random_quadratic(2);
  SolutionTriple sol = solve(assemble(m, make_order_map(m, 1), ex.spec()));
  std::vector<Vec2> pts;
  std::vector<FieldValues> direct;
  for (int t = 0; t < static_cast<int>(m.triangles.size()); t += 5) {
    ElementPoint pt{t, Vec2(0.21, 0.37), map_eval(m, t, Vec2(0.21, 0.37))};
    pts.push_back(pt.map.x);
    direct.push_back(evaluate(sol, pt));
  }
  std::vector<FieldValues> located = eval_solution(sol, pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_LT((located[i].sigma - direct[i].sigma).norm(), 1e-10);
    EXPECT_LT((located[i].u - direct[i].u).norm(), 1e-10);
  }
  EXPECT_THROW(locate_point(m, Vec2(5, 5)), ValidationError);
}

TEST(InfSup, LanczosMatchesDenseEigenvalues) {
  Mesh m = build_domain("lshape_circular");
  OrderMap om = make_order_map(m, std::vector<int>{0, 1, 2, 1, 0, 2});
  MixedSystem s = assemble(m, om, ProblemSpec{});
  InfSupResult res = estimate_inf_sup(s);
  // Dense oracle: S = B^T G^{-1} B against blockdiag(M_u, M_p).
  MatrixXd b(s.b_div.rows(), s.b_div.cols() + s.b_skew.cols());
  b << MatrixXd(s.b_div), MatrixXd(s.b_skew);
  MatrixXd g = MatrixXd(s.hdiv_gram);
  MatrixXd sm = b.transpose() * g.ldlt().solve(b);
  MatrixXd mass = MatrixXd::Zero(b.cols(), b.cols());
  mass.topLeftCorner(s.b_div.cols(), s.b_div.cols()) = MatrixXd(s.mass_disp);
  mass.bottomRightCorner(s.b_skew.cols(), s.b_skew.cols()) = MatrixXd(s.mass_rot);
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(sm, mass);
  EXPECT_NEAR(res.beta, std::sqrt(es.eigenvalues()(0)), 1e-8);
  EXPECT_GT(res.beta, 0.0);
}

TEST(InfSup, PositiveOnBuiltInDomains) {
  for (const char* name : {"unit_square", "lshape_affine", "lshape_circular"})
    for (int r = 0; r <= 2; ++r) {
      Mesh m = build_domain(name);
      EXPECT_GT(estimate_inf_sup(m, make_order_map(m, r)).beta, 1e-3) << name << " " << r;
    }
}

TEST(Coercivity, KernelEigenvaluePositiveAndStable) {
  Mesh m = build_domain("unit_square");
  std::vector<double> values;
  for (int level = 0; level < 3; ++level) {
    MixedSystem s = assemble(m, make_order_map(m, 0), ProblemSpec{});
    MatrixXd c(s.b_div.rows(), s.b_div.cols() + s.b_skew.cols());
    c << MatrixXd(s.b_div), MatrixXd(s.b_skew);
    Eigen::FullPivLU<MatrixXd> lu(c.transpose());
    MatrixXd z = lu.kernel();
    MatrixXd a = z.transpose() * MatrixXd(s.a) * z;
    MatrixXd gram = z.transpose() * MatrixXd(s.hdiv_gram) * z;
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(a, gram);
    values.push_back(es.eigenvalues()(0));
    EXPECT_GT(values.back(), 1e-3);
    m = refine_uniform(m);
  }
  EXPECT_LT(*std::max_element(values.begin(), values.end()) / *std::min_element(values.begin(), values.end()), 1.5);
}

TEST(Dumps, MatrixAndSolutionLineCounts) {
  Mesh m = build_domain("unit_square");
  MixedSystem s = assemble(m, make_order_map(m, 0), random_quadratic(4).spec());
  std::ostringstream mo, so;
  write_matrix(mo, s.matrix);
  SolutionTriple sol = solve(s);
  write_solution(so, sol);
  auto lines = [](const std::string& x) { return std::count(x.begin(), x.end(), '\n'); };
  EXPECT_EQ(lines(mo.str()), s.matrix.nonZeros());
  EXPECT_EQ(lines(so.str()), 1 + s.disc->dofs.total);
}

TEST(Material, RejectsInvalidParameters) {
  EXPECT_THROW((MaterialIso{0.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((MaterialIso{1.0, -1.0}.validate()), ValidationError);
  EXPECT_NO_THROW((MaterialIso{1.0, std::numeric_limits<double>::infinity()}.validate()));
}
