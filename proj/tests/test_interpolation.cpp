#include "afw2d/interpolation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace afw2d;

namespace {

Mesh triangle_mesh(Vec2 a, Vec2 b, Vec2 c) {
  Mesh m;
  m.vertices = {a, b, c};
  Patch p;
  p.corners = {a, b, c};
  m.patches = {p};
  m.edges = {{{1, 2}, {}, 1}, {{0, 2}, {}, 1}, {{0, 1}, {}, 1}};
  m.triangles = {{{0, 1, 2}, {0, 1, 2}, 0, {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)}}};
  return m;
}

Mesh random_triangle(std::mt19937& gen) {
  std::uniform_real_distribution<double> u(-1, 1);
  for (;;) {
    Vec2 a(u(gen), u(gen)), b(u(gen), u(gen)), c(u(gen), u(gen));
    double det = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (det > 0.2) return triangle_mesh(a, b, c);
  }
}

// Physical Piola image of reference coefficients of a Λ¹ set.
VectorField piola_field(const BasisSet& set, VectorXd coef) {
  return [&set, coef](const ElementPoint& p) {
    PhysicalValues pv = physical_values(set, p.map, p.xhat);
    VectorSample s;
    s.value = pv.val * coef;
    s.div = pv.div.dot(coef);
    return s;
  };
}

// Λ⁰ vector field from component-major coefficients of a scalar set.
VectorField composition(const std::shared_ptr<const BasisSet>& set, const VectorXd& coef, int t = 0) {
  const int m = set->size();
  MatrixXd c(m, 2);
  c.col(0) = coef.head(m);
  c.col(1) = coef.tail(m);
  std::vector<std::shared_ptr<const BasisSet>> sets(t + 1, set);
  std::vector<MatrixXd> coefs(t + 1, c);
  return composition_field(sets, coefs);
}

double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

VectorField zero_field() {
  return [](const ElementPoint&) { return VectorSample{}; };
}

}  // namespace

TEST(SelectT, LowOrdersAndAdmissibility) {
  EXPECT_EQ(select_t(0).t, 0.0);
  EXPECT_EQ(select_t(1).t, 0.0);
  for (int r = 2; r <= 3; ++r) {
    auto [a, c] = reference_singular_values(r, 0.0);
    EXPECT_GT(a, 1e-3) << r;
    EXPECT_GT(c, 1e-3) << r;
  }
  for (int r = 0; r <= 6; ++r) {
    TSelection s = select_t(r);
    EXPECT_GE(s.t, 0.0);
    EXPECT_LE(s.t, 1.0);
    EXPECT_GT(std::min(s.min_sv_pi_minus, s.min_sv_c), 1e-8) << r;
  }
}

TEST(SelectT, DeterminantNotIdenticallyZero) {
  for (int r = 0; r <= 6; ++r) {
    double best = 0.0;
    for (int j = 0; j <= 32; ++j) best = std::max(best, std::abs(pi_minus_determinant(r, j / 32.0)));
    EXPECT_GT(best, 1e-12) << r;
  }
}

TEST(Pi2, ReproducesSpaceMembers) {
  Mesh m = refine_uniform(build_domain("lshape_circular"));
  OrderMap om = make_order_map(m, 3);
  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 24; t += 5) {
    VectorXd c(dim_p(3));
    for (int i = 0; i < c.size(); ++i) c(i) = nd(gen);
    ScalarField u = [&c](const ElementPoint& p) {
      VectorXd v(c.size());
      ortho_basis(3).eval(p.xhat, v);
      return v.dot(c) / p.map.det;
    };
    EXPECT_LT(max_abs(proj_pi2(m, om, t, u) - c), 1e-12);
  }
}

TEST(Pi2, AffineMatchesPhysicalL2Projection) {
  std::mt19937 gen(4);
  auto u = [](const Vec2& x) { return std::sin(2 * x.x() + 0.3) * std::exp(x.y()); };
  for (int trial = 0; trial < 5; ++trial) {
    Mesh m = random_triangle(gen);
    const int r = 2;
    OrderMap om = make_order_map(m, r);
    VectorXd c = proj_pi2(m, om, 0, [&](const ElementPoint& p) { return u(p.map.x); });
    // Oracle: normal equations over physical monomials.
    const auto& q = quadrature(30);
    const int n = dim_p(r);
    MatrixXd gram = MatrixXd::Zero(n, n);
    VectorXd rhs = VectorXd::Zero(n);
    auto mono = [&](const Vec2& x) {
      VectorXd v(n);
      int k = 0;
      for (int d = 0; d <= r; ++d)
        for (int j = 0; j <= d; ++j) v(k++) = std::pow(x.x(), d - j) * std::pow(x.y(), j);
      return v;
    };
    for (std::size_t i = 0; i < q.size(); ++i) {
      MapEval g = map_eval(m, 0, q.points[i]);
      VectorXd v = mono(g.x);
      gram += q.weights[i] * g.det * v * v.transpose();
      rhs += q.weights[i] * g.det * u(g.x) * v;
    }
    VectorXd a = gram.ldlt().solve(rhs);
    for (std::size_t i = 0; i < q.size(); i += 7) {
      MapEval g = map_eval(m, 0, q.points[i]);
      VectorXd psi(n);
      ortho_basis(r).eval(q.points[i], psi);
      EXPECT_NEAR(psi.dot(c) / g.det, mono(g.x).dot(a), 1e-10);  // monomial Gram is ill-conditioned
    }
  }
}

TEST(Pi2, CurvedDeviationFromL2ProjectionShrinks) {
  // Sampled operator norm of Π² - P on the elements touching the arc.
  Mesh m = build_domain("lshape_circular");
  const int r = 1;
  double prev = 1e300;
  std::mt19937 gen(8);
  std::normal_distribution<double> nd;
  for (int level = 0; level < 3; ++level) {
    OrderMap om = make_order_map(m, r);
    double worst = 0.0;
    for (int sample = 0; sample < 100; ++sample) {
      std::array<double, 6> a;
      for (double& v : a) v = nd(gen);
      auto u = [&a](const Vec2& x) {
        return a[0] + a[1] * std::sin(3 * x.x()) + a[2] * std::cos(3 * x.y()) + a[3] * x.x() * x.y() +
               a[4] * std::sin(5 * x.x() * x.y()) + a[5] * x.x() * x.x();
      };
      for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        if (m.is_affine(static_cast<int>(t))) continue;
        const int ti = static_cast<int>(t);
        VectorXd c = proj_pi2(m, om, ti, [&](const ElementPoint& p) { return u(p.map.x); });
        // Standard projection: Gram of psi/det in the physical inner product.
        const auto& q = element_quadrature(m, ti, 30);
        const int n = dim_p(r);
        MatrixXd gram = MatrixXd::Zero(n, n);
        VectorXd rhs = VectorXd::Zero(n);
        double unorm = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
          MapEval g = map_eval(m, ti, q.points[i]);
          VectorXd psi(n);
          ortho_basis(r).eval(q.points[i], psi);
          // physical basis psi/det, physical measure det dx̂
          gram += q.weights[i] * psi * psi.transpose() / g.det;
          rhs += q.weights[i] * u(g.x) * psi;
          unorm += q.weights[i] * g.det * u(g.x) * u(g.x);
        }
        VectorXd d = gram.ldlt().solve(rhs) - c;
        double diff = std::sqrt(d.dot(gram * d));
        worst = std::max(worst, diff / std::sqrt(unorm));
      }
    }
    EXPECT_LT(worst, prev) << level;
    prev = worst;
    m = refine_uniform(m);
  }
}

TEST(Pi1, ReproducesTargetOnAffineAndCurved) {
  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  for (const char* name : {"lshape_affine", "lshape_circular"}) {
    Mesh m = build_domain(name);
    std::vector<int> orders{0, 1, 2, 3, 4, 2};
    OrderMap om = make_order_map(m, orders);
    for (int t = 0; t < 6; ++t)
      for (OperatorKind kind : {OperatorKind::pi1, OperatorKind::pi1_minus}) {
        LocalInterpolant op(m, om, t, kind);
        VectorXd c(op.target().size());
        for (int i = 0; i < c.size(); ++i) c(i) = nd(gen);
        EXPECT_LT(max_abs(op.apply(piola_field(op.target(), c)) - c), 1e-10) << name << " " << t;
      }
  }
}

TEST(Pi1, CommutesWithDivergenceOnRandomTriangles) {
  std::mt19937 gen(5);
  for (int sample = 0; sample < 100; ++sample) {
    Mesh m = random_triangle(gen);
    const int r = sample % 5;
    OrderMap om = make_order_map(m, r);
    VectorField w = random_polynomial_field(r + 3, 100 + sample);
    VectorXd ref = proj_pi2_div(m, om, 0, w);
    LocalInterpolant p1(m, om, 0, OperatorKind::pi1);
    LocalInterpolant pm(m, om, 0, OperatorKind::pi1_minus);
    EXPECT_LT(max_abs(divergence_coefficients(p1.target(), p1.apply(w), r) - ref), 1e-9);
    EXPECT_LT(max_abs(divergence_coefficients(pm.target(), pm.apply(w), r) - ref), 1e-9);
  }
}

TEST(Pi1, EdgeMomentsVanishPhysically) {
  std::mt19937 gen(6);
  for (int sample = 0; sample < 10; ++sample) {
    Mesh m = random_triangle(gen);
    const int r = 2;
    OrderMap om = make_order_map(m, r);
    VectorField w = random_polynomial_field(r + 3, 7 + sample);
    LocalInterpolant p1(m, om, 0, OperatorKind::pi1);
    VectorField pw = piola_field(p1.target(), p1.apply(w));
    const auto& line = gauss_line(12);
    for (int i = 0; i < 3; ++i) {
      const Vec2 a = m.vertices[(i + 1) % 3], b = m.vertices[(i + 2) % 3];
      const Vec2 n = rotate_cw(b - a).normalized();
      for (int k = 0; k <= r + 1; ++k) {
        double mom = 0.0;
        for (std::size_t q = 0; q < line.points.size(); ++q) {
          double s = line.points[q];
          ElementPoint p;
          p.element = 0;
          p.xhat = ref_edge_point(i, s);
          p.map = map_eval(m, 0, p.xhat);
          ASSERT_LT((p.map.x - (a + s * (b - a))).norm(), 1e-14);
          mom += line.weights[q] * (pw(p).value - w(p).value).dot(n) * legendre01(k, s) * (b - a).norm();
        }
        EXPECT_LT(std::abs(mom), 1e-10);
      }
    }
  }
}

TEST(Pi1, MomentResidualsAreBasisIndependent) {
  // Residual moments against monomial test functions instead of the
  // orthonormal ones used inside the operator.
  std::mt19937 gen(12);
  Mesh m = random_triangle(gen);
  const int r = 3;
  OrderMap om = make_order_map(m, r);
  VectorField w = random_polynomial_field(r + 3, 99);
  LocalInterpolant pm(m, om, 0, OperatorKind::pi1_minus);
  VectorField pw = piola_field(pm.target(), pm.apply(w));
  const auto& q = quadrature(30);
  double mean = 0.0, area = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    ElementPoint p{0, q.points[i], map_eval(m, 0, q.points[i])};
    mean += q.weights[i] * p.map.det * (pw(p).div - w(p).div);
    area += q.weights[i] * p.map.det;
  }
  mean /= area;
  for (int a = 0; a <= r; ++a)
    for (int b = 0; a + b <= r; ++b) {
      if (a + b == 0) continue;
      double mom = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        ElementPoint p{0, q.points[i], map_eval(m, 0, q.points[i])};
        double psi = std::pow(p.xhat.x(), a) * std::pow(p.xhat.y(), b);
        mom += q.weights[i] * p.map.det * (pw(p).div - w(p).div - mean) * psi;
      }
      EXPECT_LT(std::abs(mom), 1e-9);
    }
}

TEST(OpW, ReproducesVanishingMembersAndKillsVertices) {
  std::mt19937 gen(13);
  std::normal_distribution<double> nd;
  for (const char* name : {"lshape_affine", "lshape_circular"}) {
    Mesh m = refine_uniform(build_domain(name));
    std::vector<int> orders(m.triangles.size());
    for (std::size_t t = 0; t < orders.size(); ++t) orders[t] = static_cast<int>(t % 5);
    OrderMap om = make_order_map(m, orders);
    for (int t = 0; t < static_cast<int>(m.triangles.size()); t += 3) {
      LocalInterpolant op(m, om, t, OperatorKind::w);
      auto set = vector_space(local_spec(m, om, t, FormKind::L0, 2));
      // Zero vertex coefficients: vertex functions come first in the L0 set.
      VectorXd c(2 * set->size());
      for (int i = 0; i < c.size(); ++i) c(i) = nd(gen);
      for (int j = 0; j < set->size(); ++j)
        if (set->meta[j].entity == EntityKind::vertex) c(j) = c(set->size() + j) = 0.0;
      EXPECT_LT(max_abs(op.apply(composition(set, c, t)) - c), 1e-10) << name << " " << t;

      VectorField w = random_polynomial_field(6, 40 + t);
      VectorField ww = composition(set, op.apply(w), t);
      for (int v = 0; v < 3; ++v) {
        ElementPoint p{t, ref_vertex(v), map_eval(m, t, ref_vertex(v))};
        EXPECT_LT(ww(p).value.norm(), 1e-11);
      }
    }
  }
}

TEST(OpW, CurlBoundConstantIsStableUnderScaling) {
  std::mt19937 gen(21);
  const Vec2 a(0.1, 0.2), b(1.1, 0.4), c(0.3, 1.0);
  std::vector<double> fitted;
  for (double h : {1.0, 0.5, 0.25, 0.125, 0.0625}) {
    Mesh m = triangle_mesh(a, a + h * (b - a), a + h * (c - a));
    OrderMap om = make_order_map(m, 2);
    LocalInterpolant op(m, om, 0, OperatorKind::w);
    auto set = vector_space(local_spec(m, om, 0, FormKind::L0, 2));
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
      VectorField w = random_polynomial_field(4, 500 + s);
      FieldNorms wn = field_norms(m, w, 20);
      FieldNorms cn = field_norms(m, composition(set, op.apply(w)), 20);
      worst = std::max(worst, cn.h1_semi / (wn.l2 / h + std::sqrt(wn.l2 * wn.l2 + wn.h1_semi * wn.h1_semi)));
    }
    fitted.push_back(worst);
  }
  double lo = *std::min_element(fitted.begin(), fitted.end());
  double hi = *std::max_element(fitted.begin(), fitted.end());
  EXPECT_LT(hi / lo, 3.0);
}

TEST(Clement, ConstantsAndAffineFieldsReproduced) {
  for (const char* name : {"lshape_affine", "unit_square"}) {
    Mesh m = refine_uniform(build_domain(name));
    VectorField affine = physical_field([](const Vec2& x) {
      Mat2 j;
      j << 1.5, -0.5, 2.0, 0.25;
      return VectorSample::from(Vec2(0.3, -1.0) + j * x, j);
    });
    std::vector<Vec2> v = clement(m, affine);
    for (std::size_t i = 0; i < v.size(); ++i) {
      Mat2 j;
      j << 1.5, -0.5, 2.0, 0.25;
      EXPECT_LT((v[i] - (Vec2(0.3, -1.0) + j * m.vertices[i])).norm(), 1e-12);
    }
  }
  Mesh m = refine_uniform(build_domain("lshape_circular"));
  std::vector<Vec2> v = clement(m, physical_field([](const Vec2&) { return VectorSample::from({2, -3}, Mat2::Zero()); }));
  for (const Vec2& x : v) EXPECT_LT((x - Vec2(2, -3)).norm(), 1e-12);
}

TEST(Clement, LocalEstimateConstantStable) {
  // ||w - R w||_{L2(T)} <= c h_T ||w||_{H1(K_T)} for a bump.
  VectorField bump = physical_field([](const Vec2& x) {
    double e = std::exp(-8 * (x - Vec2(0.4, 0.6)).squaredNorm());
    Mat2 j;
    Vec2 g = -16 * (x - Vec2(0.4, 0.6)) * e;
    j.row(0) = g.transpose();
    j.row(1) = 0.5 * g.transpose();
    return VectorSample::from(Vec2(e, 0.5 * e), j);
  });
  Mesh m = refine_uniform(build_domain("unit_square"));
  std::vector<double> fitted;
  for (int level = 0; level < 3; ++level) {
    VectorField r = vertex_field(m, clement(m, bump));
    VectorField diff = [&](const ElementPoint& p) {
      VectorSample a = bump(p), b = r(p);
      return VectorSample{a.value - b.value, a.jac - b.jac, a.div - b.div};
    };
    double worst = 0.0;
    for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
      double err = field_norms(m, diff, 12, t).l2;
      double patch = 0.0, h = 0.0;
      for (int s = 0; s < static_cast<int>(m.triangles.size()); ++s) {
        bool touch = false;
        for (int a : m.triangles[t].v)
          for (int b : m.triangles[s].v) touch |= a == b;
        if (!touch) continue;
        FieldNorms n = field_norms(m, bump, 12, s);
        patch += n.l2 * n.l2 + n.h1_semi * n.h1_semi;
      }
      for (int i = 0; i < 3; ++i)
        h = std::max(h, (m.vertices[m.triangles[t].v[i]] - m.vertices[m.triangles[t].v[(i + 1) % 3]]).norm());
      worst = std::max(worst, err / (h * std::sqrt(patch)));
    }
    fitted.push_back(worst);
    m = refine_uniform(m);
  }
  EXPECT_LT(*std::max_element(fitted.begin(), fitted.end()) / *std::min_element(fitted.begin(), fitted.end()), 3.0);
}

TEST(Wtilde, KeyIdentityAffineAndCurved) {
  for (const char* name : {"lshape_affine", "lshape_circular"}) {
    Mesh m = refine_uniform(build_domain(name));
    std::vector<int> orders(m.triangles.size());
    for (std::size_t t = 0; t < orders.size(); ++t) orders[t] = static_cast<int>((3 * t) % 5);
    OrderMap om = make_order_map(m, orders);
    VectorField w = random_polynomial_field(5, 77);
    VectorField wt = op_wtilde(m, om, w).field(m);
    double worst = 0.0;
    for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
      LocalInterpolant pm(m, om, t, OperatorKind::pi1_minus);
      worst = std::max(worst, max_abs(pm.apply(wt) - pm.apply(w)));
    }
    EXPECT_LT(worst, 1e-9) << name;
  }
}

TEST(Wtilde, AffineFieldIsFixed) {
  Mesh m = refine_uniform(build_domain("lshape_affine"));
  OrderMap om = make_order_map(m, 2);
  Mat2 j;
  j << 0.5, 1.0, -2.0, 0.75;
  VectorField affine = physical_field([j](const Vec2& x) { return VectorSample::from(Vec2(1, 2) + j * x, j); });
  VectorField wt = op_wtilde(m, om, affine).field(m);
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t)
    for (Vec2 xh : {Vec2(0.2, 0.2), Vec2(0.7, 0.1), Vec2(0.05, 0.9)}) {
      ElementPoint p{t, xh, map_eval(m, t, xh)};
      EXPECT_LT((wt(p).value - affine(p).value).norm(), 1e-11);
    }
}

TEST(Wtilde, CurlBoundStableOverRefinement) {
  VectorField w = random_polynomial_field(4, 3, 2.0);
  Mesh m = build_domain("lshape_affine");
  std::vector<double> fitted;
  for (int level = 0; level < 3; ++level) {
    OrderMap om = make_order_map(m, 1);
    FieldNorms wn = field_norms(m, w, 20);
    FieldNorms cn = field_norms(m, op_wtilde(m, om, w).field(m), 20);
    fitted.push_back(cn.h1_semi / std::sqrt(wn.l2 * wn.l2 + wn.h1_semi * wn.h1_semi));
    m = refine_uniform(m);
  }
  EXPECT_LT(*std::max_element(fitted.begin(), fitted.end()) / *std::min_element(fitted.begin(), fitted.end()), 2.0);
}

TEST(CheckCommuting, AffineAllOrders) {
  Mesh m = build_domain("lshape_affine");
  for (int r = 0; r <= kDefaultRMax; ++r) {
    CommutingReport rep = check_commuting(m, make_order_map(m, r), 3, 10 + r);
    EXPECT_TRUE(rep.wtilde_defined) << rep.note;
    EXPECT_LT(rep.div_pi_minus, 1e-9) << r;
    EXPECT_LT(rep.div_pi1, 1e-9) << r;
    EXPECT_LT(rep.wtilde, 1e-9) << r;
  }
}

TEST(CheckCommuting, CurvedCoarse) {
  Mesh m = build_domain("lshape_circular");
  std::vector<int> orders{0, 1, 2, 3, 4, 2};
  CommutingReport rep = check_commuting(m, make_order_map(m, orders), 3);
  EXPECT_LT(rep.div_pi_minus, 1e-9);
  EXPECT_LT(rep.div_pi1, 1e-9);
  if (rep.wtilde_defined) EXPECT_LT(rep.wtilde, 1e-9);
}

TEST(CheckCommuting, ZeroFieldGivesZero) {
  Mesh m = build_domain("lshape_circular");
  OrderMap om = make_order_map(m, 2);
  WtildeResult wt = op_wtilde(m, om, zero_field());
  for (const auto& c : wt.coef) EXPECT_EQ(c.cwiseAbs().maxCoeff(), 0.0);
  for (int t = 0; t < 6; ++t) {
    EXPECT_EQ(max_abs(proj_pi1(m, om, t, zero_field())), 0.0);
    EXPECT_EQ(max_abs(proj_pi1_minus(m, om, t, zero_field())), 0.0);
  }
}

TEST(OpW, CurvedSystemApproachesAffine) {
  // ||E - C|| / ||C|| between the true-map system and its affine-part twin,
  // on the element touching the arc midpoint, across refinements.
  Mesh m = build_domain("lshape_circular");
  double prev = 1e300;
  for (int level = 0; level < 4; ++level) {
    OrderMap om = make_order_map(m, 2);
    double worst = 0.0;
    for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
      if (m.is_affine(t)) continue;
      LocalInterpolant e(m, om, t, OperatorKind::w, Geometry::exact);
      LocalInterpolant c(m, om, t, OperatorKind::w, Geometry::affine_part);
      worst = std::max(worst, (e.system() - c.system()).norm() / c.system().norm());
    }
    EXPECT_LT(worst, prev) << level;
    prev = worst;
    m = refine_uniform(m);
  }
}

TEST(ProjectionGap, ZeroOnAffineMeshes) {
  Mesh m = build_domain("lshape_affine");
  EXPECT_EQ(projection_gap(m, make_order_map(m, 1), 3), 0.0);
}

TEST(ProjectionGap, BoundsEverySampledRatio) {
  Mesh m = build_domain("lshape_circular");
  const int r = 1;
  OrderMap om = make_order_map(m, r);
  const double gap = projection_gap(m, om, 3);
  std::mt19937 gen(4);
  std::normal_distribution<double> nd;
  for (int sample = 0; sample < 20; ++sample) {
    std::array<double, 6> a;
    for (double& v : a) v = nd(gen);
    auto u = [&a](const Vec2& x) {
      return a[0] + a[1] * x.x() + a[2] * x.y() + a[3] * x.x() * x.y() + a[4] * x.x() * x.x() + a[5] * x.y() * x.y() * x.y();
    };
    for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) {
      if (m.is_affine(t)) continue;
      VectorXd c = proj_pi2(m, om, t, [&](const ElementPoint& p) { return u(p.map.x); });
      const auto& q = element_quadrature(m, t, 30);
      const int n = dim_p(r);
      MatrixXd gram = MatrixXd::Zero(n, n);
      VectorXd rhs = VectorXd::Zero(n);
      double unorm = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        MapEval g = map_eval(m, t, q.points[i]);
        VectorXd psi(n);
        ortho_basis(r).eval(q.points[i], psi);
        gram += q.weights[i] * psi * psi.transpose() / g.det;
        rhs += q.weights[i] * u(g.x) * psi;
        unorm += q.weights[i] * g.det * u(g.x) * u(g.x);
      }
      VectorXd d = gram.ldlt().solve(rhs) - c;
      EXPECT_LE(std::sqrt(d.dot(gram * d) / unorm), gap * (1 + 1e-8));
    }
  }
}

TEST(ProjectionGap, DecaysToFirstOrder) {
  // Pre-asymptotic on the coarse mesh; the per-level ratio grows towards 2.
  Mesh m = build_domain("lshape_circular");
  std::vector<double> gaps;
  for (int level = 0; level < 4; ++level) {
    gaps.push_back(projection_gap(m, make_order_map(m, 0), 3));
    m = refine_uniform(m);
  }
  double prev_ratio = 1.0;
  for (std::size_t k = 1; k < gaps.size(); ++k) {
    const double ratio = gaps[k - 1] / gaps[k];
    EXPECT_GT(ratio, prev_ratio) << k;
    prev_ratio = ratio;
  }
  EXPECT_GT(prev_ratio, 1.75);
}
