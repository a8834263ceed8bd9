#pragma once

#include "afw2d/assembly.hpp"

#include <iosfwd>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace afw2d {

/// Boundary condition on the two faces of a corner.
enum class CornerBc { clamped_clamped, free_free, clamped_free };
CornerBc parse_corner_bc(const std::string& name);
std::string to_string(CornerBc bc);

/// Kolosov constant of the 2D Lame system, (lambda + 3 mu) / (lambda + mu).
double kolosov_kappa(const MaterialIso& material);

/// Determinant of the 4x4 real system whose kernel holds the corner solutions
/// phi = A z^s, psi = B z^s on a wedge of opening `angle`.
double corner_determinant(const MaterialIso& material, double angle, CornerBc bc, double s);

/// Smallest positive real root s of the corner determinant.
struct CornerExponent {
  double lambda = 0.0;
  double residual = 0.0;
};
CornerExponent corner_exponent(const MaterialIso& material, double angle, CornerBc bc);

/// Material and corner of the reentrant L-shape case, read from an ini file
/// with a [williams] section (mu, lambda, angle_deg, bc).
struct WilliamsConfig {
  MaterialIso material{1.0, 6.0 / 7.0};
  double angle = 1.5 * std::numbers::pi;
  CornerBc bc = CornerBc::clamped_clamped;
};
WilliamsConfig load_williams_config(const std::string& path);

enum class SolutionKind { lshape_singular, smooth_poly, smooth_trig };
SolutionKind parse_solution_kind(const std::string& name);
std::string to_string(SolutionKind kind);

struct ExactParams {
  MaterialIso material{1.0, 1.0};
  int degree = 2;        // smooth_poly
  unsigned seed = 1;     // smooth_poly coefficients
  double amplitude = 1.0;
  WilliamsConfig williams;  // lshape_singular; material comes from here
  Vec2 corner{0.0, 0.0};
  double theta0 = 0.0;  // direction of the first corner face
};

struct ExactSample {
  Vec2 u = Vec2::Zero();
  Mat2 grad_u = Mat2::Zero();
  Mat2 sigma = Mat2::Zero();
  Vec2 div_sigma = Vec2::Zero();
  double p = 0.0;  // (u_{2,1} - u_{1,2}) / 2
};

struct ExactSolution {
  SolutionKind kind = SolutionKind::smooth_poly;
  MaterialIso material;
  double williams_lambda = std::numeric_limits<double>::quiet_NaN();
  std::optional<Vec2> singular_point;
  std::function<ExactSample(const Vec2&)> eval;

  /// Body force -div sigma and boundary displacement u.
  ProblemSpec problem() const;
};
ExactSolution exact_solution(SolutionKind kind, const ExactParams& params = {});

struct ErrorRecord {
  double sigma_l2 = 0.0, div_l2 = 0.0, u_l2 = 0.0, p_l2 = 0.0;
  double sigma_hdiv = 0.0;
  double total = 0.0;       // product norm of the error
  double norm_total = 0.0;  // same norm of the exact solution
  double total_pct = 0.0;
  std::vector<double> element_sq;  // squared product-norm error per element
};
ErrorRecord compute_errors(const SolutionTriple& sol, const ExactSolution& exact);

/// Projection of the exact triple onto the discrete product space, field by
/// field (H(div) for the stress, L2 otherwise), and its error.
struct BestApprox {
  SolutionTriple projection;
  ErrorRecord error;
};
BestApprox best_approx(const ExactSolution& exact, const MixedSystem& system);
BestApprox best_approx(const ExactSolution& exact, const Mesh& mesh, const OrderMap& orders);

struct ConvergenceRecord {
  int level = 0;
  int ndof = 0;
  double h = 0.0;
  ErrorRecord fe;
  double best_total = 0.0;
  double best_pct = 0.0;
  double slope = 0.0;       // d log(total error) / d log(ndof) against the previous row
  double best_slope = 0.0;  // same for the best approximation
  double u_rate = 0.0;      // d log(u error) / d log(h)
  double residual = 0.0;
  double weak_symmetry = 0.0;
  int n_marked = 0;
  double marked_near_corner = 0.0;  // fraction of marked elements within 0.25 of the singular point
};

struct StudyOptions {
  bool best_approximation = true;
  int initial_refinements = 0;
};

/// Uniform refinement study. `orders` lists one order per triangle of the
/// initial (pre-refined) mesh; children inherit their parent's order.
std::vector<ConvergenceRecord> run_convergence(const Mesh& initial, const std::vector<int>& orders, int n_levels,
                                               const ExactSolution& exact, const StudyOptions& options = {});

/// Greedy bisection study driven by the true element errors.
struct AdaptiveResult {
  std::vector<ConvergenceRecord> records;
  Mesh final_mesh;
};
AdaptiveResult run_adaptive(const Mesh& initial, int order, int n_steps, double marking_fraction,
                            const ExactSolution& exact, const StudyOptions& options = {});

/// log(total) interpolated linearly in log(ndof) along a study; extrapolates
/// from the two nearest rows outside its range.
double total_at_ndof(const std::vector<ConvergenceRecord>& records, double ndof);

void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRecord>& records);

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};
/// Standalone log-log SVG chart.
void write_loglog_svg(std::ostream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<PlotSeries>& series);

}  // namespace afw2d
