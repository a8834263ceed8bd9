#include "cli.hpp"

#include "afw2d/experiments.hpp"
#include "afw2d/interpolation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace afw2d {
namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::string domain = "lshape_affine";
  double radius = 1.0;
  int order = 0;
  std::string orders;
  int levels = 0;
  int steps = 8;
  double fraction = 0.2;
  std::string material;
  std::string solution = "lshape_singular";
  int degree = 2;
  std::string williams;
  std::string out = ".";
  unsigned seed = 1;
  std::vector<std::string> tol;
  int samples = 100;
};

struct Tolerances {
  double commuting = 1e-9;
  double wtilde = 1e-9;
  double weak_symmetry = 1e-9;
  double residual = 1e-8;
};

Tolerances parse_tolerances(const std::vector<std::string>& items) {
  Tolerances tol;
  const std::map<std::string, double*> slots{{"commuting", &tol.commuting},
                                             {"wtilde", &tol.wtilde},
                                             {"weak_symmetry", &tol.weak_symmetry},
                                             {"residual", &tol.residual}};
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("--tol expects NAME=VAL, got '" + item + "'");
    auto slot = slots.find(item.substr(0, eq));
    if (slot == slots.end()) throw ValidationError("unknown tolerance '" + item.substr(0, eq) + "'");
    const std::string value = item.substr(eq + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size() || !(v > 0.0)) throw ValidationError("bad tolerance value '" + value + "'");
    *slot->second = v;
  }
  return tol;
}

int parse_int(const std::string& text) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ValidationError("bad integer '" + text + "'");
  return v;
}

/// "a..b" or a comma list.
std::vector<int> parse_orders(const std::string& text) {
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const int lo = parse_int(text.substr(0, dots)), hi = parse_int(text.substr(dots + 2));
    if (lo > hi) throw ValidationError("empty order range '" + text + "'");
    for (int r = lo; r <= hi; ++r) out.push_back(r);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_int(item));
  if (out.empty()) throw ValidationError("empty order list");
  return out;
}

std::optional<MaterialIso> parse_material(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ValidationError("--material expects mu,lambda");
  auto number = [](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ValidationError("bad material value '" + s + "'");
    return v;
  };
  MaterialIso m{number(text.substr(0, comma)), number(text.substr(comma + 1))};
  m.validate();
  return m;
}

Mesh initial_mesh(const RunConfig& cfg) {
  DomainParams dp;
  dp.radius = cfg.radius;
  return build_domain(cfg.domain, dp);
}

/// Orders per initial triangle: the --orders list (one entry or one per
/// triangle) or the uniform --order.
std::vector<int> initial_orders(const RunConfig& cfg, const Mesh& mesh) {
  const int nt = static_cast<int>(mesh.num_triangles());
  if (cfg.orders.empty()) return std::vector<int>(nt, cfg.order);
  std::vector<int> ord = parse_orders(cfg.orders);
  if (ord.size() == 1) return std::vector<int>(nt, ord[0]);
  if (static_cast<int>(ord.size()) != nt)
    throw ValidationError("--orders lists " + std::to_string(ord.size()) + " orders for " + std::to_string(nt) +
                          " triangles");
  return ord;
}

ExactSolution make_exact(const RunConfig& cfg) {
  const SolutionKind kind = parse_solution_kind(cfg.solution);
  ExactParams prm;
  prm.seed = cfg.seed;
  prm.degree = cfg.degree;
  const auto material = parse_material(cfg.material);
  if (kind == SolutionKind::lshape_singular) {
    if (cfg.domain.rfind("lshape", 0) != 0) throw ValidationError("lshape_singular needs an L-shaped domain");
    std::string path = cfg.williams;
    if (path.empty() && fs::exists(AFW2D_DEFAULT_WILLIAMS)) path = AFW2D_DEFAULT_WILLIAMS;
    if (!path.empty()) prm.williams = load_williams_config(path);
    if (material) prm.williams.material = *material;
  } else if (material) {
    prm.material = *material;
  }
  return exact_solution(kind, prm);
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << std::setprecision(10);
  return os;
}

bool check_reports(const std::vector<ConvergenceRecord>& records, const Tolerances& tol) {
  bool ok = true;
  for (const auto& r : records) {
    if (r.weak_symmetry > tol.weak_symmetry) {
      std::cerr << "level " << r.level << ": weak symmetry " << r.weak_symmetry << " exceeds " << tol.weak_symmetry
                << "\n";
      ok = false;
    }
    if (r.residual > tol.residual) {
      std::cerr << "level " << r.level << ": solver residual " << r.residual << " exceeds " << tol.residual << "\n";
      ok = false;
    }
  }
  return ok;
}

PlotSeries series(const std::string& label, const std::vector<ConvergenceRecord>& records, bool best) {
  PlotSeries s{label, {}, {}};
  for (const auto& r : records) {
    s.x.push_back(r.ndof);
    s.y.push_back(best ? r.best_pct : r.fe.total_pct);
  }
  return s;
}

int cmd_solve(const RunConfig& cfg, bool dump_matrix, bool dump_dofs) {
  const Tolerances tol = parse_tolerances(cfg.tol);
  Mesh mesh = initial_mesh(cfg);
  const ExactSolution exact = make_exact(cfg);
  std::vector<int> ord = initial_orders(cfg, mesh);
  for (int i = 0; i < cfg.levels; ++i) {
    std::vector<int> parent;
    mesh = refine_uniform(mesh, &parent);
    std::vector<int> next(parent.size());
    for (std::size_t t = 0; t < parent.size(); ++t) next[t] = ord[parent[t]];
    ord = std::move(next);
  }
  const OrderMap om = make_order_map(mesh, ord);
  const MixedSystem sys = assemble(mesh, om, exact.problem());
  const SolutionTriple sol = solve(sys);
  const ErrorRecord err = compute_errors(sol, exact);

  const fs::path dir = output_dir(cfg);
  auto sol_out = open_output(dir / "solution.csv");
  write_solution(sol_out, sol);
  auto err_out = open_output(dir / "errors.csv");
  err_out << "ndof,err_sigma_hdiv,err_u_l2,err_p_l2,total_pct,residual,weak_symmetry\n"
          << sys.disc->dofs.total << ',' << err.sigma_hdiv << ',' << err.u_l2 << ',' << err.p_l2 << ','
          << err.total_pct << ',' << sol.report.residual << ',' << sol.report.weak_symmetry << '\n';
  if (dump_matrix) {
    auto os = open_output(dir / "matrix.txt");
    write_matrix(os, sys.matrix);
  }
  if (dump_dofs) {
    auto os = open_output(dir / "dofs.csv");
    write_dof_report(os, mesh, sys.disc->dofs);
  }
  std::cout << "ndof " << sys.disc->dofs.total << "  total error " << err.total_pct << " %  residual "
            << sol.report.residual << "  weak symmetry " << sol.report.weak_symmetry << "\n";
  ConvergenceRecord rec;
  rec.residual = sol.report.residual;
  rec.weak_symmetry = sol.report.weak_symmetry;
  return check_reports({rec}, tol) ? 0 : 1;
}

int cmd_converge(const RunConfig& cfg, bool best) {
  const Tolerances tol = parse_tolerances(cfg.tol);
  if (cfg.levels < 1) throw ValidationError("--levels must be at least 1");
  const Mesh mesh = initial_mesh(cfg);
  const ExactSolution exact = make_exact(cfg);
  const auto records = run_convergence(mesh, initial_orders(cfg, mesh), cfg.levels, exact, {best, 0});

  const fs::path dir = output_dir(cfg);
  auto csv = open_output(dir / "convergence.csv");
  write_convergence_csv(csv, records);
  std::vector<PlotSeries> plot{series("FE error", records, false)};
  if (best) plot.push_back(series("best approximation", records, true));
  auto svg = open_output(dir / "convergence.svg");
  write_loglog_svg(svg, cfg.domain + ", " + cfg.solution, "degrees of freedom", "error (%)", plot);
  write_convergence_csv(std::cout, records);
  return check_reports(records, tol) ? 0 : 1;
}

int cmd_adapt(const RunConfig& cfg, bool best, int compare_levels) {
  const Tolerances tol = parse_tolerances(cfg.tol);
  if (cfg.steps < 1) throw ValidationError("--steps must be at least 1");
  if (compare_levels < 0) throw ValidationError("--compare-levels must be non-negative");
  const Mesh mesh = initial_mesh(cfg);
  const ExactSolution exact = make_exact(cfg);
  const AdaptiveResult res = run_adaptive(mesh, cfg.order, cfg.steps, cfg.fraction, exact, {best, 0});

  const fs::path dir = output_dir(cfg);
  auto csv = open_output(dir / "adaptive.csv");
  write_convergence_csv(csv, res.records);
  std::vector<PlotSeries> plot{series("adaptive", res.records, false)};
  bool ok = check_reports(res.records, tol);
  if (compare_levels > 0) {
    const auto uniform = run_convergence(mesh, std::vector<int>(mesh.num_triangles(), cfg.order), compare_levels,
                                         exact, {false, 0});
    auto ucsv = open_output(dir / "uniform.csv");
    write_convergence_csv(ucsv, uniform);
    plot.push_back(series("uniform", uniform, false));
    ok = check_reports(uniform, tol) && ok;
  }
  auto mesh_out = open_output(dir / "adaptive_mesh.txt");
  mesh_out << mesh_to_string(res.final_mesh);
  auto svg = open_output(dir / "adaptive.svg");
  write_loglog_svg(svg, cfg.domain + ", " + cfg.solution + ", greedy", "degrees of freedom", "error (%)", plot);
  write_convergence_csv(std::cout, res.records);
  return ok ? 0 : 1;
}

int cmd_verify(const RunConfig& cfg, bool inf_sup, bool tables) {
  const Tolerances tol = parse_tolerances(cfg.tol);
  if (cfg.samples < 1) throw ValidationError("--samples must be at least 1");
  if (cfg.levels < 1) throw ValidationError("--levels must be at least 1");
  const std::vector<int> orders = parse_orders(cfg.orders.empty() ? "0..3" : cfg.orders);
  for (int r : orders)
    if (r < 0 || r > kDefaultRMax) throw ValidationError("order " + std::to_string(r) + " out of range");

  const fs::path dir = output_dir(cfg);
  auto csv = open_output(dir / "verify.csv");
  auto diag = open_output(dir / "diagnostics.csv");
  csv << "operator,level,order,max_residual,max_condition\n";
  diag << "quantity,level,order,value\n";
  for (int r : orders) {
    const TSelection sel = select_t(r);
    diag << "select_t," << -1 << ',' << r << ',' << sel.t << '\n'
         << "min_sv_pi_minus," << -1 << ',' << r << ',' << sel.min_sv_pi_minus << '\n'
         << "min_sv_w," << -1 << ',' << r << ',' << sel.min_sv_c << '\n';
  }
  bool ok = true;
  Mesh mesh = initial_mesh(cfg);
  for (int level = 0; level < cfg.levels; ++level) {
    const RegularityReport reg = regularity(mesh);
    diag << "h," << level << ",-1," << reg.h << '\n'
         << "c_h," << level << ",-1," << reg.c_h << '\n'
         << "max_shape_ratio," << level << ",-1," << reg.max_shape_ratio << '\n'
         << "compatibility," << level << ",-1," << check_compatibility(mesh).max_mismatch << '\n';
    for (int r : orders) {
      const OrderMap om = make_order_map(mesh, r);
      const CommutingReport rep = check_commuting(mesh, om, cfg.samples, cfg.seed);
      csv << "div_pi1_minus," << level << ',' << r << ',' << rep.div_pi_minus << ',' << rep.max_condition << '\n'
          << "div_pi1," << level << ',' << r << ',' << rep.div_pi1 << ',' << rep.max_condition << '\n'
          << "wtilde," << level << ',' << r << ',' << rep.wtilde << ',' << rep.max_condition << '\n';
      if (!(rep.div_pi_minus <= tol.commuting) || !(rep.div_pi1 <= tol.commuting)) {
        std::cerr << "level " << level << " order " << r << ": commuting residual above " << tol.commuting << "\n";
        ok = false;
      }
      if (!rep.wtilde_defined) {
        std::cerr << "level " << level << " order " << r << ": W not defined (" << rep.note << ")\n";
      } else if (rep.wtilde > tol.wtilde) {
        std::cerr << "level " << level << " order " << r << ": W identity residual " << rep.wtilde << "\n";
        ok = false;
      }
      diag << "projection_gap," << level << ',' << r << ',' << projection_gap(mesh, om, r + 3) << '\n';
      if (inf_sup) diag << "inf_sup," << level << ',' << r << ',' << estimate_inf_sup(mesh, om).beta << '\n';
    }
    if (level + 1 < cfg.levels) mesh = refine_uniform(mesh);
  }
  if (tables) {
    const int r = *std::max_element(orders.begin(), orders.end());
    const QuadRule& q = quadrature(2 * r + 4);
    auto qos = open_output(dir / "quadrature.csv");
    qos << "degree,point,x,y,weight\n";
    for (std::size_t i = 0; i < q.size(); ++i)
      qos << 2 * r + 4 << ',' << i << ',' << q.points[i].x() << ',' << q.points[i].y() << ',' << q.weights[i] << '\n';
    auto bos = open_output(dir / "basis.csv");
    bos << "order,point,function,value\n";
    VectorXd vals(dim_p(r));
    for (std::size_t i = 0; i < q.size(); ++i) {
      ortho_basis(r).eval(q.points[i], vals);
      for (int k = 0; k < vals.size(); ++k) bos << r << ',' << i << ',' << k << ',' << vals(k) << '\n';
    }
    auto dos = open_output(dir / "dofs.csv");
    write_dof_report(dos, mesh, build_dofs(mesh, make_order_map(mesh, r)));
  }
  std::cout << "wrote " << (dir / "verify.csv").string() << " and " << (dir / "diagnostics.csv").string() << "\n";
  return ok ? 0 : 1;
}

int cmd_mesh(const RunConfig& cfg, const std::string& input) {
  Mesh mesh = input.empty() ? initial_mesh(cfg) : load_mesh(input);
  validate_mesh(mesh);
  std::cout << std::setprecision(10) << "level,vertices,triangles,h,c_h,max_shape_ratio,compatibility\n";
  for (int level = 0;; ++level) {
    const RegularityReport reg = regularity(mesh);
    std::cout << level << ',' << mesh.vertices.size() << ',' << mesh.num_triangles() << ',' << reg.h << ','
              << reg.c_h << ',' << reg.max_shape_ratio << ',' << check_compatibility(mesh).max_mismatch << '\n';
    if (level == cfg.levels) break;
    mesh = refine_uniform(mesh);
  }
  store_mesh(mesh, (output_dir(cfg) / "mesh.txt").string());
  return 0;
}

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--domain", cfg.domain, "unit_square, lshape_affine or lshape_circular")->capture_default_str();
  sub->add_option("--radius", cfg.radius, "arc radius of lshape_circular")->capture_default_str();
  sub->add_option("--out", cfg.out, "output directory")->capture_default_str();
  sub->add_option("--seed", cfg.seed, "seed for random coefficients and samples")->capture_default_str();
  sub->add_option("--tol", cfg.tol, "NAME=VAL, NAME in commuting, wtilde, weak_symmetry, residual");
}

void add_problem(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--order", cfg.order, "uniform displacement order")->capture_default_str();
  sub->add_option("--orders", cfg.orders, "orders per initial triangle, comma list or a..b");
  sub->add_option("--material", cfg.material, "mu,lambda (lambda may be inf)");
  sub->add_option("--solution", cfg.solution, "lshape_singular, smooth_poly or smooth_trig")->capture_default_str();
  sub->add_option("--degree", cfg.degree, "degree of smooth_poly")->capture_default_str();
  sub->add_option("--williams", cfg.williams, "corner configuration file (ini, [williams] section)");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Mixed finite elements for plane elasticity with weakly imposed symmetry"};
  app.name("afw2d");
  app.require_subcommand(1);
  app.set_config("--config", "", "ini file: key = value, one [section] per subcommand");

  RunConfig solve_cfg, converge_cfg, adapt_cfg, verify_cfg, mesh_cfg;
  converge_cfg.levels = 4;
  verify_cfg.levels = 1;
  adapt_cfg.order = 1;

  bool dump_matrix = false, dump_dofs = false;
  auto* solve_cmd = app.add_subcommand("solve", "one solve with solution and error dumps");
  add_common(solve_cmd, solve_cfg);
  add_problem(solve_cmd, solve_cfg);
  solve_cmd->add_option("--levels", solve_cfg.levels, "uniform refinements before solving")->capture_default_str();
  solve_cmd->add_flag("--dump-matrix", dump_matrix, "write the saddle matrix");
  solve_cmd->add_flag("--dump-dofs", dump_dofs, "write the DOF report");

  bool converge_best = true;
  auto* converge_cmd = app.add_subcommand("converge", "uniform refinement study");
  add_common(converge_cmd, converge_cfg);
  add_problem(converge_cmd, converge_cfg);
  converge_cmd->add_option("--levels", converge_cfg.levels, "number of meshes")->capture_default_str();
  converge_cmd->add_flag("--best,!--no-best", converge_best, "also compute the best approximation");

  bool adapt_best = false;
  int compare_levels = 0;
  auto* adapt_cmd = app.add_subcommand("adapt", "greedy bisection study driven by the true error");
  add_common(adapt_cmd, adapt_cfg);
  add_problem(adapt_cmd, adapt_cfg);
  adapt_cmd->add_option("--steps", adapt_cfg.steps, "adaptive steps")->capture_default_str();
  adapt_cmd->add_option("--fraction", adapt_cfg.fraction, "marked fraction of elements")->capture_default_str();
  adapt_cmd->add_option("--compare-levels", compare_levels, "uniform levels to run alongside")->capture_default_str();
  adapt_cmd->add_flag("--best", adapt_best, "also compute the best approximation");

  bool inf_sup = true, tables = false;
  auto* verify_cmd = app.add_subcommand("verify", "commuting, inf-sup and regularity diagnostics");
  add_common(verify_cmd, verify_cfg);
  verify_cmd->add_option("--orders", verify_cfg.orders, "orders to check, comma list or a..b (default 0..3)");
  verify_cmd->add_option("--levels", verify_cfg.levels, "number of meshes")->capture_default_str();
  verify_cmd->add_option("--samples", verify_cfg.samples, "random fields per check")->capture_default_str();
  verify_cmd->add_flag("--inf-sup,!--no-inf-sup", inf_sup, "estimate the inf-sup constant");
  verify_cmd->add_flag("--tables", tables, "dump quadrature, basis and DOF tables");

  std::string mesh_input;
  auto* mesh_cmd = app.add_subcommand("mesh", "build, refine and inspect meshes");
  add_common(mesh_cmd, mesh_cfg);
  mesh_cmd->add_option("--levels", mesh_cfg.levels, "uniform refinements")->capture_default_str();
  mesh_cmd->add_option("--input", mesh_input, "mesh file to load instead of --domain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*solve_cmd) return cmd_solve(solve_cfg, dump_matrix, dump_dofs);
    if (*converge_cmd) return cmd_converge(converge_cfg, converge_best);
    if (*adapt_cmd) return cmd_adapt(adapt_cfg, adapt_best, compare_levels);
    if (*verify_cmd) return cmd_verify(verify_cfg, inf_sup, tables);
    if (*mesh_cmd) return cmd_mesh(mesh_cfg, mesh_input);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace afw2d
