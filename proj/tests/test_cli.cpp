#include "cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

using afw2d::run_cli;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"afw2d"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  return code;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("afw2d_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, NoArgumentsIsUsageError) { EXPECT_EQ(run({}), 2); }

TEST(Cli, InvalidInputExitsWithTwo) {
  EXPECT_EQ(run({"solve", "--bogus"}), 2);
  EXPECT_EQ(run({"solve", "--domain", "nowhere"}), 2);
  EXPECT_EQ(run({"solve", "--material", "1"}), 2);
  EXPECT_EQ(run({"solve", "--domain", "unit_square"}), 2);  // singular solution needs the L-shape
  EXPECT_EQ(run({"verify", "--tol", "unknown=1"}), 2);
  EXPECT_EQ(run({"converge", "--orders", "0,1"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST(Cli, VerifyAffineResidualsBelowTolerance) {
  const fs::path out = scratch("verify");
  ASSERT_EQ(run({"verify", "--domain", "lshape_affine", "--orders", "0..3", "--samples", "10", "--no-inf-sup", "--out",
                 out.string()}),
            0);
  auto rows = read_csv(out / "verify.csv");
  ASSERT_EQ(rows.size(), 1u + 3 * 4);
  EXPECT_EQ(rows[0][3], "max_residual");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(std::stod(rows[i][3]), 1e-9) << rows[i][0];
}

TEST(Cli, ConvergeCircularGivesMonotoneRows) {
  const fs::path out = scratch("converge");
  ASSERT_EQ(run({"converge", "--domain", "lshape_circular", "--order", "1", "--levels", "4", "--no-best", "--out",
                 out.string()}),
            0);
  auto rows = read_csv(out / "convergence.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0][6], "total_pct");
  for (std::size_t i = 2; i < rows.size(); ++i) EXPECT_LT(std::stod(rows[i][6]), std::stod(rows[i - 1][6]));
  EXPECT_TRUE(fs::exists(out / "convergence.svg"));
}

TEST(Cli, OutputsAreDeterministic) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  for (const auto& dir : {a, b})
    ASSERT_EQ(run({"adapt", "--order", "1", "--steps", "3", "--seed", "5", "--out", dir.string()}), 0);
  EXPECT_EQ(slurp(a / "adaptive.csv"), slurp(b / "adaptive.csv"));
  EXPECT_EQ(slurp(a / "adaptive.svg"), slurp(b / "adaptive.svg"));
  EXPECT_FALSE(slurp(a / "adaptive.csv").empty());
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  const fs::path out = scratch("config");
  fs::create_directories(out);
  std::ofstream(out / "run.ini") << "[converge]\ndomain = unit_square\nsolution = smooth_trig\norder = 1\nlevels = 3\n"
                                    "best = false\nout = "
                                 << out.string() << "\n";
  ASSERT_EQ(run({"--config", (out / "run.ini").string(), "converge", "--levels", "2"}), 0);
  EXPECT_EQ(read_csv(out / "convergence.csv").size(), 3u);
}

TEST(Cli, SolveAndMeshDumps) {
  const fs::path out = scratch("solve");
  ASSERT_EQ(run({"solve", "--domain", "unit_square", "--solution", "smooth_poly", "--order", "2", "--dump-dofs",
                 "--dump-matrix", "--out", out.string()}),
            0);
  auto err = read_csv(out / "errors.csv");
  ASSERT_EQ(err.size(), 2u);
  EXPECT_LT(std::stod(err[1][4]), 1e-9);  // quadratic field is reproduced
  EXPECT_TRUE(fs::exists(out / "dofs.csv"));
  EXPECT_TRUE(fs::exists(out / "matrix.txt"));

  ASSERT_EQ(run({"mesh", "--domain", "lshape_circular", "--levels", "1", "--out", out.string()}), 0);
  EXPECT_EQ(run({"mesh", "--input", (out / "mesh.txt").string(), "--out", (out / "again").string()}), 0);
  EXPECT_EQ(slurp(out / "mesh.txt"), slurp(out / "again" / "mesh.txt"));
}
