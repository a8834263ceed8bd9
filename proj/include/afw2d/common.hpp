#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace afw2d {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Highest polynomial order accepted by order maps and reference spaces.
inline constexpr int kDefaultRMax = 6;

/// Input that violates a documented precondition (bad order, unknown name, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: singular local system, failed Newton iteration, ...
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rotates a tangent clockwise; for a counterclockwise boundary traversal this
/// gives the outward normal scaled by the tangent length.
inline Vec2 rotate_cw(const Vec2& t) { return {t.y(), -t.x()}; }

}  // namespace afw2d
