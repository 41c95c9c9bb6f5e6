#pragma once

#include "castorette/gam/spline_basis.hpp"

#include <Eigen/Dense>

#include <span>

// Data-parallel inner loops of the fitting code. Each kernel has an OpenMP
// version (used by the library) and a plain serial version kept as the
// reference for tests and the benchmark.
//
// The parallel reductions split rows into a fixed number of chunks and add
// the chunk partials in order, so results do not depend on the thread count.
namespace castorette::gam::kernels {

namespace serial {

/// X' diag(w) X. Empty `w` means unit weights.
Eigen::MatrixXd gram(const Eigen::MatrixXd& x, std::span<const double> w);

/// X' diag(w) z.
Eigen::VectorXd cross(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> z);

/// n x size() matrix of basis values.
Eigen::MatrixXd spline_design(const SplineBasis& basis, std::span<const double> values);

} // namespace serial

namespace parallel {

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, std::span<const double> w);
Eigen::VectorXd cross(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> z);
Eigen::MatrixXd spline_design(const SplineBasis& basis, std::span<const double> values);

} // namespace parallel

using parallel::cross;
using parallel::gram;
using parallel::spline_design;

} // namespace castorette::gam::kernels
