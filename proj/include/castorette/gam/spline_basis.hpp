#pragma once

#include <span>
#include <string>
#include <vector>

namespace castorette::gam {

/// Clamped cubic B-spline basis on [knots.front(), knots.back()].
///
/// The knot vector repeats each boundary four times, so the basis has
/// `interior + 4` functions that sum to one everywhere on the domain.
/// Inputs outside the domain are clamped to the nearest boundary.
class SplineBasis {
public:
    static constexpr int kDegree = 3;

    SplineBasis() = default;
    SplineBasis(std::string feature, std::vector<double> knots);

    /// Interior knots sit at evenly spaced quantiles of the distinct values
    /// of `x`. Needs at least `num_interior_knots + 2` distinct values.
    static SplineBasis build(std::string feature, std::span<const double> x, std::size_t num_interior_knots);

    const std::string& feature() const noexcept { return feature_; }
    const std::vector<double>& knots() const noexcept { return knots_; }
    std::size_t size() const noexcept { return knots_.size() - kDegree - 1; }
    double lower() const noexcept { return knots_.front(); }
    double upper() const noexcept { return knots_.back(); }
    bool outside(double x) const noexcept { return x < lower() || x > upper(); }

    /// Writes the four non-zero basis values at x into `values` and returns
    /// the index of the first one.
    std::size_t evaluate_nonzero(double x, double (&values)[kDegree + 1]) const noexcept;

    /// Dense row of all `size()` basis values.
    void evaluate(double x, std::span<double> out) const noexcept;

private:
    std::string feature_;
    std::vector<double> knots_;
};

} // namespace castorette::gam
