#include "castorette/gam/spline_basis.hpp"

#include "castorette/error.hpp"

#include <algorithm>
#include <cmath>

namespace castorette::gam {

SplineBasis::SplineBasis(std::string feature, std::vector<double> knots)
    : feature_(std::move(feature)), knots_(std::move(knots)) {
    if (knots_.size() < 2 * (kDegree + 1) || !std::is_sorted(knots_.begin(), knots_.end()) ||
        !(knots_.front() < knots_.back())) {
        fail(ErrorCode::CorruptParams, "invalid knot vector for '" + feature_ + "'");
    }
}

SplineBasis SplineBasis::build(std::string feature, std::span<const double> x, std::size_t num_interior_knots) {
    std::vector<double> u(x.begin(), x.end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (u.size() < num_interior_knots + 2) {
        fail(ErrorCode::DegenerateFeature, "'" + feature + "' has " + std::to_string(u.size()) +
                                               " distinct values, needs " + std::to_string(num_interior_knots + 2));
    }
    std::vector<double> knots(kDegree + 1, u.front());
    const double last = static_cast<double>(u.size() - 1);
    for (std::size_t i = 1; i <= num_interior_knots; ++i) {
        const double pos = last * static_cast<double>(i) / static_cast<double>(num_interior_knots + 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(lo);
        const double q = lo + 1 < u.size() ? u[lo] + frac * (u[lo + 1] - u[lo]) : u[lo];
        knots.push_back(q);
    }
    knots.insert(knots.end(), kDegree + 1, u.back());
    return SplineBasis(std::move(feature), std::move(knots));
}

std::size_t SplineBasis::evaluate_nonzero(double x, double (&values)[kDegree + 1]) const noexcept {
    const std::size_t n = size() - 1; // index of last basis function
    x = std::clamp(x, lower(), upper());

    std::size_t span;
    if (x >= knots_[n + 1]) {
        span = n;
    } else {
        // Last index with knots_[span] <= x, restricted to [degree, n].
        const auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + static_cast<long>(n) + 1, x);
        span = static_cast<std::size_t>(it - knots_.begin()) - 1;
    }

    double left[kDegree + 1];
    double right[kDegree + 1];
    values[0] = 1.0;
    for (int j = 1; j <= kDegree; ++j) {
        left[j] = x - knots_[span + 1 - static_cast<std::size_t>(j)];
        right[j] = knots_[span + static_cast<std::size_t>(j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom != 0.0 ? values[r] / denom : 0.0;
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    return span - kDegree;
}

void SplineBasis::evaluate(double x, std::span<double> out) const noexcept {
    std::fill(out.begin(), out.end(), 0.0);
    double v[kDegree + 1];
    const std::size_t first = evaluate_nonzero(x, v);
    for (int k = 0; k <= kDegree; ++k) out[first + static_cast<std::size_t>(k)] = v[k];
}

} // namespace castorette::gam
