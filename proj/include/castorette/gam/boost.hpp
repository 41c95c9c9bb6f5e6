#pragma once

#include "castorette/gam/additive.hpp"

#include <span>
#include <vector>

namespace castorette::gam {

struct BoostSelection {
    /// Candidates picked at least once, most picked first; ties go to the
    /// one picked earlier.
    std::vector<TermSpec> selected;
    std::vector<std::size_t> counts; ///< parallel to `selected`
    std::vector<std::size_t> path;   ///< candidate index chosen at each step
};

/// Component-wise L2 boosting. Every candidate is a centered penalized base
/// learner whose penalty is tuned to four degrees of freedom (or its full
/// dimension when smaller). Each step fits all candidates to the current
/// residuals, keeps the one with the lowest residual sum of squares and adds
/// step_size times its fit.
BoostSelection boost_select(const FeatureFrame& frame, std::span<const double> response,
                            std::span<const TermSpec> candidates, std::size_t steps, double step_size);

/// Same result, candidates evaluated one after another. Reference for tests
/// and the benchmark.
BoostSelection boost_select_serial(const FeatureFrame& frame, std::span<const double> response,
                                   std::span<const TermSpec> candidates, std::size_t steps, double step_size);

} // namespace castorette::gam
