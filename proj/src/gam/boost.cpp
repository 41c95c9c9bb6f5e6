#include "castorette/gam/boost.hpp"

#include "castorette/error.hpp"
#include "castorette/gam/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace castorette::gam {

namespace {

constexpr double kTargetDf = 4.0;

struct Learner {
    Eigen::MatrixXd x;
    Eigen::LLT<Eigen::MatrixXd> solver;
};

double degrees_of_freedom(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& penalty, double lambda) {
    const Eigen::LLT<Eigen::MatrixXd> llt(gram + lambda * penalty);
    return llt.solve(gram).trace();
}

/// Penalty weight giving `target` degrees of freedom, by bisection in log space.
double lambda_for_df(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& penalty, double target) {
    const double scale = penalty.trace() > 0.0 ? gram.trace() / penalty.trace() : 1.0;
    double lo = std::log(1e-8 * scale);
    double hi = std::log(1e12 * scale);
    if (degrees_of_freedom(gram, penalty, std::exp(lo)) <= target) return std::exp(lo);
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (degrees_of_freedom(gram, penalty, std::exp(mid)) > target) lo = mid;
        else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

Learner make_learner(const TermSpec& spec, const FeatureFrame& frame) {
    CenteredTerm ct = center_term(spec, frame);
    const Eigen::MatrixXd gram = ct.design.transpose() * ct.design;
    const double df = std::min(kTargetDf, static_cast<double>(ct.design.cols()));
    const double lambda = lambda_for_df(gram, ct.penalty, df);
    Learner l;
    l.solver.compute(gram + lambda * ct.penalty);
    if (l.solver.info() != Eigen::Success) {
        fail(ErrorCode::SingularSystem, "base learner " + spec.label() + " is singular");
    }
    l.x = std::move(ct.design);
    return l;
}

struct StepFit {
    double rss = std::numeric_limits<double>::infinity();
    Eigen::VectorXd fitted;
};

StepFit fit_learner(const Learner& l, const Eigen::VectorXd& u) {
    StepFit f;
    const Eigen::VectorXd theta = l.solver.solve(l.x.transpose() * u);
    f.fitted = l.x * theta;
    f.rss = (u - f.fitted).squaredNorm();
    return f;
}

template <bool Parallel>
BoostSelection run(const FeatureFrame& frame, std::span<const double> response, std::span<const TermSpec> candidates,
                   std::size_t steps, double step_size) {
    if (candidates.empty()) fail(ErrorCode::InvalidArgument, "boosting needs at least one candidate");
    if (response.size() != frame.rows()) fail(ErrorCode::InvalidArgument, "response length does not match frame");
    BoostSelection out;
    if (steps == 0) return out;

    const auto m = static_cast<std::ptrdiff_t>(candidates.size());
    std::vector<Learner> learners(candidates.size());
    for (std::ptrdiff_t j = 0; j < m; ++j) learners[static_cast<std::size_t>(j)] = make_learner(candidates[static_cast<std::size_t>(j)], frame);

    const Eigen::Map<const Eigen::VectorXd> y(response.data(), static_cast<Eigen::Index>(response.size()));
    Eigen::VectorXd u = y.array() - y.mean();
    std::vector<std::size_t> counts(candidates.size(), 0);
    std::vector<std::size_t> first(candidates.size(), steps);
    std::vector<StepFit> fits(candidates.size());

    for (std::size_t step = 0; step < steps; ++step) {
        if constexpr (Parallel) {
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t j = 0; j < m; ++j) fits[static_cast<std::size_t>(j)] = fit_learner(learners[static_cast<std::size_t>(j)], u);
        } else {
            for (std::ptrdiff_t j = 0; j < m; ++j) fits[static_cast<std::size_t>(j)] = fit_learner(learners[static_cast<std::size_t>(j)], u);
        }
        std::size_t best = 0;
        for (std::size_t j = 1; j < fits.size(); ++j) {
            if (fits[j].rss < fits[best].rss) best = j;
        }
        u -= step_size * fits[best].fitted;
        ++counts[best];
        first[best] = std::min(first[best], step);
        out.path.push_back(best);
    }

    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        if (counts[j] > 0) order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] != counts[b] ? counts[a] > counts[b] : first[a] < first[b];
    });
    for (const auto j : order) {
        out.selected.push_back(candidates[j]);
        out.counts.push_back(counts[j]);
    }
    return out;
}

} // namespace

BoostSelection boost_select(const FeatureFrame& frame, std::span<const double> response,
                            std::span<const TermSpec> candidates, std::size_t steps, double step_size) {
    return run<true>(frame, response, candidates, steps, step_size);
}

BoostSelection boost_select_serial(const FeatureFrame& frame, std::span<const double> response,
                                   std::span<const TermSpec> candidates, std::size_t steps, double step_size) {
    return run<false>(frame, response, candidates, steps, step_size);
}

} // namespace castorette::gam
