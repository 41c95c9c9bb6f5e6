#include "castorette/error.hpp"
#include "castorette/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace castorette::transform {

namespace {

/// Running mean and sum of squared deviations (Welford). Prefix-sum
/// differences lose too many digits on short, nearly constant segments.
struct Moments {
    double n = 0.0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) noexcept {
        n += 1.0;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
};

double segment_cost(const Moments& m, const PeltOptions& opt, double floor) {
    const double scatter = std::max(0.0, m.m2);
    if (opt.cost == CostKind::MeanNormal) return scatter / opt.variance;
    const double v = scatter / m.n;
    const double s2 = std::max(v, floor);
    return m.n * std::log(2.0 * std::numbers::pi * s2) + m.n * v / s2;
}

} // namespace

double variance_floor(std::span<const double> x) {
    if (x.empty()) return 1e-8;
    double mean = 0.0;
    for (const double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (const double v : x) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(x.size());
    return var > 0.0 ? 1e-8 * var : 1e-8;
}

std::size_t min_segment_length(CostKind cost) noexcept { return cost == CostKind::MeanNormal ? 1 : 2; }

Segmentation pelt(std::span<const double> x, double penalty, const PeltOptions& options) {
    const std::size_t n = x.size();
    if (n < 2) fail(ErrorCode::TooShort, "change-point detection needs at least 2 values, got " + std::to_string(n));
    if (!(penalty > 0.0)) fail(ErrorCode::InvalidArgument, "penalty must be > 0");
    if (options.cost == CostKind::MeanNormal && !(options.variance > 0.0)) {
        fail(ErrorCode::InvalidArgument, "variance must be > 0");
    }
    for (const double v : x) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "change-point input");
    }
    const std::size_t min_len = min_segment_length(options.cost);
    const double floor = variance_floor(x);
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<double> best(n + 1, kInf);
    std::vector<std::size_t> last(n + 1, 0);
    best[0] = -penalty;

    struct Candidate {
        std::size_t tau;
        std::size_t pruned_at; ///< n + 1 while live
        Moments moments;       ///< over [tau, t)
    };
    std::vector<Candidate> cands{{0, n + 1, {}}};
    std::vector<double> cost;

    for (std::size_t t = 1; t <= n; ++t) {
        cost.assign(cands.size(), kInf);
        for (std::size_t k = 0; k < cands.size(); ++k) {
            auto& c = cands[k];
            c.moments.add(x[t - 1]);
            if (t - c.tau < min_len || !std::isfinite(best[c.tau])) continue;
            cost[k] = segment_cost(c.moments, options, floor);
            const double v = best[c.tau] + cost[k] + penalty;
            if (v < best[t]) {
                best[t] = v;
                last[t] = c.tau;
            }
        }
        // A candidate that cannot beat best[t] now never wins later, except
        // for end points closer than min_len to t, which t itself cannot
        // serve; it stays eligible for those.
        const double bound = best[t] + 1e-9 * (1.0 + std::abs(best[t]));
        for (std::size_t k = 0; k < cands.size(); ++k) {
            auto& c = cands[k];
            if (c.pruned_at > n && std::isfinite(cost[k]) && best[c.tau] + cost[k] > bound) c.pruned_at = t;
        }
        std::erase_if(cands, [&](const Candidate& c) { return c.pruned_at <= n && t + 1 >= c.pruned_at + min_len; });
        cands.push_back({t, n + 1, {}});
    }

    Segmentation seg;
    seg.cost = best[n];
    for (std::size_t t = n; t > 0; t = last[t]) {
        if (last[t] > 0) seg.changepoints.push_back(last[t]);
    }
    std::reverse(seg.changepoints.begin(), seg.changepoints.end());
    std::size_t a = 0;
    for (std::size_t i = 0; i <= seg.changepoints.size(); ++i) {
        const std::size_t b = i < seg.changepoints.size() ? seg.changepoints[i] : n;
        SegmentStats st;
        st.length = b - a;
        for (std::size_t k = a; k < b; ++k) st.mean += x[k];
        st.mean /= static_cast<double>(st.length);
        for (std::size_t k = a; k < b; ++k) st.variance += (x[k] - st.mean) * (x[k] - st.mean);
        st.variance /= static_cast<double>(st.length);
        seg.segments.push_back(st);
        a = b;
    }
    return seg;
}

} // namespace castorette::transform
