#include "castorette/error.hpp"
#include "castorette/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace castorette::transform {

namespace {

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<long>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double hi = *mid;
    if (n % 2 == 1) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

/// Scaled median absolute deviation, consistent for Gaussian data.
double mad(const std::vector<double>& v, double med) {
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = std::abs(v[i] - med);
    return 1.4826 * median(std::move(d));
}

} // namespace

double robust_noise_sd(std::span<const double> x) {
    if (x.size() < 3) return 1.0;
    std::vector<double> diff(x.size() - 1);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) diff[i] = x[i + 1] - x[i];
    const double s = mad(diff, median(diff)) / std::sqrt(2.0);
    if (s > 0.0) return s;
    double mean = 0.0;
    for (const double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (const double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(x.size()));
    return sd > 0.0 ? sd : 1.0;
}

std::string_view to_string(OutlierRule rule) noexcept { return rule == OutlierRule::Negative ? "NEGATIVE" : "CONSTANT"; }

void CleaningConfig::validate() const {
    if (max_constant_run < 2) fail(ErrorCode::ValidationError, "max_constant_run must be >= 2");
    if (pelt_penalty && !(*pelt_penalty > 0.0)) fail(ErrorCode::ValidationError, "penalty must be > 0");
    if (!(deviation_threshold >= 0.0)) fail(ErrorCode::ValidationError, "deviation_threshold must be >= 0");
    if (!(min_remaining_fraction > 0.0 && min_remaining_fraction <= 1.0)) {
        fail(ErrorCode::ValidationError, "min_remaining_fraction must be in (0, 1]");
    }
}

std::pair<MaskedSeries, OutlierReport> remove_outliers(const MaskedSeries& series, const CleaningConfig& config) {
    MaskedSeries out = series;
    OutlierReport report;
    const std::size_t n = out.size();
    if (!config.allow_negative) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!out.missing[i] && out.values[i] < 0.0) {
                out.missing[i] = 1;
                report.flagged.emplace_back(i, OutlierRule::Negative);
            }
        }
    }
    std::size_t i = 0;
    while (i < n) {
        if (out.missing[i]) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n && !out.missing[j] && out.values[j] == out.values[i]) ++j;
        if (j - i >= config.max_constant_run) {
            for (std::size_t k = i; k < j; ++k) {
                out.missing[k] = 1;
                report.flagged.emplace_back(k, OutlierRule::Constant);
            }
        }
        i = j;
    }
    std::sort(report.flagged.begin(), report.flagged.end());
    return {std::move(out), std::move(report)};
}

std::pair<MaskedSeries, std::vector<RemovedSegment>> iterative_segment_removal(const MaskedSeries& series,
                                                                               const CleaningConfig& config) {
    config.validate();
    const auto idx = series.present_indices();
    const auto x = series.present_values();
    MaskedSeries out = series;
    std::vector<RemovedSegment> removed;
    if (x.size() < 2) return {std::move(out), std::move(removed)};

    const double sigma = robust_noise_sd(x);
    PeltOptions opt;
    opt.variance = sigma * sigma;
    const auto seg = pelt(x, config.pelt_penalty.value_or(default_penalty(x.size())), opt);

    // Segment bounds in the compressed (present-only) index space.
    std::vector<std::pair<std::size_t, std::size_t>> bounds;
    std::size_t start = 0;
    for (const auto cp : seg.changepoints) {
        bounds.emplace_back(start, cp);
        start = cp;
    }
    bounds.emplace_back(start, x.size());

    std::vector<bool> gone(bounds.size(), false);
    std::size_t remaining = x.size();
    const double total = static_cast<double>(x.size());
    for (std::size_t iter = 0; iter < bounds.size(); ++iter) {
        std::vector<double> rest;
        for (std::size_t s = 0; s < bounds.size(); ++s) {
            if (!gone[s]) rest.insert(rest.end(), x.begin() + static_cast<long>(bounds[s].first), x.begin() + static_cast<long>(bounds[s].second));
        }
        const double med = median(rest);
        const double spread = mad(rest, med);

        std::size_t worst = bounds.size();
        double worst_dev = -1.0;
        for (std::size_t s = 0; s < bounds.size(); ++s) {
            if (gone[s]) continue;
            double mean = 0.0;
            for (std::size_t k = bounds[s].first; k < bounds[s].second; ++k) mean += x[k];
            mean /= static_cast<double>(bounds[s].second - bounds[s].first);
            const double dist = std::abs(mean - med);
            const double dev = spread > 0.0 ? dist / spread : (dist > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
            if (dev > worst_dev) {
                worst_dev = dev;
                worst = s;
            }
        }
        if (worst == bounds.size() || worst_dev <= config.deviation_threshold) break;

        const std::size_t len = bounds[worst].second - bounds[worst].first;
        if (static_cast<double>(remaining - len) / total < config.min_remaining_fraction) {
            fail(ErrorCode::InsufficientData,
                 "removing segment [" + std::to_string(idx[bounds[worst].first]) + ", " +
                     std::to_string(idx[bounds[worst].second - 1] + 1) + ") would leave " +
                     std::to_string(remaining - len) + " of " + std::to_string(x.size()) + " values");
        }
        gone[worst] = true;
        remaining -= len;
        for (std::size_t k = bounds[worst].first; k < bounds[worst].second; ++k) out.missing[idx[k]] = 1;
        removed.push_back(RemovedSegment{idx[bounds[worst].first], idx[bounds[worst].second - 1] + 1, worst_dev});
    }
    return {std::move(out), std::move(removed)};
}

} // namespace castorette::transform
