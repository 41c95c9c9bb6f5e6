#include "castorette/error.hpp"
#include "castorette/transform.hpp"

#include <algorithm>
#include <cmath>

namespace castorette::transform {

namespace {

constexpr std::size_t kMinSide = 10;

std::vector<double> present_in(const MaskedSeries& s, std::size_t a, std::size_t b) {
    std::vector<double> out;
    for (std::size_t i = a; i < b; ++i) {
        if (!s.missing[i]) out.push_back(s.values[i]);
    }
    return out;
}

/// Linear-interpolation quantile of sorted data.
double quantile(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

TransferFunction fit_transfer(const MaskedSeries& series, std::size_t changepoint) {
    if (changepoint == 0 || changepoint >= series.size()) {
        fail(ErrorCode::InvalidArgument, "changepoint " + std::to_string(changepoint) + " is outside the series");
    }
    auto before = present_in(series, 0, changepoint);
    auto after = present_in(series, changepoint, series.size());
    if (before.size() < kMinSide || after.size() < kMinSide) {
        fail(ErrorCode::TooShort, "transfer needs " + std::to_string(kMinSide) + " values on each side, got " +
                                      std::to_string(before.size()) + " and " + std::to_string(after.size()));
    }
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());

    const std::size_t m = std::min(before.size(), after.size());
    std::vector<double> qb(m), qa(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
        qb[i] = quantile(before, p);
        qa[i] = quantile(after, p);
    }
    double mb = 0.0, ma = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mb += qb[i];
        ma += qa[i];
    }
    mb /= static_cast<double>(m);
    ma /= static_cast<double>(m);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxy += (qb[i] - mb) * (qa[i] - ma);
        sxx += (qb[i] - mb) * (qb[i] - mb);
    }

    TransferFunction tf;
    tf.before = {0, changepoint};
    tf.after = {changepoint, series.size()};
    tf.scale = sxx > 0.0 ? sxy / sxx : 1.0;
    // A flat or inverted map would destroy the before-regime's shape.
    if (!(tf.scale > 0.0) || !std::isfinite(tf.scale)) tf.scale = 1.0;
    tf.offset = ma - tf.scale * mb;
    return tf;
}

MaskedSeries apply_transfer(const MaskedSeries& series, const TransferFunction& tf) {
    MaskedSeries out = series;
    for (std::size_t i = tf.before.first; i < std::min(tf.before.second, out.size()); ++i) out.values[i] = tf(out.values[i]);
    return out;
}

} // namespace castorette::transform
