#pragma once

#include "castorette/frame.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

using namespace castorette;

inline std::vector<Timestamp> hourly(std::size_t n, Timestamp start = from_epoch(1531353600)) {
    std::vector<Timestamp> ts(n);
    for (std::size_t i = 0; i < n; ++i) ts[i] = start + kHour * static_cast<long>(i);
    return ts;
}

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline FeatureFrame frame_with(std::vector<Column> cols, std::vector<double> y = {}) {
    FeatureFrame f;
    f.timestamps = hourly(cols.empty() ? y.size() : cols.front().size());
    for (auto& c : cols) f.add(std::move(c));
    if (!y.empty()) f.target = MaskedSeries(std::move(y));
    return f;
}

/// Oracle view of a spline term on column x.
inline oracle::OracleTerm spline_oracle(const std::vector<double>& x, std::size_t interior, double lambda) {
    oracle::OracleTerm t;
    const auto knots = oracle::quantile_knots(x, interior);
    for (const double v : x) t.columns.push_back(oracle::bspline_row(knots, v));
    const std::size_t k = t.columns.front().size();
    t.penalty = oracle::second_difference(k);
    t.lambda = lambda;
    std::vector<double> sums(k, 0.0);
    for (const auto& row : t.columns) {
        for (std::size_t c = 0; c < k; ++c) sums[c] += row[c];
    }
    t.constraints.push_back(sums);
    return t;
}

/// Oracle view of a categorical term over levels 0..levels-1 (all present).
inline oracle::OracleTerm factor_oracle(const std::vector<int>& codes, std::size_t levels, double lambda) {
    oracle::OracleTerm t;
    std::vector<double> sums(levels, 0.0);
    for (const int c : codes) {
        std::vector<double> row(levels, 0.0);
        row[static_cast<std::size_t>(c)] = 1.0;
        sums[static_cast<std::size_t>(c)] += 1.0;
        t.columns.push_back(row);
    }
    t.penalty.assign(levels, std::vector<double>(levels, 0.0));
    for (std::size_t i = 0; i < levels; ++i) t.penalty[i][i] = 1.0;
    t.lambda = lambda;
    t.constraints.push_back(sums);
    return t;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    static std::mt19937_64 rng{std::random_device{}()};
    auto p = std::filesystem::temp_directory_path() / ("castorette-" + name + "-" + std::to_string(rng() % 1000000000));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace fixtures
