#pragma once

// Independent reference implementations used only by tests. None of these
// call into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

/// Recursive Cox-de Boor definition with the convention that the last
/// non-degenerate interval is closed on the right.
inline double bspline(const std::vector<double>& t, std::size_t i, int degree, double x) {
    if (degree == 0) {
        const double lo = t[i];
        const double hi = t[i + 1];
        if (lo < hi && x >= lo && x < hi) return 1.0;
        // Right end of the domain belongs to the last non-empty interval.
        if (lo < hi && x == hi && hi == t.back()) {
            std::size_t j = i + 1;
            while (j + 1 < t.size() && t[j] == t[j + 1]) ++j;
            return j + 1 == t.size() ? 1.0 : 0.0;
        }
        return 0.0;
    }
    double out = 0.0;
    const double d1 = t[i + static_cast<std::size_t>(degree)] - t[i];
    const double d2 = t[i + static_cast<std::size_t>(degree) + 1] - t[i + 1];
    if (d1 > 0.0) out += (x - t[i]) / d1 * bspline(t, i, degree - 1, x);
    if (d2 > 0.0) out += (t[i + static_cast<std::size_t>(degree) + 1] - x) / d2 * bspline(t, i + 1, degree - 1, x);
    return out;
}

inline std::vector<double> bspline_row(const std::vector<double>& knots, double x) {
    const std::size_t k = knots.size() - 4;
    x = std::clamp(x, knots.front(), knots.back());
    std::vector<double> row(k);
    for (std::size_t i = 0; i < k; ++i) row[i] = bspline(knots, i, 3, x);
    return row;
}

/// Clamped cubic knot vector with interior knots at evenly spaced quantiles
/// (linear interpolation) of the distinct values.
inline std::vector<double> quantile_knots(std::vector<double> x, std::size_t interior) {
    std::sort(x.begin(), x.end());
    x.erase(std::unique(x.begin(), x.end()), x.end());
    std::vector<double> t(4, x.front());
    const double last = static_cast<double>(x.size() - 1);
    for (std::size_t i = 1; i <= interior; ++i) {
        const double pos = last * static_cast<double>(i) / static_cast<double>(interior + 1);
        const auto lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        t.push_back(lo + 1 < x.size() ? x[lo] + frac * (x[lo + 1] - x[lo]) : x[lo]);
    }
    for (int i = 0; i < 4; ++i) t.push_back(x.back());
    return t;
}

/// Gaussian elimination with partial pivoting. Throws on a zero pivot.
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        }
        if (a[piv][col] == 0.0) throw std::runtime_error("singular oracle system");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

/// D'D for the second-difference operator on k coefficients.
inline Matrix second_difference(std::size_t k) {
    Matrix s(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i + 2 < k; ++i) {
        const double d[3] = {1.0, -2.0, 1.0};
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) s[i + static_cast<std::size_t>(a)][i + static_cast<std::size_t>(b)] += d[a] * d[b];
        }
    }
    return s;
}

/// A block of the additive design as seen by the oracle: raw columns,
/// penalty, weight and one sum-to-zero constraint per group of columns.
struct OracleTerm {
    Matrix columns;                          ///< n rows x k
    Matrix penalty;                          ///< k x k
    double lambda = 0.0;
    std::vector<std::vector<double>> constraints; ///< rows of length k
};

/// Solves min ||y - b0 - sum X_j c_j||^2 + sum lambda_j c_j' S_j c_j subject
/// to every constraint row, through the dense KKT system. Returns
/// [b0, c_1, ..., c_m].
inline std::vector<double> penalized_least_squares(const std::vector<OracleTerm>& terms, const std::vector<double>& y) {
    const std::size_t n = y.size();
    std::size_t p = 1;
    std::size_t m = 0;
    for (const auto& t : terms) {
        p += t.penalty.size();
        m += t.constraints.size();
    }
    std::vector<std::vector<double>> x(n, std::vector<double>(p, 0.0));
    std::size_t off = 1;
    for (std::size_t i = 0; i < n; ++i) x[i][0] = 1.0;
    for (const auto& t : terms) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < t.penalty.size(); ++c) x[i][off + c] = t.columns[i][c];
        }
        off += t.penalty.size();
    }
    Matrix kkt(p + m, std::vector<double>(p + m, 0.0));
    std::vector<double> rhs(p + m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < p; ++a) {
            if (x[i][a] == 0.0) continue;
            rhs[a] += 2.0 * x[i][a] * y[i];
            for (std::size_t b = 0; b < p; ++b) kkt[a][b] += 2.0 * x[i][a] * x[i][b];
        }
    }
    off = 1;
    std::size_t row = p;
    for (const auto& t : terms) {
        const std::size_t k = t.penalty.size();
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) kkt[off + a][off + b] += 2.0 * t.lambda * t.penalty[a][b];
        }
        for (const auto& c : t.constraints) {
            for (std::size_t a = 0; a < k; ++a) {
                kkt[row][off + a] = c[a];
                kkt[off + a][row] = c[a];
            }
            ++row;
        }
        off += k;
    }
    auto sol = solve(kkt, rhs);
    sol.resize(p);
    return sol;
}

/// Exhaustive change-point search: minimum over every subset of cut
/// positions of sum(segment cost) + penalty * cuts. `cost(a, b)` scores the
/// half-open range [a, b). Segments shorter than min_len are not allowed.
template <class Cost>
double exhaustive_segmentation(std::size_t n, double penalty, std::size_t min_len, Cost cost) {
    double best = std::numeric_limits<double>::infinity();
    const std::size_t inner = n - 1; // candidate cuts at 1..n-1
    for (unsigned long mask = 0; mask < (1UL << inner); ++mask) {
        double total = 0.0;
        std::size_t start = 0;
        bool ok = true;
        std::size_t cuts = 0;
        for (std::size_t c = 1; c <= n && ok; ++c) {
            const bool cut = c == n || (mask >> (c - 1)) & 1UL;
            if (!cut) continue;
            if (c - start < min_len) {
                ok = false;
                break;
            }
            total += cost(start, c);
            if (c != n) ++cuts;
            start = c;
        }
        if (ok) best = std::min(best, total + penalty * static_cast<double>(cuts));
    }
    return best;
}

/// Exhaustive change-point search over every cut set. The cut positions are
/// split into a low block, enumerated in full into a table per first high
/// cut, and a high block walked in Gray-code order so a step touches only the
/// segments around one cut. `costs[c][a][b]` scores [a, b) under cost c;
/// segments shorter than `min_len[c]` are not allowed. Returns, per cost and
/// per number of cuts k, the minimum total segment cost over all cut sets with
/// k cuts (infinity when none is allowed). The optimum for a penalty p is
/// min_k best[k] + p k.
inline std::vector<std::vector<double>> exhaustive_by_cuts(std::size_t n, const std::vector<Matrix>& costs,
                                                         const std::vector<std::size_t>& min_len) {
    if (n < 1 || n > 31) throw std::invalid_argument("exhaustive_by_cuts: n must be in [1, 31]");
    const std::size_t nc = costs.size();
    const std::size_t m = n - 1;
    const std::size_t low = std::min<std::size_t>(m, 8);
    const std::size_t high = m - low;
    const double inf = std::numeric_limits<double>::infinity();
    // Total over the segments of cut set `mask`; NaN-free, inf when disallowed.
    auto exact = [&](std::size_t c, std::uint32_t mask) {
        double total = 0.0;
        std::size_t start = 0;
        bool ok = true;
        for (std::size_t p = 1; p <= n; ++p) {
            if (p < n && !((mask >> (p - 1)) & 1u)) continue;
            total += costs[c][start][p];
            ok = ok && p - start >= min_len[c];
            start = p;
        }
        return ok ? total : inf;
    };
    std::vector<std::vector<double>> best(nc, std::vector<double>(n, inf));
    const std::size_t w = n + 1;
    for (std::size_t c = 0; c < nc; ++c) {
        // Row n stays zero: it stands for "no earlier high cut".
        std::vector<double> C(w * w, 0.0);
        std::vector<int> B(w * w, 0);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b <= n; ++b) {
                C[a * w + b] = costs[c][a][b];
                B[a * w + b] = b - a < min_len[c] ? 1 : 0;
            }
        }
        // For every first high cut f, the cheapest way to split [0, f) with
        // j low cuts, over all 2^low low cut sets.
        std::vector<double> head(w * (low + 1), inf);
        std::vector<std::uint32_t> head_at(w * (low + 1), 0);
        for (std::size_t f = low + 1; f <= n; ++f) {
            for (std::uint32_t lm = 0; lm < (1u << low); ++lm) {
                double total = 0.0;
                bool ok = true;
                std::size_t start = 0;
                for (std::size_t p = 1; p <= f; ++p) {
                    if (p < f && !((lm >> (p - 1)) & 1u)) continue;
                    total += C[start * w + p];
                    ok = ok && B[start * w + p] == 0;
                    start = p;
                }
                const std::size_t j = static_cast<std::size_t>(__builtin_popcount(lm));
                if (ok && total < head[f * (low + 1) + j]) {
                    head[f * (low + 1) + j] = total;
                    head_at[f * (low + 1) + j] = lm;
                }
            }
        }
        double lo[32];
        std::uint32_t at[32] = {};
        std::fill(lo, lo + 32, inf);
        // Running sum over the segments from the first high cut to n.
        double tail = 0.0;
        int invalid = 0;
        std::uint32_t hm = 0;
        std::size_t k = 0;
        auto visit = [&] {
            if (invalid != 0) return;
            const std::size_t f = hm ? static_cast<std::size_t>(__builtin_ctz(hm)) + low + 1 : n;
            const double* H = head.data() + f * (low + 1);
            for (std::size_t j = 0; j <= low; ++j) {
                const double v = tail + H[j];
                if (v < lo[k + j]) {
                    lo[k + j] = v;
                    at[k + j] = (hm << low) | head_at[f * (low + 1) + j];
                }
            }
        };
        auto resync = [&] {
            tail = 0.0;
            invalid = 0;
            std::size_t start = n;
            for (std::size_t p = low + 1; p <= n; ++p) {
                if (p < n && !((hm >> (p - low - 1)) & 1u)) continue;
                if (start < n) {
                    tail += C[start * w + p];
                    invalid += B[start * w + p];
                }
                start = p;
            }
        };
        visit();
        const std::uint64_t steps = std::uint64_t{1} << high;
        for (std::uint64_t s = 1; s < steps; ++s) {
            const int i = __builtin_ctzll(s);
            const std::uint32_t bit = 1u << i;
            hm ^= bit;
            const std::size_t p = static_cast<std::size_t>(i) + low + 1;
            const std::uint32_t lower = hm & (bit - 1);
            const std::uint32_t upper = hm & ~((bit << 1) - 1);
            const std::size_t a = lower ? static_cast<std::size_t>(31 - __builtin_clz(lower)) + low + 1 : n;
            const std::size_t b = upper ? static_cast<std::size_t>(__builtin_ctz(upper)) + low + 1 : n;
            const std::size_t ap = a * w + p, pb = p * w + b, ab = a * w + b;
            const double delta = C[ap] + C[pb] - C[ab];
            const int dbad = B[ap] + B[pb] - B[ab];
            if (hm & bit) {
                tail += delta;
                invalid += dbad;
                ++k;
            } else {
                tail -= delta;
                invalid -= dbad;
                --k;
            }
            // Bound the drift of the running sum.
            if ((s & 0xFFFF) == 0) resync();
            visit();
        }
        // Report each minimum as an exact sum over its cut set.
        for (std::size_t j = 0; j < n; ++j) {
            if (lo[j] < inf) best[c][j] = exact(c, at[j]);
        }
    }
    return best;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace oracle
