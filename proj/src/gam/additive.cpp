#include "castorette/gam/additive.hpp"

#include "castorette/error.hpp"
#include "castorette/gam/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace castorette::gam {

using nlohmann::json;

namespace {

constexpr std::size_t kMinRows = 20;
constexpr double kSingularRcond = 1e-13;
constexpr double kMaxEta = 700.0;

std::size_t distinct_count(std::span<const double> x) {
    std::vector<double> u(x.begin(), x.end());
    std::sort(u.begin(), u.end());
    return static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
}

const Column& numeric_column(const FeatureFrame& frame, const std::string& name) {
    const Column& c = frame.column(name);
    if (c.kind == ColumnKind::Categorical) fail(ErrorCode::InvalidArgument, "'" + name + "' is categorical");
    return c;
}

/// Maps frame level codes onto the term's level order; -1 for unseen levels.
std::vector<int> level_map(const Column& col, const std::vector<std::string>& term_levels) {
    std::vector<int> out(col.levels.size(), -1);
    for (std::size_t i = 0; i < col.levels.size(); ++i) {
        const auto it = std::find(term_levels.begin(), term_levels.end(), col.levels[i]);
        if (it != term_levels.end()) out[i] = static_cast<int>(it - term_levels.begin());
    }
    return out;
}

std::vector<std::string> present_levels(const Column& col) {
    std::vector<bool> seen(col.levels.size(), false);
    for (std::size_t i = 0; i < col.size(); ++i) {
        if (!col.missing[i] && col.codes[i] >= 0) seen[static_cast<std::size_t>(col.codes[i])] = true;
    }
    std::vector<std::string> out;
    for (std::size_t l = 0; l < seen.size(); ++l) {
        if (seen[l]) out.push_back(col.levels[l]);
    }
    return out;
}

SplineBasis adaptive_basis(const std::string& feature, std::span<const double> x, std::size_t knots) {
    const std::size_t d = distinct_count(x);
    if (d < 3) fail(ErrorCode::DegenerateFeature, "'" + feature + "' has " + std::to_string(d) + " distinct values");
    return SplineBasis::build(feature, x, std::min(knots, d - 2));
}

void require_complete(const Column& c) {
    if (std::any_of(c.missing.begin(), c.missing.end(), [](std::uint8_t m) { return m != 0; })) {
        fail(ErrorCode::InvalidArgument, "column '" + c.name + "' has missing rows; drop them before fitting");
    }
}

/// Builds the basis and level set of a term from training data.
Term prepare_term(TermSpec spec, const FeatureFrame& frame) {
    const std::size_t arity = spec.kind == TermKind::Spline2D ? 2 : 1;
    if (spec.features.size() != arity) {
        fail(ErrorCode::InvalidArgument, "term " + spec.label() + " needs " + std::to_string(arity) + " feature(s)");
    }
    const Column& first = frame.column(spec.features[0]);
    if (spec.kind == TermKind::Spline1D && first.kind == ColumnKind::Categorical) spec.kind = TermKind::Categorical;
    if (spec.kind == TermKind::Spline1D && first.kind == ColumnKind::Interaction) spec.kind = TermKind::ByInteraction;

    Term t;
    t.spec = spec;
    for (const auto& f : spec.features) require_complete(frame.column(f));
    switch (spec.kind) {
    case TermKind::Spline1D:
        t.bases.push_back(adaptive_basis(spec.features[0], numeric_column(frame, spec.features[0]).values, spec.knots));
        break;
    case TermKind::Spline2D:
        for (const auto& f : spec.features) t.bases.push_back(adaptive_basis(f, numeric_column(frame, f).values, spec.knots));
        break;
    case TermKind::Categorical:
        if (first.kind != ColumnKind::Categorical) fail(ErrorCode::InvalidArgument, "'" + first.name + "' is not categorical");
        t.levels = present_levels(first);
        if (t.levels.size() < 2) fail(ErrorCode::DegenerateFeature, "'" + first.name + "' has fewer than two levels");
        break;
    case TermKind::ByInteraction:
        if (first.kind != ColumnKind::Interaction) fail(ErrorCode::InvalidArgument, "'" + first.name + "' is not an interaction");
        t.bases.push_back(adaptive_basis(first.name, first.values, spec.knots));
        t.levels = present_levels(first);
        if (t.levels.empty()) fail(ErrorCode::DegenerateFeature, "'" + first.name + "' has no levels");
        break;
    }
    return t;
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& constraints) {
    const Eigen::Index k = constraints.cols();
    const Eigen::Index m = constraints.rows();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraints.transpose());
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
    return q.rightCols(k - m);
}

struct Block {
    Eigen::MatrixXd z;
    Eigen::Index offset = 0; ///< first column in the reduced design
    Eigen::Index width = 0;
    Eigen::MatrixXd penalty; ///< z' S z
    double scale = 1.0;
};

struct Problem {
    Eigen::MatrixXd x; ///< [1, X_1 Z_1, ..., X_p Z_p]
    std::vector<Block> blocks;

    Eigen::MatrixXd penalty(std::span<const double> lambdas) const {
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(x.cols(), x.cols());
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const auto& b = blocks[j];
            s.block(b.offset, b.offset, b.width, b.width) = lambdas[j] * b.penalty;
        }
        return s;
    }
};

[[noreturn]] void report_singular(const Eigen::MatrixXd& a, const std::vector<Term>& terms, const std::vector<Block>& blocks) {
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const Eigen::Index upto = blocks[j].offset + blocks[j].width;
        Eigen::LLT<Eigen::MatrixXd> llt(a.topLeftCorner(upto, upto));
        if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) {
            fail(ErrorCode::SingularSystem, "penalized system is singular at term " + terms[j].spec.label());
        }
    }
    fail(ErrorCode::SingularSystem, "penalized system is singular");
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& a, const std::vector<Term>& terms,
                                   const std::vector<Block>& blocks) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) report_singular(a, terms, blocks);
    return llt;
}

struct Solution {
    Eigen::VectorXd theta;
    double gcv = std::numeric_limits<double>::infinity();
    double edf = 0.0;
    std::size_t iterations = 0;
};

Solution solve_identity(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, const Problem& prob,
                        std::span<const double> y, std::span<const double> lambdas, const std::vector<Term>& terms) {
    const Eigen::MatrixXd a = gram + prob.penalty(lambdas);
    const auto llt = factor(a, terms, prob.blocks);
    Solution s;
    s.theta = llt.solve(rhs);
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    const double rss = (yv - prob.x * s.theta).squaredNorm();
    s.edf = llt.solve(gram).trace();
    const double n = static_cast<double>(y.size());
    s.gcv = n * rss / std::pow(std::max(n - s.edf, 1e-9), 2);
    s.iterations = 1;
    return s;
}

double log_objective(const Eigen::VectorXd& eta, std::span<const double> r, const Eigen::VectorXd& theta,
                     const Eigen::MatrixXd& s) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = std::clamp(eta(i), -kMaxEta, kMaxEta);
        loss += 2.0 * (r[static_cast<std::size_t>(i)] * std::exp(-e) + eta(i));
    }
    return loss + theta.dot(s * theta);
}

Solution solve_log(const Problem& prob, const Eigen::MatrixXd& unit_gram, std::span<const double> r,
                   std::span<const double> lambdas, const FitOptions& opt, const std::vector<Term>& terms) {
    const Eigen::Index p = prob.x.cols();
    const auto n = static_cast<Eigen::Index>(r.size());
    const Eigen::MatrixXd s = prob.penalty(lambdas);

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
    const double mean_r = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(n);
    theta(0) = std::log(std::max(mean_r, std::numeric_limits<double>::min()));

    Eigen::VectorXd eta = prob.x * theta;
    double q = log_objective(eta, r, theta, s);
    bool converged = false;
    std::size_t it = 0;
    std::vector<double> w(static_cast<std::size_t>(n));
    std::vector<double> resid(static_cast<std::size_t>(n));
    for (; it < opt.max_iterations; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double ratio = r[static_cast<std::size_t>(i)] * std::exp(-std::clamp(eta(i), -kMaxEta, kMaxEta));
            w[static_cast<std::size_t>(i)] = ratio;
            resid[static_cast<std::size_t>(i)] = 1.0 - ratio;
        }
        // Half gradient and half Hessian of the objective.
        const Eigen::VectorXd grad = kernels::cross(prob.x, {}, resid) + s * theta;
        Eigen::LLT<Eigen::MatrixXd> llt(kernels::gram(prob.x, w) + s);
        if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) {
            // Observed weights can vanish; fall back to Fisher scoring.
            llt.compute(unit_gram + s);
            if (llt.info() != Eigen::Success || llt.rcond() < kSingularRcond) report_singular(unit_gram + s, terms, prob.blocks);
        }
        const Eigen::VectorXd step = -llt.solve(grad);

        double t = 1.0;
        Eigen::VectorXd cand = theta + step;
        Eigen::VectorXd cand_eta = prob.x * cand;
        double cand_q = log_objective(cand_eta, r, cand, s);
        while (!(cand_q <= q + 1e-12 * std::abs(q)) && t > 1e-10) {
            t *= 0.5;
            cand = theta + t * step;
            cand_eta = prob.x * cand;
            cand_q = log_objective(cand_eta, r, cand, s);
        }
        const double change = q - cand_q;
        theta = std::move(cand);
        eta = std::move(cand_eta);
        q = cand_q;
        if (converged) break; // one extra Newton step after the change test passes
        if (std::abs(change) < opt.tolerance * (1.0 + std::abs(q))) converged = true;
    }
    if (!converged) {
        fail(ErrorCode::NonConvergence, "log-link fit did not converge in " + std::to_string(opt.max_iterations) +
                                            " iterations");
    }

    Solution sol;
    sol.theta = theta;
    sol.iterations = it + 1;
    const Eigen::LLT<Eigen::MatrixXd> fisher(unit_gram + s);
    sol.edf = fisher.solve(unit_gram).trace();
    double pearson = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = std::exp(std::clamp(eta(i), -kMaxEta, kMaxEta));
        const double d = (r[static_cast<std::size_t>(i)] - mu) / mu;
        pearson += d * d;
    }
    const double nd = static_cast<double>(n);
    sol.gcv = nd * pearson / std::pow(std::max(nd - sol.edf, 1e-9), 2);
    return sol;
}

} // namespace

std::string_view to_string(TermKind kind) noexcept {
    switch (kind) {
    case TermKind::Spline1D: return "spline";
    case TermKind::Spline2D: return "tensor";
    case TermKind::Categorical: return "categorical";
    case TermKind::ByInteraction: return "by";
    }
    return "spline";
}

TermKind term_kind_from_string(std::string_view text) {
    if (text == "spline") return TermKind::Spline1D;
    if (text == "tensor") return TermKind::Spline2D;
    if (text == "categorical") return TermKind::Categorical;
    if (text == "by") return TermKind::ByInteraction;
    fail(ErrorCode::InvalidArgument, "unknown term kind '" + std::string(text) + "'");
}

std::string_view to_string(Link link) noexcept { return link == Link::Identity ? "identity" : "log"; }

Link link_from_string(std::string_view text) {
    if (text == "identity") return Link::Identity;
    if (text == "log") return Link::Log;
    fail(ErrorCode::InvalidArgument, "unknown link '" + std::string(text) + "'");
}

std::string TermSpec::label() const {
    std::string args;
    for (const auto& f : features) args += (args.empty() ? "" : ",") + f;
    switch (kind) {
    case TermKind::Spline1D: return "s(" + args + ")";
    case TermKind::Spline2D: return "te(" + args + ")";
    case TermKind::Categorical: return "f(" + args + ")";
    case TermKind::ByInteraction: return "by(" + args + ")";
    }
    return args;
}

TermSpec spline_term(std::string feature, std::size_t knots) { return TermSpec{TermKind::Spline1D, {std::move(feature)}, knots}; }
TermSpec tensor_term(std::string a, std::string b, std::size_t knots) {
    return TermSpec{TermKind::Spline2D, {std::move(a), std::move(b)}, knots};
}
TermSpec categorical_term(std::string feature) { return TermSpec{TermKind::Categorical, {std::move(feature)}, 0}; }
TermSpec by_term(std::string interaction_column, std::size_t knots) {
    return TermSpec{TermKind::ByInteraction, {std::move(interaction_column)}, knots};
}

TermSpec default_term(const FeatureFrame& frame, const std::string& column, std::size_t knots) {
    switch (frame.column(column).kind) {
    case ColumnKind::Categorical: return categorical_term(column);
    case ColumnKind::Interaction: return by_term(column, knots);
    case ColumnKind::Real: break;
    }
    return spline_term(column, knots);
}

std::size_t Term::dimension() const {
    switch (spec.kind) {
    case TermKind::Spline1D: return bases.at(0).size();
    case TermKind::Spline2D: return bases.at(0).size() * bases.at(1).size();
    case TermKind::Categorical: return levels.size();
    case TermKind::ByInteraction: return bases.at(0).size() * levels.size();
    }
    return 0;
}

Eigen::MatrixXd Term::design(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped) const {
    const auto n = static_cast<Eigen::Index>(frame.rows());
    auto flag = [&](Eigen::Index i) {
        if (clamped) (*clamped)[static_cast<std::size_t>(i)] = 1;
    };
    if (clamped) clamped->resize(frame.rows(), 0);

    switch (spec.kind) {
    case TermKind::Spline1D: {
        const Column& c = numeric_column(frame, spec.features[0]);
        if (clamped) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (bases[0].outside(c.values[static_cast<std::size_t>(i)])) flag(i);
            }
        }
        return kernels::spline_design(bases[0], c.values);
    }
    case TermKind::Spline2D: {
        const Column& c1 = numeric_column(frame, spec.features[0]);
        const Column& c2 = numeric_column(frame, spec.features[1]);
        const Eigen::MatrixXd b1 = kernels::spline_design(bases[0], c1.values);
        const Eigen::MatrixXd b2 = kernels::spline_design(bases[1], c2.values);
        const Eigen::Index k2 = b2.cols();
        Eigen::MatrixXd out(n, b1.cols() * k2);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index a = 0; a < b1.cols(); ++a) out.row(i).segment(a * k2, k2) = b1(i, a) * b2.row(i);
            if (bases[0].outside(c1.values[static_cast<std::size_t>(i)]) ||
                bases[1].outside(c2.values[static_cast<std::size_t>(i)])) {
                flag(i);
            }
        }
        return out;
    }
    case TermKind::Categorical: {
        const Column& c = frame.column(spec.features[0]);
        const auto map = level_map(c, levels);
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(levels.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            const int code = c.codes[static_cast<std::size_t>(i)];
            const int l = code >= 0 ? map[static_cast<std::size_t>(code)] : -1;
            if (l >= 0) out(i, l) = 1.0;
            else flag(i);
        }
        return out;
    }
    case TermKind::ByInteraction: {
        const Column& c = frame.column(spec.features[0]);
        const auto map = level_map(c, levels);
        const Eigen::MatrixXd b = kernels::spline_design(bases[0], c.values);
        const Eigen::Index k = b.cols();
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, k * static_cast<Eigen::Index>(levels.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            const int code = c.codes[static_cast<std::size_t>(i)];
            const int l = code >= 0 ? map[static_cast<std::size_t>(code)] : -1;
            if (l >= 0) out.row(i).segment(l * k, k) = b.row(i);
            else flag(i);
            if (bases[0].outside(c.values[static_cast<std::size_t>(i)])) flag(i);
        }
        return out;
    }
    }
    return {};
}

Eigen::MatrixXd second_difference_penalty(std::size_t k) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (kk < 3) return Eigen::MatrixXd::Zero(kk, kk);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(kk - 2, kk);
    for (Eigen::Index i = 0; i < kk - 2; ++i) {
        d(i, i) = 1.0;
        d(i, i + 1) = -2.0;
        d(i, i + 2) = 1.0;
    }
    return d.transpose() * d;
}

Eigen::MatrixXd Term::penalty() const {
    switch (spec.kind) {
    case TermKind::Spline1D: return second_difference_penalty(bases[0].size());
    case TermKind::Spline2D: {
        const auto k1 = static_cast<Eigen::Index>(bases[0].size());
        const auto k2 = static_cast<Eigen::Index>(bases[1].size());
        const Eigen::MatrixXd s1 = second_difference_penalty(bases[0].size());
        const Eigen::MatrixXd s2 = second_difference_penalty(bases[1].size());
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k1 * k2, k1 * k2);
        // S1 (x) I + I (x) S2, row-major index a*k2 + b.
        for (Eigen::Index a = 0; a < k1; ++a) {
            for (Eigen::Index c = 0; c < k1; ++c) {
                for (Eigen::Index b = 0; b < k2; ++b) s(a * k2 + b, c * k2 + b) += s1(a, c);
            }
            s.block(a * k2, a * k2, k2, k2) += s2;
        }
        return s;
    }
    case TermKind::Categorical:
        return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(levels.size()), static_cast<Eigen::Index>(levels.size()));
    case TermKind::ByInteraction: {
        const auto k = static_cast<Eigen::Index>(bases[0].size());
        const auto l = static_cast<Eigen::Index>(levels.size());
        const Eigen::MatrixXd s1 = second_difference_penalty(bases[0].size());
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k * l, k * l);
        for (Eigen::Index i = 0; i < l; ++i) s.block(i * k, i * k, k, k) = s1;
        return s;
    }
    }
    return {};
}

Eigen::MatrixXd Term::constraints(const FeatureFrame&, const Eigen::MatrixXd& design) const {
    if (spec.kind != TermKind::ByInteraction) return design.colwise().sum();
    const auto k = static_cast<Eigen::Index>(bases[0].size());
    const auto l = static_cast<Eigen::Index>(levels.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(l, k * l);
    const Eigen::RowVectorXd sums = design.colwise().sum();
    for (Eigen::Index i = 0; i < l; ++i) c.block(i, i * k, 1, k) = sums.segment(i * k, k);
    return c;
}

CenteredTerm center_term(const TermSpec& spec, const FeatureFrame& frame) {
    CenteredTerm ct;
    ct.term = prepare_term(spec, frame);
    const Eigen::MatrixXd raw = ct.term.design(frame);
    ct.z = null_space(ct.term.constraints(frame, raw));
    ct.design = raw * ct.z;
    ct.penalty = ct.z.transpose() * ct.term.penalty() * ct.z;
    return ct;
}

std::vector<double> lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 20; ++i) grid.push_back(std::pow(10.0, -4.0 + 9.0 * i / 19.0));
    return grid;
}

AdditiveModel fit_additive(const FeatureFrame& frame, std::span<const double> response, std::span<const TermSpec> specs,
                           const FitOptions& options) {
    const std::size_t n = frame.rows();
    if (n < kMinRows) fail(ErrorCode::InvalidArgument, "need at least 20 rows, got " + std::to_string(n));
    if (response.size() != n) fail(ErrorCode::InvalidArgument, "response length does not match frame");
    for (const double v : response) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "response");
        if (options.link == Link::Log && v < 0.0) fail(ErrorCode::InvalidArgument, "log-link response must be >= 0");
    }
    if (options.lambdas && options.lambdas->size() != specs.size()) {
        fail(ErrorCode::InvalidArgument, "need one lambda per term");
    }

    std::vector<Term> terms;
    Problem prob;
    std::vector<Eigen::MatrixXd> reduced;
    Eigen::Index width = 1;
    for (const auto& spec : specs) {
        CenteredTerm ct = center_term(spec, frame);
        Block b;
        b.z = std::move(ct.z);
        b.offset = width;
        b.width = b.z.cols();
        b.penalty = std::move(ct.penalty);
        const double pen_trace = b.penalty.trace();
        b.scale = pen_trace > 0.0 ? ct.design.squaredNorm() / pen_trace : 1.0;
        reduced.push_back(std::move(ct.design));
        terms.push_back(std::move(ct.term));
        width += b.width;
        prob.blocks.push_back(std::move(b));
    }
    prob.x.resize(static_cast<Eigen::Index>(n), width);
    prob.x.col(0).setOnes();
    for (std::size_t j = 0; j < terms.size(); ++j) {
        prob.x.middleCols(prob.blocks[j].offset, prob.blocks[j].width) = reduced[j];
    }

    const Eigen::MatrixXd unit_gram = kernels::gram(prob.x, {});
    const std::vector<double> grid = lambda_grid();
    auto lambdas_for = [&](double g) {
        std::vector<double> l;
        for (const auto& b : prob.blocks) l.push_back(g * b.scale);
        return l;
    };

    Solution best;
    std::vector<double> chosen;
    double chosen_g = 0.0;
    if (options.link == Link::Identity) {
        const Eigen::VectorXd rhs = kernels::cross(prob.x, {}, response);
        if (options.lambdas) {
            chosen = *options.lambdas;
            best = solve_identity(unit_gram, rhs, prob, response, chosen, terms);
        } else {
            std::vector<Solution> sols(grid.size());
#pragma omp parallel for schedule(dynamic)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                try {
                    sols[i] = solve_identity(unit_gram, rhs, prob, response, lambdas_for(grid[i]), terms);
                } catch (const Error&) {
                    sols[i].gcv = std::numeric_limits<double>::infinity();
                }
            }
            const auto it = std::min_element(sols.begin(), sols.end(), [](const auto& a, const auto& b) { return a.gcv < b.gcv; });
            const auto idx = static_cast<std::size_t>(it - sols.begin());
            if (!std::isfinite(it->gcv)) {
                // Surface the real error from the smallest multiplier.
                solve_identity(unit_gram, rhs, prob, response, lambdas_for(grid.front()), terms);
            }
            best = *it;
            chosen_g = grid[idx];
            chosen = lambdas_for(chosen_g);
        }
    } else {
        if (options.lambdas) {
            chosen = *options.lambdas;
            best = solve_log(prob, unit_gram, response, chosen, options, terms);
        } else {
            std::vector<Solution> sols(grid.size());
#pragma omp parallel for schedule(dynamic)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                try {
                    sols[i] = solve_log(prob, unit_gram, response, lambdas_for(grid[i]), options, terms);
                } catch (const Error&) {
                    sols[i].gcv = std::numeric_limits<double>::infinity();
                }
            }
            const auto it = std::min_element(sols.begin(), sols.end(), [](const auto& a, const auto& b) { return a.gcv < b.gcv; });
            if (!std::isfinite(it->gcv)) solve_log(prob, unit_gram, response, lambdas_for(grid.back()), options, terms);
            const auto idx = static_cast<std::size_t>(it - sols.begin());
            best = *it;
            chosen_g = grid[idx];
            chosen = lambdas_for(chosen_g);
        }
    }

    AdditiveModel model;
    model.link = options.link;
    model.intercept = best.theta(0);
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto& b = prob.blocks[j];
        terms[j].coefficients = b.z * best.theta.segment(b.offset, b.width);
        terms[j].lambda = chosen[j];
    }
    model.terms = std::move(terms);
    model.summary = FitSummary{best.edf, best.gcv, chosen_g, best.iterations, n};
    return model;
}

Eigen::VectorXd AdditiveModel::contribution(std::size_t term, const FeatureFrame& frame) const {
    const Term& t = terms.at(term);
    return t.design(frame) * t.coefficients;
}

Eigen::VectorXd AdditiveModel::linear_predictor(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped) const {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(frame.rows()), intercept);
    std::vector<std::uint8_t> flags;
    for (const auto& t : terms) {
        eta.noalias() += t.design(frame, clamped ? &flags : nullptr) * t.coefficients;
        if (clamped) {
            clamped->resize(frame.rows(), 0);
            for (std::size_t i = 0; i < flags.size(); ++i) (*clamped)[i] |= flags[i];
        }
    }
    return eta;
}

Eigen::VectorXd AdditiveModel::predict(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped) const {
    Eigen::VectorXd eta = linear_predictor(frame, clamped);
    if (link == Link::Log) eta = eta.array().min(kMaxEta).max(-kMaxEta).exp();
    return eta;
}

std::vector<std::string> AdditiveModel::features() const {
    std::vector<std::string> out;
    for (const auto& t : terms) {
        for (const auto& f : t.spec.features) {
            if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
        }
    }
    return out;
}

double penalized_objective(const AdditiveModel& model, const FeatureFrame& frame, std::span<const double> response) {
    const Eigen::VectorXd eta = model.linear_predictor(frame);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double y = response[static_cast<std::size_t>(i)];
        if (model.link == Link::Identity) {
            loss += (y - eta(i)) * (y - eta(i));
        } else {
            loss += 2.0 * (y * std::exp(-std::clamp(eta(i), -kMaxEta, kMaxEta)) + eta(i));
        }
    }
    for (const auto& t : model.terms) loss += t.lambda * t.coefficients.dot(t.penalty() * t.coefficients);
    return loss;
}

json to_json(const TermSpec& spec) {
    return json{{"kind", to_string(spec.kind)}, {"features", spec.features}, {"knots", spec.knots}};
}

TermSpec term_spec_from_json(const json& j) {
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name.find('@') != std::string::npos) return by_term(name);
        return spline_term(name);
    }
    TermSpec spec;
    spec.kind = term_kind_from_string(j.value("kind", std::string("spline")));
    if (j.contains("features")) {
        spec.features = j.at("features").get<std::vector<std::string>>();
    } else {
        spec.features = {j.at("feature").get<std::string>()};
    }
    spec.knots = j.value("knots", spec.kind == TermKind::Spline2D ? std::size_t{5} : std::size_t{10});
    return spec;
}

json to_json(const AdditiveModel& model) {
    json terms = json::array();
    for (const auto& t : model.terms) {
        json knots = json::array();
        for (const auto& b : t.bases) knots.push_back(b.knots());
        terms.push_back({{"spec", to_json(t.spec)},
                         {"knots", std::move(knots)},
                         {"levels", t.levels},
                         {"coefficients", std::vector<double>(t.coefficients.data(), t.coefficients.data() + t.coefficients.size())},
                         {"lambda", t.lambda}});
    }
    return json{{"link", to_string(model.link)},
                {"intercept", model.intercept},
                {"terms", std::move(terms)},
                {"summary",
                 {{"edf", model.summary.edf},
                  {"gcv", model.summary.gcv},
                  {"grid_lambda", model.summary.grid_lambda},
                  {"iterations", model.summary.iterations},
                  {"rows", model.summary.rows}}}};
}

AdditiveModel additive_from_json(const json& j) {
    try {
        AdditiveModel m;
        m.link = link_from_string(j.at("link").get<std::string>());
        m.intercept = j.at("intercept").get<double>();
        for (const auto& tj : j.at("terms")) {
            Term t;
            t.spec = term_spec_from_json(tj.at("spec"));
            for (const auto& k : tj.at("knots")) {
                t.bases.emplace_back(t.bases.size() < t.spec.features.size() ? t.spec.features[t.bases.size()] : "",
                                     k.get<std::vector<double>>());
            }
            t.levels = tj.at("levels").get<std::vector<std::string>>();
            const auto coef = tj.at("coefficients").get<std::vector<double>>();
            t.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
            t.lambda = tj.at("lambda").get<double>();
            const std::size_t expected_bases = t.spec.kind == TermKind::Spline2D ? 2 : t.spec.kind == TermKind::Categorical ? 0 : 1;
            if (t.bases.size() != expected_bases || t.dimension() != coef.size()) {
                fail(ErrorCode::CorruptParams, "term " + t.spec.label() + " has inconsistent dimensions");
            }
            m.terms.push_back(std::move(t));
        }
        const auto& s = j.at("summary");
        m.summary = FitSummary{s.at("edf"), s.at("gcv"), s.at("grid_lambda"), s.at("iterations"), s.at("rows")};
        return m;
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptParams, e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptParams) throw;
        fail(ErrorCode::CorruptParams, e.what());
    }
}

} // namespace castorette::gam
