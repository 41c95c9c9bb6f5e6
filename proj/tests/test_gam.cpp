#include "castorette/error.hpp"
#include "castorette/gam/additive.hpp"
#include "castorette/gam/boost.hpp"
#include "castorette/gam/gam2.hpp"
#include "castorette/gam/kernels.hpp"
#include "castorette/gam/spline_basis.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <numbers>

using namespace castorette;
using namespace castorette::gam;
using fixtures::frame_with;

namespace {

std::vector<double> grid(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

} // namespace

TEST_CASE("spline basis dimension and partition of unity") {
    const auto x = grid(200, -3.0, 7.0);
    const auto b = SplineBasis::build("x", x, 10);
    CHECK(b.size() == 14);
    std::mt19937_64 rng(1);
    for (const double p : fixtures::uniform(100, rng, -3.0, 7.0)) {
        std::vector<double> row(b.size());
        b.evaluate(p, row);
        double sum = 0.0;
        for (const double v : row) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("spline basis matches the recursive definition") {
    std::mt19937_64 rng(2);
    const auto x = fixtures::uniform(300, rng, 0.0, 5.0);
    const auto b = SplineBasis::build("x", x, 8);
    const auto knots = oracle::quantile_knots(x, 8);
    REQUIRE(knots.size() == b.knots().size());
    for (std::size_t i = 0; i < knots.size(); ++i) CHECK(knots[i] == doctest::Approx(b.knots()[i]).epsilon(1e-15));
    for (double p : fixtures::uniform(50, rng, 0.0, 5.0)) {
        std::vector<double> row(b.size());
        b.evaluate(p, row);
        const auto ref = oracle::bspline_row(knots, p);
        for (std::size_t k = 0; k < row.size(); ++k) CHECK(std::abs(row[k] - ref[k]) < 1e-12);
    }
    std::vector<double> row(b.size());
    b.evaluate(b.upper(), row);
    CHECK(row.back() == doctest::Approx(1.0));
}

TEST_CASE("spline basis rejects degenerate columns and clamps outside the domain") {
    const std::vector<double> constant(50, 4.2);
    CHECK_THROWS_AS(SplineBasis::build("c", constant, 10), Error);
    try {
        SplineBasis::build("c", constant, 10);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateFeature);
    }
    const auto b = SplineBasis::build("x", grid(40, 0.0, 1.0), 4);
    std::vector<double> lo(b.size()), out(b.size());
    b.evaluate(0.0, lo);
    b.evaluate(-10.0, out);
    CHECK(lo == out);
}

TEST_CASE("serial and parallel kernels agree") {
    std::mt19937_64 rng(3);
    const auto x = fixtures::uniform(5000, rng);
    const auto w = fixtures::uniform(5000, rng, 0.5, 2.0);
    const auto b = SplineBasis::build("x", x, 12);
    const Eigen::MatrixXd ds = kernels::serial::spline_design(b, x);
    const Eigen::MatrixXd dp = kernels::parallel::spline_design(b, x);
    CHECK((ds - dp).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::MatrixXd gs = kernels::serial::gram(ds, w);
    const Eigen::MatrixXd gp = kernels::parallel::gram(ds, w);
    CHECK((gs - gp).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::VectorXd cs = kernels::serial::cross(ds, w, x);
    const Eigen::VectorXd cp = kernels::parallel::cross(ds, w, x);
    CHECK(max_abs(cs - cp) < 1e-9);
}

TEST_CASE("constant target gives intercept and flat terms") {
    std::mt19937_64 rng(4);
    const auto x1 = fixtures::uniform(300, rng);
    const auto x2 = fixtures::uniform(300, rng);
    const auto frame = frame_with({real_column("x1", x1), real_column("x2", x2)}, std::vector<double>(300, 3.5));
    const std::vector<TermSpec> terms{spline_term("x1"), spline_term("x2")};
    const auto m = fit_additive(frame, frame.target->values, terms);
    CHECK(m.intercept == doctest::Approx(3.5).epsilon(1e-12));
    for (std::size_t j = 0; j < m.terms.size(); ++j) CHECK(max_abs(m.contribution(j, frame)) < 1e-8);
}

TEST_CASE("identity fit matches the dense constrained solve") {
    std::mt19937_64 rng(5);
    const std::size_t n = 250;
    const auto x1 = fixtures::uniform(n, rng, -1.0, 2.0);
    const auto x2 = fixtures::uniform(n, rng);
    std::vector<int> codes(n);
    std::vector<double> y(n);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (std::size_t i = 0; i < n; ++i) {
        codes[i] = static_cast<int>(i % 3);
        y[i] = std::sin(3 * x1[i]) + x2[i] * x2[i] + 0.5 * codes[i] + noise(rng);
    }
    const auto frame = frame_with({real_column("x1", x1), real_column("x2", x2),
                                   categorical_column("g", {"a", "b", "c"}, codes)},
                                  y);
    const std::vector<TermSpec> terms{spline_term("x1", 6), spline_term("x2", 5), categorical_term("g")};
    FitOptions opt;
    opt.lambdas = std::vector<double>{0.3, 2.0, 0.1};
    const auto m = fit_additive(frame, y, terms, opt);

    const std::vector<oracle::OracleTerm> ot{fixtures::spline_oracle(x1, 6, 0.3), fixtures::spline_oracle(x2, 5, 2.0),
                                             fixtures::factor_oracle(codes, 3, 0.1)};
    const auto ref = oracle::penalized_least_squares(ot, y);
    CHECK(std::abs(ref[0] - m.intercept) < 1e-8);
    std::size_t off = 1;
    for (const auto& t : m.terms) {
        for (Eigen::Index k = 0; k < t.coefficients.size(); ++k) CHECK(std::abs(ref[off + static_cast<std::size_t>(k)] - t.coefficients(k)) < 1e-8);
        off += static_cast<std::size_t>(t.coefficients.size());
    }
}

TEST_CASE("GCV fit recovers a sine curve") {
    std::mt19937_64 rng(6);
    const std::size_t n = 2000;
    const auto x = fixtures::uniform(n, rng);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(2 * std::numbers::pi * x[i]) + noise(rng);
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (i % 5 == 0 ? test : train).push_back(i);
    const auto frame = frame_with({real_column("x", x)}, y);
    const auto tr = frame.select_rows(train);
    const auto te = frame.select_rows(test);
    const std::vector<TermSpec> terms{spline_term("x")};
    const auto m = fit_additive(tr, tr.target->values, terms);
    const Eigen::VectorXd pred = m.predict(te);
    double ss = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) ss += std::pow(pred(static_cast<Eigen::Index>(i)) - te.target->values[i], 2);
    CHECK(std::sqrt(ss / static_cast<double>(test.size())) < 0.12);
    CHECK(m.summary.edf > 3.0);
}

TEST_CASE("large penalties push spline terms to their affine null space") {
    std::mt19937_64 rng(7);
    const auto x = fixtures::uniform(400, rng);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::cos(5 * x[i]);
    const auto frame = frame_with({real_column("x", x)}, y);
    const std::vector<TermSpec> terms{spline_term("x")};
    // Same per-term scaling the GCV search uses.
    const auto basis = SplineBasis::build("x", x, 10);
    const Eigen::MatrixXd d = kernels::spline_design(basis, x);
    const double scale = d.squaredNorm() / second_difference_penalty(basis.size()).trace();
    // ||D c||^2 is non-increasing in lambda for any penalized least squares
    // problem; the largest single second difference need not be at small
    // lambda, so it is checked for decay only.
    double prev_norm = std::numeric_limits<double>::infinity();
    std::vector<double> worst;
    for (const double g : lambda_grid()) {
        FitOptions opt;
        opt.lambdas = std::vector<double>{g * scale};
        const auto m = fit_additive(frame, y, terms, opt);
        const auto& c = m.terms[0].coefficients;
        double w = 0.0;
        double norm = 0.0;
        for (Eigen::Index k = 0; k + 2 < c.size(); ++k) {
            const double d2 = c(k) - 2 * c(k + 1) + c(k + 2);
            w = std::max(w, std::abs(d2));
            norm += d2 * d2;
        }
        CHECK(norm <= prev_norm * (1 + 1e-9) + 1e-300);
        prev_norm = norm;
        worst.push_back(w);
    }
    for (std::size_t i = worst.size() / 2; i + 1 < worst.size(); ++i) CHECK(worst[i + 1] <= worst[i]);
    CHECK(worst.back() < 1e-2 * worst.front());
    FitOptions huge;
    huge.lambdas = std::vector<double>{1e12 * scale};
    const auto flat = fit_additive(frame, y, terms, huge);
    const auto& c = flat.terms[0].coefficients;
    for (Eigen::Index k = 0; k + 2 < c.size(); ++k) CHECK(std::abs(c(k) - 2 * c(k + 1) + c(k + 2)) < 1e-8);
}

TEST_CASE("tensor and by-interaction terms fit and stay centered") {
    std::mt19937_64 rng(8);
    const std::size_t n = 600;
    const auto a = fixtures::uniform(n, rng);
    const auto b = fixtures::uniform(n, rng);
    std::vector<int> codes(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        codes[i] = static_cast<int>(i % 2);
        y[i] = a[i] * b[i] + (codes[i] ? std::sin(4 * a[i]) : -a[i]);
    }
    Column by = categorical_column("a@g", {"u", "v"}, codes);
    by.kind = ColumnKind::Interaction;
    by.values = a;
    const auto frame = frame_with({real_column("a", a), real_column("b", b), by}, y);
    const std::vector<TermSpec> terms{tensor_term("a", "b"), by_term("a@g")};
    const auto m = fit_additive(frame, y, terms);
    CHECK(m.terms[0].dimension() == 81);
    CHECK(m.terms[1].dimension() == 2 * m.terms[1].bases[0].size());
    for (std::size_t j = 0; j < m.terms.size(); ++j) CHECK(std::abs(m.contribution(j, frame).sum()) < 1e-8);
    const Eigen::VectorXd fit = m.predict(frame);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += std::pow(fit(static_cast<Eigen::Index>(i)) - y[i], 2);
    CHECK(std::sqrt(ss / n) < 0.02);
}

TEST_CASE("log link recovers a multiplicative variance") {
    std::mt19937_64 rng(9);
    const std::size_t n = 3000;
    const auto x = fixtures::uniform(n, rng);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::exp(x[i]);
        const double e = s * z(rng);
        r[i] = e * e;
    }
    const auto frame = frame_with({real_column("x", x)}, r);
    const std::vector<TermSpec> terms{spline_term("x", 6)};
    FitOptions opt;
    opt.link = Link::Log;
    const auto m = fit_additive(frame, r, terms, opt);
    const Eigen::VectorXd eta = m.linear_predictor(frame);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(eta(static_cast<Eigen::Index>(i)) - 2 * x[i]));
    CHECK(worst < 0.35);
}

TEST_CASE("fit errors") {
    std::mt19937_64 rng(10);
    const auto x = fixtures::uniform(10, rng);
    const auto small = frame_with({real_column("x", x)}, x);
    const std::vector<TermSpec> terms{spline_term("x")};
    CHECK_THROWS_AS(fit_additive(small, x, terms), Error);

    const auto big = fixtures::uniform(100, rng);
    const auto frame = frame_with({real_column("x", big)}, big);
    const std::vector<TermSpec> missing{spline_term("nope")};
    try {
        fit_additive(frame, big, missing);
        FAIL("expected MissingFeature");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingFeature);
    }
    // Two copies of the same categorical are confounded without a penalty.
    std::vector<int> codes(100);
    for (std::size_t i = 0; i < 100; ++i) codes[i] = static_cast<int>(i % 4);
    const auto dup = frame_with({categorical_column("g", {"a", "b", "c", "d"}, codes),
                                 categorical_column("h", {"a", "b", "c", "d"}, codes)},
                                big);
    const std::vector<TermSpec> twins{categorical_term("g"), categorical_term("h")};
    FitOptions opt;
    opt.lambdas = std::vector<double>{0.0, 0.0};
    try {
        fit_additive(dup, big, twins, opt);
        FAIL("expected SingularSystem");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingularSystem);
        CHECK(e.detail().find("f(h)") != std::string::npos);
    }
}

TEST_CASE("prediction does not depend on term or row order") {
    std::mt19937_64 rng(11);
    const std::size_t n = 400;
    const auto a = fixtures::uniform(n, rng);
    const auto b = fixtures::uniform(n, rng);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * a[i] - std::sin(3 * b[i]) + 0.01 * static_cast<double>(i % 7);
    const auto frame = frame_with({real_column("a", a), real_column("b", b)}, y);
    const std::vector<TermSpec> ab{spline_term("a"), spline_term("b")};
    const std::vector<TermSpec> ba{spline_term("b"), spline_term("a")};
    const auto m1 = fit_additive(frame, y, ab);
    const auto m2 = fit_additive(frame, y, ba);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = frame.select_rows(perm);
    const auto m3 = fit_additive(shuffled, shuffled.target->values, ab);
    CHECK(max_abs(m1.predict(frame) - m2.predict(frame)) < 1e-9);
    CHECK(max_abs(m1.predict(frame) - m3.predict(frame)) < 1e-9);
}

TEST_CASE("boosting picks the informative candidate") {
    std::mt19937_64 rng(12);
    const std::size_t n = 500;
    const auto x1 = fixtures::uniform(n, rng);
    const auto x2 = fixtures::uniform(n, rng);
    const auto x3 = fixtures::uniform(n, rng);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(2 * std::numbers::pi * x1[i]) + noise(rng);
    const auto frame = frame_with({real_column("x1", x1), real_column("x2", x2), real_column("x3", x3)}, y);
    const std::vector<TermSpec> cands{spline_term("x2"), spline_term("x1"), spline_term("x3")};
    const auto sel = boost_select(frame, y, cands, 200, 0.1);
    REQUIRE(!sel.selected.empty());
    CHECK(sel.selected.front().features[0] == "x1");
    CHECK(cands[sel.path.front()].features[0] == "x1");
    CHECK(std::accumulate(sel.counts.begin(), sel.counts.end(), std::size_t{0}) == 200);
    for (std::size_t i = 1; i < sel.counts.size(); ++i) CHECK(sel.counts[i] < sel.counts.front());

    const auto serial = boost_select_serial(frame, y, cands, 200, 0.1);
    CHECK(serial.path == sel.path);

    CHECK(boost_select(frame, y, cands, 0, 0.1).selected.empty());
    const std::vector<TermSpec> one{spline_term("x3")};
    const auto single = boost_select(frame, y, one, 5, 0.1);
    REQUIRE(single.selected.size() == 1);
    CHECK(single.selected[0] == one[0]);
}

TEST_CASE("gam2 stage one residuals are orthogonal to the intercept") {
    std::mt19937_64 rng(13);
    const std::size_t n = 800;
    const auto x = fixtures::uniform(n, rng);
    const auto v = fixtures::uniform(n, rng);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = 3 * x[i] + (1 + v[i]) * z(rng);
    const auto frame = frame_with({real_column("x", x), real_column("v", v)}, y);
    Gam2Config cfg;
    cfg.mean_terms = {spline_term("x")};
    cfg.variance_terms = {spline_term("v")};
    const auto art = fit_gam2(frame, cfg);
    const Eigen::VectorXd mu = art.mean_model.predict(frame);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += y[i] - mu(static_cast<Eigen::Index>(i));
    CHECK(std::abs(sum) < 1e-6);
    CHECK(art.metrics.n == n);

    const auto out = score(art, frame);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(out.mu[i] == mu(static_cast<Eigen::Index>(i)));
        CHECK(out.sigma[i] > 0.0);
    }
}

TEST_CASE("gam2 scoring clamps out-of-domain values and round-trips") {
    std::mt19937_64 rng(14);
    const std::size_t n = 500;
    const auto t = fixtures::uniform(n, rng, -5.0, 30.0);
    std::vector<double> y(n);
    std::normal_distribution<double> z(0.0, 0.5);
    for (std::size_t i = 0; i < n; ++i) y[i] = 0.1 * t[i] * t[i] + z(rng);
    const auto frame = frame_with({real_column("Temperature", t)}, y);
    Gam2Config cfg;
    cfg.mean_terms = {spline_term("Temperature")};
    cfg.variance_terms = {spline_term("Temperature")};
    const auto art = fit_gam2(frame, cfg);
    const double tmax = *std::max_element(t.begin(), t.end());
    const auto probe = frame_with({real_column("Temperature", {50.0, tmax})});
    const auto out = score(art, probe);
    CHECK(out.mu[0] == out.mu[1]);
    CHECK(out.sigma[0] == out.sigma[1]);
    CHECK(out.clamped[0] == 1);
    CHECK(out.clamped[1] == 0);

    const auto back = deserialize_artifact(serialize(art));
    const auto again = score(back, frame);
    const auto first = score(art, frame);
    CHECK(again.mu == first.mu);
    CHECK(again.sigma == first.sigma);
    CHECK(serialize(back) == serialize(art));

    CHECK_THROWS_AS(deserialize_artifact("{not json"), Error);
    CHECK_THROWS_AS(deserialize_artifact(R"({"format":"castorette.gam2","version":1})"), Error);
    const auto missing = frame_with({real_column("Other", t)});
    try {
        score(art, missing);
        FAIL("expected MissingFeature");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingFeature);
    }
}

TEST_CASE("gam2 config json") {
    const auto def = default_gam2_config();
    CHECK(def.mean_terms.size() == 5);
    CHECK(def.variance_terms.size() == 3);
    const auto back = gam2_config_from_json(to_json(def));
    CHECK(back.mean_terms == def.mean_terms);
    const auto custom = gam2_config_from_json(nlohmann::json::parse(
        R"({"mean_terms":["TimeOfDay@DayType", {"kind":"tensor","features":["a","b"]}], "boosting": true, "lambda": 2})"));
    CHECK(custom.mean_terms[0].kind == TermKind::ByInteraction);
    CHECK(custom.mean_terms[1].knots == 5);
    CHECK(custom.boosting.enabled);
    CHECK(*custom.lambda == 2.0);
    CHECK_THROWS_AS(gam2_config_from_json(nlohmann::json::parse(R"({"mean_terms":[]})")), Error);
}
