#include "castorette/gam/kernels.hpp"

#include <algorithm>
#include <vector>

namespace castorette::gam::kernels {

namespace {

constexpr Eigen::Index kMinChunkRows = 256;
constexpr Eigen::Index kMaxChunks = 64;

struct Chunking {
    Eigen::Index count;
    Eigen::Index rows;

    Eigen::Index begin(Eigen::Index c) const { return c * rows; }
    Eigen::Index length(Eigen::Index c, Eigen::Index n) const { return std::min(rows, n - begin(c)); }
};

Chunking chunking(Eigen::Index n) {
    const Eigen::Index count = std::clamp<Eigen::Index>((n + kMinChunkRows - 1) / kMinChunkRows, 1, kMaxChunks);
    return Chunking{count, (n + count - 1) / count};
}

} // namespace

namespace serial {

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, std::span<const double> w) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
        for (Eigen::Index a = 0; a < p; ++a) {
            const double xa = wi * x(i, a);
            if (xa == 0.0) continue;
            for (Eigen::Index b = a; b < p; ++b) g(a, b) += xa * x(i, b);
        }
    }
    for (Eigen::Index a = 0; a < p; ++a) {
        for (Eigen::Index b = 0; b < a; ++b) g(a, b) = g(b, a);
    }
    return g;
}

Eigen::VectorXd cross(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> z) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double wz = (w.empty() ? 1.0 : w[static_cast<std::size_t>(i)]) * z[static_cast<std::size_t>(i)];
        for (Eigen::Index a = 0; a < x.cols(); ++a) out(a) += x(i, a) * wz;
    }
    return out;
}

Eigen::MatrixXd spline_design(const SplineBasis& basis, std::span<const double> values) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(values.size()),
                                                static_cast<Eigen::Index>(basis.size()));
    std::vector<double> row(basis.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        basis.evaluate(values[i], row);
        for (std::size_t k = 0; k < row.size(); ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    }
    return out;
}

} // namespace serial

namespace parallel {

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, std::span<const double> w) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    const Chunking ch = chunking(n);
    std::vector<Eigen::MatrixXd> partial(static_cast<std::size_t>(ch.count));

#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < ch.count; ++c) {
        const Eigen::Index b = ch.begin(c);
        const Eigen::Index len = ch.length(c, n);
        auto& g = partial[static_cast<std::size_t>(c)];
        if (len <= 0) {
            g = Eigen::MatrixXd::Zero(p, p);
            continue;
        }
        const auto block = x.middleRows(b, len);
        if (w.empty()) {
            g.noalias() = block.transpose() * block;
        } else {
            const Eigen::Map<const Eigen::VectorXd> wb(w.data() + b, len);
            g.noalias() = block.transpose() * wb.asDiagonal() * block;
        }
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
    for (const auto& g : partial) out += g;
    return out;
}

Eigen::VectorXd cross(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> z) {
    const Eigen::Index n = x.rows();
    const Chunking ch = chunking(n);
    std::vector<Eigen::VectorXd> partial(static_cast<std::size_t>(ch.count));

#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < ch.count; ++c) {
        const Eigen::Index b = ch.begin(c);
        const Eigen::Index len = std::max<Eigen::Index>(ch.length(c, n), 0);
        const Eigen::Map<const Eigen::VectorXd> zb(z.data() + b, len);
        if (w.empty()) {
            partial[static_cast<std::size_t>(c)].noalias() = x.middleRows(b, len).transpose() * zb;
        } else {
            const Eigen::Map<const Eigen::VectorXd> wb(w.data() + b, len);
            partial[static_cast<std::size_t>(c)].noalias() = x.middleRows(b, len).transpose() * wb.cwiseProduct(zb);
        }
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.cols());
    for (const auto& v : partial) out += v;
    return out;
}

Eigen::MatrixXd spline_design(const SplineBasis& basis, std::span<const double> values) {
    const auto n = static_cast<Eigen::Index>(values.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(basis.size()));

#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        double v[SplineBasis::kDegree + 1];
        const auto first = static_cast<Eigen::Index>(basis.evaluate_nonzero(values[static_cast<std::size_t>(i)], v));
        for (int k = 0; k <= SplineBasis::kDegree; ++k) out(i, first + k) = v[k];
    }
    return out;
}

} // namespace parallel

} // namespace castorette::gam::kernels
