#pragma once

#include "castorette/frame.hpp"
#include "castorette/gam/spline_basis.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace castorette::gam {

enum class TermKind {
    Spline1D,
    /// Tensor product of two cubic bases with a Kronecker-sum penalty.
    Spline2D,
    Categorical,
    /// One spline coefficient block per level of a categorical; reads an
    /// Interaction column of the frame.
    ByInteraction,
};

enum class Link {
    Identity, ///< mean stage: least squares
    Log,      ///< variance stage: positive response, E[r] = exp(eta)
};

std::string_view to_string(TermKind kind) noexcept;
TermKind term_kind_from_string(std::string_view text);
std::string_view to_string(Link link) noexcept;
Link link_from_string(std::string_view text);

struct TermSpec {
    TermKind kind = TermKind::Spline1D;
    std::vector<std::string> features;
    std::size_t knots = 10; ///< interior knots per spline dimension

    std::string label() const;
    friend bool operator==(const TermSpec&, const TermSpec&) = default;
};

TermSpec spline_term(std::string feature, std::size_t knots = 10);
TermSpec tensor_term(std::string a, std::string b, std::size_t knots = 5);
TermSpec categorical_term(std::string feature);
TermSpec by_term(std::string interaction_column, std::size_t knots = 10);

/// Term kind implied by the column kind in `frame`.
TermSpec default_term(const FeatureFrame& frame, const std::string& column, std::size_t knots = 10);

/// A fitted smooth or factor effect f_j. Coefficients are stored in the raw
/// basis (B-spline or one-hot) and already satisfy the centering constraint.
struct Term {
    TermSpec spec;
    std::vector<SplineBasis> bases;
    std::vector<std::string> levels;
    Eigen::VectorXd coefficients;
    double lambda = 0.0; ///< weight on coefficients' * penalty() * coefficients

    std::size_t dimension() const;

    /// Raw design block. Rows with out-of-domain values or unseen levels are
    /// flagged in `clamped` when given.
    Eigen::MatrixXd design(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped = nullptr) const;

    Eigen::MatrixXd penalty() const;

    /// Sum-to-zero rows over the training design: one for plain terms, one
    /// per level for ByInteraction.
    Eigen::MatrixXd constraints(const FeatureFrame& frame, const Eigen::MatrixXd& design) const;
};

/// A term built on training data together with its centering
/// reparametrization: raw coefficients = z * reduced coefficients.
struct CenteredTerm {
    Term term;
    Eigen::MatrixXd z;
    Eigen::MatrixXd design;  ///< raw design * z
    Eigen::MatrixXd penalty; ///< z' S z
};

/// Builds bases and levels from `frame`. A Spline1D spec naming a
/// categorical or interaction column becomes Categorical or ByInteraction.
CenteredTerm center_term(const TermSpec& spec, const FeatureFrame& frame);

/// Second-difference penalty D'D for a coefficient vector of length k.
Eigen::MatrixXd second_difference_penalty(std::size_t k);

struct FitSummary {
    double edf = 0.0;
    double gcv = 0.0;
    double grid_lambda = 0.0; ///< shared multiplier chosen on the grid
    std::size_t iterations = 0;
    std::size_t rows = 0;
};

/// link^-1(intercept + sum_j f_j(x)).
struct AdditiveModel {
    Link link = Link::Identity;
    double intercept = 0.0;
    std::vector<Term> terms;
    FitSummary summary;

    Eigen::VectorXd linear_predictor(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped = nullptr) const;
    Eigen::VectorXd predict(const FeatureFrame& frame, std::vector<std::uint8_t>* clamped = nullptr) const;
    Eigen::VectorXd contribution(std::size_t term, const FeatureFrame& frame) const;

    /// Frame columns the model reads.
    std::vector<std::string> features() const;
};

struct FitOptions {
    Link link = Link::Identity;
    /// One weight per term, applied to the raw penalty. Absent: a single
    /// multiplier is chosen by generalized cross-validation over
    /// lambda_grid(), scaled per term to balance penalty and data.
    std::optional<std::vector<double>> lambdas;
    std::size_t max_iterations = 100;
    double tolerance = 1e-8;
};

/// The 20-point log-spaced grid searched by GCV.
std::vector<double> lambda_grid();

/// Minimizes loss + sum_j lambda_j c_j' S_j c_j where S_j is the term's
/// penalty. Loss is sum (y - eta)^2 for Identity and
/// sum 2 (r exp(-eta) + eta) for Log (a Gamma deviance up to constants).
///
/// Throws DegenerateFeature, SingularSystem, NonConvergence, MissingFeature,
/// InvalidArgument (fewer than 20 rows or size mismatch).
AdditiveModel fit_additive(const FeatureFrame& frame, std::span<const double> response, std::span<const TermSpec> terms,
                           const FitOptions& options = {});

/// The objective above evaluated at the model's current coefficients.
double penalized_objective(const AdditiveModel& model, const FeatureFrame& frame, std::span<const double> response);

nlohmann::json to_json(const AdditiveModel& model);
AdditiveModel additive_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TermSpec& spec);
TermSpec term_spec_from_json(const nlohmann::json& j);

} // namespace castorette::gam
