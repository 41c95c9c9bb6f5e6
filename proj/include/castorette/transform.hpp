#pragma once

#include "castorette/frame.hpp"
#include "castorette/time.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace castorette::transform {

// ---- rule-based cleaning -------------------------------------------------

enum class OutlierRule { Negative, Constant };

std::string_view to_string(OutlierRule rule) noexcept;

struct CleaningConfig {
    bool allow_negative = false;
    std::size_t max_constant_run = 24; ///< runs this long or longer are implausible
    std::optional<double> pelt_penalty; ///< absent: 3 log n
    double deviation_threshold = 3.0;
    double min_remaining_fraction = 0.5;

    void validate() const;
};

struct OutlierReport {
    std::vector<std::pair<std::size_t, OutlierRule>> flagged;
};

/// Marks implausible values missing. Missing entries break constant runs
/// and are never reported again, so the operation is idempotent.
std::pair<MaskedSeries, OutlierReport> remove_outliers(const MaskedSeries& series, const CleaningConfig& config);

// ---- change points -------------------------------------------------------

enum class CostKind {
    MeanNormal,    ///< sum (x - mean)^2 / sigma^2, sigma^2 known
    MeanVarNormal, ///< n log(2 pi s^2) + n v / s^2, s^2 = max(v, floor)
};

struct SegmentStats {
    double mean = 0.0;
    double variance = 0.0; ///< population variance
    std::size_t length = 0;
};

struct Segmentation {
    /// First index of every segment after the first; 0 < cp < n.
    std::vector<std::size_t> changepoints;
    std::vector<SegmentStats> segments;
    double cost = 0.0; ///< sum of segment costs + penalty * changepoints
};

struct PeltOptions {
    CostKind cost = CostKind::MeanNormal;
    double variance = 1.0; ///< known variance for MeanNormal
};

/// Variance floor used by MeanVarNormal for a given series:
/// 1e-8 times its population variance, or 1e-8 when that is zero.
double variance_floor(std::span<const double> x);

/// Shortest segment allowed by the cost: 1 for MeanNormal, 2 for MeanVarNormal.
std::size_t min_segment_length(CostKind cost) noexcept;

/// Exact minimizer of sum(segment cost) + penalty * (#segments - 1).
/// Throws TooShort (n < 2) or InvalidArgument (penalty <= 0).
Segmentation pelt(std::span<const double> x, double penalty, const PeltOptions& options = {});

/// Noise standard deviation from the MAD of first differences; insensitive
/// to level shifts. Falls back to the plain standard deviation, then 1.
double robust_noise_sd(std::span<const double> x);

inline double default_penalty(std::size_t n) { return 3.0 * std::log(static_cast<double>(n)); }

struct RemovedSegment {
    std::size_t begin = 0; ///< index into the original series
    std::size_t end = 0;   ///< one past the last index
    double deviation = 0.0;
};

/// Segments the present values once with PELT (MeanNormal with a robust
/// noise estimate), then repeatedly masks the segment whose mean lies
/// furthest from the median of the remaining data, in units of its MAD,
/// while that distance exceeds the threshold. Throws InsufficientData when
/// a removal would leave less than min_remaining_fraction of the values.
std::pair<MaskedSeries, std::vector<RemovedSegment>> iterative_segment_removal(const MaskedSeries& series,
                                                                               const CleaningConfig& config);

// ---- transfer ------------------------------------------------------------

struct TransferFunction {
    double scale = 1.0;
    double offset = 0.0;
    std::pair<std::size_t, std::size_t> before; ///< [begin, end) mapped by the function
    std::pair<std::size_t, std::size_t> after;

    double operator()(double x) const noexcept { return scale * x + offset; }
};

/// Least squares on matched quantiles of the present values before and
/// after `changepoint`. Needs 10 present values on each side (TooShort).
TransferFunction fit_transfer(const MaskedSeries& series, std::size_t changepoint);

/// Applies the function to the `before` range.
MaskedSeries apply_transfer(const MaskedSeries& series, const TransferFunction& tf);

// ---- features ------------------------------------------------------------

class HolidayCalendar {
public:
    HolidayCalendar() = default;
    explicit HolidayCalendar(std::set<std::chrono::sys_days> days) : days_(std::move(days)) {}

    /// JSON array of "YYYY-MM-DD" strings. Throws Io or InvalidArgument.
    static HolidayCalendar load(const std::filesystem::path& path);
    static HolidayCalendar from_json(const nlohmann::json& j);

    bool contains(Timestamp ts) const;
    std::size_t size() const noexcept { return days_.size(); }

private:
    std::set<std::chrono::sys_days> days_;
};

/// Aligned raw inputs. Every series has one entry per timestamp.
struct RawInputs {
    std::vector<Timestamp> timestamps;
    std::map<std::string, MaskedSeries> covariates;
    std::optional<MaskedSeries> target;
};

/// Produces the requested columns, in order:
///   TimeOfDay, DayType {weekday, saturday, sunday_holiday}, TimeOfYear,
///   Season {winter, spring, summer, autumn}, Daily{Min,Max,Average}<X>,
///   lag_<h> (target h hours back), <A>@<B> (interaction of a continuous A
///   with a categorical B), or any covariate passed through.
/// Timestamps must sit on whole hours and increase strictly
/// (MisalignedTimestamps). Unknown covariates throw MissingCovariate.
FeatureFrame engineer_features(const RawInputs& inputs, std::span<const std::string> columns,
                               const HolidayCalendar& holidays = {});

/// Columns engineer_features can derive without a covariate of that name.
bool is_derived_feature(const std::string& name);

/// Raw series a feature reads ("" for calendar features, "#target" for lags).
std::vector<std::string> feature_sources(const std::string& name);

// ---- pipeline steps ------------------------------------------------------

/// One configured step, as found in a pipeline's transform list:
///   {"step":"outliers", "series":"target", "allow_negative":false, "max_constant_run":24}
///   {"step":"pelt", "series":"target", "penalty":"auto", "deviation_threshold":3, "min_remaining_fraction":0.5}
///   {"step":"transfer", "series":"target", "penalty":"auto"}
///   {"step":"features", "columns":[...]}
struct Step {
    enum class Kind { Outliers, Pelt, Transfer, Features } kind = Kind::Outliers;
    std::string series = "target";
    CleaningConfig cleaning;
    std::vector<std::string> columns;
};

/// Throws ValidationError naming the step index.
std::vector<Step> parse_steps(const nlohmann::json& j);
nlohmann::json to_json(const Step& step);

struct StepLog {
    std::vector<std::string> lines;
};

/// Runs the cleaning steps in order on the named series of `inputs`.
/// Feature steps are skipped here; see feature_columns.
void apply_cleaning(RawInputs& inputs, std::span<const Step> steps, StepLog* log = nullptr);

/// Columns of the last features step, or `fallback` when there is none.
std::vector<std::string> feature_columns(std::span<const Step> steps, const std::vector<std::string>& fallback);

} // namespace castorette::transform
