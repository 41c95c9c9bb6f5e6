#pragma once

#include "castorette/gam/additive.hpp"
#include "castorette/time.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace castorette::gam {

struct BoostingConfig {
    bool enabled = false;
    std::size_t steps = 100;
    double step_size = 0.1;
};

struct Gam2Config {
    std::vector<TermSpec> mean_terms;
    std::vector<TermSpec> variance_terms;
    /// Shared penalty weight for every term. Absent: chosen by GCV.
    std::optional<double> lambda;
    BoostingConfig boosting;
};

/// Mean: DayType, TimeOfDay, TimeOfYear, Temperature, SolarRadiance.
/// Variance: TimeOfDay, DewPoint, DailyAverageTemperature.
Gam2Config default_gam2_config();

nlohmann::json to_json(const Gam2Config& config);
/// Missing fields take the defaults above.
Gam2Config gam2_config_from_json(const nlohmann::json& j);

struct TrainMetrics {
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t n = 0;
};

/// Y_t = mu(X_t) + sigma(X_t) eps_t with eps_t of zero mean and unit
/// variance (assumed, not checked). mean_model estimates mu, variance_model
/// estimates sigma^2 under a log link.
struct Gam2Artifact {
    AdditiveModel mean_model;
    AdditiveModel variance_model;
    std::vector<std::string> mean_features;
    std::vector<std::string> variance_features;
    TrainMetrics metrics;
    double target_sd = 0.0;
    double sigma_floor = 0.0; ///< 1e-6 * target_sd

    std::vector<std::string> required_features() const;
};

/// Rows missing the target or any feature used by either stage are dropped.
/// Stage two is fitted on the squared stage-one residuals.
Gam2Artifact fit_gam2(const FeatureFrame& frame, const Gam2Config& config = default_gam2_config());

struct ForecastOutput {
    std::vector<Timestamp> timestamps;
    std::vector<double> mu;
    std::vector<double> sigma;
    Duration horizon{kDay};
    /// Rows where some feature fell outside the training domain.
    std::vector<std::uint8_t> clamped;
};

/// Throws MissingFeature when a column is absent or a row has a missing value.
ForecastOutput score(const Gam2Artifact& artifact, const FeatureFrame& frame, Duration horizon = kDay);

inline constexpr int kArtifactFormatVersion = 1;

std::string serialize(const Gam2Artifact& artifact);
/// Throws CorruptParams.
Gam2Artifact deserialize_artifact(std::string_view blob);

} // namespace castorette::gam
