#pragma once

#include "castorette/context_store.hpp"
#include "castorette/gam/gam2.hpp"
#include "castorette/time.hpp"
#include "castorette/transform.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace castorette {

enum class TaskKind { Train, Score };

std::string_view to_string(TaskKind kind) noexcept;
TaskKind task_kind_from_string(std::string_view text);

/// When a task first runs, how often it repeats (0 = once) and when it stops.
struct DeploymentConfig {
    TaskKind task = TaskKind::Train;
    Timestamp time;
    Duration repeat{0};
    std::optional<Timestamp> until;

    /// Throws ValidationError.
    void validate() const;
    friend bool operator==(const DeploymentConfig&, const DeploymentConfig&) = default;
};

/// {"task":"train","time":"2018-07-12T09:00:00Z","repeat":"PT24H","until":null}
nlohmann::json to_json(const DeploymentConfig& c);
DeploymentConfig deployment_from_json(const nlohmann::json& j);

struct ContextRef {
    std::string entity;
    std::string signal;

    friend bool operator==(const ContextRef&, const ContextRef&) = default;
};

struct LoadSpec {
    ContextRef target;
    /// Frame column name -> series it is read from.
    std::map<std::string, ContextRef> covariates;
    Duration train_window{30 * kDay};
    Duration score_horizon{kDay};
};

struct ScoreSpec {
    /// Repeat interval given to the score schedule of every new version.
    Duration repeat{kDay};
    /// The first scoring run happens this long after the training due time.
    Duration delay{0};
    /// A new version ends the score schedule of the version it replaces.
    bool retire_previous = true;
};

/// Declarative stand-in for the four user functions: load, transform,
/// train, score.
struct PipelineSpec {
    LoadSpec load;
    std::vector<transform::Step> transform;
    gam::Gam2Config train;
    ScoreSpec score;

    /// Columns the transform stage must produce for training and scoring.
    std::vector<std::string> feature_columns() const;
    /// Largest lag the features read, so loads can include that much history.
    Duration lag_history() const;
};

struct Diagnostic {
    std::string step; ///< load, transform, train or score
    std::string message;
};

/// Parses and checks a pipeline. Context names must resolve in `context`.
/// `load.target` may be omitted when `default_target` is given.
/// Returns the problems found, empty when the pipeline is usable.
std::vector<Diagnostic> validate_pipeline(const nlohmann::json& j, const ContextStore& context,
                                          const std::optional<ContextRef>& default_target = std::nullopt);

/// Throws ValidationError listing every diagnostic.
PipelineSpec parse_pipeline(const nlohmann::json& j, const ContextStore& context,
                            const std::optional<ContextRef>& default_target = std::nullopt);

/// As parse_pipeline; a null `context` skips name resolution, for specs that
/// were validated when stored.
PipelineSpec pipeline_from_json(const nlohmann::json& j, const ContextStore* context = nullptr,
                                const std::optional<ContextRef>& default_target = std::nullopt);

nlohmann::json diagnostics_json(const std::vector<Diagnostic>& diagnostics);

nlohmann::json to_json(const PipelineSpec& spec);

/// TRAIN: [due - train_window, due). SCORE: [due, due + score_horizon).
std::pair<Timestamp, Timestamp> window_for(TaskKind task, Timestamp due, const PipelineSpec& pipeline);

} // namespace castorette
