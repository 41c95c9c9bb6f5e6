#pragma once

#include "castorette/context_store.hpp"
#include "castorette/ids.hpp"
#include "castorette/journal.hpp"
#include "castorette/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace castorette {

struct ModelInput {
    std::string name;
    std::string description;
    ContextRef target;
    nlohmann::json pipeline = nlohmann::json::object();
    DeploymentConfig train_schedule;
};

/// Throws ValidationError. Shape:
/// {name, description, target:{entity,signal}, pipeline, train_schedule}
ModelInput model_input_from_json(const nlohmann::json& j);

struct Model {
    ModelId id;
    std::string name;
    std::string description;
    ContextKey target;
    ContextRef target_ref;
    PipelineSpec pipeline;
    DeploymentConfig train_schedule;
    std::optional<VersionId> active_version;
};

struct ModelVersion {
    VersionId id;
    ModelId model;
    Timestamp trained_at;
    std::string params;
    DeploymentConfig score_schedule;
    std::map<std::string, double> metrics;
    /// Due time of the training run that produced this version.
    std::optional<Timestamp> anchor;
};

struct VersionInput {
    ModelId model;
    std::string params;
    DeploymentConfig score_schedule;
    std::map<std::string, double> metrics;
    std::optional<Timestamp> anchor;
};

struct StoredVersion {
    VersionId id;
    /// False when a version with the same (model, anchor) already existed.
    bool created = true;
};

nlohmann::json to_json(const Model& m);
nlohmann::json to_json(const ModelVersion& v, bool with_params = false);

/// Models (declarative pipelines with a training schedule) and their
/// versions (fitted parameters with a scoring schedule).
class ModelStore {
public:
    using Clock = std::function<Timestamp()>;

    ModelStore(ContextStore& context, const std::filesystem::path& dir = {}, Clock clock = {});

    /// Throws ValidationError with step-level diagnostics.
    ModelId store_model(const ModelInput& input);

    /// Throws UnknownModel or CorruptParams. A repeated anchor returns the
    /// existing version instead of adding one.
    StoredVersion store_version(const VersionInput& input);

    Model model(ModelId id) const;
    ModelVersion version(VersionId id) const;
    std::vector<Model> models() const;
    /// Ordered by trained_at, then id.
    std::vector<ModelVersion> versions(ModelId model) const;

    std::optional<ModelVersion> latest_version(ModelId model) const;
    /// The active override when set, the latest version otherwise.
    std::optional<ModelVersion> effective_version(ModelId model) const;

    /// Pins scoring to `version`; nullopt returns to latest-wins.
    void activate_version(ModelId model, std::optional<VersionId> version);

    void update_score_schedule(VersionId version, const DeploymentConfig& schedule);

    /// Models whose target matches. With include_related, also models on
    /// entities adjacent over any relation whose target signal has the same
    /// signal type as the query signal (any signal when none is given).
    std::vector<Model> list_models_for_context(std::optional<EntityId> entity, std::optional<SignalId> signal,
                                               bool include_related = false) const;

    /// {models:[{id,name,target,active_version,versions:[...]}]}, models by
    /// name, versions by trained_at.
    nlohmann::json model_hierarchy(std::optional<EntityId> entity = std::nullopt,
                                   std::optional<SignalId> signal = std::nullopt) const;

    /// Bumped on every write; lets the scheduler notice new schedules.
    std::uint64_t generation() const;

    void checkpoint();

private:
    void apply(const nlohmann::json& rec);
    nlohmann::json dump_state() const;
    void load_snapshot(const nlohmann::json& state);
    void maybe_compact();
    Model parse_model_record(const nlohmann::json& rec) const;
    std::vector<ModelVersion> versions_locked(ModelId model) const;
    const ModelVersion* latest_locked(ModelId model) const;

    ContextStore& context_;
    Clock clock_;
    mutable std::shared_mutex mu_;
    Journal journal_;
    std::int64_t next_id_ = 1;
    std::uint64_t generation_ = 0;
    std::map<ModelId, Model> models_;
    std::map<ModelId, nlohmann::json> model_records_;
    std::map<VersionId, ModelVersion> versions_;
};

} // namespace castorette
