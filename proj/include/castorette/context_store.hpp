#pragma once

#include "castorette/ids.hpp"
#include "castorette/journal.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace castorette {

struct Geo {
    double lat = 0.0;
    double lon = 0.0;
    friend bool operator==(const Geo&, const Geo&) = default;
};

struct EntityType {
    EntityTypeId id;
    std::string name;
};

struct SignalType {
    SignalTypeId id;
    std::string name;
};

struct Entity {
    EntityId id;
    std::string name;
    EntityTypeId type;
    std::optional<Geo> geo;
};

struct Signal {
    SignalId id;
    std::string name;
    SignalTypeId type;
    std::string unit;
};

enum class RelationKind { ParentOf, ConnectedTo };

std::string_view to_string(RelationKind kind) noexcept;
RelationKind relation_kind_from_string(std::string_view text);

struct Relation {
    RelationKind kind;
    EntityId from;
    EntityId to;
    friend bool operator==(const Relation&, const Relation&) = default;
};

/// A name with an optional type qualifier. Bare names that match across
/// several types resolve to Ambiguous.
struct NameRef {
    std::string name;
    std::optional<std::string> type;
};

struct GraphLayers {
    bool series = true;
    bool models = true;
};

/// Semantic graph of entities, signals and their relations, plus the set of
/// bound series and linked models that hang off it.
///
/// Reads take a shared lock and return copies; writes are serialized and
/// journaled before they become visible.
class ContextStore {
public:
    /// Empty `dir` keeps everything in memory.
    explicit ContextStore(const std::filesystem::path& dir = {});

    EntityType register_entity_type(const std::string& name);
    SignalType register_signal_type(const std::string& name);

    Entity upsert_entity(const std::string& name, const std::string& type_name, std::optional<Geo> geo = std::nullopt);
    Signal upsert_signal(const std::string& name, const std::string& type_name, const std::string& unit = "");

    Relation add_relation(RelationKind kind, EntityId from, EntityId to);

    ContextKey resolve_context(const NameRef& entity, const NameRef& signal) const;
    ContextKey resolve_context(const std::string& entity_name, const std::string& signal_name) const {
        return resolve_context(NameRef{entity_name, {}}, NameRef{signal_name, {}});
    }

    Entity find_entity(const NameRef& ref) const;
    Signal find_signal(const NameRef& ref) const;
    Entity entity(EntityId id) const;
    Signal signal(SignalId id) const;
    EntityType entity_type(EntityTypeId id) const;
    SignalType signal_type(SignalTypeId id) const;
    bool contains(const ContextKey& key) const;

    std::vector<Entity> entities() const;
    std::vector<Signal> signals() const;
    std::vector<Relation> relations() const;

    /// Entities reachable over PARENT_OF edges, level by level and by id
    /// within a level. The root is never included.
    std::vector<Entity> descendants(EntityId root, std::optional<std::size_t> max_depth = std::nullopt) const;

    /// Entities adjacent over any relation, in either direction.
    std::vector<EntityId> related(EntityId id) const;

    void bind_series(const ContextKey& key);
    bool is_bound(const ContextKey& key) const;
    std::vector<ContextKey> bound_series() const;

    void link_model(ModelId model, const std::string& name, const ContextKey& target);

    /// {nodes:[{id,kind,label,geo?}], edges:[{from,to,kind}]}
    nlohmann::json export_context_graph(GraphLayers layers = {}) const;

    /// "entity/signal" for log messages and diagnostics.
    std::string describe(const ContextKey& key) const;

    void checkpoint();

private:
    struct LinkedModel {
        std::string name;
        ContextKey target;
    };

    void apply(const nlohmann::json& rec);
    void load_snapshot(const nlohmann::json& state);
    nlohmann::json dump_state() const;
    bool parent_path_exists(EntityId from, EntityId to) const;
    void maybe_compact();

    Entity entity_locked(EntityId id) const;
    Signal signal_locked(SignalId id) const;
    Entity find_entity_locked(const NameRef& ref) const;
    Signal find_signal_locked(const NameRef& ref) const;

    mutable std::shared_mutex mu_;
    Journal journal_;
    std::int64_t next_id_ = 1;
    std::map<EntityTypeId, EntityType> entity_types_;
    std::map<SignalTypeId, SignalType> signal_types_;
    std::map<EntityId, Entity> entities_;
    std::map<SignalId, Signal> signals_;
    std::vector<Relation> relations_;
    std::set<ContextKey> bound_;
    std::map<ModelId, LinkedModel> models_;
};

} // namespace castorette
