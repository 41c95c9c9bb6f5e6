#include "castorette/context_store.hpp"

#include "castorette/error.hpp"

#include <algorithm>
#include <deque>
#include <mutex>
#include <unordered_set>

namespace castorette {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCompactEvery = 5000;

std::string qualified(const NameRef& ref) { return ref.type ? *ref.type + "/" + ref.name : ref.name; }

} // namespace

std::string_view to_string(RelationKind kind) noexcept {
    return kind == RelationKind::ParentOf ? "PARENT_OF" : "CONNECTED_TO";
}

RelationKind relation_kind_from_string(std::string_view text) {
    if (text == "PARENT_OF") return RelationKind::ParentOf;
    if (text == "CONNECTED_TO") return RelationKind::ConnectedTo;
    fail(ErrorCode::InvalidArgument, "unknown relation kind '" + std::string(text) + "'");
}

ContextStore::ContextStore(const std::filesystem::path& dir) : journal_(dir.empty() ? dir : dir / "context") {
    journal_.replay([this](const json& s) { load_snapshot(s); }, [this](const json& r) { apply(r); });
}

void ContextStore::apply(const json& rec) {
    const auto& op = rec.at("op").get_ref<const std::string&>();
    const auto id = rec.value("id", std::int64_t{0});
    next_id_ = std::max(next_id_, id + 1);
    if (op == "entity_type") {
        entity_types_[EntityTypeId{id}] = EntityType{EntityTypeId{id}, rec.at("name")};
    } else if (op == "signal_type") {
        signal_types_[SignalTypeId{id}] = SignalType{SignalTypeId{id}, rec.at("name")};
    } else if (op == "entity") {
        Entity e{EntityId{id}, rec.at("name"), EntityTypeId{rec.at("type").get<std::int64_t>()}, std::nullopt};
        if (rec.contains("geo")) e.geo = Geo{rec["geo"].at(0), rec["geo"].at(1)};
        entities_[e.id] = std::move(e);
    } else if (op == "signal") {
        signals_[SignalId{id}] =
            Signal{SignalId{id}, rec.at("name"), SignalTypeId{rec.at("type").get<std::int64_t>()}, rec.at("unit")};
    } else if (op == "relation") {
        const Relation r{relation_kind_from_string(rec.at("kind").get<std::string>()),
                         EntityId{rec.at("from").get<std::int64_t>()}, EntityId{rec.at("to").get<std::int64_t>()}};
        relations_.push_back(r);
        if (r.kind == RelationKind::ConnectedTo) relations_.push_back(Relation{r.kind, r.to, r.from});
    } else if (op == "bind") {
        bound_.insert(ContextKey{EntityId{rec.at("entity").get<std::int64_t>()},
                                 SignalId{rec.at("signal").get<std::int64_t>()}});
    } else if (op == "model") {
        models_[ModelId{id}] = LinkedModel{rec.at("name"), ContextKey{EntityId{rec.at("entity").get<std::int64_t>()},
                                                                      SignalId{rec.at("signal").get<std::int64_t>()}}};
    } else {
        fail(ErrorCode::Io, "unknown context record '" + op + "'");
    }
}

json ContextStore::dump_state() const {
    json records = json::array();
    for (const auto& [id, t] : entity_types_) records.push_back({{"op", "entity_type"}, {"id", id.value}, {"name", t.name}});
    for (const auto& [id, t] : signal_types_) records.push_back({{"op", "signal_type"}, {"id", id.value}, {"name", t.name}});
    for (const auto& [id, e] : entities_) {
        json r{{"op", "entity"}, {"id", id.value}, {"name", e.name}, {"type", e.type.value}};
        if (e.geo) r["geo"] = {e.geo->lat, e.geo->lon};
        records.push_back(std::move(r));
    }
    for (const auto& [id, s] : signals_) {
        records.push_back({{"op", "signal"}, {"id", id.value}, {"name", s.name}, {"type", s.type.value}, {"unit", s.unit}});
    }
    for (const auto& r : relations_) {
        if (r.kind == RelationKind::ConnectedTo && r.from > r.to) continue;
        records.push_back({{"op", "relation"}, {"kind", to_string(r.kind)}, {"from", r.from.value}, {"to", r.to.value}});
    }
    for (const auto& k : bound_) records.push_back({{"op", "bind"}, {"entity", k.entity.value}, {"signal", k.signal.value}});
    for (const auto& [id, m] : models_) {
        records.push_back({{"op", "model"},
                           {"id", id.value},
                           {"name", m.name},
                           {"entity", m.target.entity.value},
                           {"signal", m.target.signal.value}});
    }
    return json{{"next_id", next_id_}, {"records", std::move(records)}};
}

void ContextStore::load_snapshot(const json& state) {
    for (const auto& r : state.at("records")) apply(r);
    next_id_ = std::max(next_id_, state.at("next_id").get<std::int64_t>());
}

void ContextStore::maybe_compact() {
    if (journal_.records_since_snapshot() >= kCompactEvery) journal_.compact(dump_state());
}

void ContextStore::checkpoint() {
    std::unique_lock lock(mu_);
    journal_.compact(dump_state());
}

EntityType ContextStore::register_entity_type(const std::string& name) {
    std::unique_lock lock(mu_);
    for (const auto& [id, t] : entity_types_) {
        if (t.name == name) return t;
    }
    json rec{{"op", "entity_type"}, {"id", next_id_}, {"name", name}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return entity_types_.rbegin()->second;
}

SignalType ContextStore::register_signal_type(const std::string& name) {
    std::unique_lock lock(mu_);
    for (const auto& [id, t] : signal_types_) {
        if (t.name == name) return t;
    }
    json rec{{"op", "signal_type"}, {"id", next_id_}, {"name", name}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return signal_types_.rbegin()->second;
}

Entity ContextStore::upsert_entity(const std::string& name, const std::string& type_name, std::optional<Geo> geo) {
    if (geo && (!(geo->lat >= -90.0 && geo->lat <= 90.0) || !(geo->lon >= -180.0 && geo->lon <= 180.0))) {
        fail(ErrorCode::InvalidArgument, "geo out of range for entity '" + name + "'");
    }
    std::unique_lock lock(mu_);
    const auto type_it = std::find_if(entity_types_.begin(), entity_types_.end(),
                                      [&](const auto& kv) { return kv.second.name == type_name; });
    if (type_it == entity_types_.end()) fail(ErrorCode::UnknownEntityType, type_name);

    std::int64_t id = next_id_;
    for (const auto& [eid, e] : entities_) {
        if (e.name == name && e.type == type_it->first) {
            if (!geo || e.geo == geo) return e;
            id = eid.value;
            break;
        }
    }
    json rec{{"op", "entity"}, {"id", id}, {"name", name}, {"type", type_it->first.value}};
    if (geo) rec["geo"] = {geo->lat, geo->lon};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return entities_.at(EntityId{id});
}

Signal ContextStore::upsert_signal(const std::string& name, const std::string& type_name, const std::string& unit) {
    std::unique_lock lock(mu_);
    const auto type_it = std::find_if(signal_types_.begin(), signal_types_.end(),
                                      [&](const auto& kv) { return kv.second.name == type_name; });
    if (type_it == signal_types_.end()) fail(ErrorCode::UnknownSignalType, type_name);

    std::int64_t id = next_id_;
    for (const auto& [sid, s] : signals_) {
        if (s.name == name && s.type == type_it->first) {
            if (s.unit == unit || unit.empty()) return s;
            id = sid.value;
            break;
        }
    }
    json rec{{"op", "signal"}, {"id", id}, {"name", name}, {"type", type_it->first.value}, {"unit", unit}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return signals_.at(SignalId{id});
}

bool ContextStore::parent_path_exists(EntityId from, EntityId to) const {
    // DFS over PARENT_OF edges from `from`; true when `to` is reachable.
    std::vector<EntityId> stack{from};
    std::unordered_set<EntityId> seen{from};
    while (!stack.empty()) {
        const EntityId cur = stack.back();
        stack.pop_back();
        if (cur == to) return true;
        for (const auto& r : relations_) {
            if (r.kind == RelationKind::ParentOf && r.from == cur && seen.insert(r.to).second) stack.push_back(r.to);
        }
    }
    return false;
}

Relation ContextStore::add_relation(RelationKind kind, EntityId from, EntityId to) {
    std::unique_lock lock(mu_);
    if (!entities_.contains(from)) fail(ErrorCode::NotFound, "entity " + std::to_string(from.value));
    if (!entities_.contains(to)) fail(ErrorCode::NotFound, "entity " + std::to_string(to.value));
    if (from == to) fail(ErrorCode::SelfEdge, entities_.at(from).name);
    const Relation rel{kind, from, to};
    if (std::find(relations_.begin(), relations_.end(), rel) != relations_.end()) return rel;
    if (kind == RelationKind::ParentOf && parent_path_exists(to, from)) {
        fail(ErrorCode::CycleError, entities_.at(from).name + " -> " + entities_.at(to).name);
    }
    json rec{{"op", "relation"}, {"kind", to_string(kind)}, {"from", from.value}, {"to", to.value}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return rel;
}

Entity ContextStore::find_entity_locked(const NameRef& ref) const {
    const Entity* match = nullptr;
    for (const auto& [id, e] : entities_) {
        if (e.name != ref.name) continue;
        if (ref.type && entity_types_.at(e.type).name != *ref.type) continue;
        if (match) fail(ErrorCode::Ambiguous, "entity name '" + qualified(ref) + "' matches several types");
        match = &e;
    }
    if (!match) fail(ErrorCode::NotFound, "entity '" + qualified(ref) + "'");
    return *match;
}

Signal ContextStore::find_signal_locked(const NameRef& ref) const {
    const Signal* match = nullptr;
    for (const auto& [id, s] : signals_) {
        if (s.name != ref.name) continue;
        if (ref.type && signal_types_.at(s.type).name != *ref.type) continue;
        if (match) fail(ErrorCode::Ambiguous, "signal name '" + qualified(ref) + "' matches several types");
        match = &s;
    }
    if (!match) fail(ErrorCode::NotFound, "signal '" + qualified(ref) + "'");
    return *match;
}

Entity ContextStore::entity_locked(EntityId id) const {
    const auto it = entities_.find(id);
    if (it == entities_.end()) fail(ErrorCode::NotFound, "entity " + std::to_string(id.value));
    return it->second;
}

Signal ContextStore::signal_locked(SignalId id) const {
    const auto it = signals_.find(id);
    if (it == signals_.end()) fail(ErrorCode::NotFound, "signal " + std::to_string(id.value));
    return it->second;
}

ContextKey ContextStore::resolve_context(const NameRef& entity, const NameRef& signal) const {
    std::shared_lock lock(mu_);
    return ContextKey{find_entity_locked(entity).id, find_signal_locked(signal).id};
}

Entity ContextStore::find_entity(const NameRef& ref) const {
    std::shared_lock lock(mu_);
    return find_entity_locked(ref);
}

Signal ContextStore::find_signal(const NameRef& ref) const {
    std::shared_lock lock(mu_);
    return find_signal_locked(ref);
}

Entity ContextStore::entity(EntityId id) const {
    std::shared_lock lock(mu_);
    return entity_locked(id);
}

Signal ContextStore::signal(SignalId id) const {
    std::shared_lock lock(mu_);
    return signal_locked(id);
}

EntityType ContextStore::entity_type(EntityTypeId id) const {
    std::shared_lock lock(mu_);
    const auto it = entity_types_.find(id);
    if (it == entity_types_.end()) fail(ErrorCode::NotFound, "entity type " + std::to_string(id.value));
    return it->second;
}

SignalType ContextStore::signal_type(SignalTypeId id) const {
    std::shared_lock lock(mu_);
    const auto it = signal_types_.find(id);
    if (it == signal_types_.end()) fail(ErrorCode::NotFound, "signal type " + std::to_string(id.value));
    return it->second;
}

bool ContextStore::contains(const ContextKey& key) const {
    std::shared_lock lock(mu_);
    return entities_.contains(key.entity) && signals_.contains(key.signal);
}

std::vector<Entity> ContextStore::entities() const {
    std::shared_lock lock(mu_);
    std::vector<Entity> out;
    for (const auto& [id, e] : entities_) out.push_back(e);
    return out;
}

std::vector<Signal> ContextStore::signals() const {
    std::shared_lock lock(mu_);
    std::vector<Signal> out;
    for (const auto& [id, s] : signals_) out.push_back(s);
    return out;
}

std::vector<Relation> ContextStore::relations() const {
    std::shared_lock lock(mu_);
    return relations_;
}

std::vector<Entity> ContextStore::descendants(EntityId root, std::optional<std::size_t> max_depth) const {
    std::shared_lock lock(mu_);
    if (!entities_.contains(root)) fail(ErrorCode::NotFound, "entity " + std::to_string(root.value));
    std::vector<Entity> out;
    std::unordered_set<EntityId> seen{root};
    std::vector<EntityId> level{root};
    for (std::size_t depth = 0; !level.empty() && (!max_depth || depth < *max_depth); ++depth) {
        std::vector<EntityId> next;
        for (const EntityId parent : level) {
            for (const auto& r : relations_) {
                if (r.kind == RelationKind::ParentOf && r.from == parent && seen.insert(r.to).second) next.push_back(r.to);
            }
        }
        std::sort(next.begin(), next.end());
        for (const EntityId id : next) out.push_back(entities_.at(id));
        level = std::move(next);
    }
    return out;
}

std::vector<EntityId> ContextStore::related(EntityId id) const {
    std::shared_lock lock(mu_);
    std::set<EntityId> out;
    for (const auto& r : relations_) {
        if (r.from == id) out.insert(r.to);
        if (r.to == id) out.insert(r.from);
    }
    return {out.begin(), out.end()};
}

void ContextStore::bind_series(const ContextKey& key) {
    {
        std::shared_lock lock(mu_);
        if (bound_.contains(key)) return;
    }
    std::unique_lock lock(mu_);
    if (!entities_.contains(key.entity) || !signals_.contains(key.signal)) {
        fail(ErrorCode::UnknownContext, "entity " + std::to_string(key.entity.value) + " / signal " +
                                            std::to_string(key.signal.value));
    }
    if (bound_.contains(key)) return;
    json rec{{"op", "bind"}, {"entity", key.entity.value}, {"signal", key.signal.value}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
}

bool ContextStore::is_bound(const ContextKey& key) const {
    std::shared_lock lock(mu_);
    return bound_.contains(key);
}

std::vector<ContextKey> ContextStore::bound_series() const {
    std::shared_lock lock(mu_);
    return {bound_.begin(), bound_.end()};
}

void ContextStore::link_model(ModelId model, const std::string& name, const ContextKey& target) {
    std::unique_lock lock(mu_);
    if (!entities_.contains(target.entity) || !signals_.contains(target.signal)) {
        fail(ErrorCode::UnknownContext, "model target for '" + name + "'");
    }
    json rec{{"op", "model"},
             {"id", model.value},
             {"name", name},
             {"entity", target.entity.value},
             {"signal", target.signal.value}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
}

std::string ContextStore::describe(const ContextKey& key) const {
    std::shared_lock lock(mu_);
    const auto e = entities_.find(key.entity);
    const auto s = signals_.find(key.signal);
    return (e == entities_.end() ? "#" + std::to_string(key.entity.value) : e->second.name) + "/" +
           (s == signals_.end() ? "#" + std::to_string(key.signal.value) : s->second.name);
}

json ContextStore::export_context_graph(GraphLayers layers) const {
    std::shared_lock lock(mu_);
    json nodes = json::array();
    json edges = json::array();
    auto entity_node = [](EntityId id) { return "entity:" + std::to_string(id.value); };
    auto signal_node = [](SignalId id) { return "signal:" + std::to_string(id.value); };

    for (const auto& [id, e] : entities_) {
        json n{{"id", entity_node(id)}, {"kind", "entity"}, {"label", e.name}, {"type", entity_types_.at(e.type).name}};
        if (e.geo) n["geo"] = {{"lat", e.geo->lat}, {"lon", e.geo->lon}};
        nodes.push_back(std::move(n));
    }
    for (const auto& [id, s] : signals_) {
        nodes.push_back({{"id", signal_node(id)},
                         {"kind", "signal"},
                         {"label", s.name},
                         {"type", signal_types_.at(s.type).name},
                         {"unit", s.unit}});
    }
    for (const auto& r : relations_) {
        if (r.kind == RelationKind::ConnectedTo && r.from > r.to) continue;
        edges.push_back({{"from", entity_node(r.from)}, {"to", entity_node(r.to)}, {"kind", to_string(r.kind)}});
    }
    if (layers.series) {
        for (const auto& k : bound_) {
            const std::string id = "series:" + std::to_string(k.entity.value) + ":" + std::to_string(k.signal.value);
            nodes.push_back({{"id", id},
                             {"kind", "timeseries"},
                             {"label", entities_.at(k.entity).name + "/" + signals_.at(k.signal).name}});
            edges.push_back({{"from", id}, {"to", entity_node(k.entity)}, {"kind", "AT_ENTITY"}});
            edges.push_back({{"from", id}, {"to", signal_node(k.signal)}, {"kind", "OF_SIGNAL"}});
        }
    }
    if (layers.models) {
        for (const auto& [id, m] : models_) {
            const std::string node = "model:" + std::to_string(id.value);
            nodes.push_back({{"id", node}, {"kind", "model"}, {"label", m.name}});
            edges.push_back({{"from", node}, {"to", entity_node(m.target.entity)}, {"kind", "TARGETS_ENTITY"}});
            edges.push_back({{"from", node}, {"to", signal_node(m.target.signal)}, {"kind", "TARGETS_SIGNAL"}});
        }
    }
    return json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

} // namespace castorette
