#include "castorette/model_store.hpp"

#include "castorette/error.hpp"
#include "castorette/gam/gam2.hpp"

#include <algorithm>
#include <mutex>

namespace castorette {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCompactEvery = 2000;

json ref_json(const ContextRef& r) { return json{{"entity", r.entity}, {"signal", r.signal}}; }

} // namespace

ModelInput model_input_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ValidationError, "model must be an object");
    ModelInput in;
    try {
        in.name = j.at("name").get<std::string>();
        in.description = j.value("description", std::string{});
        in.target.entity = j.at("target").at("entity").get<std::string>();
        in.target.signal = j.at("target").at("signal").get<std::string>();
        in.pipeline = j.value("pipeline", json::object());
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, std::string("model: ") + e.what());
    }
    if (in.name.empty()) fail(ErrorCode::ValidationError, "model name is empty");
    if (!j.contains("train_schedule")) fail(ErrorCode::ValidationError, "model has no train_schedule");
    in.train_schedule = deployment_from_json(j.at("train_schedule"));
    return in;
}

json to_json(const Model& m) {
    return json{{"id", m.id.value},
                {"name", m.name},
                {"description", m.description},
                {"target", ref_json(m.target_ref)},
                {"pipeline", to_json(m.pipeline)},
                {"train_schedule", to_json(m.train_schedule)},
                {"active_version", m.active_version ? json(m.active_version->value) : json(nullptr)}};
}

json to_json(const ModelVersion& v, bool with_params) {
    json j{{"id", v.id.value},
           {"model", v.model.value},
           {"trained_at", format_rfc3339(v.trained_at)},
           {"score_schedule", to_json(v.score_schedule)},
           {"metrics", v.metrics},
           {"anchor", v.anchor ? json(format_rfc3339(*v.anchor)) : json(nullptr)}};
    if (with_params) j["params"] = v.params;
    return j;
}

ModelStore::ModelStore(ContextStore& context, const std::filesystem::path& dir, Clock clock)
    : context_(context),
      clock_(clock ? std::move(clock) : [] { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }),
      journal_(dir.empty() ? dir : dir / "models") {
    journal_.replay([this](const json& s) { load_snapshot(s); }, [this](const json& r) { apply(r); });
}

Model ModelStore::parse_model_record(const json& rec) const {
    Model m;
    m.id = ModelId{rec.at("id").get<std::int64_t>()};
    m.name = rec.at("name");
    m.description = rec.at("description");
    m.target_ref = ContextRef{rec.at("target").at("entity"), rec.at("target").at("signal")};
    m.target = context_.resolve_context(m.target_ref.entity, m.target_ref.signal);
    m.pipeline = parse_pipeline(rec.at("pipeline"), context_, m.target_ref);
    m.train_schedule = deployment_from_json(rec.at("train_schedule"));
    return m;
}

void ModelStore::apply(const json& rec) {
    const auto& op = rec.at("op").get_ref<const std::string&>();
    ++generation_;
    if (op == "model") {
        Model m = parse_model_record(rec);
        next_id_ = std::max(next_id_, m.id.value + 1);
        model_records_[m.id] = rec;
        if (rec.contains("active") && !rec.at("active").is_null()) m.active_version = VersionId{rec.at("active").get<std::int64_t>()};
        models_[m.id] = std::move(m);
    } else if (op == "version") {
        ModelVersion v;
        v.id = VersionId{rec.at("id").get<std::int64_t>()};
        v.model = ModelId{rec.at("model").get<std::int64_t>()};
        v.trained_at = parse_rfc3339(rec.at("trained_at").get<std::string>());
        v.params = rec.at("params").get<std::string>();
        v.score_schedule = deployment_from_json(rec.at("score_schedule"));
        v.metrics = rec.at("metrics").get<std::map<std::string, double>>();
        if (!rec.at("anchor").is_null()) v.anchor = parse_rfc3339(rec.at("anchor").get<std::string>());
        next_id_ = std::max(next_id_, v.id.value + 1);
        versions_[v.id] = std::move(v);
    } else if (op == "activate") {
        auto& m = models_.at(ModelId{rec.at("model").get<std::int64_t>()});
        if (rec.at("version").is_null()) m.active_version.reset();
        else m.active_version = VersionId{rec.at("version").get<std::int64_t>()};
    } else if (op == "schedule") {
        versions_.at(VersionId{rec.at("version").get<std::int64_t>()}).score_schedule =
            deployment_from_json(rec.at("score_schedule"));
    } else {
        fail(ErrorCode::Io, "unknown model record '" + op + "'");
    }
}

json ModelStore::dump_state() const {
    json records = json::array();
    for (const auto& [id, rec] : model_records_) {
        json r = rec;
        const auto& m = models_.at(id);
        r["active"] = m.active_version ? json(m.active_version->value) : json(nullptr);
        records.push_back(std::move(r));
    }
    for (const auto& [id, v] : versions_) {
        records.push_back({{"op", "version"},
                           {"id", id.value},
                           {"model", v.model.value},
                           {"trained_at", format_rfc3339(v.trained_at)},
                           {"params", v.params},
                           {"score_schedule", to_json(v.score_schedule)},
                           {"metrics", v.metrics},
                           {"anchor", v.anchor ? json(format_rfc3339(*v.anchor)) : json(nullptr)}});
    }
    return json{{"next_id", next_id_}, {"records", std::move(records)}};
}

void ModelStore::load_snapshot(const json& state) {
    for (const auto& r : state.at("records")) apply(r);
    next_id_ = std::max(next_id_, state.at("next_id").get<std::int64_t>());
}

void ModelStore::maybe_compact() {
    if (journal_.records_since_snapshot() >= kCompactEvery) journal_.compact(dump_state());
}

void ModelStore::checkpoint() {
    std::unique_lock lock(mu_);
    journal_.compact(dump_state());
}

ModelId ModelStore::store_model(const ModelInput& input) {
    if (input.name.empty()) fail(ErrorCode::ValidationError, "model name is empty");
    if (input.train_schedule.task != TaskKind::Train) fail(ErrorCode::ValidationError, "train_schedule must have task \"train\"");
    input.train_schedule.validate();
    ContextKey key;
    try {
        key = context_.resolve_context(input.target.entity, input.target.signal);
    } catch (const Error& e) {
        fail(ErrorCode::ValidationError, "load: target " + input.target.entity + "/" + input.target.signal + ": " + e.what());
    }
    const PipelineSpec spec = parse_pipeline(input.pipeline, context_, input.target);

    ModelId id;
    {
        std::unique_lock lock(mu_);
        json rec{{"op", "model"},
                 {"id", next_id_},
                 {"name", input.name},
                 {"description", input.description},
                 {"target", ref_json(input.target)},
                 {"pipeline", to_json(spec)},
                 {"train_schedule", to_json(input.train_schedule)}};
        journal_.append(rec);
        apply(rec);
        id = ModelId{rec.at("id").get<std::int64_t>()};
        maybe_compact();
    }
    context_.link_model(id, input.name, key);
    return id;
}

StoredVersion ModelStore::store_version(const VersionInput& input) {
    if (input.score_schedule.task != TaskKind::Score) fail(ErrorCode::ValidationError, "score_schedule must have task \"score\"");
    input.score_schedule.validate();
    gam::deserialize_artifact(input.params);
    const Timestamp now = clock_();

    std::unique_lock lock(mu_);
    if (!models_.contains(input.model)) fail(ErrorCode::UnknownModel, "model " + std::to_string(input.model.value));
    if (input.anchor) {
        for (const auto& [id, v] : versions_) {
            if (v.model == input.model && v.anchor == input.anchor) return {id, false};
        }
    }
    Timestamp trained_at = now;
    if (const auto* last = latest_locked(input.model)) trained_at = std::max(trained_at, last->trained_at);
    json rec{{"op", "version"},
             {"id", next_id_},
             {"model", input.model.value},
             {"trained_at", format_rfc3339(trained_at)},
             {"params", input.params},
             {"score_schedule", to_json(input.score_schedule)},
             {"metrics", input.metrics},
             {"anchor", input.anchor ? json(format_rfc3339(*input.anchor)) : json(nullptr)}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
    return {VersionId{rec.at("id").get<std::int64_t>()}, true};
}

Model ModelStore::model(ModelId id) const {
    std::shared_lock lock(mu_);
    const auto it = models_.find(id);
    if (it == models_.end()) fail(ErrorCode::UnknownModel, "model " + std::to_string(id.value));
    return it->second;
}

ModelVersion ModelStore::version(VersionId id) const {
    std::shared_lock lock(mu_);
    const auto it = versions_.find(id);
    if (it == versions_.end()) fail(ErrorCode::NotFound, "model version " + std::to_string(id.value));
    return it->second;
}

std::vector<Model> ModelStore::models() const {
    std::shared_lock lock(mu_);
    std::vector<Model> out;
    for (const auto& [id, m] : models_) out.push_back(m);
    return out;
}

std::vector<ModelVersion> ModelStore::versions_locked(ModelId model) const {
    std::vector<ModelVersion> out;
    for (const auto& [id, v] : versions_) {
        if (v.model == model) out.push_back(v);
    }
    std::stable_sort(out.begin(), out.end(), [](const ModelVersion& a, const ModelVersion& b) {
        return a.trained_at != b.trained_at ? a.trained_at < b.trained_at : a.id < b.id;
    });
    return out;
}

const ModelVersion* ModelStore::latest_locked(ModelId model) const {
    const ModelVersion* best = nullptr;
    for (const auto& [id, v] : versions_) {
        if (v.model != model) continue;
        if (!best || v.trained_at > best->trained_at || (v.trained_at == best->trained_at && v.id > best->id)) best = &v;
    }
    return best;
}

std::vector<ModelVersion> ModelStore::versions(ModelId model) const {
    std::shared_lock lock(mu_);
    if (!models_.contains(model)) fail(ErrorCode::UnknownModel, "model " + std::to_string(model.value));
    return versions_locked(model);
}

std::optional<ModelVersion> ModelStore::latest_version(ModelId model) const {
    std::shared_lock lock(mu_);
    if (const auto* v = latest_locked(model)) return *v;
    return std::nullopt;
}

std::optional<ModelVersion> ModelStore::effective_version(ModelId model) const {
    std::shared_lock lock(mu_);
    const auto it = models_.find(model);
    if (it == models_.end()) fail(ErrorCode::UnknownModel, "model " + std::to_string(model.value));
    if (it->second.active_version) return versions_.at(*it->second.active_version);
    if (const auto* v = latest_locked(model)) return *v;
    return std::nullopt;
}

void ModelStore::activate_version(ModelId model, std::optional<VersionId> version) {
    std::unique_lock lock(mu_);
    if (!models_.contains(model)) fail(ErrorCode::UnknownModel, "model " + std::to_string(model.value));
    if (version) {
        const auto it = versions_.find(*version);
        if (it == versions_.end() || it->second.model != model) {
            fail(ErrorCode::NotFound, "version " + std::to_string(version->value) + " of model " + std::to_string(model.value));
        }
    }
    json rec{{"op", "activate"}, {"model", model.value}, {"version", version ? json(version->value) : json(nullptr)}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
}

void ModelStore::update_score_schedule(VersionId version, const DeploymentConfig& schedule) {
    if (schedule.task != TaskKind::Score) fail(ErrorCode::ValidationError, "score_schedule must have task \"score\"");
    schedule.validate();
    std::unique_lock lock(mu_);
    if (!versions_.contains(version)) fail(ErrorCode::NotFound, "model version " + std::to_string(version.value));
    json rec{{"op", "schedule"}, {"version", version.value}, {"score_schedule", to_json(schedule)}};
    journal_.append(rec);
    apply(rec);
    maybe_compact();
}

std::vector<Model> ModelStore::list_models_for_context(std::optional<EntityId> entity, std::optional<SignalId> signal,
                                                       bool include_related) const {
    std::vector<EntityId> neighbours;
    std::optional<SignalTypeId> signal_type;
    if (include_related && entity) neighbours = context_.related(*entity);
    if (include_related && signal) signal_type = context_.signal(*signal).type;

    std::shared_lock lock(mu_);
    std::vector<Model> out;
    for (const auto& [id, m] : models_) {
        const bool entity_ok = !entity || m.target.entity == *entity;
        const bool signal_ok = !signal || m.target.signal == *signal;
        if (entity_ok && signal_ok) {
            out.push_back(m);
            continue;
        }
        if (!include_related || !entity) continue;
        if (std::find(neighbours.begin(), neighbours.end(), m.target.entity) == neighbours.end()) continue;
        if (signal_type && context_.signal(m.target.signal).type != *signal_type) continue;
        out.push_back(m);
    }
    return out;
}

json ModelStore::model_hierarchy(std::optional<EntityId> entity, std::optional<SignalId> signal) const {
    auto list = list_models_for_context(entity, signal, false);
    std::stable_sort(list.begin(), list.end(), [](const Model& a, const Model& b) {
        return a.name != b.name ? a.name < b.name : a.id < b.id;
    });
    std::shared_lock lock(mu_);
    json models = json::array();
    for (const auto& m : list) {
        json versions = json::array();
        for (const auto& v : versions_locked(m.id)) versions.push_back(to_json(v));
        const auto* latest = latest_locked(m.id);
        models.push_back({{"id", m.id.value},
                          {"name", m.name},
                          {"target", ref_json(m.target_ref)},
                          {"active_version", m.active_version ? json(m.active_version->value) : json(nullptr)},
                          {"latest_version", latest ? json(latest->id.value) : json(nullptr)},
                          {"versions", std::move(versions)}});
    }
    return json{{"models", std::move(models)}};
}

std::uint64_t ModelStore::generation() const {
    std::shared_lock lock(mu_);
    return generation_;
}

} // namespace castorette
