#include "castorette/timeseries_store.hpp"

#include "castorette/error.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace castorette {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCompactEvery = 2000;

json layer_json(const LayerInfo& info) {
    json j{{"id", info.id.value},
           {"entity", info.key.entity.value},
           {"signal", info.key.signal.value},
           {"kind", to_string(info.kind)},
           {"created_at", epoch_seconds(info.created_at)}};
    if (info.producer) j["producer"] = info.producer->value;
    if (info.anchor) j["anchor"] = epoch_seconds(*info.anchor);
    return j;
}

LayerInfo layer_from_json(const json& j) {
    LayerInfo info;
    info.id = LayerId{j.at("id").get<std::int64_t>()};
    info.key = ContextKey{EntityId{j.at("entity").get<std::int64_t>()}, SignalId{j.at("signal").get<std::int64_t>()}};
    info.kind = series_kind_from_string(j.at("kind").get<std::string>());
    info.created_at = from_epoch(j.at("created_at").get<std::int64_t>());
    if (j.contains("producer")) info.producer = VersionId{j["producer"].get<std::int64_t>()};
    if (j.contains("anchor")) info.anchor = from_epoch(j["anchor"].get<std::int64_t>());
    return info;
}

bool newer(const LayerInfo& a, const LayerInfo& b) {
    return a.created_at != b.created_at ? a.created_at > b.created_at : a.id > b.id;
}

} // namespace

std::string_view to_string(SeriesKind kind) noexcept { return kind == SeriesKind::Observed ? "observed" : "forecast"; }

SeriesKind series_kind_from_string(std::string_view text) {
    if (text == "observed" || text == "OBSERVED") return SeriesKind::Observed;
    if (text == "forecast" || text == "FORECAST") return SeriesKind::Forecast;
    fail(ErrorCode::InvalidArgument, "unknown series kind '" + std::string(text) + "'");
}

TimeSeriesStore::TimeSeriesStore(ContextStore& context, const std::filesystem::path& dir, Clock clock)
    : context_(context), clock_(std::move(clock)), journal_(dir.empty() ? dir : dir / "series") {
    if (!clock_) clock_ = [] { return std::chrono::floor<Duration>(std::chrono::system_clock::now()); };
    journal_.replay([this](const json& s) { load_snapshot(s); }, [this](const json& r) { apply(r); });
}

void TimeSeriesStore::validate(const IngestRequest& request) const {
    if (!context_.contains(request.key)) {
        fail(ErrorCode::UnknownContext, "entity " + std::to_string(request.key.entity.value) + " / signal " +
                                            std::to_string(request.key.signal.value));
    }
    if (request.kind == SeriesKind::Forecast && !request.producer) {
        fail(ErrorCode::InvalidArgument, "forecast layers need a producing model version");
    }
    if (request.kind == SeriesKind::Observed && (request.producer || request.anchor)) {
        fail(ErrorCode::InvalidArgument, "observed layers have no producer");
    }
    for (std::size_t i = 0; i < request.points.size(); ++i) {
        if (!std::isfinite(request.points[i].value)) {
            fail(ErrorCode::NonFiniteValue, "point " + std::to_string(i) + " of " + context_.describe(request.key));
        }
        if (i > 0 && request.points[i].ts < request.points[i - 1].ts) {
            fail(ErrorCode::UnsortedInput, "point " + std::to_string(i) + " of " + context_.describe(request.key));
        }
    }
}

const TimeSeriesStore::Layer* TimeSeriesStore::find_layer(const ContextKey& key, SeriesKind kind,
                                                          std::optional<VersionId> producer,
                                                          std::optional<Timestamp> anchor) const {
    if (kind == SeriesKind::Forecast && !anchor) return nullptr;
    for (const auto& [id, layer] : layers_) {
        const auto& info = layer.info;
        if (info.key == key && info.kind == kind && info.producer == producer && info.anchor == anchor) return &layer;
    }
    return nullptr;
}

const TimeSeriesStore::Layer* TimeSeriesStore::newest_layer(const ContextKey& key, SeriesKind kind,
                                                            std::optional<VersionId> producer) const {
    const Layer* best = nullptr;
    for (const auto& [id, layer] : layers_) {
        const auto& info = layer.info;
        if (info.key != key || info.kind != kind) continue;
        if (producer && info.producer != producer) continue;
        if (!best || newer(info, best->info)) best = &layer;
    }
    return best;
}

std::size_t TimeSeriesStore::ingest(const IngestRequest& request) {
    return ingest_batch(std::span<const IngestRequest>(&request, 1)).front();
}

std::vector<std::size_t> TimeSeriesStore::ingest_batch(std::span<const IngestRequest> requests) {
    for (const auto& r : requests) validate(r);
    std::vector<std::size_t> counts;
    {
        std::unique_lock lock(mu_);
        json items = json::array();
        std::int64_t next = next_layer_;
        const Timestamp now = clock_();
        for (const auto& r : requests) {
            json item;
            const Layer* existing = find_layer(r.key, r.kind, r.producer, r.anchor);
            // Two requests in one batch may target the same new layer.
            std::optional<std::int64_t> pending;
            for (const auto& prev : items) {
                if (!prev.contains("new")) continue;
                const LayerInfo p = layer_from_json(prev["new"]);
                if (p.key == r.key && p.kind == r.kind && p.producer == r.producer && p.anchor == r.anchor &&
                    (r.kind == SeriesKind::Observed || r.anchor)) {
                    pending = p.id.value;
                }
            }
            if (existing) {
                item["layer"] = existing->info.id.value;
            } else if (pending) {
                item["layer"] = *pending;
            } else {
                const LayerInfo info{LayerId{next++}, r.key, r.kind, r.producer, r.anchor, now};
                item["layer"] = info.id.value;
                item["new"] = layer_json(info);
            }
            json ts = json::array();
            json vs = json::array();
            for (const auto& p : r.points) {
                ts.push_back(epoch_seconds(p.ts));
                vs.push_back(p.value);
            }
            item["ts"] = std::move(ts);
            item["v"] = std::move(vs);
            items.push_back(std::move(item));
            counts.push_back(r.points.size());
        }
        json rec{{"op", "ingest"}, {"items", std::move(items)}};
        journal_.append(rec);
        apply(rec);
        if (journal_.records_since_snapshot() >= kCompactEvery) journal_.compact(dump_state());
    }
    for (const auto& r : requests) context_.bind_series(r.key);
    return counts;
}

void TimeSeriesStore::apply(const json& rec) {
    for (const auto& item : rec.at("items")) {
        if (item.contains("new")) {
            const LayerInfo info = layer_from_json(item["new"]);
            layers_[info.id] = Layer{info, {}};
            next_layer_ = std::max(next_layer_, info.id.value + 1);
        }
        auto& layer = layers_.at(LayerId{item.at("layer").get<std::int64_t>()});
        const auto& ts = item.at("ts");
        const auto& vs = item.at("v");
        for (std::size_t i = 0; i < ts.size(); ++i) layer.points[ts[i].get<std::int64_t>()] = vs[i].get<double>();
    }
}

json TimeSeriesStore::dump_state() const {
    json layers = json::array();
    for (const auto& [id, layer] : layers_) {
        json ts = json::array();
        json vs = json::array();
        for (const auto& [t, v] : layer.points) {
            ts.push_back(t);
            vs.push_back(v);
        }
        layers.push_back({{"info", layer_json(layer.info)}, {"ts", std::move(ts)}, {"v", std::move(vs)}});
    }
    return json{{"next_layer", next_layer_}, {"layers", std::move(layers)}};
}

void TimeSeriesStore::load_snapshot(const json& state) {
    next_layer_ = state.at("next_layer").get<std::int64_t>();
    for (const auto& l : state.at("layers")) {
        Layer layer{layer_from_json(l.at("info")), {}};
        const auto& ts = l.at("ts");
        const auto& vs = l.at("v");
        for (std::size_t i = 0; i < ts.size(); ++i) layer.points.emplace(ts[i].get<std::int64_t>(), vs[i].get<double>());
        layers_[layer.info.id] = std::move(layer);
    }
}

void TimeSeriesStore::checkpoint() {
    std::unique_lock lock(mu_);
    journal_.compact(dump_state());
}

std::vector<SeriesPoint> TimeSeriesStore::range(const Layer& layer, Timestamp from, Timestamp to) const {
    std::vector<SeriesPoint> out;
    if (from >= to) return out;
    const auto lo = layer.points.lower_bound(epoch_seconds(from));
    const auto hi = layer.points.lower_bound(epoch_seconds(to));
    for (auto it = lo; it != hi; ++it) out.push_back(SeriesPoint{from_epoch(it->first), it->second});
    return out;
}

std::vector<SeriesPoint> TimeSeriesStore::query(const RangeQuery& q) const {
    if (!context_.contains(q.key)) {
        fail(ErrorCode::UnknownContext,
             "entity " + std::to_string(q.key.entity.value) + " / signal " + std::to_string(q.key.signal.value));
    }
    std::shared_lock lock(mu_);
    const Layer* layer = newest_layer(q.key, q.kind, q.producer);
    if (!layer) return {};
    return range(*layer, q.from, q.to);
}

std::optional<LayerInfo> TimeSeriesStore::select_layer(const ContextKey& key, SeriesKind kind,
                                                       std::optional<VersionId> producer) const {
    std::shared_lock lock(mu_);
    const Layer* layer = newest_layer(key, kind, producer);
    if (!layer) return std::nullopt;
    return layer->info;
}

std::vector<LayerInfo> TimeSeriesStore::layers(const ContextKey& key) const {
    std::shared_lock lock(mu_);
    std::vector<LayerInfo> out;
    for (const auto& [id, layer] : layers_) {
        if (layer.info.key == key) out.push_back(layer.info);
    }
    return out;
}

std::vector<LayerInfo> TimeSeriesStore::forecast_layers_of(VersionId version) const {
    std::shared_lock lock(mu_);
    std::vector<LayerInfo> out;
    for (const auto& [id, layer] : layers_) {
        if (layer.info.producer == version) out.push_back(layer.info);
    }
    return out;
}

std::size_t TimeSeriesStore::layer_count() const {
    std::shared_lock lock(mu_);
    return layers_.size();
}

std::vector<ComparisonRow> TimeSeriesStore::forecast_vs_observed(const ContextKey& key, Timestamp from, Timestamp to,
                                                                 std::optional<VersionId> version) const {
    if (!context_.contains(key)) {
        fail(ErrorCode::UnknownContext,
             "entity " + std::to_string(key.entity.value) + " / signal " + std::to_string(key.signal.value));
    }
    // The σ sibling lives under a derived signal of the same type.
    std::optional<ContextKey> sigma_key;
    {
        const Signal sig = context_.signal(key.signal);
        try {
            const Signal s = context_.find_signal(
                NameRef{sigma_signal_name(sig.name), context_.signal_type(sig.type).name});
            sigma_key = ContextKey{key.entity, s.id};
        } catch (const Error&) {
        }
    }

    std::shared_lock lock(mu_);
    std::map<std::int64_t, ComparisonRow> rows;
    auto row = [&](Timestamp ts) -> ComparisonRow& {
        auto [it, inserted] = rows.try_emplace(epoch_seconds(ts));
        if (inserted) it->second.ts = ts;
        return it->second;
    };
    if (const Layer* obs = newest_layer(key, SeriesKind::Observed, std::nullopt)) {
        for (const auto& p : range(*obs, from, to)) row(p.ts).observed = p.value;
    }
    // Every scoring run of the chosen version, oldest first, so a newer run
    // wins where horizons overlap.
    const Layer* newest = newest_layer(key, SeriesKind::Forecast, version);
    std::vector<const Layer*> runs;
    if (newest) {
        for (const auto& [id, layer] : layers_) {
            const auto& info = layer.info;
            if (info.key == key && info.kind == SeriesKind::Forecast && info.producer == newest->info.producer) {
                runs.push_back(&layer);
            }
        }
        std::sort(runs.begin(), runs.end(), [](const Layer* a, const Layer* b) { return newer(b->info, a->info); });
    }
    for (const Layer* fc : runs) {
        const Layer* sig = nullptr;
        if (sigma_key) {
            sig = fc->info.anchor ? find_layer(*sigma_key, SeriesKind::Forecast, fc->info.producer, fc->info.anchor)
                                  : newest_layer(*sigma_key, SeriesKind::Forecast, fc->info.producer);
        }
        std::map<std::int64_t, double> sigma;
        if (sig) {
            for (const auto& p : range(*sig, from, to)) sigma[epoch_seconds(p.ts)] = p.value;
        }
        for (const auto& p : range(*fc, from, to)) {
            auto& r = row(p.ts);
            r.forecast = p.value;
            r.producer = fc->info.producer;
            r.sigma.reset();
            r.lower.reset();
            r.upper.reset();
            if (const auto it = sigma.find(epoch_seconds(p.ts)); it != sigma.end()) {
                r.sigma = it->second;
                r.lower = p.value - kBandZ * it->second;
                r.upper = p.value + kBandZ * it->second;
            }
        }
    }
    std::vector<ComparisonRow> out;
    out.reserve(rows.size());
    for (auto& [t, r] : rows) out.push_back(std::move(r));
    return out;
}

} // namespace castorette
