#pragma once

#include "castorette/context_store.hpp"
#include "castorette/ids.hpp"
#include "castorette/journal.hpp"
#include "castorette/time.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace castorette {

enum class SeriesKind { Observed, Forecast };

std::string_view to_string(SeriesKind kind) noexcept;
SeriesKind series_kind_from_string(std::string_view text);

struct SeriesPoint {
    Timestamp ts;
    double value = 0.0;
    friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct LayerInfo {
    LayerId id;
    ContextKey key;
    SeriesKind kind = SeriesKind::Observed;
    std::optional<VersionId> producer;
    /// Due time of the scoring run that produced a forecast layer. A layer is
    /// identified by (key, producer, anchor) so re-running a job overwrites.
    std::optional<Timestamp> anchor;
    Timestamp created_at;
};

struct IngestRequest {
    ContextKey key;
    std::vector<SeriesPoint> points;
    SeriesKind kind = SeriesKind::Observed;
    std::optional<VersionId> producer;
    std::optional<Timestamp> anchor;
};

/// Half-open [from, to). For forecasts, `producer` narrows the choice to one
/// model version; either way the newest matching layer is read.
struct RangeQuery {
    ContextKey key;
    Timestamp from;
    Timestamp to;
    SeriesKind kind = SeriesKind::Observed;
    std::optional<VersionId> producer;
};

struct ComparisonRow {
    Timestamp ts;
    std::optional<double> observed;
    std::optional<double> forecast;
    std::optional<double> sigma;
    std::optional<double> lower;
    std::optional<double> upper;
    std::optional<VersionId> producer;
};

/// Name of the sibling signal that carries the σ forecast for `signal`.
inline std::string sigma_signal_name(const std::string& signal) { return signal + "#sigma"; }

/// Multiplier for the two-sided 95% normal band.
inline constexpr double kBandZ = 1.96;

class TimeSeriesStore {
public:
    using Clock = std::function<Timestamp()>;

    TimeSeriesStore(ContextStore& context, const std::filesystem::path& dir = {}, Clock clock = {});

    /// Appends to the layer selected by kind/producer/anchor and returns the
    /// number of points written. Equal timestamps overwrite.
    std::size_t ingest(const IngestRequest& request);

    /// All-or-nothing ingest of several layers, e.g. a forecast and its σ.
    std::vector<std::size_t> ingest_batch(std::span<const IngestRequest> requests);

    std::vector<SeriesPoint> query(const RangeQuery& q) const;

    std::optional<LayerInfo> select_layer(const ContextKey& key, SeriesKind kind,
                                          std::optional<VersionId> producer = std::nullopt) const;
    std::vector<LayerInfo> layers(const ContextKey& key) const;
    std::vector<LayerInfo> forecast_layers_of(VersionId version) const;

    /// Outer join of the observed layer with the forecasts of one version (the
    /// given one, else the producer of the newest forecast layer) and their σ
    /// siblings on timestamp. Where scoring runs overlap, the newest run wins.
    std::vector<ComparisonRow> forecast_vs_observed(const ContextKey& key, Timestamp from, Timestamp to,
                                                    std::optional<VersionId> version = std::nullopt) const;

    std::size_t layer_count() const;
    void checkpoint();

private:
    struct Layer {
        LayerInfo info;
        std::map<std::int64_t, double> points;
    };

    void validate(const IngestRequest& request) const;
    const Layer* find_layer(const ContextKey& key, SeriesKind kind, std::optional<VersionId> producer,
                            std::optional<Timestamp> anchor) const;
    const Layer* newest_layer(const ContextKey& key, SeriesKind kind, std::optional<VersionId> producer) const;
    std::vector<SeriesPoint> range(const Layer& layer, Timestamp from, Timestamp to) const;
    void apply(const nlohmann::json& rec);
    nlohmann::json dump_state() const;
    void load_snapshot(const nlohmann::json& state);

    ContextStore& context_;
    Clock clock_;
    mutable std::shared_mutex mu_;
    Journal journal_;
    std::int64_t next_layer_ = 1;
    std::map<LayerId, Layer> layers_;
};

} // namespace castorette
