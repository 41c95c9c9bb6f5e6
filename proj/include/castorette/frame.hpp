#pragma once

#include "castorette/time.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace castorette {

/// Values with an explicit missing mask. Missing entries keep whatever value
/// they had; readers must consult the mask.
struct MaskedSeries {
    std::vector<double> values;
    std::vector<std::uint8_t> missing;

    MaskedSeries() = default;
    explicit MaskedSeries(std::vector<double> v) : values(std::move(v)), missing(values.size(), 0) {}

    std::size_t size() const noexcept { return values.size(); }
    bool present(std::size_t i) const noexcept { return !missing[i]; }
    std::size_t present_count() const noexcept;
    std::vector<double> present_values() const;
    std::vector<std::size_t> present_indices() const;
};

enum class ColumnKind {
    Real,
    Categorical,
    /// Continuous values whose effect switches on a categorical; the column
    /// carries both parts. Named `<continuous>@<categorical>`.
    Interaction,
};

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Real;
    std::vector<double> values;
    std::vector<int> codes;
    std::vector<std::string> levels;
    std::vector<std::uint8_t> missing;

    std::size_t size() const noexcept { return missing.size(); }
    const std::string& label(std::size_t row) const { return levels.at(static_cast<std::size_t>(codes.at(row))); }
};

struct FeatureFrame {
    std::vector<Timestamp> timestamps;
    std::vector<Column> columns;
    std::optional<MaskedSeries> target;

    std::size_t rows() const noexcept { return timestamps.size(); }
    bool has(const std::string& name) const noexcept;
    /// Throws Error(MissingFeature).
    const Column& column(const std::string& name) const;
    Column& column(const std::string& name);
    void add(Column c);

    /// Rows in `keep`, in the given order.
    FeatureFrame select_rows(std::span<const std::size_t> keep) const;

    /// Indices of rows where every named column (and the target, if asked)
    /// is present.
    std::vector<std::size_t> complete_rows(std::span<const std::string> names, bool require_target) const;
};

Column real_column(std::string name, std::vector<double> values);
Column categorical_column(std::string name, std::vector<std::string> levels, std::vector<int> codes);

} // namespace castorette
