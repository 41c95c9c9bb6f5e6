#include "castorette/frame.hpp"

#include "castorette/error.hpp"

#include <algorithm>

namespace castorette {

std::size_t MaskedSeries::present_count() const noexcept {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{0}));
}

std::vector<double> MaskedSeries::present_values() const {
    std::vector<double> out;
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!missing[i]) out.push_back(values[i]);
    }
    return out;
}

std::vector<std::size_t> MaskedSeries::present_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!missing[i]) out.push_back(i);
    }
    return out;
}

bool FeatureFrame::has(const std::string& name) const noexcept {
    return std::any_of(columns.begin(), columns.end(), [&](const Column& c) { return c.name == name; });
}

const Column& FeatureFrame::column(const std::string& name) const {
    for (const auto& c : columns) {
        if (c.name == name) return c;
    }
    fail(ErrorCode::MissingFeature, name);
}

Column& FeatureFrame::column(const std::string& name) {
    for (auto& c : columns) {
        if (c.name == name) return c;
    }
    fail(ErrorCode::MissingFeature, name);
}

void FeatureFrame::add(Column c) {
    if (c.size() != rows()) {
        fail(ErrorCode::InvalidArgument, "column '" + c.name + "' has " + std::to_string(c.size()) + " rows, frame has " +
                                             std::to_string(rows()));
    }
    for (auto& existing : columns) {
        if (existing.name == c.name) {
            existing = std::move(c);
            return;
        }
    }
    columns.push_back(std::move(c));
}

FeatureFrame FeatureFrame::select_rows(std::span<const std::size_t> keep) const {
    FeatureFrame out;
    out.timestamps.reserve(keep.size());
    for (const auto i : keep) out.timestamps.push_back(timestamps.at(i));
    for (const auto& c : columns) {
        Column n;
        n.name = c.name;
        n.kind = c.kind;
        n.levels = c.levels;
        for (const auto i : keep) {
            if (!c.values.empty()) n.values.push_back(c.values[i]);
            if (!c.codes.empty()) n.codes.push_back(c.codes[i]);
            n.missing.push_back(c.missing[i]);
        }
        out.columns.push_back(std::move(n));
    }
    if (target) {
        MaskedSeries t;
        for (const auto i : keep) {
            t.values.push_back(target->values[i]);
            t.missing.push_back(target->missing[i]);
        }
        out.target = std::move(t);
    }
    return out;
}

std::vector<std::size_t> FeatureFrame::complete_rows(std::span<const std::string> names, bool require_target) const {
    std::vector<const Column*> cols;
    for (const auto& n : names) cols.push_back(&column(n));
    if (require_target && !target) fail(ErrorCode::MissingFeature, "target");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows(); ++i) {
        bool ok = !require_target || target->present(i);
        for (const auto* c : cols) ok = ok && !c->missing[i];
        if (ok) out.push_back(i);
    }
    return out;
}

Column real_column(std::string name, std::vector<double> values) {
    Column c;
    c.name = std::move(name);
    c.kind = ColumnKind::Real;
    c.missing.assign(values.size(), 0);
    c.values = std::move(values);
    return c;
}

Column categorical_column(std::string name, std::vector<std::string> levels, std::vector<int> codes) {
    Column c;
    c.name = std::move(name);
    c.kind = ColumnKind::Categorical;
    c.levels = std::move(levels);
    c.missing.resize(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) c.missing[i] = codes[i] < 0 ? 1 : 0;
    c.codes = std::move(codes);
    return c;
}

} // namespace castorette
