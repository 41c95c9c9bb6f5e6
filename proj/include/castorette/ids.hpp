#pragma once

#include <compare>
#include <cstdint>
#include <functional>

namespace castorette {

template <class Tag>
struct Id {
    std::int64_t value = 0;

    friend constexpr auto operator<=>(Id, Id) = default;
    constexpr explicit operator bool() const noexcept { return value != 0; }
};

using EntityTypeId = Id<struct EntityTypeTag>;
using SignalTypeId = Id<struct SignalTypeTag>;
using EntityId = Id<struct EntityTag>;
using SignalId = Id<struct SignalTag>;
using ModelId = Id<struct ModelTag>;
using VersionId = Id<struct VersionTag>;
using LayerId = Id<struct LayerTag>;

/// (entity, signal): the join key for series and model targets.
struct ContextKey {
    EntityId entity;
    SignalId signal;

    friend constexpr auto operator<=>(const ContextKey&, const ContextKey&) = default;
};

} // namespace castorette

template <class Tag>
struct std::hash<castorette::Id<Tag>> {
    std::size_t operator()(castorette::Id<Tag> id) const noexcept { return std::hash<std::int64_t>{}(id.value); }
};

template <>
struct std::hash<castorette::ContextKey> {
    std::size_t operator()(const castorette::ContextKey& k) const noexcept {
        return std::hash<std::int64_t>{}(k.entity.value) * 1000003u ^ std::hash<std::int64_t>{}(k.signal.value);
    }
};
