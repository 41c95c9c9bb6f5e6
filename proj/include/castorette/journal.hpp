#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>

namespace castorette {

/// Append-only JSON-lines log with an optional snapshot file.
///
/// Each record is written with a single write(2) call and is durable against
/// process death once append() returns. On open, the snapshot (if any) is
/// handed to the loader first, then every log record whose sequence number is
/// newer than the snapshot. A torn final line is ignored.
///
/// An empty path gives an in-memory journal that records nothing.
class Journal {
public:
    using Record = nlohmann::json;

    Journal() = default;
    explicit Journal(std::filesystem::path base);
    ~Journal();

    Journal(const Journal&) = delete;
    Journal& operator=(const Journal&) = delete;

    bool persistent() const noexcept { return fd_ >= 0; }

    /// Replays snapshot then log. Must be called once, before any append().
    void replay(const std::function<void(const Record& snapshot)>& on_snapshot,
                const std::function<void(const Record& record)>& on_record);

    void append(Record record);

    /// Writes `state` as the new snapshot and truncates the log.
    void compact(const Record& state);

    std::uint64_t records_since_snapshot() const noexcept { return since_snapshot_; }

private:
    std::filesystem::path log_path_;
    std::filesystem::path snap_path_;
    int fd_ = -1;
    std::uint64_t seq_ = 0;
    std::uint64_t since_snapshot_ = 0;
    std::mutex mu_;
};

} // namespace castorette
