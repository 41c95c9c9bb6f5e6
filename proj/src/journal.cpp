#include "castorette/journal.hpp"

#include "castorette/error.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <string>

namespace castorette {

namespace {

void write_all(int fd, const std::string& data, const std::filesystem::path& path) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::Io, "write " + path.string() + ": " + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

} // namespace

Journal::Journal(std::filesystem::path base) {
    if (base.empty()) return;
    std::filesystem::create_directories(base.parent_path());
    log_path_ = base;
    log_path_ += ".log";
    snap_path_ = base;
    snap_path_ += ".snap";
    fd_ = ::open(log_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::Io, "open " + log_path_.string() + ": " + std::strerror(errno));
}

Journal::~Journal() {
    if (fd_ >= 0) ::close(fd_);
}

void Journal::replay(const std::function<void(const Record&)>& on_snapshot,
                     const std::function<void(const Record&)>& on_record) {
    if (fd_ < 0) return;
    std::uint64_t snapshot_seq = 0;
    if (std::filesystem::exists(snap_path_)) {
        std::ifstream in(snap_path_);
        Record snap = Record::parse(in, nullptr, /*allow_exceptions=*/false);
        if (snap.is_discarded() || !snap.contains("seq")) {
            fail(ErrorCode::Io, "corrupt snapshot " + snap_path_.string());
        }
        snapshot_seq = snap.at("seq").get<std::uint64_t>();
        on_snapshot(snap.at("state"));
    }
    seq_ = snapshot_seq;

    std::ifstream in(log_path_);
    std::string line;
    bool torn = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        // getline cannot tell us whether the last line had a newline, so a
        // parse failure anywhere is treated as the torn tail of a crash.
        Record rec = Record::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("seq")) {
            torn = true;
            break;
        }
        const auto seq = rec.at("seq").get<std::uint64_t>();
        if (seq <= snapshot_seq) continue;
        seq_ = seq;
        ++since_snapshot_;
        on_record(rec.at("r"));
    }
    if (torn) {
        // Rewrite the log without the torn tail so later appends stay parseable.
        std::ifstream again(log_path_);
        std::string rebuilt;
        while (std::getline(again, line)) {
            Record rec = Record::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.contains("seq")) break;
            rebuilt += line;
            rebuilt += '\n';
        }
        again.close();
        const auto tmp = std::filesystem::path(log_path_.string() + ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << rebuilt;
        }
        ::close(fd_);
        std::filesystem::rename(tmp, log_path_);
        fd_ = ::open(log_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) fail(ErrorCode::Io, "reopen " + log_path_.string());
    }
}

void Journal::append(Record record) {
    if (fd_ < 0) return;
    std::lock_guard lock(mu_);
    Record wrapped{{"seq", ++seq_}, {"r", std::move(record)}};
    std::string line = wrapped.dump();
    line += '\n';
    write_all(fd_, line, log_path_);
    ++since_snapshot_;
}

void Journal::compact(const Record& state) {
    if (fd_ < 0) return;
    std::lock_guard lock(mu_);
    const auto tmp = std::filesystem::path(snap_path_.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << Record{{"seq", seq_}, {"state", state}}.dump();
        out.flush();
        if (!out) fail(ErrorCode::Io, "write " + tmp.string());
    }
    std::filesystem::rename(tmp, snap_path_);
    // Records up to seq_ are now covered by the snapshot; replay skips them
    // even if the truncate below never happens.
    if (::ftruncate(fd_, 0) != 0) fail(ErrorCode::Io, "truncate " + log_path_.string());
    since_snapshot_ = 0;
}

} // namespace castorette
