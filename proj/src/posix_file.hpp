#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>

#include "ppml/bytes.hpp"

namespace ppml::detail {

/// Owning file descriptor with positional exact-length I/O.
class PosixFile {
public:
    PosixFile() = default;

    static PosixFile open(const std::filesystem::path& path, int flags, mode_t mode = 0644) {
        int fd = ::open(path.c_str(), flags | O_CLOEXEC, mode);
        if (fd < 0) throw std::system_error(errno, std::generic_category(), "open " + path.string());
        return PosixFile(fd);
    }

    PosixFile(PosixFile&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    PosixFile& operator=(PosixFile&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    PosixFile(const PosixFile&) = delete;
    PosixFile& operator=(const PosixFile&) = delete;
    ~PosixFile() { reset(); }

    bool is_open() const noexcept { return fd_ >= 0; }

    std::uint64_t size() const {
        struct stat st {};
        if (::fstat(fd_, &st) != 0) throw std::system_error(errno, std::generic_category(), "fstat");
        return static_cast<std::uint64_t>(st.st_size);
    }

    /// Reads exactly out.size() bytes; returns false on short read (EOF).
    bool read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
        std::size_t done = 0;
        while (done < out.size()) {
            ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::system_error(errno, std::generic_category(), "pread");
            }
            if (n == 0) return false;
            done += static_cast<std::size_t>(n);
        }
        return true;
    }

    void write_at(std::uint64_t offset, ByteView data) {
        std::size_t done = 0;
        while (done < data.size()) {
            ssize_t n = ::pwrite(fd_, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::system_error(errno, std::generic_category(), "pwrite");
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void truncate(std::uint64_t length) {
        if (::ftruncate(fd_, static_cast<off_t>(length)) != 0) {
            throw std::system_error(errno, std::generic_category(), "ftruncate");
        }
    }

private:
    explicit PosixFile(int fd) : fd_(fd) {}

    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    int fd_ = -1;
};

}  // namespace ppml::detail
