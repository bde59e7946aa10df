#pragma once

// Authenticated encrypted file container. Plaintext is split into 4 KiB data
// blocks; each block is sealed with AES-256-GCM under a key derived from the
// master key and the block's position, and its (nonce, hash of sealed bytes)
// is stored in the parent Merkle node. The root entry, logical size and the
// filename label live in the sealed header. Byte layout: docs/FORMAT.md.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppml/crypto.hpp"

namespace ppml::pfs {

inline constexpr std::size_t kBlockSize = 4096;
inline constexpr std::size_t kSealedNodeSize = kBlockSize + crypto::kTagSize;
inline constexpr std::size_t kHeaderRegionSize = 512;
inline constexpr std::size_t kFanout = 64;
inline constexpr std::size_t kMaxLabelSize = 256;
inline constexpr std::size_t kDefaultCacheCapacity = 256;
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[] = "SEALPFS1";

using FileUuid = FixedBytes<16, struct FileUuidTag>;

class PfsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Authentication or structural failure of on-disk content.
class IntegrityError : public PfsError {
public:
    using PfsError::PfsError;
};

/// The header does not authenticate under the supplied key. A wrong key and a
/// modified header are indistinguishable, so this is an IntegrityError too.
class KeyError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

/// Write attempted through a read-only handle.
class ModeError : public PfsError {
public:
    using PfsError::PfsError;
};

enum class NodeKind : std::uint8_t { header = 0, mht = 1, data = 2 };

/// Level 0 holds data blocks; level k >= 1 holds Merkle nodes whose children
/// live at level k - 1.
struct NodeId {
    std::uint32_t level = 0;
    std::uint64_t index = 0;

    NodeKind kind() const { return level == 0 ? NodeKind::data : NodeKind::mht; }
    /// Index fed to key derivation: block number for data, level<<56 | position for Merkle nodes.
    std::uint64_t key_index() const {
        return level == 0 ? index : (static_cast<std::uint64_t>(level) << 56) | index;
    }
    std::string to_string() const;

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct NodeIdHash {
    std::size_t operator()(const NodeId& id) const noexcept {
        return std::hash<std::uint64_t>{}(id.index * 64 + id.level);
    }
};

/// Node counts implied by a logical file size.
struct TreeShape {
    std::uint64_t data_blocks = 0;
    std::vector<std::uint64_t> mht_counts;  // mht_counts[k - 1] = nodes at level k

    static TreeShape for_size(std::uint64_t file_size);

    std::uint32_t height() const { return static_cast<std::uint32_t>(mht_counts.size()); }
    std::uint64_t count_at(std::uint32_t level) const;
    std::uint64_t mht_nodes() const;
    std::uint64_t total_nodes() const { return data_blocks + mht_nodes(); }
    /// Position in breadth-first on-disk order (root first, data blocks last).
    std::uint64_t slot_of(const NodeId& id) const;
    std::uint64_t file_length() const { return kHeaderRegionSize + total_nodes() * kSealedNodeSize; }

    friend bool operator==(const TreeShape&, const TreeShape&) = default;
};

crypto::Aes256GcmKey derive_node_key(const crypto::Aes256GcmKey& master, NodeKind kind,
                                     std::uint64_t node_index, const FileUuid& uuid);

enum class OpenMode { read_only, read_write };

struct PfsOptions {
    std::size_t cache_capacity = kDefaultCacheCapacity;
    /// Called for every node sealed during flush (tests use it to audit nonce reuse).
    std::function<void(const NodeId&, const crypto::Nonce12&)> on_seal;
};

/// Single-owner handle on a protected file. Writes are buffered until flush()
/// or close(); destroying a handle without closing discards unflushed writes,
/// leaving the last flushed state on disk.
class ProtectedFile {
public:
    static ProtectedFile create(const std::filesystem::path& path, const std::string& label,
                                const crypto::Aes256GcmKey& master_key, PfsOptions options = {},
                                std::optional<FileUuid> uuid = std::nullopt);

    static ProtectedFile open(const std::filesystem::path& path, const std::string& label,
                              const crypto::Aes256GcmKey& master_key, OpenMode mode,
                              PfsOptions options = {});

    ProtectedFile(ProtectedFile&&) noexcept;
    ProtectedFile& operator=(ProtectedFile&&) noexcept;
    ~ProtectedFile();

    std::uint64_t size() const;
    const std::string& label() const;
    const FileUuid& uuid() const;
    OpenMode mode() const;
    /// Shape of the tree as last flushed to disk.
    const TreeShape& disk_shape() const;
    std::size_t cached_nodes() const;

    /// Throws std::out_of_range unless offset + len <= size().
    Bytes read(std::uint64_t offset, std::uint64_t len);
    Bytes read_all() { return read(0, size()); }
    void write(std::uint64_t offset, ByteView data);
    void flush();
    void close();
    bool is_open() const { return impl_ != nullptr; }

private:
    struct Impl;
    explicit ProtectedFile(std::unique_ptr<Impl> impl);
    Impl& impl() const;

    std::unique_ptr<Impl> impl_;
};

struct VerifyReport {
    bool ok = false;
    std::optional<std::string> first_bad_node;  // "header", "structure", "mht[L:i]" or "data[i]"
    std::string detail;
};

/// Authenticates every node root-to-leaf without checking the filename label.
/// Never throws for content problems; std::system_error on I/O failure.
VerifyReport verify(const std::filesystem::path& path, const crypto::Aes256GcmKey& master_key);

struct FileInfo {
    FileUuid uuid;
    std::string label;
    std::uint64_t size = 0;
    std::uint64_t data_blocks = 0;
    std::uint64_t mht_nodes = 0;
    std::uint64_t file_length = 0;
};

/// Header-only inspection (authenticates the header, not the data nodes).
FileInfo inspect(const std::filesystem::path& path, const crypto::Aes256GcmKey& master_key);

/// Reads the plaintext uuid from the header without authenticating it.
FileUuid peek_uuid(const std::filesystem::path& path);

/// Convenience wrappers for whole-file use.
void write_file(const std::filesystem::path& path, const std::string& label,
                const crypto::Aes256GcmKey& master_key, ByteView contents);
Bytes read_file(const std::filesystem::path& path, const std::string& label,
                const crypto::Aes256GcmKey& master_key);

}  // namespace ppml::pfs
