#include "ppml/protected_fs.hpp"

#include <algorithm>
#include <cstring>
#include <map>

#include "posix_file.hpp"
#include "ppml/lru_cache.hpp"

namespace ppml::pfs {

namespace {

using crypto::Aes256GcmKey;
using crypto::Digest32;
using crypto::Nonce12;

// Header region offsets.
constexpr std::size_t kMagicSize = 8;
constexpr std::size_t kVersionOffset = 8;
constexpr std::size_t kUuidOffset = 12;
constexpr std::size_t kNonceOffset = 28;
constexpr std::size_t kMetaOffset = 40;
constexpr std::size_t kAadSize = kNonceOffset;  // magic || version || uuid

// Sealed metadata: u16 label length, label (zero padded), u64 size, root entry.
constexpr std::size_t kEntrySize = Nonce12::size() + Digest32::size();
constexpr std::size_t kMetaPlainSize = 2 + kMaxLabelSize + 8 + kEntrySize;
constexpr std::size_t kMetaSealedSize = kMetaPlainSize + crypto::kTagSize;
constexpr std::size_t kMetaEnd = kMetaOffset + kMetaSealedSize;
static_assert(kMetaEnd <= kHeaderRegionSize);
static_assert(kFanout * kEntrySize <= kBlockSize);

struct ChildEntry {
    Nonce12 nonce;
    Digest32 tag_digest;

    bool is_zero() const { return nonce.is_zero() && tag_digest.is_zero(); }
};

ChildEntry read_entry(ByteView node, std::size_t slot) {
    auto at = node.subspan(slot * kEntrySize, kEntrySize);
    return {Nonce12::from_span(at.first(Nonce12::size())), Digest32::from_span(at.subspan(Nonce12::size()))};
}

void write_entry(Bytes& node, std::size_t slot, const ChildEntry& e) {
    auto* at = node.data() + slot * kEntrySize;
    std::memcpy(at, e.nonce.data(), Nonce12::size());
    std::memcpy(at + Nonce12::size(), e.tag_digest.data(), Digest32::size());
}

std::string_view label_for(NodeKind kind) {
    switch (kind) {
        case NodeKind::header: return "hdr";
        case NodeKind::mht: return "mht";
        case NodeKind::data: return "data";
    }
    return "data";
}

Bytes node_aad(const FileUuid& uuid, const NodeId& id) {
    Bytes aad(uuid.view().begin(), uuid.view().end());
    aad.push_back(static_cast<std::uint8_t>(id.kind()));
    put_u64_be(aad, id.key_index());
    return aad;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

bool all_zero(ByteView b) {
    return std::all_of(b.begin(), b.end(), [](auto x) { return x == 0; });
}

struct HeaderState {
    FileUuid uuid;
    std::string label;
    std::uint64_t size = 0;
    ChildEntry root;
};

Bytes header_aad(const FileUuid& uuid) {
    Bytes aad(kMagic, kMagic + kMagicSize);
    put_u32_le(aad, kFormatVersion);
    append(aad, uuid.view());
    return aad;
}

Bytes encode_header(const Aes256GcmKey& master, const HeaderState& h) {
    Bytes meta;
    meta.reserve(kMetaPlainSize);
    meta.push_back(static_cast<std::uint8_t>(h.label.size() & 0xff));
    meta.push_back(static_cast<std::uint8_t>(h.label.size() >> 8));
    append(meta, as_bytes(h.label));
    meta.resize(2 + kMaxLabelSize, 0);
    put_u64_le(meta, h.size);
    append(meta, h.root.nonce.view());
    append(meta, h.root.tag_digest.view());

    Bytes out = header_aad(h.uuid);
    auto nonce = crypto::random_nonce();
    append(out, nonce.view());
    auto key = derive_node_key(master, NodeKind::header, 0, h.uuid);
    append(out, crypto::aead_seal(key, nonce, header_aad(h.uuid), meta));
    out.resize(kHeaderRegionSize, 0);
    return out;
}

HeaderState decode_header(ByteView region, const Aes256GcmKey& master) {
    if (region.size() != kHeaderRegionSize) throw IntegrityError("header region truncated");
    if (std::memcmp(region.data(), kMagic, kMagicSize) != 0) throw IntegrityError("bad magic");
    if (get_u32_le(region.subspan(kVersionOffset)) != kFormatVersion) {
        throw IntegrityError("unsupported format version");
    }
    if (!all_zero(region.subspan(kMetaEnd))) throw IntegrityError("nonzero header padding");

    HeaderState h;
    h.uuid = FileUuid::from_span(region.subspan(kUuidOffset, FileUuid::size()));
    auto nonce = Nonce12::from_span(region.subspan(kNonceOffset, Nonce12::size()));
    auto key = derive_node_key(master, NodeKind::header, 0, h.uuid);
    Bytes meta;
    try {
        meta = crypto::aead_open(key, nonce, region.first(kAadSize), region.subspan(kMetaOffset, kMetaSealedSize));
    } catch (const crypto::AuthError&) {
        throw KeyError("header does not authenticate under this key");
    }
    std::size_t label_len = meta[0] | (static_cast<std::size_t>(meta[1]) << 8);
    if (label_len > kMaxLabelSize) throw IntegrityError("label length out of range");
    h.label.assign(reinterpret_cast<const char*>(meta.data() + 2), label_len);
    ByteView rest(meta);
    if (!all_zero(rest.subspan(2 + label_len, kMaxLabelSize - label_len))) {
        throw IntegrityError("nonzero label padding");
    }
    h.size = get_u64_le(rest.subspan(2 + kMaxLabelSize));
    h.root = read_entry(rest.subspan(2 + kMaxLabelSize + 8), 0);
    return h;
}

HeaderState read_header(const detail::PosixFile& file, const Aes256GcmKey& master) {
    Bytes region(kHeaderRegionSize);
    if (!file.read_at(0, region)) throw IntegrityError("file shorter than header region");
    return decode_header(region, master);
}

void check_label(const std::string& label) {
    if (label.size() > kMaxLabelSize) {
        throw std::invalid_argument("filename label exceeds " + std::to_string(kMaxLabelSize) + " bytes");
    }
}

}  // namespace

std::string NodeId::to_string() const {
    if (level == 0) return "data[" + std::to_string(index) + "]";
    return "mht[" + std::to_string(level) + ":" + std::to_string(index) + "]";
}

TreeShape TreeShape::for_size(std::uint64_t file_size) {
    TreeShape s;
    s.data_blocks = ceil_div(file_size, kBlockSize);
    std::uint64_t below = s.data_blocks;
    while (below > 0) {
        std::uint64_t here = ceil_div(below, kFanout);
        s.mht_counts.push_back(here);
        if (here == 1) break;
        below = here;
    }
    return s;
}

std::uint64_t TreeShape::count_at(std::uint32_t level) const {
    if (level == 0) return data_blocks;
    return level <= height() ? mht_counts[level - 1] : 0;
}

std::uint64_t TreeShape::mht_nodes() const {
    std::uint64_t n = 0;
    for (auto c : mht_counts) n += c;
    return n;
}

std::uint64_t TreeShape::slot_of(const NodeId& id) const {
    std::uint64_t slot = 0;
    for (std::uint32_t level = height(); level > id.level; --level) slot += count_at(level);
    return slot + id.index;
}

Aes256GcmKey derive_node_key(const Aes256GcmKey& master, NodeKind kind, std::uint64_t node_index,
                             const FileUuid& uuid) {
    Bytes ctx(uuid.view().begin(), uuid.view().end());
    put_u64_be(ctx, node_index);
    return crypto::kdf(master.view(), label_for(kind), ctx);
}

struct ProtectedFile::Impl {
    detail::PosixFile file;
    Aes256GcmKey master;
    OpenMode mode = OpenMode::read_only;
    PfsOptions options;
    HeaderState state;  // in-memory: size may be ahead of disk
    std::uint64_t disk_size = 0;
    TreeShape disk_shape;
    ChildEntry disk_root;
    bool header_dirty = false;
    LruCache<NodeId, Bytes, NodeIdHash> cache{0};
    std::map<NodeId, Bytes> dirty;

    Impl(detail::PosixFile f, const Aes256GcmKey& key, OpenMode m, PfsOptions opts, HeaderState h)
        : file(std::move(f)),
          master(key),
          mode(m),
          options(std::move(opts)),
          state(std::move(h)),
          disk_size(state.size),
          disk_shape(TreeShape::for_size(state.size)),
          disk_root(state.root),
          cache(options.cache_capacity) {}

    bool on_disk(const NodeId& id) const { return id.index < disk_shape.count_at(id.level); }

    ChildEntry entry_for(const NodeId& id) {
        if (id.level == disk_shape.height()) return disk_root;
        Bytes parent = load_node({id.level + 1, id.index / kFanout});
        return read_entry(parent, id.index % kFanout);
    }

    Bytes load_node(const NodeId& id) {
        if (auto it = dirty.find(id); it != dirty.end()) return it->second;
        if (const Bytes* hit = cache.get(id)) return *hit;
        if (!on_disk(id)) throw std::logic_error("load of nonexistent node " + id.to_string());

        ChildEntry entry = entry_for(id);
        Bytes sealed(kSealedNodeSize);
        if (!file.read_at(kHeaderRegionSize + disk_shape.slot_of(id) * kSealedNodeSize, sealed)) {
            throw IntegrityError(id.to_string() + ": truncated");
        }
        if (crypto::hash(sealed) != entry.tag_digest) {
            throw IntegrityError(id.to_string() + ": hash mismatch with parent entry");
        }
        Bytes plain;
        try {
            plain = crypto::aead_open(derive_node_key(master, id.kind(), id.key_index(), state.uuid), entry.nonce,
                                      node_aad(state.uuid, id), sealed);
        } catch (const crypto::AuthError&) {
            throw IntegrityError(id.to_string() + ": authentication failed");
        }
        cache.put(id, plain);
        return plain;
    }

    Bytes& ensure_dirty(const NodeId& id) {
        if (auto it = dirty.find(id); it != dirty.end()) return it->second;
        Bytes plain = on_disk(id) ? load_node(id) : Bytes(kBlockSize, 0);
        cache.erase(id);
        return dirty.emplace(id, std::move(plain)).first->second;
    }

    Bytes read(std::uint64_t offset, std::uint64_t len) {
        if (offset > state.size || len > state.size - offset) {
            throw std::out_of_range("read beyond end of protected file");
        }
        Bytes out;
        out.reserve(len);
        std::uint64_t pos = offset;
        const std::uint64_t end = offset + len;
        while (pos < end) {
            std::uint64_t block = pos / kBlockSize;
            std::uint64_t in_block = pos % kBlockSize;
            std::uint64_t n = std::min<std::uint64_t>(kBlockSize - in_block, end - pos);
            Bytes plain = load_node({0, block});
            out.insert(out.end(), plain.begin() + static_cast<std::ptrdiff_t>(in_block),
                       plain.begin() + static_cast<std::ptrdiff_t>(in_block + n));
            pos += n;
        }
        return out;
    }

    void write(std::uint64_t offset, ByteView data) {
        if (mode != OpenMode::read_write) throw ModeError("protected file opened read-only");
        const std::uint64_t end = offset + data.size();
        if (end > state.size) {
            std::uint64_t old_blocks = ceil_div(state.size, kBlockSize);
            std::uint64_t new_blocks = ceil_div(end, kBlockSize);
            for (std::uint64_t b = old_blocks; b < new_blocks; ++b) ensure_dirty({0, b});
            state.size = end;
            header_dirty = true;
        }
        std::uint64_t pos = offset;
        std::size_t consumed = 0;
        while (pos < end) {
            std::uint64_t block = pos / kBlockSize;
            std::uint64_t in_block = pos % kBlockSize;
            std::uint64_t n = std::min<std::uint64_t>(kBlockSize - in_block, end - pos);
            Bytes& plain = ensure_dirty({0, block});
            std::memcpy(plain.data() + in_block, data.data() + consumed, n);
            pos += n;
            consumed += n;
        }
        if (!data.empty()) header_dirty = true;
    }

    Bytes seal(const NodeId& id, const Bytes& plain, ChildEntry& entry) {
        entry.nonce = crypto::random_nonce();
        if (options.on_seal) options.on_seal(id, entry.nonce);
        Bytes sealed = crypto::aead_seal(derive_node_key(master, id.kind(), id.key_index(), state.uuid), entry.nonce,
                                         node_aad(state.uuid, id), plain);
        entry.tag_digest = crypto::hash(sealed);
        return sealed;
    }

    void flush() {
        if (mode != OpenMode::read_write) return;
        if (dirty.empty() && !header_dirty) return;

        const TreeShape shape = TreeShape::for_size(state.size);
        // A taller tree adopts the old root as the first child of a new node.
        if (shape.height() > disk_shape.height() && disk_shape.height() >= 1) {
            ensure_dirty({disk_shape.height(), 0});
        }

        std::map<NodeId, Bytes> sealed_out;
        ChildEntry new_root;
        for (std::uint32_t level = 0; level <= shape.height() && shape.data_blocks > 0; ++level) {
            std::vector<NodeId> at_level;
            for (auto it = dirty.lower_bound({level, 0}); it != dirty.end() && it->first.level == level; ++it) {
                at_level.push_back(it->first);
            }
            for (const NodeId& id : at_level) {
                ChildEntry entry;
                sealed_out[id] = seal(id, dirty.at(id), entry);
                if (level == shape.height()) {
                    new_root = entry;
                } else {
                    Bytes& parent = ensure_dirty({level + 1, id.index / kFanout});
                    write_entry(parent, id.index % kFanout, entry);
                }
            }
        }

        if (shape == disk_shape) {
            for (const auto& [id, sealed] : sealed_out) {
                file.write_at(kHeaderRegionSize + shape.slot_of(id) * kSealedNodeSize, sealed);
            }
        } else {
            relayout(shape, sealed_out);
        }

        HeaderState next = state;
        next.root = shape.data_blocks > 0 ? new_root : ChildEntry{};
        file.write_at(0, encode_header(master, next));

        state.root = next.root;
        disk_root = next.root;
        disk_size = state.size;
        disk_shape = shape;
        for (auto& [id, plain] : dirty) cache.put(id, std::move(plain));
        dirty.clear();
        header_dirty = false;
    }

    // Growth only shifts nodes to higher slots, so writing in descending slot
    // order never clobbers a node that has not been moved yet.
    void relayout(const TreeShape& shape, const std::map<NodeId, Bytes>& sealed_out) {
        std::vector<NodeId> order;
        order.reserve(shape.total_nodes());
        for (std::uint32_t level = shape.height(); level >= 1; --level) {
            for (std::uint64_t i = 0; i < shape.count_at(level); ++i) order.push_back({level, i});
        }
        for (std::uint64_t i = 0; i < shape.data_blocks; ++i) order.push_back({0, i});

        Bytes buf(kSealedNodeSize);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const std::uint64_t dst = kHeaderRegionSize + shape.slot_of(*it) * kSealedNodeSize;
            if (auto s = sealed_out.find(*it); s != sealed_out.end()) {
                file.write_at(dst, s->second);
                continue;
            }
            if (!on_disk(*it)) throw std::logic_error("relayout: clean node missing on disk");
            const std::uint64_t src = kHeaderRegionSize + disk_shape.slot_of(*it) * kSealedNodeSize;
            if (src == dst) continue;
            if (!file.read_at(src, buf)) throw IntegrityError(it->to_string() + ": truncated");
            file.write_at(dst, buf);
        }
    }
};

ProtectedFile::ProtectedFile(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ProtectedFile::ProtectedFile(ProtectedFile&&) noexcept = default;
ProtectedFile& ProtectedFile::operator=(ProtectedFile&&) noexcept = default;
ProtectedFile::~ProtectedFile() = default;

ProtectedFile::Impl& ProtectedFile::impl() const {
    if (!impl_) throw PfsError("protected file handle is closed");
    return *impl_;
}

ProtectedFile ProtectedFile::create(const std::filesystem::path& path, const std::string& label,
                                    const Aes256GcmKey& master_key, PfsOptions options,
                                    std::optional<FileUuid> uuid) {
    check_label(label);
    auto file = detail::PosixFile::open(path, O_RDWR | O_CREAT | O_TRUNC);
    HeaderState h;
    h.uuid = uuid ? *uuid : crypto::random_fixed<FileUuid>();
    h.label = label;
    auto impl = std::make_unique<Impl>(std::move(file), master_key, OpenMode::read_write, std::move(options), h);
    impl->header_dirty = true;
    impl->flush();
    return ProtectedFile(std::move(impl));
}

ProtectedFile ProtectedFile::open(const std::filesystem::path& path, const std::string& label,
                                  const Aes256GcmKey& master_key, OpenMode mode, PfsOptions options) {
    check_label(label);
    auto file = detail::PosixFile::open(path, mode == OpenMode::read_write ? O_RDWR : O_RDONLY);
    HeaderState h = read_header(file, master_key);
    if (h.label != label) throw IntegrityError("filename label mismatch");
    auto shape = TreeShape::for_size(h.size);
    if (file.size() != shape.file_length()) throw IntegrityError("file length does not match header");
    if (shape.data_blocks == 0 && !h.root.is_zero()) throw IntegrityError("empty file with nonzero root");
    return ProtectedFile(std::make_unique<Impl>(std::move(file), master_key, mode, std::move(options), h));
}

std::uint64_t ProtectedFile::size() const { return impl().state.size; }
const std::string& ProtectedFile::label() const { return impl().state.label; }
const FileUuid& ProtectedFile::uuid() const { return impl().state.uuid; }
OpenMode ProtectedFile::mode() const { return impl().mode; }
const TreeShape& ProtectedFile::disk_shape() const { return impl().disk_shape; }
std::size_t ProtectedFile::cached_nodes() const { return impl().cache.size(); }

Bytes ProtectedFile::read(std::uint64_t offset, std::uint64_t len) { return impl().read(offset, len); }
void ProtectedFile::write(std::uint64_t offset, ByteView data) { impl().write(offset, data); }
void ProtectedFile::flush() { impl().flush(); }

void ProtectedFile::close() {
    impl().flush();
    impl_.reset();
}

VerifyReport verify(const std::filesystem::path& path, const Aes256GcmKey& master_key) {
    auto file = detail::PosixFile::open(path, O_RDONLY);
    VerifyReport report;
    auto fail = [&](std::string node, std::string detail) {
        report.ok = false;
        report.first_bad_node = std::move(node);
        report.detail = std::move(detail);
        return report;
    };

    HeaderState h;
    try {
        h = read_header(file, master_key);
    } catch (const IntegrityError& e) {
        return fail("header", e.what());
    }
    const auto shape = TreeShape::for_size(h.size);
    if (file.size() != shape.file_length()) return fail("structure", "file length does not match header");
    if (shape.data_blocks == 0) {
        if (!h.root.is_zero()) return fail("header", "empty file with nonzero root");
        report.ok = true;
        return report;
    }

    Bytes sealed(kSealedNodeSize);
    auto open_node = [&](const NodeId& id, const ChildEntry& entry, Bytes& plain) -> std::optional<std::string> {
        if (!file.read_at(kHeaderRegionSize + shape.slot_of(id) * kSealedNodeSize, sealed)) return "truncated";
        if (crypto::hash(sealed) != entry.tag_digest) return "hash mismatch with parent entry";
        try {
            plain = crypto::aead_open(derive_node_key(master_key, id.kind(), id.key_index(), h.uuid), entry.nonce,
                                      node_aad(h.uuid, id), sealed);
        } catch (const crypto::AuthError&) {
            return "authentication failed";
        }
        return std::nullopt;
    };

    // Walk top-down, keeping one level of plaintext parents at a time.
    std::vector<Bytes> parents;
    for (std::uint32_t level = shape.height(); ; --level) {
        const std::uint64_t count = shape.count_at(level);
        const std::uint64_t children = level > 0 ? shape.count_at(level - 1) : 0;
        std::vector<Bytes> current(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            NodeId id{level, i};
            ChildEntry entry = level == shape.height() ? h.root : read_entry(parents[i / kFanout], i % kFanout);
            if (auto err = open_node(id, entry, current[i])) return fail(id.to_string(), *err);
            if (level > 0) {
                std::uint64_t used = std::min<std::uint64_t>(kFanout, children - i * kFanout);
                if (!all_zero(ByteView(current[i]).subspan(used * kEntrySize))) {
                    return fail(id.to_string(), "unused entries not zero");
                }
            } else if (i + 1 == count && h.size % kBlockSize != 0) {
                if (!all_zero(ByteView(current[i]).subspan(h.size % kBlockSize))) {
                    return fail(id.to_string(), "nonzero bytes past end of file");
                }
            }
        }
        if (level == 0) break;
        parents = std::move(current);
    }
    report.ok = true;
    return report;
}

FileInfo inspect(const std::filesystem::path& path, const Aes256GcmKey& master_key) {
    auto file = detail::PosixFile::open(path, O_RDONLY);
    HeaderState h = read_header(file, master_key);
    auto shape = TreeShape::for_size(h.size);
    return {h.uuid, h.label, h.size, shape.data_blocks, shape.mht_nodes(), file.size()};
}

FileUuid peek_uuid(const std::filesystem::path& path) {
    auto file = detail::PosixFile::open(path, O_RDONLY);
    Bytes region(kHeaderRegionSize);
    if (!file.read_at(0, region)) throw IntegrityError("file shorter than header region");
    if (std::memcmp(region.data(), kMagic, kMagicSize) != 0) throw IntegrityError("bad magic");
    return FileUuid::from_span(ByteView(region).subspan(kUuidOffset, FileUuid::size()));
}

void write_file(const std::filesystem::path& path, const std::string& label, const Aes256GcmKey& master_key,
                ByteView contents) {
    auto f = ProtectedFile::create(path, label, master_key);
    f.write(0, contents);
    f.close();
}

Bytes read_file(const std::filesystem::path& path, const std::string& label, const Aes256GcmKey& master_key) {
    auto f = ProtectedFile::open(path, label, master_key, OpenMode::read_only);
    return f.read_all();
}

}  // namespace ppml::pfs
