#pragma once

// Enclave manifest: `section.key = value` lines, '#' comments, lists as
// repeated keys. Templates are written by the user; the signer resolves
// trusted-file hashes and emits the canonical final manifest whose SHA-256
// is the enclave measurement. Syntax reference: docs/MANIFEST.md.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ppml/crypto.hpp"

namespace ppml::manifest {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint64_t kMinEnclaveSize = 1ull << 20;

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    /// 1-based; 0 when the problem is not tied to a single line.
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class MissingFileError : public std::runtime_error {
public:
    explicit MissingFileError(std::string path)
        : std::runtime_error("cannot resolve trusted file " + path), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

enum class MountType { chroot };

struct MountEntry {
    std::string host_path;     // relative to the host root
    std::string enclave_path;  // absolute
    MountType type = MountType::chroot;

    friend bool operator==(const MountEntry&, const MountEntry&) = default;
};

struct ManifestTemplate {
    std::string entrypoint;
    std::vector<std::string> args;
    std::map<std::string, std::string> env;
    std::vector<MountEntry> mounts;
    std::vector<std::string> trusted_files;
    std::vector<std::string> protected_files;  // files or directory prefixes
    std::uint64_t enclave_size = 0;
    std::uint32_t max_threads = 0;

    friend bool operator==(const ManifestTemplate&, const ManifestTemplate&) = default;
};

struct FinalManifest {
    ManifestTemplate config;
    std::map<std::string, crypto::Digest32> trusted_file_hashes;
    std::uint32_t format_version = kFormatVersion;

    friend bool operator==(const FinalManifest&, const FinalManifest&) = default;
};

struct Measurement {
    crypto::Digest32 mr_enclave;

    std::string hex() const { return mr_enclave.hex(); }
    friend bool operator==(const Measurement&, const Measurement&) = default;
};

/// Returns file contents for an enclave path, or nullopt if it cannot be resolved.
using FileResolver = std::function<std::optional<Bytes>(const std::string& enclave_path)>;

ManifestTemplate parse_template(std::string_view text);

/// Throws ParseError if the template violates an invariant (same checks as parsing).
void validate(const ManifestTemplate& tmpl);

/// Hashes every trusted file through `resolve`. Protected files are never resolved.
FinalManifest sign_manifest(const ManifestTemplate& tmpl, const FileResolver& resolve);

/// Canonical text: keys in sorted order, list values sorted except argv,
/// single spaces around '=', LF line endings, trailing LF.
std::string serialize(const FinalManifest& final_manifest);

FinalManifest load(std::string_view text);

Measurement compute_measurement(const FinalManifest& final_manifest);

/// Maps an absolute enclave path through the longest matching mount to a host
/// path under `host_root`. Returns nullopt for paths outside every mount or
/// containing ".." components.
std::optional<std::filesystem::path> resolve_host_path(const std::vector<MountEntry>& mounts,
                                                       const std::filesystem::path& host_root,
                                                       std::string_view enclave_path);

/// Resolver that reads files from the host filesystem through the template's mounts.
FileResolver host_resolver(const ManifestTemplate& tmpl, const std::filesystem::path& host_root);

/// True if `path` equals a protected_files entry or lies under one treated as a directory.
bool is_protected_path(const ManifestTemplate& tmpl, std::string_view path);
bool is_trusted_path(const ManifestTemplate& tmpl, std::string_view path);

}  // namespace ppml::manifest
