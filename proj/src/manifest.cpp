#include "ppml/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace ppml::manifest {

namespace {

constexpr std::string_view kEnvPrefix = "loader.env.";
constexpr std::string_view kHashPrefix = "sgx.trusted_hash.";

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

bool has_space(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t'; });
}

bool is_absolute(std::string_view p) { return !p.empty() && p.front() == '/'; }

bool has_dotdot(std::string_view p) {
    std::size_t pos = 0;
    while (pos <= p.size()) {
        auto next = p.find('/', pos);
        auto part = p.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        if (part == "..") return true;
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return false;
}

std::uint64_t parse_size(std::size_t line, std::string_view v) {
    std::uint64_t mult = 1;
    if (!v.empty()) {
        switch (v.back()) {
            case 'K': mult = 1ull << 10; break;
            case 'M': mult = 1ull << 20; break;
            case 'G': mult = 1ull << 30; break;
            default: break;
        }
        if (mult != 1) v.remove_suffix(1);
    }
    std::uint64_t n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ParseError(line, "invalid size '" + std::string(v) + "'");
    }
    if (n > UINT64_MAX / mult) throw ParseError(line, "size overflows");
    return n * mult;
}

std::uint32_t parse_u32(std::size_t line, std::string_view v) {
    std::uint32_t n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ParseError(line, "invalid integer '" + std::string(v) + "'");
    }
    return n;
}

struct Parsed {
    ManifestTemplate tmpl;
    std::map<std::string, crypto::Digest32> hashes;
    std::optional<std::uint32_t> version;
    std::map<std::string, std::size_t> key_lines;  // first line of each key, for invariant errors
};

std::size_t line_of(const Parsed& p, const std::string& key) {
    auto it = p.key_lines.find(key);
    return it == p.key_lines.end() ? 0 : it->second;
}

void check_invariants(const ManifestTemplate& t, const std::map<std::string, std::size_t>& lines) {
    auto at = [&](const std::string& key) {
        auto it = lines.find(key);
        return it == lines.end() ? std::size_t{0} : it->second;
    };
    if (t.entrypoint.empty()) throw ParseError(at("loader.entrypoint"), "loader.entrypoint is required");
    if (t.enclave_size < kMinEnclaveSize || (t.enclave_size & (t.enclave_size - 1)) != 0) {
        throw ParseError(at("sgx.enclave_size"), "sgx.enclave_size must be a power of two >= 1M");
    }
    if (t.max_threads < 1) throw ParseError(at("sgx.max_threads"), "sgx.max_threads must be >= 1");

    std::set<std::string> enclave_paths;
    for (const auto& m : t.mounts) {
        if (m.host_path.empty() || has_dotdot(m.host_path)) {
            throw ParseError(at("fs.mount"), "invalid mount host path '" + m.host_path + "'");
        }
        if (!is_absolute(m.enclave_path) || has_dotdot(m.enclave_path)) {
            throw ParseError(at("fs.mount"), "mount enclave path must be absolute: '" + m.enclave_path + "'");
        }
        if (!enclave_paths.insert(m.enclave_path).second) {
            throw ParseError(at("fs.mount"), "duplicate mount enclave path '" + m.enclave_path + "'");
        }
    }
    auto check_paths = [&](const std::vector<std::string>& paths, const std::string& key) {
        std::set<std::string> seen;
        for (const auto& p : paths) {
            if (!is_absolute(p) || has_dotdot(p)) {
                throw ParseError(at(key), key + " path must be absolute: '" + p + "'");
            }
            if (!seen.insert(p).second) throw ParseError(at(key), "duplicate " + key + " entry '" + p + "'");
        }
    };
    check_paths(t.trusted_files, "sgx.trusted_files");
    check_paths(t.protected_files, "sgx.protected_files");
    for (const auto& p : t.trusted_files) {
        if (is_protected_path(t, p)) {
            throw ParseError(at("sgx.trusted_files"), "'" + p + "' is both trusted and protected");
        }
    }
}

Parsed parse_lines(std::string_view text, bool final_form) {
    Parsed out;
    ManifestTemplate& t = out.tmpl;
    std::set<std::string> scalars_seen;
    bool have_size = false;
    bool have_threads = false;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;

        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty() || has_space(key)) throw ParseError(line_no, "invalid key '" + key + "'");
        out.key_lines.emplace(key, line_no);

        auto scalar = [&](const std::string& k) {
            if (!scalars_seen.insert(k).second) throw ParseError(line_no, "duplicate key '" + k + "'");
        };

        if (key == "loader.entrypoint") {
            scalar(key);
            if (value.empty() || has_space(value)) throw ParseError(line_no, "invalid entrypoint");
            t.entrypoint = value;
        } else if (key == "loader.argv") {
            t.args.push_back(value);
        } else if (key.starts_with(kEnvPrefix)) {
            std::string name = key.substr(kEnvPrefix.size());
            if (name.empty()) throw ParseError(line_no, "empty environment variable name");
            if (!t.env.emplace(name, value).second) throw ParseError(line_no, "duplicate key '" + key + "'");
        } else if (key == "fs.mount") {
            std::istringstream parts(value);
            MountEntry m;
            std::string extra;
            if (!(parts >> m.host_path >> m.enclave_path) || (parts >> extra)) {
                throw ParseError(line_no, "fs.mount expects '<host_path> <enclave_path>'");
            }
            t.mounts.push_back(std::move(m));
        } else if (key == "sgx.trusted_files") {
            if (value.empty() || has_space(value)) throw ParseError(line_no, "invalid trusted file path");
            t.trusted_files.push_back(value);
        } else if (key == "sgx.protected_files") {
            if (value.empty() || has_space(value)) throw ParseError(line_no, "invalid protected file path");
            t.protected_files.push_back(value);
        } else if (key == "sgx.enclave_size") {
            scalar(key);
            t.enclave_size = parse_size(line_no, value);
            have_size = true;
        } else if (key == "sgx.max_threads") {
            scalar(key);
            t.max_threads = parse_u32(line_no, value);
            have_threads = true;
        } else if (final_form && key == "manifest.format_version") {
            scalar(key);
            out.version = parse_u32(line_no, value);
        } else if (final_form && key.starts_with(kHashPrefix)) {
            std::string path = key.substr(kHashPrefix.size());
            crypto::Digest32 digest;
            try {
                digest = crypto::Digest32::from_hex(value);
            } catch (const std::invalid_argument&) {
                throw ParseError(line_no, "invalid digest for '" + path + "'");
            }
            if (!out.hashes.emplace(path, digest).second) throw ParseError(line_no, "duplicate key '" + key + "'");
        } else {
            throw ParseError(line_no, "unknown key '" + key + "'");
        }
    }
    if (!have_size) throw ParseError(0, "sgx.enclave_size is required");
    if (!have_threads) throw ParseError(0, "sgx.max_threads is required");
    check_invariants(t, out.key_lines);
    return out;
}

template <class T>
std::vector<T> sorted(std::vector<T> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Set-valued lists are stored sorted so that load(serialize(m)) == m.
void canonicalize(ManifestTemplate& t) {
    std::sort(t.trusted_files.begin(), t.trusted_files.end());
    std::sort(t.protected_files.begin(), t.protected_files.end());
    std::sort(t.mounts.begin(), t.mounts.end(),
              [](const MountEntry& a, const MountEntry& b) { return a.enclave_path < b.enclave_path; });
}

}  // namespace

ManifestTemplate parse_template(std::string_view text) { return parse_lines(text, false).tmpl; }

void validate(const ManifestTemplate& tmpl) { check_invariants(tmpl, {}); }

FinalManifest sign_manifest(const ManifestTemplate& tmpl, const FileResolver& resolve) {
    validate(tmpl);
    FinalManifest out;
    out.config = tmpl;
    canonicalize(out.config);
    for (const auto& path : tmpl.trusted_files) {
        auto contents = resolve(path);
        if (!contents) throw MissingFileError(path);
        out.trusted_file_hashes.emplace(path, crypto::hash(*contents));
    }
    return out;
}

std::string serialize(const FinalManifest& m) {
    const auto& t = m.config;
    std::ostringstream out;
    auto line = [&](std::string_view key, std::string_view value) { out << key << " = " << value << '\n'; };

    auto mounts = t.mounts;
    std::sort(mounts.begin(), mounts.end(),
              [](const MountEntry& a, const MountEntry& b) { return a.enclave_path < b.enclave_path; });
    for (const auto& mnt : mounts) line("fs.mount", mnt.host_path + " " + mnt.enclave_path);
    for (const auto& a : t.args) line("loader.argv", a);
    line("loader.entrypoint", t.entrypoint);
    for (const auto& [name, value] : t.env) line(std::string(kEnvPrefix) + name, value);
    line("manifest.format_version", std::to_string(m.format_version));
    line("sgx.enclave_size", std::to_string(t.enclave_size));
    line("sgx.max_threads", std::to_string(t.max_threads));
    for (const auto& p : sorted(t.protected_files)) line("sgx.protected_files", p);
    for (const auto& p : sorted(t.trusted_files)) line("sgx.trusted_files", p);
    for (const auto& [path, digest] : m.trusted_file_hashes) line(std::string(kHashPrefix) + path, digest.hex());
    return out.str();
}

FinalManifest load(std::string_view text) {
    if (text.empty() || text.back() != '\n') throw ParseError(0, "final manifest must end with a newline");
    Parsed p = parse_lines(text, true);
    if (!p.version) throw ParseError(0, "manifest.format_version is required");
    if (*p.version != kFormatVersion) {
        throw ParseError(line_of(p, "manifest.format_version"), "unsupported format version");
    }
    for (const auto& path : p.tmpl.trusted_files) {
        if (!p.hashes.count(path)) throw ParseError(0, "missing trusted hash for '" + path + "'");
    }
    if (p.hashes.size() != p.tmpl.trusted_files.size()) {
        throw ParseError(0, "trusted hash present for a file not listed in sgx.trusted_files");
    }
    FinalManifest out;
    out.config = std::move(p.tmpl);
    canonicalize(out.config);
    out.trusted_file_hashes = std::move(p.hashes);
    out.format_version = *p.version;
    return out;
}

Measurement compute_measurement(const FinalManifest& m) { return {crypto::hash(serialize(m))}; }

std::optional<std::filesystem::path> resolve_host_path(const std::vector<MountEntry>& mounts,
                                                       const std::filesystem::path& host_root,
                                                       std::string_view enclave_path) {
    if (!is_absolute(enclave_path) || has_dotdot(enclave_path)) return std::nullopt;
    const MountEntry* best = nullptr;
    for (const auto& m : mounts) {
        std::string_view mp = m.enclave_path;
        while (mp.size() > 1 && mp.back() == '/') mp.remove_suffix(1);
        bool under = enclave_path.starts_with(mp) && enclave_path.size() > mp.size() && enclave_path[mp.size()] == '/';
        bool match = enclave_path == mp || mp == "/" || under;
        if (match && (!best || m.enclave_path.size() > best->enclave_path.size())) best = &m;
    }
    if (!best) return std::nullopt;
    std::string_view mp = best->enclave_path;
    while (mp.size() > 1 && mp.back() == '/') mp.remove_suffix(1);
    std::string_view rest = enclave_path.substr(mp == "/" ? 1 : mp.size());
    while (!rest.empty() && rest.front() == '/') rest.remove_prefix(1);
    auto host = host_root / best->host_path;
    if (!rest.empty()) host /= std::string(rest);
    return host;
}

FileResolver host_resolver(const ManifestTemplate& tmpl, const std::filesystem::path& host_root) {
    return [mounts = tmpl.mounts, host_root](const std::string& enclave_path) -> std::optional<Bytes> {
        auto host = resolve_host_path(mounts, host_root, enclave_path);
        if (!host || !std::filesystem::is_regular_file(*host)) return std::nullopt;
        std::ifstream in(*host, std::ios::binary);
        if (!in) return std::nullopt;
        return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
}

bool is_protected_path(const ManifestTemplate& tmpl, std::string_view path) {
    for (std::string_view entry : tmpl.protected_files) {
        if (path == entry) return true;
        std::string_view dir = entry;
        while (!dir.empty() && dir.back() == '/') dir.remove_suffix(1);
        if (path.size() > dir.size() && path.starts_with(dir) && path[dir.size()] == '/') return true;
    }
    return false;
}

bool is_trusted_path(const ManifestTemplate& tmpl, std::string_view path) {
    return std::find(tmpl.trusted_files.begin(), tmpl.trusted_files.end(), path) != tmpl.trusted_files.end();
}

}  // namespace ppml::manifest
