#include "ppml/enclave_host.hpp"

#include <charconv>
#include <cstring>
#include <fstream>

#include "ppml/protected_fs.hpp"
#include "ppml/provisioning.hpp"

namespace ppml::enclave {

namespace fs = std::filesystem;

namespace {

// Public key of the fixed demo vendor; mr_signer is its hash.
constexpr std::string_view kDemoVendorKey = "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c";

std::optional<Bytes> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    Bytes out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) return std::nullopt;
    return out;
}

double parse_number(std::string_view field, std::size_t line) {
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
        field.remove_suffix(1);
    }
    double v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw std::invalid_argument("csv line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
    }
    return v;
}

}  // namespace

std::string_view to_string(StartError::Kind kind) {
    switch (kind) {
        case StartError::Kind::trusted_file_mismatch: return "trusted_file_mismatch";
        case StartError::Kind::missing_mount: return "missing_mount";
        case StartError::Kind::parse: return "parse";
    }
    return "unknown";
}

std::string_view to_string(RunError::Kind kind) {
    switch (kind) {
        case RunError::Kind::integrity: return "integrity";
        case RunError::Kind::key_missing: return "key_missing";
        case RunError::Kind::shape_mismatch: return "shape_mismatch";
        case RunError::Kind::io: return "io";
    }
    return "unknown";
}

EnclaveSigner demo_signer() {
    auto vendor_key = ppml::from_hex(kDemoVendorKey);
    return {crypto::hash(ByteView(vendor_key)), 1};
}

EnclaveInstance EnclaveInstance::start(const manifest::FinalManifest& final_manifest, const fs::path& host_root,
                                       EnclaveSigner signer) {
    const auto& cfg = final_manifest.config;
    for (const auto& m : cfg.mounts) {
        auto dir = host_root / m.host_path;
        if (!fs::is_directory(dir)) {
            throw StartError(StartError::Kind::missing_mount, m.enclave_path,
                             "mount source " + dir.string() + " is not a directory");
        }
    }
    for (const auto& [path, expected] : final_manifest.trusted_file_hashes) {
        auto host = manifest::resolve_host_path(cfg.mounts, host_root, path);
        auto contents = host ? slurp(*host) : std::nullopt;
        if (!contents || crypto::hash(*contents) != expected) {
            throw StartError(StartError::Kind::trusted_file_mismatch, path,
                             contents ? "trusted file " + path + " does not match its manifest hash"
                                      : "trusted file " + path + " is missing");
        }
    }
    EnclaveInstance e;
    e.manifest_ = final_manifest;
    e.measurement_ = manifest::compute_measurement(final_manifest);
    e.signer_ = signer;
    e.host_root_ = host_root;
    return e;
}

EnclaveInstance EnclaveInstance::start_from_file(const fs::path& manifest_path, const fs::path& host_root,
                                                 EnclaveSigner signer) {
    auto text = slurp(manifest_path);
    if (!text) throw StartError(StartError::Kind::parse, manifest_path.string(), "cannot read manifest");
    manifest::FinalManifest fm;
    try {
        fm = manifest::load(ppml::to_string(*text));
    } catch (const manifest::ParseError& e) {
        throw StartError(StartError::Kind::parse, manifest_path.string(), e.what());
    }
    return start(fm, host_root, signer);
}

FileClass EnclaveInstance::classify(std::string_view enclave_path) const {
    host_path(enclave_path);
    if (manifest::is_trusted_path(manifest_.config, enclave_path)) return FileClass::trusted;
    if (manifest::is_protected_path(manifest_.config, enclave_path)) return FileClass::protected_file;
    return FileClass::untrusted;
}

fs::path EnclaveInstance::host_path(std::string_view enclave_path) const {
    auto p = manifest::resolve_host_path(manifest_.config.mounts, host_root_, enclave_path);
    if (!p) throw AccessDenied(std::string(enclave_path));
    return *p;
}

fs::path EnclaveInstance::checked_path(std::string_view enclave_path, FileClass expected) const {
    if (classify(enclave_path) != expected) {
        throw RunError(RunError::Kind::io, std::string(enclave_path),
                       "wrong file class for " + std::string(enclave_path));
    }
    return host_path(enclave_path);
}

Bytes EnclaveInstance::read_trusted(std::string_view enclave_path) const {
    auto host = checked_path(enclave_path, FileClass::trusted);
    std::string path(enclave_path);
    auto contents = slurp(host);
    if (!contents) throw RunError(RunError::Kind::io, path, "cannot read " + path);
    if (crypto::hash(*contents) != manifest_.trusted_file_hashes.at(path)) {
        throw RunError(RunError::Kind::integrity, path, "trusted file " + path + " changed since start");
    }
    return *contents;
}

crypto::Aes256GcmKey EnclaveInstance::key_for(const std::string& key_name, std::string_view enclave_path) const {
    auto it = secrets_.find(key_name);
    if (it == secrets_.end() || it->second.size() != crypto::Aes256GcmKey::size()) {
        throw RunError(RunError::Kind::key_missing, std::string(enclave_path),
                       "no 32-byte key '" + key_name + "' provisioned");
    }
    return crypto::Aes256GcmKey::from_span(it->second);
}

Bytes EnclaveInstance::read_protected(std::string_view enclave_path, const std::string& key_name) const {
    auto host = checked_path(enclave_path, FileClass::protected_file);
    auto key = key_for(key_name, enclave_path);
    std::string path(enclave_path);
    if (!fs::exists(host)) throw RunError(RunError::Kind::io, path, "missing protected file " + path);
    try {
        return pfs::read_file(host, path, key);
    } catch (const pfs::IntegrityError& e) {
        throw RunError(RunError::Kind::integrity, path, path + ": " + e.what());
    } catch (const pfs::PfsError& e) {
        throw RunError(RunError::Kind::io, path, path + ": " + e.what());
    }
}

void EnclaveInstance::write_protected(std::string_view enclave_path, const std::string& key_name,
                                      ByteView contents) const {
    auto host = checked_path(enclave_path, FileClass::protected_file);
    auto key = key_for(key_name, enclave_path);
    std::string path(enclave_path);
    auto tmp = host;
    tmp += ".partial";
    try {
        pfs::write_file(tmp, path, key, contents);
        fs::rename(tmp, host);
    } catch (const std::exception& e) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw RunError(RunError::Kind::io, path, path + ": " + e.what());
    }
}

void EnclaveInstance::attach_platform(attest::PlatformIdentity platform, attest::CertChain chain) {
    platform_ = std::move(platform);
    chain_ = std::move(chain);
}

ra::QuoteProvider EnclaveInstance::quote_provider() const {
    if (!platform_) throw std::logic_error("enclave has no platform attached");
    auto platform = *platform_;
    auto mr_enclave = measurement_.mr_enclave;
    auto signer = signer_;
    return {[platform, mr_enclave, signer](ByteView report_data) {
                return attest::quote_generate(platform, mr_enclave, signer.mr_signer, signer.isv_svn, report_data);
            },
            chain_};
}

void EnclaveInstance::install_secret(const std::string& name, Bytes secret) { secrets_[name] = std::move(secret); }

void enclave_provision(EnclaveInstance& instance, const wire::Endpoint& keyserver,
                       const crypto::PublicKey& verifier_pin, const std::string& key_name) {
    instance.install_secret(key_name,
                            prov::client_request_key(keyserver, key_name, instance.quote_provider(), verifier_pin));
}

Bytes LinearModel::encode() const {
    if (weights.size() != std::size_t(rows) * cols || bias.size() != rows) {
        throw std::invalid_argument("model dimensions do not match its data");
    }
    Bytes out;
    put_u32_le(out, rows);
    put_u32_le(out, cols);
    auto put = [&](double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64_le(out, bits);
    };
    for (double w : weights) put(w);
    for (double b : bias) put(b);
    return out;
}

LinearModel LinearModel::decode(ByteView bytes) {
    if (bytes.size() < 8) throw std::invalid_argument("model too short");
    LinearModel m;
    m.rows = get_u32_le(bytes.subspan(0, 4));
    m.cols = get_u32_le(bytes.subspan(4, 4));
    std::uint64_t count = std::uint64_t(m.rows) * m.cols + m.rows;
    if (m.rows == 0 || m.cols == 0 || bytes.size() - 8 != count * 8) {
        throw std::invalid_argument("model length does not match its header");
    }
    auto get = [&](std::size_t i) {
        std::uint64_t bits = get_u64_le(bytes.subspan(8 + i * 8, 8));
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    };
    std::size_t nw = std::size_t(m.rows) * m.cols;
    m.weights.reserve(nw);
    for (std::size_t i = 0; i < nw; ++i) m.weights.push_back(get(i));
    for (std::size_t i = 0; i < m.rows; ++i) m.bias.push_back(get(nw + i));
    return m;
}

Matrix parse_csv(std::string_view text) {
    Matrix out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        std::vector<double> row;
        for (;;) {
            auto comma = line.find(',');
            row.push_back(parse_number(line.substr(0, comma), line_no));
            if (comma == std::string_view::npos) break;
            line.remove_prefix(comma + 1);
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::string format_csv(const Matrix& rows) {
    std::string out;
    char buf[64];
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, row[i]);
            out.append(buf, ptr);
        }
        out += '\n';
    }
    return out;
}

Matrix linear_infer(const LinearModel& model, const Matrix& inputs) {
    Matrix out;
    out.reserve(inputs.size());
    for (std::size_t r = 0; r < inputs.size(); ++r) {
        const auto& x = inputs[r];
        if (x.size() != model.cols) {
            throw std::invalid_argument("input row " + std::to_string(r + 1) + " has " + std::to_string(x.size()) +
                                        " values, model expects " + std::to_string(model.cols));
        }
        std::vector<double> y(model.rows);
        for (std::size_t i = 0; i < model.rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < model.cols; ++j) acc += model.weights[i * model.cols + j] * x[j];
            y[i] = acc + model.bias[i];
        }
        out.push_back(std::move(y));
    }
    return out;
}

void to_json(nlohmann::json& j, const WorkloadSpec& w) {
    j = {{"kind", w.kind},
         {"model", w.model_path},
         {"input", w.input_path},
         {"output", w.output_path},
         {"key_name", w.key_name}};
}

void from_json(const nlohmann::json& j, WorkloadSpec& w) {
    w.kind = j.value("kind", "linear_infer");
    w.model_path = j.at("model").get<std::string>();
    w.input_path = j.at("input").get<std::string>();
    w.output_path = j.at("output").get<std::string>();
    w.key_name = j.at("key_name").get<std::string>();
}

WorkloadInputs load_workload_inputs(const EnclaveInstance& instance, const WorkloadSpec& spec) {
    if (spec.kind != "linear_infer") {
        throw RunError(RunError::Kind::shape_mismatch, "", "unknown workload kind " + spec.kind);
    }
    // Decrypt everything before parsing anything.
    auto model_bytes = instance.read_protected(spec.model_path, spec.key_name);
    auto input_bytes = instance.read_protected(spec.input_path, spec.key_name);
    WorkloadInputs in;
    try {
        in.model = LinearModel::decode(model_bytes);
    } catch (const std::invalid_argument& e) {
        throw RunError(RunError::Kind::shape_mismatch, spec.model_path, e.what());
    }
    try {
        in.rows = parse_csv(ppml::to_string(input_bytes));
    } catch (const std::invalid_argument& e) {
        throw RunError(RunError::Kind::shape_mismatch, spec.input_path, e.what());
    }
    return in;
}

Matrix compute_workload(const WorkloadSpec& spec, const WorkloadInputs& inputs) {
    try {
        return linear_infer(inputs.model, inputs.rows);
    } catch (const std::invalid_argument& e) {
        throw RunError(RunError::Kind::shape_mismatch, spec.input_path, e.what());
    }
}

RunReport store_workload_output(const EnclaveInstance& instance, const WorkloadSpec& spec, const Matrix& output) {
    instance.write_protected(spec.output_path, spec.key_name, as_bytes(format_csv(output)));
    return {output.size(), spec.output_path};
}

RunReport enclave_run(const EnclaveInstance& instance, const WorkloadSpec& spec) {
    try {
        // Fail before doing any work if the output is not a protected path.
        if (instance.classify(spec.output_path) != FileClass::protected_file) {
            throw RunError(RunError::Kind::io, spec.output_path, "output must be a protected path");
        }
    } catch (const AccessDenied& e) {
        throw RunError(RunError::Kind::io, spec.output_path, e.what());
    }
    try {
        auto inputs = load_workload_inputs(instance, spec);
        auto output = compute_workload(spec, inputs);
        return store_workload_output(instance, spec, output);
    } catch (const AccessDenied& e) {
        throw RunError(RunError::Kind::io, "", e.what());
    }
}

void user_encrypt_inputs(const std::vector<UploadItem>& items, const crypto::Aes256GcmKey& master_key) {
    for (const auto& item : items) {
        auto plain = slurp(item.plaintext);
        if (!plain) throw std::runtime_error("cannot read " + item.plaintext.string());
        if (item.destination.has_parent_path()) fs::create_directories(item.destination.parent_path());
        pfs::write_file(item.destination, item.enclave_path, master_key, *plain);
    }
}

Bytes user_decrypt_output(const fs::path& path, const std::string& enclave_path,
                          const crypto::Aes256GcmKey& master_key) {
    return pfs::read_file(path, enclave_path, master_key);
}

}  // namespace ppml::enclave
