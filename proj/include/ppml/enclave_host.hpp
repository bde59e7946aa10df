#pragma once

// Simulated enclave runtime. An EnclaveInstance owns the measured manifest
// and is the only way a workload touches files: paths outside the mounts do
// not exist, trusted files are re-hashed on every read, and protected paths
// go through Protected FS under a provisioned key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppml/attestation.hpp"
#include "ppml/manifest.hpp"
#include "ppml/ra_channel.hpp"
#include "ppml/wire.hpp"

namespace ppml::enclave {

enum class FileClass { trusted, protected_file, untrusted };

class StartError : public std::runtime_error {
public:
    enum class Kind { trusted_file_mismatch, missing_mount, parse };
    StartError(Kind kind, std::string path, const std::string& what)
        : std::runtime_error(what), kind_(kind), path_(std::move(path)) {}
    Kind kind() const { return kind_; }
    const std::string& path() const { return path_; }

private:
    Kind kind_;
    std::string path_;
};

class AccessDenied : public std::runtime_error {
public:
    explicit AccessDenied(const std::string& path) : std::runtime_error("no such path in enclave: " + path) {}
};

class RunError : public std::runtime_error {
public:
    enum class Kind { integrity, key_missing, shape_mismatch, io };
    RunError(Kind kind, std::string path, const std::string& what)
        : std::runtime_error(what), kind_(kind), path_(std::move(path)) {}
    Kind kind() const { return kind_; }
    const std::string& path() const { return path_; }

private:
    Kind kind_;
    std::string path_;
};

std::string_view to_string(StartError::Kind kind);
std::string_view to_string(RunError::Kind kind);

/// Identity of whoever built the enclave. mr_signer is the hash of the
/// vendor's public key.
struct EnclaveSigner {
    crypto::Digest32 mr_signer;
    std::uint32_t isv_svn = 1;
};

/// Fixed vendor used by the demo and the CLIs.
EnclaveSigner demo_signer();

class EnclaveInstance {
public:
    /// Throws StartError.
    static EnclaveInstance start(const manifest::FinalManifest& final_manifest, const std::filesystem::path& host_root,
                                 EnclaveSigner signer = demo_signer());
    /// Parses the manifest file first; parse problems become StartError{parse}.
    static EnclaveInstance start_from_file(const std::filesystem::path& manifest_path,
                                           const std::filesystem::path& host_root,
                                           EnclaveSigner signer = demo_signer());

    const manifest::FinalManifest& manifest() const { return manifest_; }
    const manifest::Measurement& measurement() const { return measurement_; }
    const EnclaveSigner& signer() const { return signer_; }

    /// Throws AccessDenied for paths outside every mount.
    FileClass classify(std::string_view enclave_path) const;
    std::filesystem::path host_path(std::string_view enclave_path) const;

    /// Re-hashes against the manifest; a mismatch is RunError{integrity}.
    Bytes read_trusted(std::string_view enclave_path) const;
    Bytes read_protected(std::string_view enclave_path, const std::string& key_name) const;
    void write_protected(std::string_view enclave_path, const std::string& key_name, ByteView contents) const;

    void attach_platform(attest::PlatformIdentity platform, attest::CertChain chain);
    bool has_platform() const { return platform_.has_value(); }
    /// Quotes always carry this instance's measurement. Throws std::logic_error
    /// without a platform.
    ra::QuoteProvider quote_provider() const;

    void install_secret(const std::string& name, Bytes secret);
    bool has_secret(const std::string& name) const { return secrets_.count(name) != 0; }

private:
    EnclaveInstance() = default;
    crypto::Aes256GcmKey key_for(const std::string& key_name, std::string_view enclave_path) const;
    std::filesystem::path checked_path(std::string_view enclave_path, FileClass expected) const;

    manifest::FinalManifest manifest_;
    manifest::Measurement measurement_;
    EnclaveSigner signer_;
    std::filesystem::path host_root_;
    std::optional<attest::PlatformIdentity> platform_;
    attest::CertChain chain_;
    std::map<std::string, Bytes> secrets_;
};

/// Attests to the key server and stores the released secret in the instance.
/// Throws ra::HandshakeError or prov::Denied.
void enclave_provision(EnclaveInstance& instance, const wire::Endpoint& keyserver,
                       const crypto::PublicKey& verifier_pin, const std::string& key_name);

// Toy workload: y = W x + b for each input row.

struct LinearModel {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<double> weights;  // rows * cols, row-major
    std::vector<double> bias;     // rows

    /// u32 rows, u32 cols, W, b; little-endian.
    Bytes encode() const;
    /// Throws std::invalid_argument if the length does not match the header.
    static LinearModel decode(ByteView bytes);
};

using Matrix = std::vector<std::vector<double>>;

/// One row per line, comma separated. Blank lines are skipped.
Matrix parse_csv(std::string_view text);
/// Shortest round-trip formatting, LF after every row.
std::string format_csv(const Matrix& rows);

/// Throws std::invalid_argument if a row does not have model.cols values.
Matrix linear_infer(const LinearModel& model, const Matrix& inputs);

struct WorkloadSpec {
    std::string kind = "linear_infer";
    std::string model_path;
    std::string input_path;
    std::string output_path;
    std::string key_name;
};

void to_json(nlohmann::json& j, const WorkloadSpec& w);
void from_json(const nlohmann::json& j, WorkloadSpec& w);

struct WorkloadInputs {
    LinearModel model;
    Matrix rows;
};

struct RunReport {
    std::size_t rows = 0;
    std::string output_path;
};

// The three phases of enclave_run, exposed so callers can observe them.
WorkloadInputs load_workload_inputs(const EnclaveInstance& instance, const WorkloadSpec& spec);
Matrix compute_workload(const WorkloadSpec& spec, const WorkloadInputs& inputs);
RunReport store_workload_output(const EnclaveInstance& instance, const WorkloadSpec& spec, const Matrix& output);

/// Throws RunError. No output file is created unless every input decrypts
/// and the computation succeeds.
RunReport enclave_run(const EnclaveInstance& instance, const WorkloadSpec& spec);

// User side of the workflow.

struct UploadItem {
    std::filesystem::path plaintext;
    std::string enclave_path;          // becomes the Protected FS label
    std::filesystem::path destination;  // host path in cloud storage
};

void user_encrypt_inputs(const std::vector<UploadItem>& items, const crypto::Aes256GcmKey& master_key);
Bytes user_decrypt_output(const std::filesystem::path& path, const std::string& enclave_path,
                          const crypto::Aes256GcmKey& master_key);

}  // namespace ppml::enclave
