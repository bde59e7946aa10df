#pragma once

// Secret provisioning over the attested channel. The key server gates each
// session with a session policy during the handshake, then re-checks every
// request against the requested secret's own policy.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppml/attestation.hpp"
#include "ppml/ra_channel.hpp"
#include "ppml/wire.hpp"

namespace ppml::prov {

inline constexpr std::size_t kMaxSecretSize = 4096;
inline constexpr std::size_t kMaxNameSize = 128;
inline constexpr std::chrono::seconds kIdleTimeout{60};
inline constexpr const char* kVaultLabel = "keyvault";

struct SecretEntry {
    Bytes secret;
    /// Identity constraints only; the session policy supplies the root.
    attest::VerificationPolicy policy;
};

class KeyVault {
public:
    /// Throws std::invalid_argument on a bad name, bad size, or a policy that
    /// pins neither mr_enclave nor mr_signer. Replaces an existing entry.
    void put(const std::string& name, SecretEntry entry);
    const SecretEntry* find(const std::string& name) const;
    bool erase(const std::string& name);
    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }

    nlohmann::json to_json() const;
    static KeyVault from_json(const nlohmann::json& j);

private:
    std::map<std::string, SecretEntry> entries_;
};

bool valid_secret_name(std::string_view name);

/// The vault file is a Protected FS file whose key is derived from the
/// passphrase and the file's own uuid. Wrong passphrase: pfs::KeyError;
/// corruption: pfs::IntegrityError.
void vault_save(const KeyVault& vault, const std::filesystem::path& path, std::string_view passphrase);
KeyVault vault_load(const std::filesystem::path& path, std::string_view passphrase);

enum class DenyReason { policy_mismatch, unknown_secret };
std::string_view to_string(DenyReason reason);

class Denied : public std::runtime_error {
public:
    explicit Denied(DenyReason reason);
    DenyReason reason() const { return reason_; }

private:
    DenyReason reason_;
};

struct AuditRecord {
    attest::UnixTime timestamp = 0;
    attest::PlatformId platform_id;
    crypto::Digest32 mr_enclave;
    std::string secret_name;
    std::string outcome;  // "granted" or the deny reason
};

void to_json(nlohmann::json& j, const AuditRecord& r);

struct ServerConfig {
    attest::VerificationPolicy session_policy;
    crypto::SigningKeyPair verifier_key;
    /// Consulted once per connection so revocations apply to new sessions.
    std::function<attest::Crl()> crl_source;
    std::function<attest::UnixTime()> clock;
    std::chrono::milliseconds idle_timeout = kIdleTimeout;
    /// Audit records are also appended here as JSON lines when set.
    std::optional<std::filesystem::path> audit_log;
};

class KeyServer {
public:
    KeyServer(KeyVault vault, ServerConfig config);

    /// Runs one client session: handshake, then requests until the client
    /// closes or goes idle. Throws ra::HandshakeError if the handshake fails.
    void handle(wire::Connection& conn);

    std::vector<AuditRecord> audit() const;

private:
    wire::Frame answer(const wire::Frame& request, const attest::Quote& quote);
    void record(AuditRecord r);

    const KeyVault vault_;
    const ServerConfig config_;
    mutable std::mutex audit_mu_;
    std::vector<AuditRecord> audit_;
};

/// Requests one secret over an established channel.
Bytes request_secret(ra::SecureChannel& chan, const std::string& secret_name);

/// Connects, attests, and requests one secret. Throws ra::HandshakeError,
/// Denied, or wire::WireError.
Bytes client_request_key(const wire::Endpoint& server, const std::string& secret_name,
                         const ra::QuoteProvider& quote_provider, const crypto::PublicKey& verifier_pin);

}  // namespace ppml::prov
