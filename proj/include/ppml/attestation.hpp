#pragma once

// Simulated SGX attestation: a three-level certificate chain (root ->
// platform CA -> platform attestation key), CRLs naming revoked platforms,
// signed quotes, and the fixed-order verifier that turns them into a
// VerificationResult. Certificates are compact signed structures, not X.509.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"
#include "ppml/crypto.hpp"

namespace ppml::attest {

using crypto::Digest32;
using crypto::PublicKey;
using crypto::Signature;
using PlatformId = FixedBytes<16, struct PlatformIdTag>;
using ReportData = FixedBytes<64, struct ReportDataTag>;
using UnixTime = std::int64_t;

inline constexpr UnixTime kDefaultCertLifetime = 10LL * 365 * 24 * 3600;

class UnknownPlatform : public std::runtime_error {
public:
    explicit UnknownPlatform(const PlatformId& id) : std::runtime_error("unknown platform " + id.hex()) {}
};

struct Certificate {
    std::string subject;
    PublicKey subject_public_key;
    std::string issuer;
    UnixTime not_before = 0;
    UnixTime not_after = 0;
    std::optional<std::uint32_t> tcb_level;   // leaf only
    std::optional<PlatformId> platform_id;    // leaf only
    Signature signature;

    /// Bytes covered by the issuer's signature.
    Bytes to_be_signed() const;
    bool valid_at(UnixTime now) const { return not_before <= now && now <= not_after; }

    friend bool operator==(const Certificate&, const Certificate&) = default;
};

struct CertChain {
    Certificate root;
    Certificate platform_ca;
    Certificate attestation_key;

    friend bool operator==(const CertChain&, const CertChain&) = default;
};

struct Crl {
    std::string issuer;
    std::uint64_t sequence = 0;
    std::set<PlatformId> revoked;
    Signature signature;

    Bytes to_be_signed() const;
    bool contains(const PlatformId& id) const { return revoked.count(id) != 0; }

    friend bool operator==(const Crl&, const Crl&) = default;
};

struct PlatformIdentity {
    PlatformId platform_id;
    crypto::SigningKeyPair attestation_key;
    std::uint32_t tcb_level = 0;
};

struct Quote {
    Digest32 mr_enclave;
    Digest32 mr_signer;
    std::uint32_t isv_svn = 0;
    ReportData report_data;
    PlatformId platform_id;
    std::uint32_t tcb_level = 0;
    Signature signature;

    static constexpr std::size_t kEncodedSize = 8 + 32 + 32 + 4 + 64 + 16 + 4 + 64;

    Bytes signed_bytes() const;
    /// Fixed-size binary form: signed_bytes() || signature.
    Bytes encode() const;
    /// Throws std::invalid_argument on wrong length or magic.
    static Quote decode(ByteView in);

    friend bool operator==(const Quote&, const Quote&) = default;
};

struct VerificationPolicy {
    std::optional<Digest32> expected_mr_enclave;  // nullopt = any
    std::optional<Digest32> expected_mr_signer;
    std::uint32_t min_isv_svn = 0;
    std::uint32_t min_tcb_level = 0;
    PublicKey accepted_root;

    /// Key-release policies must pin at least one enclave identity.
    bool constrains_identity() const { return expected_mr_enclave || expected_mr_signer; }
};

/// Declared in check order; quote_verify reports the first failing check.
enum class FailureReason {
    bad_chain,
    expired,
    revoked,
    bad_quote_sig,
    mr_enclave_mismatch,
    mr_signer_mismatch,
    svn_too_low,
    tcb_too_low,
};

inline constexpr FailureReason kAllFailureReasons[] = {
    FailureReason::bad_chain,     FailureReason::expired,             FailureReason::revoked,
    FailureReason::bad_quote_sig, FailureReason::mr_enclave_mismatch, FailureReason::mr_signer_mismatch,
    FailureReason::svn_too_low,   FailureReason::tcb_too_low,
};

std::string_view to_string(FailureReason reason);
std::optional<FailureReason> parse_failure_reason(std::string_view name);

struct VerificationResult {
    bool ok = false;
    std::optional<FailureReason> failure_reason;
    Quote quote;

    static VerificationResult accept(const Quote& q) { return {true, std::nullopt, q}; }
    static VerificationResult reject(FailureReason r, const Quote& q) { return {false, r, q}; }
};

/// Signatures and issuer links from the pinned root down to the leaf.
bool verify_chain(const CertChain& chain, const PublicKey& accepted_root);

/// Throws std::invalid_argument unless report_data is exactly 64 bytes.
Quote quote_generate(const PlatformIdentity& platform, const Digest32& mr_enclave, const Digest32& mr_signer,
                     std::uint32_t isv_svn, ByteView report_data);

/// Checks, in order: chain to policy.accepted_root (including the CRL
/// signature), certificate validity at `now`, revocation, quote signature
/// under the leaf key, mr_enclave, mr_signer, isv_svn, tcb_level.
VerificationResult quote_verify(const Quote& quote, const CertChain& chain, const Crl& crl,
                                const VerificationPolicy& policy, UnixTime now);

/// Only the measurement/version checks of quote_verify, for re-evaluating an
/// already verified quote against a stricter policy.
std::optional<FailureReason> check_identity(const Quote& quote, const VerificationPolicy& policy);

Certificate issue_certificate(const crypto::SigningSeed& issuer_key, std::string issuer, std::string subject,
                              const PublicKey& subject_key, UnixTime not_before, UnixTime not_after,
                              std::optional<std::uint32_t> tcb_level = std::nullopt,
                              std::optional<PlatformId> platform_id = std::nullopt);

Crl issue_crl(const crypto::SigningSeed& issuer_key, std::string issuer, std::uint64_t sequence,
              std::set<PlatformId> revoked);

struct Registration {
    PlatformIdentity identity;
    CertChain chain;
};

/// Mock Provisioning Certification Service state. All methods are serialized
/// by an internal lock.
class PcsDatabase {
public:
    explicit PcsDatabase(UnixTime now, UnixTime cert_lifetime = kDefaultCertLifetime);

    Registration register_platform(std::uint32_t tcb_level, UnixTime now);
    /// Throws UnknownPlatform.
    std::pair<CertChain, Crl> fetch(const PlatformId& id) const;
    /// Adds the platform to the revoked set and reissues the CRL with the next
    /// sequence number, even if it was already revoked. Throws UnknownPlatform.
    Crl revoke(const PlatformId& id);

    PublicKey root_public_key() const;
    Crl current_crl() const;
    std::size_t platform_count() const;

    nlohmann::json to_json() const;
    static std::unique_ptr<PcsDatabase> from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static std::unique_ptr<PcsDatabase> load(const std::filesystem::path& path);

private:
    PcsDatabase() = default;

    UnixTime cert_lifetime_ = kDefaultCertLifetime;
    crypto::SigningKeyPair root_key_;
    crypto::SigningKeyPair ca_key_;
    Certificate root_cert_;
    Certificate ca_cert_;
    std::map<PlatformId, CertChain> platforms_;
    Crl crl_;
    mutable std::mutex mu_;
};

// JSON forms used on the wire and in the PCS database file.
void to_json(nlohmann::json& j, const Certificate& c);
void from_json(const nlohmann::json& j, Certificate& c);
void to_json(nlohmann::json& j, const CertChain& c);
void from_json(const nlohmann::json& j, CertChain& c);
void to_json(nlohmann::json& j, const Crl& c);
void from_json(const nlohmann::json& j, Crl& c);
void to_json(nlohmann::json& j, const Quote& q);
void from_json(const nlohmann::json& j, Quote& q);
void to_json(nlohmann::json& j, const PlatformIdentity& p);
void from_json(const nlohmann::json& j, PlatformIdentity& p);
void to_json(nlohmann::json& j, const VerificationPolicy& p);
void from_json(const nlohmann::json& j, VerificationPolicy& p);

}  // namespace ppml::attest
