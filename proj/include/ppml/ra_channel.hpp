#pragma once

// Attested secure channel. The attester (enclave) opens with an ephemeral
// X25519 key and a quote whose report_data commits to that key; the verifier
// checks the quote, answers with its own ephemeral key signed by a pinned
// long-term key, and both sides switch to AES-GCM records after exchanging
// Finished messages over the transcript. Message layouts: docs/WIRE.md.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ppml/attestation.hpp"
#include "ppml/crypto.hpp"
#include "ppml/wire.hpp"

namespace ppml::ra {

inline constexpr std::string_view kBindLabel = "ratls-bind-v1";
inline constexpr std::size_t kSeqSize = 8;
inline constexpr std::size_t kMaxRecordPayload = wire::kMaxPayload - kSeqSize - crypto::kTagSize;

/// Zero bytes followed by SHA-256(eph_pub || "ratls-bind-v1").
attest::ReportData binding_report_data(const crypto::DhPublicKey& eph_pub);

struct AttestationCertificate {
    crypto::DhPublicKey attester_eph_pub;
    attest::Quote quote;
    attest::CertChain cert_chain;
};

/// First handshake message, attester to verifier.
struct HelloAttester {
    crypto::DhPublicKey eph_pub;
    AttestationCertificate certificate;

    Bytes encode() const;
    /// Throws std::invalid_argument.
    static HelloAttester decode(ByteView payload);
};

/// What the enclave side needs to attest: a quote generator bound to the
/// running enclave's measurement, and the platform's certificate chain.
struct QuoteProvider {
    std::function<attest::Quote(ByteView report_data)> quote;
    attest::CertChain chain;
};

class HandshakeError : public std::runtime_error {
public:
    enum class Kind { attestation_failed, binding_mismatch, peer_auth_failed, bad_finished, io, malformed };

    HandshakeError(Kind kind, const std::string& detail, std::optional<attest::FailureReason> reason = std::nullopt);
    Kind kind() const { return kind_; }
    /// Set for attestation_failed.
    std::optional<attest::FailureReason> reason() const { return reason_; }

private:
    Kind kind_;
    std::optional<attest::FailureReason> reason_;
};

std::string_view to_string(HandshakeError::Kind kind);

class ChannelError : public std::runtime_error {
public:
    enum class Kind { replay, out_of_order, auth, closed };
    ChannelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct SessionKeys {
    crypto::Aes256GcmKey key_a2v;
    crypto::Aes256GcmKey key_v2a;
};

enum class Role { attester, verifier };

/// Record layer over an established session. Borrows the connection, which
/// must outlive the channel.
class SecureChannel {
public:
    SecureChannel(wire::Connection& conn, Role role, SessionKeys keys, crypto::Digest32 transcript);

    void send(std::uint8_t type, ByteView payload);
    /// Throws ChannelError; nothing is delivered unless the record authenticates.
    wire::Frame recv();
    void close() { conn_.close(); }

    Role role() const { return role_; }
    const SessionKeys& keys() const { return keys_; }
    const crypto::Digest32& transcript() const { return transcript_; }
    std::uint64_t send_seq() const { return send_seq_; }
    std::uint64_t recv_seq() const { return recv_seq_; }

private:
    friend SecureChannel attester_handshake(wire::Connection&, const QuoteProvider&, const crypto::PublicKey&);
    friend struct VerifiedSession verifier_handshake(wire::Connection&, const attest::VerificationPolicy&,
                                                     const attest::Crl&, attest::UnixTime,
                                                     const crypto::SigningKeyPair&);

    const crypto::Aes256GcmKey& send_key() const;
    const crypto::Aes256GcmKey& recv_key() const;
    wire::Frame open_record(const wire::Frame& frame);

    wire::Connection& conn_;
    Role role_;
    SessionKeys keys_;
    crypto::Digest32 transcript_;
    std::uint64_t send_seq_ = 0;
    std::uint64_t recv_seq_ = 0;
};

SecureChannel attester_handshake(wire::Connection& conn, const QuoteProvider& quote_provider,
                                 const crypto::PublicKey& verifier_pin);

struct VerifiedSession {
    SecureChannel channel;
    attest::VerificationResult result;
};

/// Sends an alert and never the verifier hello if the quote or binding
/// check fails.
VerifiedSession verifier_handshake(wire::Connection& conn, const attest::VerificationPolicy& policy,
                                   const attest::Crl& crl, attest::UnixTime now,
                                   const crypto::SigningKeyPair& verifier_key);

void to_json(nlohmann::json& j, const AttestationCertificate& c);
void from_json(const nlohmann::json& j, AttestationCertificate& c);

}  // namespace ppml::ra
