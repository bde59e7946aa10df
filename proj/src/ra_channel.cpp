#include "ppml/ra_channel.hpp"

namespace ppml::ra {

namespace {

using json = nlohmann::json;
using Kind = HandshakeError::Kind;

constexpr std::string_view kVerifierSigContext = "ppml-ratls-v1 verifier hello";

crypto::Nonce12 record_nonce(std::uint64_t seq) {
    crypto::Nonce12 n;
    for (int i = 0; i < 8; ++i) n[11 - i] = static_cast<std::uint8_t>(seq >> (8 * i));
    return n;
}

Bytes record_aad(std::uint8_t type, std::uint64_t seq) {
    Bytes aad{type};
    put_u64_be(aad, seq);
    return aad;
}

crypto::Digest32 transcript_hash(ByteView transcript, ByteView extra = {}) {
    Bytes buf(transcript.begin(), transcript.end());
    append(buf, extra);
    return crypto::hash(buf);
}

Bytes verifier_sig_input(const crypto::Digest32& t1) {
    Bytes msg = to_bytes(kVerifierSigContext);
    append(msg, t1.view());
    return msg;
}

void send_alert(wire::Connection& conn, Kind kind, std::optional<attest::FailureReason> reason = std::nullopt) {
    json body = {{"error", to_string(kind)}};
    if (reason) body["reason"] = attest::to_string(*reason);
    try {
        conn.send({wire::msg::kAlert, to_bytes(body.dump())});
    } catch (const wire::WireError&) {
        // the peer is already gone; the local error is what matters
    }
}

[[noreturn]] void fail(wire::Connection& conn, Kind kind, const std::string& detail,
                       std::optional<attest::FailureReason> reason = std::nullopt) {
    send_alert(conn, kind, reason);
    throw HandshakeError(kind, detail, reason);
}

/// Turns a received alert into the matching local error.
[[noreturn]] void raise_alert(const wire::Frame& f) {
    auto j = json::parse(ppml::to_string(f.payload), nullptr, false);
    std::string name = j.is_object() ? j.value("error", "") : "";
    std::optional<attest::FailureReason> reason;
    if (j.is_object() && j.contains("reason") && j["reason"].is_string()) {
        reason = attest::parse_failure_reason(j["reason"].get<std::string>());
    }
    for (auto k : {Kind::attestation_failed, Kind::binding_mismatch, Kind::peer_auth_failed, Kind::bad_finished,
                   Kind::io, Kind::malformed}) {
        if (name == to_string(k)) {
            throw HandshakeError(k, "peer aborted handshake: " + name,
                                 k == Kind::attestation_failed ? reason : std::nullopt);
        }
    }
    throw HandshakeError(Kind::malformed, "peer sent an unreadable alert");
}

wire::Frame recv_frame(wire::Connection& conn) {
    try {
        return conn.recv();
    } catch (const wire::WireError& e) {
        throw HandshakeError(Kind::io, e.what());
    }
}

void send_frame(wire::Connection& conn, const wire::Frame& f) {
    try {
        conn.send(f);
    } catch (const wire::WireError& e) {
        throw HandshakeError(Kind::io, e.what());
    }
}

SessionKeys derive_keys(const crypto::SharedSecret& shared, const crypto::Digest32& t2) {
    return {crypto::kdf(shared.view(), "a2s", t2.view()), crypto::kdf(shared.view(), "s2a", t2.view())};
}

}  // namespace

std::string_view to_string(HandshakeError::Kind kind) {
    switch (kind) {
        case Kind::attestation_failed: return "attestation_failed";
        case Kind::binding_mismatch: return "binding_mismatch";
        case Kind::peer_auth_failed: return "peer_auth_failed";
        case Kind::bad_finished: return "bad_finished";
        case Kind::io: return "io";
        case Kind::malformed: return "malformed";
    }
    return "unknown";
}

HandshakeError::HandshakeError(Kind kind, const std::string& detail, std::optional<attest::FailureReason> reason)
    : std::runtime_error(std::string(to_string(kind)) +
                         (reason ? "(" + std::string(attest::to_string(*reason)) + ")" : "") + ": " + detail),
      kind_(kind),
      reason_(reason) {}

attest::ReportData binding_report_data(const crypto::DhPublicKey& eph_pub) {
    Bytes msg = eph_pub.to_vector();
    append(msg, as_bytes(kBindLabel));
    auto digest = crypto::hash(msg);
    attest::ReportData rd;
    std::copy(digest.view().begin(), digest.view().end(), rd.mutable_view().begin() + 32);
    return rd;
}

void to_json(json& j, const AttestationCertificate& c) {
    j = {{"attester_eph_pub", c.attester_eph_pub.hex()}, {"quote", c.quote}, {"cert_chain", c.cert_chain}};
}

void from_json(const json& j, AttestationCertificate& c) {
    c.attester_eph_pub = crypto::DhPublicKey::from_hex(j.at("attester_eph_pub").get<std::string>());
    c.quote = j.at("quote").get<attest::Quote>();
    c.cert_chain = j.at("cert_chain").get<attest::CertChain>();
}

Bytes HelloAttester::encode() const {
    json j = {{"eph_pub", eph_pub.hex()}, {"certificate", certificate}};
    return to_bytes(j.dump());
}

HelloAttester HelloAttester::decode(ByteView payload) {
    try {
        auto j = json::parse(ppml::to_string(payload));
        HelloAttester h;
        h.eph_pub = crypto::DhPublicKey::from_hex(j.at("eph_pub").get<std::string>());
        h.certificate = j.at("certificate").get<AttestationCertificate>();
        return h;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("bad attester hello: ") + e.what());
    }
}

SecureChannel::SecureChannel(wire::Connection& conn, Role role, SessionKeys keys, crypto::Digest32 transcript)
    : conn_(conn), role_(role), keys_(keys), transcript_(transcript) {}

const crypto::Aes256GcmKey& SecureChannel::send_key() const {
    return role_ == Role::attester ? keys_.key_a2v : keys_.key_v2a;
}

const crypto::Aes256GcmKey& SecureChannel::recv_key() const {
    return role_ == Role::attester ? keys_.key_v2a : keys_.key_a2v;
}

void SecureChannel::send(std::uint8_t type, ByteView payload) {
    if (payload.size() > kMaxRecordPayload) throw std::invalid_argument("record payload too large");
    wire::Frame f{type, {}};
    put_u64_be(f.payload, send_seq_);
    append(f.payload, crypto::aead_seal(send_key(), record_nonce(send_seq_), record_aad(type, send_seq_), payload));
    try {
        conn_.send(f);
    } catch (const wire::WireError& e) {
        throw ChannelError(ChannelError::Kind::closed, e.what());
    }
    ++send_seq_;
}

wire::Frame SecureChannel::recv() {
    wire::Frame f;
    try {
        f = conn_.recv();
    } catch (const wire::WireError& e) {
        throw ChannelError(ChannelError::Kind::closed, e.what());
    }
    return open_record(f);
}

wire::Frame SecureChannel::open_record(const wire::Frame& f) {
    using CK = ChannelError::Kind;
    if (f.payload.size() < kSeqSize + crypto::kTagSize) throw ChannelError(CK::auth, "short record");
    ByteView body(f.payload);
    auto seq = get_u64_be(body.first(kSeqSize));
    if (seq < recv_seq_) throw ChannelError(CK::replay, "replayed record " + std::to_string(seq));
    if (seq > recv_seq_) throw ChannelError(CK::out_of_order, "expected record " + std::to_string(recv_seq_));
    wire::Frame out{f.type, {}};
    try {
        out.payload = crypto::aead_open(recv_key(), record_nonce(seq), record_aad(f.type, seq), body.subspan(kSeqSize));
    } catch (const crypto::AuthError&) {
        throw ChannelError(CK::auth, "record failed authentication");
    }
    ++recv_seq_;
    return out;
}

SecureChannel attester_handshake(wire::Connection& conn, const QuoteProvider& quote_provider,
                                 const crypto::PublicKey& verifier_pin) {
    auto eph = crypto::dh_generate();
    HelloAttester hello;
    hello.eph_pub = eph.public_key;
    hello.certificate.attester_eph_pub = eph.public_key;
    hello.certificate.quote = quote_provider.quote(binding_report_data(eph.public_key).view());
    hello.certificate.cert_chain = quote_provider.chain;

    wire::Frame a1{wire::msg::kHelloAttester, hello.encode()};
    send_frame(conn, a1);
    Bytes transcript = wire::encode_frame(a1);

    auto v1 = recv_frame(conn);
    if (v1.type == wire::msg::kAlert) raise_alert(v1);
    if (v1.type != wire::msg::kHelloVerifier || v1.payload.size() != 32 + 64) {
        fail(conn, Kind::malformed, "expected verifier hello");
    }
    ByteView v1_body(v1.payload);
    auto verifier_eph = crypto::DhPublicKey::from_span(v1_body.first(32));
    auto t1 = transcript_hash(transcript, verifier_eph.view());
    if (!crypto::verify(verifier_pin, verifier_sig_input(t1), v1_body.subspan(32))) {
        fail(conn, Kind::peer_auth_failed, "verifier signature does not match the pinned key");
    }
    append(transcript, wire::encode_frame(v1));
    auto t2 = crypto::hash(transcript);

    crypto::SharedSecret shared;
    try {
        shared = crypto::dh_shared(eph.private_key, verifier_eph);
    } catch (const crypto::CryptoError& e) {
        fail(conn, Kind::malformed, e.what());
    }
    SecureChannel chan(conn, Role::attester, derive_keys(shared, t2), t2);
    try {
        chan.send(wire::msg::kFinished, t2.view());
    } catch (const ChannelError& e) {
        throw HandshakeError(Kind::io, e.what());
    }

    auto fin = recv_frame(conn);
    if (fin.type == wire::msg::kAlert) raise_alert(fin);
    if (fin.type != wire::msg::kFinished) fail(conn, Kind::malformed, "expected verifier finished");
    try {
        auto body = chan.open_record(fin);
        if (!crypto::equal_ct(body.payload, t2.view())) fail(conn, Kind::bad_finished, "transcript mismatch");
    } catch (const ChannelError& e) {
        fail(conn, Kind::bad_finished, e.what());
    }
    return chan;
}

VerifiedSession verifier_handshake(wire::Connection& conn, const attest::VerificationPolicy& policy,
                                   const attest::Crl& crl, attest::UnixTime now,
                                   const crypto::SigningKeyPair& verifier_key) {
    auto a1 = recv_frame(conn);
    if (a1.type == wire::msg::kAlert) raise_alert(a1);
    if (a1.type != wire::msg::kHelloAttester) fail(conn, Kind::malformed, "expected attester hello");
    HelloAttester hello;
    try {
        hello = HelloAttester::decode(a1.payload);
    } catch (const std::invalid_argument& e) {
        fail(conn, Kind::malformed, e.what());
    }

    const auto& cert = hello.certificate;
    auto result = attest::quote_verify(cert.quote, cert.cert_chain, crl, policy, now);
    if (!result.ok) fail(conn, Kind::attestation_failed, "quote rejected", result.failure_reason);
    if (cert.attester_eph_pub != hello.eph_pub || cert.quote.report_data != binding_report_data(hello.eph_pub)) {
        fail(conn, Kind::binding_mismatch, "quote does not commit to the presented ephemeral key");
    }

    Bytes transcript = wire::encode_frame(a1);
    auto eph = crypto::dh_generate();
    crypto::SharedSecret shared;
    try {
        shared = crypto::dh_shared(eph.private_key, hello.eph_pub);
    } catch (const crypto::CryptoError& e) {
        fail(conn, Kind::malformed, e.what());
    }
    auto t1 = transcript_hash(transcript, eph.public_key.view());
    wire::Frame v1{wire::msg::kHelloVerifier, eph.public_key.to_vector()};
    append(v1.payload, crypto::sign(verifier_key.seed, verifier_sig_input(t1)).view());
    send_frame(conn, v1);
    append(transcript, wire::encode_frame(v1));
    auto t2 = crypto::hash(transcript);

    SecureChannel chan(conn, Role::verifier, derive_keys(shared, t2), t2);
    auto fin = recv_frame(conn);
    if (fin.type == wire::msg::kAlert) raise_alert(fin);
    if (fin.type != wire::msg::kFinished) fail(conn, Kind::malformed, "expected attester finished");
    try {
        auto body = chan.open_record(fin);
        if (!crypto::equal_ct(body.payload, t2.view())) fail(conn, Kind::bad_finished, "transcript mismatch");
    } catch (const ChannelError& e) {
        fail(conn, Kind::bad_finished, e.what());
    }
    try {
        chan.send(wire::msg::kFinished, t2.view());
    } catch (const ChannelError& e) {
        throw HandshakeError(Kind::io, e.what());
    }
    return {std::move(chan), result};
}

}  // namespace ppml::ra
