#include "ppml/attestation.hpp"

#include <fstream>

namespace ppml::attest {

namespace {

constexpr char kCertMagic[] = "PPMLCERT";
constexpr char kCrlMagic[] = "PPMLCRL1";
constexpr char kQuoteMagic[] = "PPMLQUOT";

constexpr const char* kRootSubject = "Simulated SGX Root CA";
constexpr const char* kCaSubject = "Simulated SGX Platform CA";

void put_str(Bytes& out, std::string_view s) {
    put_u32_be(out, static_cast<std::uint32_t>(s.size()));
    append(out, as_bytes(s));
}

void put_magic(Bytes& out, const char* magic) { append(out, as_bytes(std::string_view(magic, 8))); }

template <class Fixed>
Fixed fixed_from_json(const nlohmann::json& j) {
    return Fixed::from_hex(j.get<std::string>());
}

}  // namespace

Bytes Certificate::to_be_signed() const {
    Bytes out;
    put_magic(out, kCertMagic);
    put_str(out, subject);
    append(out, subject_public_key.view());
    put_str(out, issuer);
    put_u64_be(out, static_cast<std::uint64_t>(not_before));
    put_u64_be(out, static_cast<std::uint64_t>(not_after));
    out.push_back(tcb_level ? 1 : 0);
    put_u32_be(out, tcb_level.value_or(0));
    out.push_back(platform_id ? 1 : 0);
    append(out, platform_id.value_or(PlatformId{}).view());
    return out;
}

Bytes Crl::to_be_signed() const {
    Bytes out;
    put_magic(out, kCrlMagic);
    put_str(out, issuer);
    put_u64_be(out, sequence);
    put_u32_be(out, static_cast<std::uint32_t>(revoked.size()));
    for (const auto& id : revoked) append(out, id.view());
    return out;
}

Bytes Quote::signed_bytes() const {
    Bytes out;
    put_magic(out, kQuoteMagic);
    append(out, mr_enclave.view());
    append(out, mr_signer.view());
    put_u32_be(out, isv_svn);
    append(out, report_data.view());
    append(out, platform_id.view());
    put_u32_be(out, tcb_level);
    return out;
}

Bytes Quote::encode() const {
    Bytes out = signed_bytes();
    append(out, signature.view());
    return out;
}

Quote Quote::decode(ByteView in) {
    if (in.size() != kEncodedSize) throw std::invalid_argument("quote has wrong length");
    if (ppml::to_string(in.first(8)) != std::string_view(kQuoteMagic, 8)) {
        throw std::invalid_argument("bad quote magic");
    }
    Quote q;
    std::size_t at = 8;
    auto take = [&](std::size_t n) {
        auto s = in.subspan(at, n);
        at += n;
        return s;
    };
    q.mr_enclave = Digest32::from_span(take(32));
    q.mr_signer = Digest32::from_span(take(32));
    q.isv_svn = get_u32_be(take(4));
    q.report_data = ReportData::from_span(take(64));
    q.platform_id = PlatformId::from_span(take(16));
    q.tcb_level = get_u32_be(take(4));
    q.signature = Signature::from_span(take(64));
    return q;
}

std::string_view to_string(FailureReason reason) {
    switch (reason) {
        case FailureReason::bad_chain: return "bad_chain";
        case FailureReason::expired: return "expired";
        case FailureReason::revoked: return "revoked";
        case FailureReason::bad_quote_sig: return "bad_quote_sig";
        case FailureReason::mr_enclave_mismatch: return "mr_enclave_mismatch";
        case FailureReason::mr_signer_mismatch: return "mr_signer_mismatch";
        case FailureReason::svn_too_low: return "svn_too_low";
        case FailureReason::tcb_too_low: return "tcb_too_low";
    }
    return "unknown";
}

std::optional<FailureReason> parse_failure_reason(std::string_view name) {
    for (auto r : kAllFailureReasons) {
        if (to_string(r) == name) return r;
    }
    return std::nullopt;
}

bool verify_chain(const CertChain& chain, const PublicKey& accepted_root) {
    const auto& root = chain.root;
    const auto& ca = chain.platform_ca;
    const auto& leaf = chain.attestation_key;
    if (root.subject_public_key != accepted_root) return false;
    if (root.issuer != root.subject || ca.issuer != root.subject || leaf.issuer != ca.subject) return false;
    if (!leaf.platform_id || !leaf.tcb_level) return false;
    return crypto::verify(root.subject_public_key, root.to_be_signed(), root.signature) &&
           crypto::verify(root.subject_public_key, ca.to_be_signed(), ca.signature) &&
           crypto::verify(ca.subject_public_key, leaf.to_be_signed(), leaf.signature);
}

Quote quote_generate(const PlatformIdentity& platform, const Digest32& mr_enclave, const Digest32& mr_signer,
                     std::uint32_t isv_svn, ByteView report_data) {
    if (report_data.size() != ReportData::size()) {
        throw std::invalid_argument("report_data must be exactly 64 bytes");
    }
    Quote q;
    q.mr_enclave = mr_enclave;
    q.mr_signer = mr_signer;
    q.isv_svn = isv_svn;
    q.report_data = ReportData::from_span(report_data);
    q.platform_id = platform.platform_id;
    q.tcb_level = platform.tcb_level;
    q.signature = crypto::sign(platform.attestation_key.seed, q.signed_bytes());
    return q;
}

std::optional<FailureReason> check_identity(const Quote& quote, const VerificationPolicy& policy) {
    if (policy.expected_mr_enclave && quote.mr_enclave != *policy.expected_mr_enclave) {
        return FailureReason::mr_enclave_mismatch;
    }
    if (policy.expected_mr_signer && quote.mr_signer != *policy.expected_mr_signer) {
        return FailureReason::mr_signer_mismatch;
    }
    if (quote.isv_svn < policy.min_isv_svn) return FailureReason::svn_too_low;
    if (quote.tcb_level < policy.min_tcb_level) return FailureReason::tcb_too_low;
    return std::nullopt;
}

VerificationResult quote_verify(const Quote& quote, const CertChain& chain, const Crl& crl,
                                const VerificationPolicy& policy, UnixTime now) {
    using R = VerificationResult;
    const auto& leaf = chain.attestation_key;

    if (!verify_chain(chain, policy.accepted_root)) return R::reject(FailureReason::bad_chain, quote);
    if (crl.issuer != chain.platform_ca.subject ||
        !crypto::verify(chain.platform_ca.subject_public_key, crl.to_be_signed(), crl.signature)) {
        return R::reject(FailureReason::bad_chain, quote);
    }
    if (!chain.root.valid_at(now) || !chain.platform_ca.valid_at(now) || !leaf.valid_at(now)) {
        return R::reject(FailureReason::expired, quote);
    }
    if (crl.contains(*leaf.platform_id)) return R::reject(FailureReason::revoked, quote);
    if (quote.platform_id != *leaf.platform_id ||
        !crypto::verify(leaf.subject_public_key, quote.signed_bytes(), quote.signature)) {
        return R::reject(FailureReason::bad_quote_sig, quote);
    }
    if (auto failure = check_identity(quote, policy)) return R::reject(*failure, quote);
    // The PCS-certified level bounds whatever the platform claims in its quote.
    if (*leaf.tcb_level < policy.min_tcb_level) return R::reject(FailureReason::tcb_too_low, quote);
    return R::accept(quote);
}

Certificate issue_certificate(const crypto::SigningSeed& issuer_key, std::string issuer, std::string subject,
                              const PublicKey& subject_key, UnixTime not_before, UnixTime not_after,
                              std::optional<std::uint32_t> tcb_level, std::optional<PlatformId> platform_id) {
    Certificate c;
    c.subject = std::move(subject);
    c.subject_public_key = subject_key;
    c.issuer = std::move(issuer);
    c.not_before = not_before;
    c.not_after = not_after;
    c.tcb_level = tcb_level;
    c.platform_id = platform_id;
    c.signature = crypto::sign(issuer_key, c.to_be_signed());
    return c;
}

Crl issue_crl(const crypto::SigningSeed& issuer_key, std::string issuer, std::uint64_t sequence,
              std::set<PlatformId> revoked) {
    Crl crl;
    crl.issuer = std::move(issuer);
    crl.sequence = sequence;
    crl.revoked = std::move(revoked);
    crl.signature = crypto::sign(issuer_key, crl.to_be_signed());
    return crl;
}

PcsDatabase::PcsDatabase(UnixTime now, UnixTime cert_lifetime) : cert_lifetime_(cert_lifetime) {
    root_key_ = crypto::signing_generate();
    ca_key_ = crypto::signing_generate();
    root_cert_ = issue_certificate(root_key_.seed, kRootSubject, kRootSubject, root_key_.public_key, now,
                                   now + cert_lifetime_);
    ca_cert_ = issue_certificate(root_key_.seed, kRootSubject, kCaSubject, ca_key_.public_key, now,
                                 now + cert_lifetime_);
    crl_ = issue_crl(ca_key_.seed, kCaSubject, 0, {});
}

Registration PcsDatabase::register_platform(std::uint32_t tcb_level, UnixTime now) {
    std::lock_guard lock(mu_);
    Registration reg;
    do {
        reg.identity.platform_id = crypto::random_fixed<PlatformId>();
    } while (platforms_.count(reg.identity.platform_id));
    reg.identity.attestation_key = crypto::signing_generate();
    reg.identity.tcb_level = tcb_level;
    reg.chain.root = root_cert_;
    reg.chain.platform_ca = ca_cert_;
    reg.chain.attestation_key =
        issue_certificate(ca_key_.seed, kCaSubject, "Platform Attestation Key " + reg.identity.platform_id.hex(),
                          reg.identity.attestation_key.public_key, now, now + cert_lifetime_, tcb_level,
                          reg.identity.platform_id);
    platforms_.emplace(reg.identity.platform_id, reg.chain);
    return reg;
}

std::pair<CertChain, Crl> PcsDatabase::fetch(const PlatformId& id) const {
    std::lock_guard lock(mu_);
    auto it = platforms_.find(id);
    if (it == platforms_.end()) throw UnknownPlatform(id);
    return {it->second, crl_};
}

Crl PcsDatabase::revoke(const PlatformId& id) {
    std::lock_guard lock(mu_);
    if (!platforms_.count(id)) throw UnknownPlatform(id);
    auto revoked = crl_.revoked;
    revoked.insert(id);
    crl_ = issue_crl(ca_key_.seed, kCaSubject, crl_.sequence + 1, std::move(revoked));
    return crl_;
}

PublicKey PcsDatabase::root_public_key() const {
    std::lock_guard lock(mu_);
    return root_key_.public_key;
}

Crl PcsDatabase::current_crl() const {
    std::lock_guard lock(mu_);
    return crl_;
}

std::size_t PcsDatabase::platform_count() const {
    std::lock_guard lock(mu_);
    return platforms_.size();
}

nlohmann::json PcsDatabase::to_json() const {
    std::lock_guard lock(mu_);
    nlohmann::json platforms = nlohmann::json::object();
    for (const auto& [id, chain] : platforms_) platforms[id.hex()] = chain.attestation_key;
    return {
        {"format", "ppml-pcs-db-v1"},
        {"cert_lifetime", cert_lifetime_},
        {"root_seed", root_key_.seed.hex()},
        {"ca_seed", ca_key_.seed.hex()},
        {"root_cert", root_cert_},
        {"ca_cert", ca_cert_},
        {"platforms", platforms},
        {"crl", crl_},
    };
}

std::unique_ptr<PcsDatabase> PcsDatabase::from_json(const nlohmann::json& j) {
    if (j.at("format") != "ppml-pcs-db-v1") throw std::invalid_argument("not a PCS database");
    std::unique_ptr<PcsDatabase> db(new PcsDatabase());
    db->cert_lifetime_ = j.at("cert_lifetime").get<UnixTime>();
    db->root_key_ = crypto::signing_from_seed(fixed_from_json<crypto::SigningSeed>(j.at("root_seed")));
    db->ca_key_ = crypto::signing_from_seed(fixed_from_json<crypto::SigningSeed>(j.at("ca_seed")));
    db->root_cert_ = j.at("root_cert").get<Certificate>();
    db->ca_cert_ = j.at("ca_cert").get<Certificate>();
    for (const auto& [hex, leaf] : j.at("platforms").items()) {
        CertChain chain{db->root_cert_, db->ca_cert_, leaf.get<Certificate>()};
        db->platforms_.emplace(PlatformId::from_hex(hex), chain);
    }
    db->crl_ = j.at("crl").get<Crl>();
    return db;
}

void PcsDatabase::save(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << to_json().dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::unique_ptr<PcsDatabase> PcsDatabase::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return from_json(nlohmann::json::parse(in));
}

void to_json(nlohmann::json& j, const Certificate& c) {
    j = {{"subject", c.subject},
         {"subject_public_key", c.subject_public_key.hex()},
         {"issuer", c.issuer},
         {"not_before", c.not_before},
         {"not_after", c.not_after},
         {"signature", c.signature.hex()}};
    if (c.tcb_level) j["tcb_level"] = *c.tcb_level;
    if (c.platform_id) j["platform_id"] = c.platform_id->hex();
}

void from_json(const nlohmann::json& j, Certificate& c) {
    c.subject = j.at("subject").get<std::string>();
    c.subject_public_key = fixed_from_json<PublicKey>(j.at("subject_public_key"));
    c.issuer = j.at("issuer").get<std::string>();
    c.not_before = j.at("not_before").get<UnixTime>();
    c.not_after = j.at("not_after").get<UnixTime>();
    c.signature = fixed_from_json<Signature>(j.at("signature"));
    c.tcb_level = j.contains("tcb_level") ? std::optional(j.at("tcb_level").get<std::uint32_t>()) : std::nullopt;
    c.platform_id = j.contains("platform_id") ? std::optional(fixed_from_json<PlatformId>(j.at("platform_id")))
                                              : std::nullopt;
}

void to_json(nlohmann::json& j, const CertChain& c) {
    j = {{"root", c.root}, {"platform_ca", c.platform_ca}, {"attestation_key", c.attestation_key}};
}

void from_json(const nlohmann::json& j, CertChain& c) {
    c.root = j.at("root").get<Certificate>();
    c.platform_ca = j.at("platform_ca").get<Certificate>();
    c.attestation_key = j.at("attestation_key").get<Certificate>();
}

void to_json(nlohmann::json& j, const Crl& c) {
    nlohmann::json revoked = nlohmann::json::array();
    for (const auto& id : c.revoked) revoked.push_back(id.hex());
    j = {{"issuer", c.issuer}, {"sequence", c.sequence}, {"revoked", revoked}, {"signature", c.signature.hex()}};
}

void from_json(const nlohmann::json& j, Crl& c) {
    c.issuer = j.at("issuer").get<std::string>();
    c.sequence = j.at("sequence").get<std::uint64_t>();
    c.revoked.clear();
    for (const auto& id : j.at("revoked")) c.revoked.insert(fixed_from_json<PlatformId>(id));
    c.signature = fixed_from_json<Signature>(j.at("signature"));
}

void to_json(nlohmann::json& j, const Quote& q) { j = to_hex(q.encode()); }

void from_json(const nlohmann::json& j, Quote& q) { q = Quote::decode(from_hex(j.get<std::string>())); }

void to_json(nlohmann::json& j, const PlatformIdentity& p) {
    j = {{"platform_id", p.platform_id.hex()},
         {"attestation_seed", p.attestation_key.seed.hex()},
         {"tcb_level", p.tcb_level}};
}

void from_json(const nlohmann::json& j, PlatformIdentity& p) {
    p.platform_id = fixed_from_json<PlatformId>(j.at("platform_id"));
    p.attestation_key = crypto::signing_from_seed(fixed_from_json<crypto::SigningSeed>(j.at("attestation_seed")));
    p.tcb_level = j.at("tcb_level").get<std::uint32_t>();
}

void to_json(nlohmann::json& j, const VerificationPolicy& p) {
    j = {{"min_isv_svn", p.min_isv_svn}, {"min_tcb_level", p.min_tcb_level}, {"accepted_root", p.accepted_root.hex()}};
    j["expected_mr_enclave"] = p.expected_mr_enclave ? nlohmann::json(p.expected_mr_enclave->hex()) : nullptr;
    j["expected_mr_signer"] = p.expected_mr_signer ? nlohmann::json(p.expected_mr_signer->hex()) : nullptr;
}

void from_json(const nlohmann::json& j, VerificationPolicy& p) {
    auto digest = [&](const char* key) -> std::optional<Digest32> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return fixed_from_json<Digest32>(j.at(key));
    };
    p.expected_mr_enclave = digest("expected_mr_enclave");
    p.expected_mr_signer = digest("expected_mr_signer");
    p.min_isv_svn = j.value("min_isv_svn", 0u);
    p.min_tcb_level = j.value("min_tcb_level", 0u);
    p.accepted_root = j.contains("accepted_root") ? fixed_from_json<PublicKey>(j.at("accepted_root")) : PublicKey{};
}

}  // namespace ppml::attest
