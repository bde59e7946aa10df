#include "ppml/provisioning.hpp"

#include <fstream>

#include "ppml/protected_fs.hpp"

namespace ppml::prov {

namespace {

using json = nlohmann::json;

crypto::Aes256GcmKey vault_key(std::string_view passphrase, const pfs::FileUuid& uuid) {
    return crypto::kdf(crypto::hash(passphrase).view(), "vault", uuid.view());
}

json parse_object(ByteView payload) {
    auto j = json::parse(ppml::to_string(payload), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("malformed provisioning message");
    return j;
}

wire::Frame response(const json& body) { return {wire::msg::kProvisionResp, to_bytes(body.dump())}; }

}  // namespace

bool valid_secret_name(std::string_view name) {
    if (name.empty() || name.size() > kMaxNameSize) return false;
    for (char c : name) {
        if (static_cast<unsigned char>(c) < 0x21 || static_cast<unsigned char>(c) > 0x7e) return false;
    }
    return true;
}

void KeyVault::put(const std::string& name, SecretEntry entry) {
    if (!valid_secret_name(name)) throw std::invalid_argument("secret name must be 1-128 printable characters");
    if (entry.secret.empty() || entry.secret.size() > kMaxSecretSize) {
        throw std::invalid_argument("secret must be 1-4096 bytes");
    }
    if (!entry.policy.constrains_identity()) {
        throw std::invalid_argument("secret policy must pin mr_enclave or mr_signer");
    }
    entries_[name] = std::move(entry);
}

const SecretEntry* KeyVault::find(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

bool KeyVault::erase(const std::string& name) { return entries_.erase(name) != 0; }

std::vector<std::string> KeyVault::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

json KeyVault::to_json() const {
    json secrets = json::object();
    for (const auto& [name, e] : entries_) {
        json policy = e.policy;
        policy.erase("accepted_root");
        secrets[name] = {{"secret", to_hex(e.secret)}, {"policy", policy}};
    }
    return {{"format", "ppml-keyvault-v1"}, {"secrets", secrets}};
}

KeyVault KeyVault::from_json(const json& j) {
    if (j.at("format") != "ppml-keyvault-v1") throw std::invalid_argument("not a key vault");
    KeyVault v;
    for (const auto& [name, e] : j.at("secrets").items()) {
        v.put(name, {from_hex(e.at("secret").get<std::string>()), e.at("policy").get<attest::VerificationPolicy>()});
    }
    return v;
}

void vault_save(const KeyVault& vault, const std::filesystem::path& path, std::string_view passphrase) {
    auto tmp = path;
    tmp += ".tmp";
    auto uuid = crypto::random_fixed<pfs::FileUuid>();
    auto file = pfs::ProtectedFile::create(tmp, kVaultLabel, vault_key(passphrase, uuid), {}, uuid);
    file.write(0, to_bytes(vault.to_json().dump()));
    file.close();
    std::filesystem::rename(tmp, path);
}

KeyVault vault_load(const std::filesystem::path& path, std::string_view passphrase) {
    auto uuid = pfs::peek_uuid(path);
    auto body = pfs::read_file(path, kVaultLabel, vault_key(passphrase, uuid));
    return KeyVault::from_json(json::parse(ppml::to_string(body)));
}

std::string_view to_string(DenyReason reason) {
    return reason == DenyReason::policy_mismatch ? "policy_mismatch" : "unknown_secret";
}

Denied::Denied(DenyReason reason)
    : std::runtime_error("key release denied: " + std::string(to_string(reason))), reason_(reason) {}

void to_json(json& j, const AuditRecord& r) {
    j = {{"timestamp", r.timestamp},
         {"platform_id", r.platform_id.hex()},
         {"mr_enclave", r.mr_enclave.hex()},
         {"secret_name", r.secret_name},
         {"outcome", r.outcome}};
}

KeyServer::KeyServer(KeyVault vault, ServerConfig config) : vault_(std::move(vault)), config_(std::move(config)) {}

void KeyServer::handle(wire::Connection& conn) {
    conn.set_recv_timeout(config_.idle_timeout);
    auto session = ra::verifier_handshake(conn, config_.session_policy, config_.crl_source(), config_.clock(),
                                          config_.verifier_key);
    auto& chan = session.channel;
    const auto& quote = session.result.quote;
    for (;;) {
        wire::Frame req;
        try {
            req = chan.recv();
        } catch (const ra::ChannelError& e) {
            if (e.kind() == ra::ChannelError::Kind::closed) return;  // includes idle timeout
            throw;
        }
        chan.send(wire::msg::kProvisionResp, answer(req, quote).payload);
    }
}

wire::Frame KeyServer::answer(const wire::Frame& request, const attest::Quote& quote) {
    AuditRecord rec{config_.clock(), quote.platform_id, quote.mr_enclave, "", ""};
    std::string name;
    try {
        if (request.type != wire::msg::kProvisionReq) throw std::invalid_argument("unexpected record type");
        name = parse_object(request.payload).at("secret_name").get<std::string>();
    } catch (const std::exception&) {
        rec.outcome = "malformed";
        record(rec);
        throw std::invalid_argument("malformed provisioning request");
    }
    rec.secret_name = name;

    const SecretEntry* entry = valid_secret_name(name) ? vault_.find(name) : nullptr;
    std::optional<DenyReason> deny;
    if (!entry) {
        deny = DenyReason::unknown_secret;
    } else if (attest::check_identity(quote, entry->policy)) {
        deny = DenyReason::policy_mismatch;
    }
    rec.outcome = deny ? std::string(to_string(*deny)) : "granted";
    record(rec);
    if (deny) return response({{"outcome", "denied"}, {"reason", to_string(*deny)}});
    return response({{"outcome", "granted"}, {"secret", to_hex(entry->secret)}});
}

void KeyServer::record(AuditRecord r) {
    std::lock_guard lock(audit_mu_);
    if (config_.audit_log) {
        std::ofstream out(*config_.audit_log, std::ios::app);
        out << json(r).dump() << '\n';
    }
    audit_.push_back(std::move(r));
}

std::vector<AuditRecord> KeyServer::audit() const {
    std::lock_guard lock(audit_mu_);
    return audit_;
}

Bytes request_secret(ra::SecureChannel& chan, const std::string& secret_name) {
    chan.send(wire::msg::kProvisionReq, to_bytes(json{{"secret_name", secret_name}}.dump()));
    auto reply = chan.recv();
    if (reply.type != wire::msg::kProvisionResp) throw std::runtime_error("unexpected provisioning reply");
    auto j = parse_object(reply.payload);
    if (j.value("outcome", "") == "granted") return from_hex(j.at("secret").get<std::string>());
    auto reason = j.value("reason", "");
    throw Denied(reason == "policy_mismatch" ? DenyReason::policy_mismatch : DenyReason::unknown_secret);
}

Bytes client_request_key(const wire::Endpoint& server, const std::string& secret_name,
                         const ra::QuoteProvider& quote_provider, const crypto::PublicKey& verifier_pin) {
    wire::ConnectionPtr conn;
    try {
        conn = wire::tcp_connect(server);
    } catch (const wire::WireError& e) {
        throw ra::HandshakeError(ra::HandshakeError::Kind::io, e.what());
    }
    conn->set_recv_timeout(kIdleTimeout);
    auto chan = ra::attester_handshake(*conn, quote_provider, verifier_pin);
    auto secret = request_secret(chan, secret_name);
    chan.close();
    return secret;
}

}  // namespace ppml::prov
