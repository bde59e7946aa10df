#include "ppml/pcs_service.hpp"

#include <chrono>

namespace ppml::attest {

namespace {

using json = nlohmann::json;

wire::Frame json_frame(std::uint8_t type, const json& body) {
    auto text = body.dump();
    return {type, to_bytes(text)};
}

json parse_body(const wire::Frame& f) {
    auto j = json::parse(ppml::to_string(f.payload), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw PcsError("malformed PCS message");
    return j;
}

}  // namespace

UnixTime system_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

PcsService::PcsService(PcsDatabase& db, std::function<UnixTime()> clock,
                       std::optional<std::filesystem::path> persist_to)
    : db_(db), clock_(std::move(clock)), persist_to_(std::move(persist_to)) {}

void PcsService::handle(wire::Connection& conn) {
    for (;;) {
        wire::Frame req;
        try {
            req = conn.recv();
        } catch (const wire::WireError& e) {
            if (e.kind() == wire::WireError::Kind::closed) return;
            throw;
        }
        conn.send(dispatch(req));
    }
}

wire::Frame PcsService::dispatch(const wire::Frame& req) {
    namespace m = wire::msg;
    auto error = [](const std::string& code, const std::string& message) {
        return json_frame(m::kPcsError, {{"error", code}, {"message", message}});
    };
    auto persist = [&] {
        if (!persist_to_) return;
        std::lock_guard lock(persist_mu_);
        db_.save(*persist_to_);
    };
    try {
        auto body = parse_body(req);
        switch (req.type) {
            case m::kPcsFetch: {
                auto [chain, crl] = db_.fetch(PlatformId::from_hex(body.at("platform_id").get<std::string>()));
                return json_frame(m::kPcsOk, {{"chain", chain}, {"crl", crl}});
            }
            case m::kPcsRegister: {
                auto reg = db_.register_platform(body.value("tcb_level", 0u), clock_());
                persist();
                return json_frame(m::kPcsOk, {{"identity", reg.identity}, {"chain", reg.chain}});
            }
            case m::kPcsRevoke: {
                auto crl = db_.revoke(PlatformId::from_hex(body.at("platform_id").get<std::string>()));
                persist();
                return json_frame(m::kPcsOk, {{"crl", crl}});
            }
            case m::kPcsGetRoot:
                return json_frame(m::kPcsOk, {{"root_public_key", db_.root_public_key().hex()}});
            case m::kPcsGetCrl:
                return json_frame(m::kPcsOk, {{"crl", db_.current_crl()}});
            default:
                return error("bad_request", "unknown message type " + std::to_string(req.type));
        }
    } catch (const UnknownPlatform& e) {
        return error("unknown_platform", e.what());
    } catch (const std::exception& e) {
        return error("bad_request", e.what());
    }
}

json PcsClient::call(std::uint8_t type, const json& body) const {
    auto conn = wire::tcp_connect(endpoint_);
    conn->set_recv_timeout(std::chrono::seconds(30));
    conn->send(json_frame(type, body));
    auto reply = conn->recv();
    conn->close();
    auto j = parse_body(reply);
    if (reply.type == wire::msg::kPcsError) {
        auto code = j.value("error", "");
        auto message = j.value("message", "PCS error");
        if (code == "unknown_platform") {
            throw UnknownPlatform(PlatformId::from_hex(body.at("platform_id").get<std::string>()));
        }
        throw PcsError(message);
    }
    if (reply.type != wire::msg::kPcsOk) throw PcsError("unexpected PCS reply type");
    return j;
}

std::pair<CertChain, Crl> PcsClient::fetch(const PlatformId& id) const {
    auto j = call(wire::msg::kPcsFetch, {{"platform_id", id.hex()}});
    return {j.at("chain").get<CertChain>(), j.at("crl").get<Crl>()};
}

Registration PcsClient::register_platform(std::uint32_t tcb_level) const {
    auto j = call(wire::msg::kPcsRegister, {{"tcb_level", tcb_level}});
    return {j.at("identity").get<PlatformIdentity>(), j.at("chain").get<CertChain>()};
}

Crl PcsClient::revoke(const PlatformId& id) const {
    return call(wire::msg::kPcsRevoke, {{"platform_id", id.hex()}}).at("crl").get<Crl>();
}

PublicKey PcsClient::root_public_key() const {
    return PublicKey::from_hex(call(wire::msg::kPcsGetRoot, json::object()).at("root_public_key").get<std::string>());
}

Crl PcsClient::current_crl() const { return call(wire::msg::kPcsGetCrl, json::object()).at("crl").get<Crl>(); }

}  // namespace ppml::attest
