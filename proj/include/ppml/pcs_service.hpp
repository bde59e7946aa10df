#pragma once

// Mock PCS over the wire framing. Requests and replies are plaintext JSON;
// everything served is public except the Register reply, which hands the
// simulated platform its attestation key.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>

#include "ppml/attestation.hpp"
#include "ppml/wire.hpp"

namespace ppml::attest {

class PcsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PcsService {
public:
    /// Writes the database to `persist_to` after every mutation when set.
    PcsService(PcsDatabase& db, std::function<UnixTime()> clock,
               std::optional<std::filesystem::path> persist_to = std::nullopt);

    /// Serves requests on one connection until the peer closes.
    void handle(wire::Connection& conn);

private:
    wire::Frame dispatch(const wire::Frame& req);

    PcsDatabase& db_;
    std::function<UnixTime()> clock_;
    std::optional<std::filesystem::path> persist_to_;
    std::mutex persist_mu_;
};

/// One TCP connection per call.
class PcsClient {
public:
    explicit PcsClient(wire::Endpoint endpoint) : endpoint_(std::move(endpoint)) {}

    /// Throws UnknownPlatform, PcsError, or wire::WireError.
    std::pair<CertChain, Crl> fetch(const PlatformId& id) const;
    Registration register_platform(std::uint32_t tcb_level) const;
    Crl revoke(const PlatformId& id) const;
    PublicKey root_public_key() const;
    Crl current_crl() const;

private:
    nlohmann::json call(std::uint8_t type, const nlohmann::json& body) const;

    wire::Endpoint endpoint_;
};

UnixTime system_now();

}  // namespace ppml::attest
