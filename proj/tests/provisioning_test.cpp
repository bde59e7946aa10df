#include "ppml/provisioning.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <thread>

#include "ppml/protected_fs.hpp"
#include "test_util.hpp"

namespace ppml::prov {
namespace {

using namespace std::chrono_literals;
using attest::FailureReason;
using HK = ra::HandshakeError::Kind;

constexpr attest::UnixTime kNow = 1'700'000'000;

crypto::Digest32 digest(std::string_view s) { return crypto::hash(s); }

attest::VerificationPolicy pin_enclave(const crypto::Digest32& mre) {
    attest::VerificationPolicy p;
    p.expected_mr_enclave = mre;
    return p;
}

struct World {
    attest::PcsDatabase pcs{kNow};
    attest::Registration platform = pcs.register_platform(2, kNow);
    crypto::Digest32 mre = digest("model enclave");
    crypto::Digest32 mrs = digest("vendor");
    crypto::SigningKeyPair verifier_key = crypto::signing_generate();
    Bytes master = crypto::random_key().to_vector();

    KeyVault vault() const {
        KeyVault v;
        v.put("pfs-master", {master, pin_enclave(mre)});
        v.put("other-app", {Bytes(16, 0x42), pin_enclave(digest("someone else"))});
        return v;
    }
    ServerConfig config() {
        ServerConfig c;
        c.session_policy.expected_mr_signer = mrs;
        c.session_policy.min_tcb_level = 1;
        c.session_policy.accepted_root = pcs.root_public_key();
        c.verifier_key = verifier_key;
        c.crl_source = [this] { return pcs.current_crl(); };
        c.clock = [] { return kNow; };
        return c;
    }
    ra::QuoteProvider enclave(const crypto::Digest32& mr_enclave) const {
        auto id = platform.identity;
        auto s = mrs;
        return {[id, mr_enclave, s](ByteView rd) { return attest::quote_generate(id, mr_enclave, s, 1, rd); },
                platform.chain};
    }
};

struct LiveServer {
    KeyServer server;
    wire::ConnectionServer net;
    LiveServer(KeyVault v, ServerConfig c)
        : server(std::move(v), std::move(c)), net({"127.0.0.1", 0}, [this](wire::Connection& conn) {
              server.handle(conn);
          }) {}
};

TEST(Vault, SaveLoadRoundtrip) {
    testing::TempDir dir;
    World w;
    auto v = w.vault();
    vault_save(v, dir / "vault.pfs", "correct horse");
    auto back = vault_load(dir / "vault.pfs", "correct horse");
    EXPECT_EQ(back.names(), v.names());
    EXPECT_EQ(back.find("pfs-master")->secret, w.master);
    EXPECT_EQ(back.find("pfs-master")->policy.expected_mr_enclave, w.mre);
    EXPECT_FALSE(back.find("pfs-master")->policy.expected_mr_signer);
    EXPECT_EQ(back.to_json(), v.to_json());
}

TEST(Vault, WrongPassphraseIsKeyError) {
    testing::TempDir dir;
    World w;
    vault_save(w.vault(), dir / "vault.pfs", "right");
    EXPECT_THROW(vault_load(dir / "vault.pfs", "wrong"), pfs::KeyError);
}

TEST(Vault, FileNeverContainsSecretBytes) {
    testing::TempDir dir;
    World w;
    vault_save(w.vault(), dir / "vault.pfs", "pw");
    auto raw = testing::slurp(dir / "vault.pfs");
    auto hex = to_hex(w.master);
    EXPECT_EQ(std::search(raw.begin(), raw.end(), w.master.begin(), w.master.end()), raw.end());
    EXPECT_EQ(std::search(raw.begin(), raw.end(), hex.begin(), hex.end()), raw.end());
}

TEST(Vault, AnyFlippedBitIsIntegrityError) {
    testing::TempDir dir;
    World w;
    vault_save(w.vault(), dir / "pristine", "pw");
    auto size = std::filesystem::file_size(dir / "pristine");
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        std::filesystem::copy_file(dir / "pristine", dir / "v", std::filesystem::copy_options::overwrite_existing);
        auto off = i < 4 ? static_cast<std::uint64_t>(i * 9) : rng() % size;
        testing::flip_bit(dir / "v", off, static_cast<int>(rng() % 8));
        EXPECT_THROW(vault_load(dir / "v", "pw"), pfs::IntegrityError) << "offset " << off;
    }
}

TEST(Vault, EntriesAreValidated) {
    KeyVault v;
    auto ok = pin_enclave(digest("x"));
    EXPECT_THROW(v.put("", {Bytes(1), ok}), std::invalid_argument);
    EXPECT_THROW(v.put(std::string(129, 'a'), {Bytes(1), ok}), std::invalid_argument);
    EXPECT_THROW(v.put("has space", {Bytes(1), ok}), std::invalid_argument);
    EXPECT_THROW(v.put("k", {Bytes(), ok}), std::invalid_argument);
    EXPECT_THROW(v.put("k", {Bytes(4097), ok}), std::invalid_argument);
    EXPECT_THROW(v.put("k", {Bytes(1), attest::VerificationPolicy{}}), std::invalid_argument);
    EXPECT_NO_THROW(v.put(std::string(128, 'a'), {Bytes(4096), ok}));
    EXPECT_EQ(v.size(), 1u);
}

TEST(Provision, GrantedBytesEqualVault) {
    World w;
    LiveServer s(w.vault(), w.config());
    auto got = client_request_key(s.net.endpoint(), "pfs-master", w.enclave(w.mre), w.verifier_key.public_key);
    EXPECT_EQ(got, w.master);
    s.net.stop();
    auto audit = s.server.audit();
    ASSERT_EQ(audit.size(), 1u);
    EXPECT_EQ(audit[0].outcome, "granted");
    EXPECT_EQ(audit[0].secret_name, "pfs-master");
    EXPECT_EQ(audit[0].mr_enclave, w.mre);
    EXPECT_EQ(audit[0].platform_id, w.platform.identity.platform_id);
}

TEST(Provision, PerSecretPolicyStricterThanSession) {
    World w;
    LiveServer s(w.vault(), w.config());
    auto flipped = w.mre;
    flipped[31] ^= 1;
    // Same vendor, so the session policy admits it; the secret's policy does not.
    try {
        client_request_key(s.net.endpoint(), "pfs-master", w.enclave(flipped), w.verifier_key.public_key);
        FAIL();
    } catch (const Denied& d) {
        EXPECT_EQ(d.reason(), DenyReason::policy_mismatch);
    }
    try {
        client_request_key(s.net.endpoint(), "no-such-key", w.enclave(w.mre), w.verifier_key.public_key);
        FAIL();
    } catch (const Denied& d) {
        EXPECT_EQ(d.reason(), DenyReason::unknown_secret);
    }
}

TEST(Provision, SessionPolicyGatesHandshake) {
    World w;
    auto cfg = w.config();
    cfg.session_policy.expected_mr_enclave = w.mre;
    LiveServer s(w.vault(), cfg);
    auto flipped = w.mre;
    flipped[0] ^= 0x80;
    try {
        client_request_key(s.net.endpoint(), "pfs-master", w.enclave(flipped), w.verifier_key.public_key);
        FAIL();
    } catch (const ra::HandshakeError& e) {
        EXPECT_EQ(e.kind(), HK::attestation_failed);
        EXPECT_EQ(e.reason(), FailureReason::mr_enclave_mismatch);
    }
    s.net.stop();
    EXPECT_TRUE(s.server.audit().empty());
}

TEST(Provision, WrongPinSendsNoRequest) {
    World w;
    auto [client_end, server_end] = wire::memory_pair();
    wire::TapConnection tap(std::move(client_end));
    KeyServer server(w.vault(), w.config());
    std::thread t([&] {
        try {
            server.handle(*server_end);
        } catch (const ra::HandshakeError&) {
        }
    });
    auto wrong_pin = crypto::signing_generate().public_key;
    try {
        auto chan = ra::attester_handshake(tap, w.enclave(w.mre), wrong_pin);
        request_secret(chan, "pfs-master");
        FAIL();
    } catch (const ra::HandshakeError& e) {
        EXPECT_EQ(e.kind(), HK::peer_auth_failed);
    }
    tap.close();
    t.join();
    for (const auto& e : tap.events()) EXPECT_NE(e.frame.type, wire::msg::kProvisionReq);
    EXPECT_TRUE(server.audit().empty());
}

TEST(Provision, RevokedPlatformFailsAttestation) {
    World w;
    LiveServer s(w.vault(), w.config());
    w.pcs.revoke(w.platform.identity.platform_id);
    try {
        client_request_key(s.net.endpoint(), "pfs-master", w.enclave(w.mre), w.verifier_key.public_key);
        FAIL();
    } catch (const ra::HandshakeError& e) {
        EXPECT_EQ(e.kind(), HK::attestation_failed);
        EXPECT_EQ(e.reason(), FailureReason::revoked);
    }
}

// {measurement match, mismatch} x {platform valid, revoked}
TEST(Provision, ReleaseMatrix) {
    for (bool match : {true, false}) {
        for (bool revoked : {false, true}) {
            World w;
            LiveServer s(w.vault(), w.config());
            if (revoked) w.pcs.revoke(w.platform.identity.platform_id);
            auto mre = match ? w.mre : digest("tampered manifest");
            std::optional<Bytes> got;
            try {
                got = client_request_key(s.net.endpoint(), "pfs-master", w.enclave(mre), w.verifier_key.public_key);
            } catch (const std::exception&) {
            }
            EXPECT_EQ(got.has_value(), match && !revoked) << "match=" << match << " revoked=" << revoked;
            if (got) EXPECT_EQ(*got, w.master);
        }
    }
}

TEST(Provision, SecretsOnlyAfterBothFinishedAndNeverInClear) {
    World w;
    auto [client_end, server_end] = wire::memory_pair();
    wire::TapConnection tap(std::move(client_end));
    KeyServer server(w.vault(), w.config());
    std::thread t([&] { server.handle(*server_end); });
    auto chan = ra::attester_handshake(tap, w.enclave(w.mre), w.verifier_key.public_key);
    EXPECT_EQ(request_secret(chan, "pfs-master"), w.master);
    tap.close();
    t.join();

    auto events = tap.events();
    int finished_out = -1, finished_in = -1, first_request = -1;
    for (int i = 0; i < static_cast<int>(events.size()); ++i) {
        const auto& e = events[i];
        bool out = e.direction == wire::TapConnection::Direction::out;
        if (e.frame.type == wire::msg::kFinished) (out ? finished_out : finished_in) = i;
        if (e.frame.type == wire::msg::kProvisionReq && first_request < 0) first_request = i;
        auto hex = to_hex(w.master);
        const auto& p = e.frame.payload;
        EXPECT_EQ(std::search(p.begin(), p.end(), w.master.begin(), w.master.end()), p.end());
        EXPECT_EQ(std::search(p.begin(), p.end(), hex.begin(), hex.end()), p.end());
    }
    ASSERT_GE(finished_out, 0);
    ASSERT_GE(finished_in, 0);
    EXPECT_GT(first_request, finished_out);
    EXPECT_GT(first_request, finished_in);
}

TEST(Provision, EveryRequestAuditedOnceWithoutSecrets) {
    testing::TempDir dir;
    World w;
    auto cfg = w.config();
    cfg.audit_log = dir / "audit.jsonl";
    auto [client_end, server_end] = wire::memory_pair();
    KeyServer server(w.vault(), cfg);
    std::thread t([&] { server.handle(*server_end); });
    auto chan = ra::attester_handshake(*client_end, w.enclave(w.mre), w.verifier_key.public_key);
    const std::vector<std::string> names = {"pfs-master", "nope", "other-app", "pfs-master", "bad name"};
    for (const auto& n : names) {
        try {
            request_secret(chan, n);
        } catch (const Denied&) {
        }
    }
    client_end->close();
    t.join();

    auto audit = server.audit();
    ASSERT_EQ(audit.size(), names.size());
    const std::vector<std::string> outcomes = {"granted", "unknown_secret", "policy_mismatch", "granted",
                                               "unknown_secret"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        EXPECT_EQ(audit[i].secret_name, names[i]);
        EXPECT_EQ(audit[i].outcome, outcomes[i]);
    }
    std::ifstream in(dir / "audit.jsonl");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
    EXPECT_EQ(text.find(to_hex(w.master)), std::string::npos);
}

TEST(Provision, IdleSessionIsClosed) {
    World w;
    auto cfg = w.config();
    cfg.idle_timeout = 100ms;
    auto [client_end, server_end] = wire::memory_pair();
    KeyServer server(w.vault(), cfg);
    auto start = std::chrono::steady_clock::now();
    std::thread t([&] { server.handle(*server_end); });
    auto chan = ra::attester_handshake(*client_end, w.enclave(w.mre), w.verifier_key.public_key);
    t.join();  // returns on its own once the session idles out
    EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(Provision, ConcurrentClients) {
    World w;
    LiveServer s(w.vault(), w.config());
    std::vector<std::thread> clients;
    std::atomic<int> granted{0};
    for (int i = 0; i < 8; ++i) {
        clients.emplace_back([&] {
            for (int j = 0; j < 5; ++j) {
                auto got =
                    client_request_key(s.net.endpoint(), "pfs-master", w.enclave(w.mre), w.verifier_key.public_key);
                if (got == w.master) ++granted;
            }
        });
    }
    for (auto& c : clients) c.join();
    EXPECT_EQ(granted.load(), 40);
    s.net.stop();
    EXPECT_EQ(s.server.audit().size(), 40u);
}

}  // namespace
}  // namespace ppml::prov
