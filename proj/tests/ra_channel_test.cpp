#include "ppml/ra_channel.hpp"

#include <gtest/gtest.h>

#include <future>
#include <random>
#include <thread>

#include "test_util.hpp"

namespace ppml::ra {
namespace {

using attest::FailureReason;
using wire::TapConnection;
using HK = HandshakeError::Kind;
using CK = ChannelError::Kind;

constexpr attest::UnixTime kNow = 1'700'000'000;

struct World {
    attest::PcsDatabase pcs{kNow};
    attest::Registration platform = pcs.register_platform(2, kNow);
    crypto::Digest32 mre = crypto::hash(std::string_view("enclave"));
    crypto::Digest32 mrs = crypto::hash(std::string_view("vendor"));
    crypto::SigningKeyPair verifier_key = crypto::signing_generate();

    QuoteProvider provider(std::optional<crypto::Digest32> mr_enclave = std::nullopt) const {
        auto identity = platform.identity;
        auto e = mr_enclave.value_or(mre);
        auto s = mrs;
        return {[identity, e, s](ByteView rd) { return attest::quote_generate(identity, e, s, 1, rd); },
                platform.chain};
    }
    attest::VerificationPolicy policy() const {
        attest::VerificationPolicy p;
        p.expected_mr_enclave = mre;
        p.min_tcb_level = 2;
        p.accepted_root = pcs.root_public_key();
        return p;
    }
};

struct Outcome {
    std::optional<SecureChannel> chan;
    std::optional<attest::VerificationResult> result;
    std::optional<HandshakeError> error;
};

/// Runs both sides concurrently; each side closes its end if it fails so
/// the peer cannot hang.
std::pair<Outcome, Outcome> run_handshake(wire::Connection& a, wire::Connection& v, const QuoteProvider& qp,
                                          const crypto::PublicKey& pin, const attest::VerificationPolicy& policy,
                                          const attest::Crl& crl, const crypto::SigningKeyPair& vkey) {
    Outcome va;
    std::thread verifier([&] {
        try {
            auto s = verifier_handshake(v, policy, crl, kNow, vkey);
            va.chan.emplace(std::move(s.channel));
            va.result = s.result;
        } catch (const HandshakeError& e) {
            va.error = e;
            v.close();
        }
    });
    Outcome at;
    try {
        at.chan.emplace(attester_handshake(a, qp, pin));
    } catch (const HandshakeError& e) {
        at.error = e;
        a.close();
    }
    verifier.join();
    return {std::move(at), std::move(va)};
}

bool verifier_sent_hello(const TapConnection& tap) {
    for (const auto& e : tap.events()) {
        if (e.direction == TapConnection::Direction::out && e.frame.type == wire::msg::kHelloVerifier) return true;
    }
    return false;
}

TEST(Binding, ReportDataLayout) {
    crypto::DhPublicKey pub;
    for (std::size_t i = 0; i < 32; ++i) pub[i] = static_cast<std::uint8_t>(i + 1);
    auto rd = binding_report_data(pub);
    // SHA-256(01..20 || "ratls-bind-v1") computed with Python's hashlib.
    EXPECT_EQ(rd.hex(), std::string(64, '0') + "9b6f6ea59a1388b2a7caae325ef2e1784a27ef9114ada95f0864f0965d06a998");
}

TEST(Handshake, HonestPathEstablishesMatchingChannel) {
    World w;
    auto [a, v] = wire::memory_pair();
    auto [at, va] = run_handshake(*a, *v, w.provider(), w.verifier_key.public_key, w.policy(), w.pcs.current_crl(),
                                  w.verifier_key);
    ASSERT_TRUE(at.chan) << at.error->what();
    ASSERT_TRUE(va.chan) << va.error->what();
    EXPECT_TRUE(va.result->ok);
    EXPECT_EQ(va.result->quote.mr_enclave, w.mre);
    EXPECT_EQ(at.chan->transcript(), va.chan->transcript());
    EXPECT_EQ(at.chan->keys().key_a2v, va.chan->keys().key_a2v);
    EXPECT_EQ(at.chan->keys().key_v2a, va.chan->keys().key_v2a);

    at.chan->send(wire::msg::kAppData, as_bytes(std::string_view("hello")));
    auto got = va.chan->recv();
    EXPECT_EQ(got.type, wire::msg::kAppData);
    EXPECT_EQ(ppml::to_string(got.payload), "hello");
    va.chan->send(wire::msg::kAppData, as_bytes(std::string_view("back")));
    EXPECT_EQ(ppml::to_string(at.chan->recv().payload), "back");
}

TEST(Handshake, WorksOverTcp) {
    World w;
    wire::TcpListener listener({"127.0.0.1", 0});
    auto fut = std::async(std::launch::async, [&] {
        auto conn = listener.accept(std::chrono::seconds(5));
        auto s = verifier_handshake(*conn, w.policy(), w.pcs.current_crl(), kNow, w.verifier_key);
        return ppml::to_string(s.channel.recv().payload);
    });
    auto conn = wire::tcp_connect(listener.endpoint());
    auto chan = attester_handshake(*conn, w.provider(), w.verifier_key.public_key);
    chan.send(wire::msg::kAppData, as_bytes(std::string_view("over tcp")));
    EXPECT_EQ(fut.get(), "over tcp");
}

TEST(Handshake, NonPinnedVerifierKeyRejected) {
    World w;
    auto impostor = crypto::signing_generate();
    auto [a, v] = wire::memory_pair();
    TapConnection tap(std::move(a));
    auto [at, va] =
        run_handshake(tap, *v, w.provider(), w.verifier_key.public_key, w.policy(), w.pcs.current_crl(), impostor);
    ASSERT_TRUE(at.error);
    EXPECT_EQ(at.error->kind(), HK::peer_auth_failed);
    EXPECT_FALSE(va.chan);
    // The attester never sealed anything for the impostor.
    for (const auto& e : tap.events()) {
        if (e.direction == TapConnection::Direction::out) EXPECT_NE(e.frame.type, wire::msg::kFinished);
    }
}

TEST(Handshake, MeasurementMismatchFailsClosed) {
    World w;
    auto [a, v] = wire::memory_pair();
    TapConnection vtap(std::move(v));
    auto [at, va] = run_handshake(*a, vtap, w.provider(crypto::hash(std::string_view("other"))),
                                  w.verifier_key.public_key, w.policy(), w.pcs.current_crl(), w.verifier_key);
    ASSERT_TRUE(va.error);
    EXPECT_EQ(va.error->kind(), HK::attestation_failed);
    EXPECT_EQ(va.error->reason(), FailureReason::mr_enclave_mismatch);
    ASSERT_TRUE(at.error);
    EXPECT_EQ(at.error->kind(), HK::attestation_failed);
    EXPECT_EQ(at.error->reason(), FailureReason::mr_enclave_mismatch);
    EXPECT_FALSE(verifier_sent_hello(vtap));
}

TEST(Handshake, RevokedPlatformFailsClosed) {
    World w;
    auto crl = w.pcs.revoke(w.platform.identity.platform_id);
    auto [a, v] = wire::memory_pair();
    TapConnection vtap(std::move(v));
    auto [at, va] =
        run_handshake(*a, vtap, w.provider(), w.verifier_key.public_key, w.policy(), crl, w.verifier_key);
    ASSERT_TRUE(at.error);
    EXPECT_EQ(at.error->reason(), FailureReason::revoked);
    EXPECT_FALSE(verifier_sent_hello(vtap));
}

// A man in the middle holds a victim's genuine certificate and tries to
// complete the handshake with its own ephemeral key.
TEST(Handshake, RelayedCertificateRejected) {
    World w;
    for (int trial = 0; trial < 20; ++trial) {
        auto [victim_end, adversary_end] = wire::memory_pair();
        std::thread victim([&, c = victim_end.get()] {
            try {
                attester_handshake(*c, w.provider(), w.verifier_key.public_key);
            } catch (const HandshakeError&) {
            }
        });
        auto genuine = HelloAttester::decode(adversary_end->recv().payload);
        adversary_end->close();
        victim.join();

        auto own = crypto::dh_generate();
        HelloAttester forged = genuine;
        forged.eph_pub = own.public_key;
        if (trial % 2) forged.certificate.attester_eph_pub = own.public_key;

        auto [adv, v] = wire::memory_pair();
        TapConnection vtap(std::move(v));
        adv->send({wire::msg::kHelloAttester, forged.encode()});
        try {
            verifier_handshake(vtap, w.policy(), w.pcs.current_crl(), kNow, w.verifier_key);
            FAIL() << "relay accepted";
        } catch (const HandshakeError& e) {
            EXPECT_EQ(e.kind(), HK::binding_mismatch);
        }
        EXPECT_FALSE(verifier_sent_hello(vtap));
        EXPECT_EQ(adv->recv().type, wire::msg::kAlert);
    }
}

// Flip one bit of one handshake message in transit. The attester, which is
// the side that would go on to use the channel, must always abort.
TEST(Handshake, BitFlipsInTransitNeverYieldAChannel) {
    World w;
    struct Target {
        bool from_attester;
        std::uint8_t type;
    };
    const Target targets[] = {{true, wire::msg::kHelloAttester},
                              {false, wire::msg::kHelloVerifier},
                              {true, wire::msg::kFinished},
                              {false, wire::msg::kFinished}};
    std::mt19937_64 rng(11);
    int trials = 0;
    for (const auto& t : targets) {
        for (int i = 0; i < 40; ++i) {
            auto flipper = [&, done = false](const wire::Frame& f) mutable -> std::optional<wire::Frame> {
                if (done || f.type != t.type) return f;
                done = true;
                auto g = f;
                // Half the trials hit the first/last bytes where headers and tags live.
                std::size_t pos = i % 4 == 0 ? 0 : i % 4 == 1 ? g.payload.size() - 1 : rng() % g.payload.size();
                g.payload[pos] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
                return g;
            };
            auto [a, v] = wire::memory_pair();
            TapConnection atap(std::move(a), t.from_attester ? TapConnection::Rewriter(flipper) : nullptr);
            TapConnection vtap(std::move(v), t.from_attester ? nullptr : TapConnection::Rewriter(flipper));
            auto [at, va] = run_handshake(atap, vtap, w.provider(), w.verifier_key.public_key, w.policy(),
                                          w.pcs.current_crl(), w.verifier_key);
            EXPECT_TRUE(at.error) << "attester accepted a tampered handshake";
            // Only a flip in the very last message can leave the verifier done.
            if (va.chan) {
                EXPECT_FALSE(t.from_attester);
                EXPECT_EQ(t.type, wire::msg::kFinished);
            }
            ++trials;
        }
    }
    EXPECT_EQ(trials, 160);
}

struct Pair {
    std::unique_ptr<TapConnection> a;
    wire::ConnectionPtr v;
    std::optional<SecureChannel> attester;
    std::optional<SecureChannel> verifier;
    // Applied once to the next outbound attester frame.
    std::function<std::optional<wire::Frame>(const wire::Frame&)> mutate_next;
};

std::unique_ptr<Pair> established(const World& w) {
    auto p = std::make_unique<Pair>();
    auto [a, v] = wire::memory_pair();
    auto* raw = p.get();
    p->a = std::make_unique<TapConnection>(std::move(a), [raw](const wire::Frame& f) -> std::optional<wire::Frame> {
        if (!raw->mutate_next) return f;
        auto m = std::exchange(raw->mutate_next, nullptr);
        return m(f);
    });
    p->v = std::move(v);
    auto [at, va] = run_handshake(*p->a, *p->v, w.provider(), w.verifier_key.public_key, w.policy(),
                                  w.pcs.current_crl(), w.verifier_key);
    p->attester.emplace(std::move(*at.chan));
    p->verifier.emplace(std::move(*va.chan));
    return p;
}

wire::Frame last_out(const TapConnection& tap) {
    auto ev = tap.events();
    for (auto it = ev.rbegin(); it != ev.rend(); ++it) {
        if (it->direction == TapConnection::Direction::out) return it->frame;
    }
    throw std::logic_error("nothing sent");
}

CK recv_error(SecureChannel& chan) {
    try {
        chan.recv();
    } catch (const ChannelError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "record accepted";
    return CK::closed;
}

TEST(Records, ReplayDetected) {
    World w;
    auto p = established(w);
    p->attester->send(wire::msg::kAppData, Bytes{1});
    auto captured = last_out(*p->a);
    EXPECT_EQ(p->verifier->recv().payload, Bytes{1});
    p->a->send(captured);
    EXPECT_EQ(recv_error(*p->verifier), CK::replay);
}

TEST(Records, GapDetectedAsOutOfOrder) {
    World w;
    auto p = established(w);
    p->mutate_next = [](const wire::Frame&) { return std::nullopt; };
    p->attester->send(wire::msg::kAppData, Bytes{1});
    p->attester->send(wire::msg::kAppData, Bytes{2});
    EXPECT_EQ(recv_error(*p->verifier), CK::out_of_order);
}

TEST(Records, AnyModificationFailsAuthentication) {
    World w;
    std::mt19937_64 rng(5);
    for (int variant = 0; variant < 40; ++variant) {
        auto p = established(w);
        p->mutate_next = [&](const wire::Frame& f) -> std::optional<wire::Frame> {
            auto g = f;
            switch (variant % 4) {
                case 0: g.type = wire::msg::kProvisionReq; break;  // type is in the AAD
                case 1: g.payload[kSeqSize + rng() % (g.payload.size() - kSeqSize)] ^= 0x01; break;
                case 2: g.payload.pop_back(); break;
                case 3: g.payload.resize(kSeqSize + crypto::kTagSize - 1); break;
            }
            return g;
        };
        p->attester->send(wire::msg::kAppData, Bytes(100, 7));
        EXPECT_EQ(recv_error(*p->verifier), CK::auth) << "variant " << variant;
    }
}

TEST(Records, ClosedPeerReported) {
    World w;
    auto p = established(w);
    p->a->close();
    EXPECT_EQ(recv_error(*p->verifier), CK::closed);
}

TEST(Records, RandomPayloadsRoundtripInOrder) {
    World w;
    auto p = established(w);
    std::thread echo([&] {
        for (;;) {
            try {
                auto f = p->verifier->recv();
                p->verifier->send(f.type, f.payload);
            } catch (const ChannelError&) {
                return;
            }
        }
    });
    std::mt19937_64 rng(99);
    for (int i = 0; i < 1000; ++i) {
        auto payload = testing::random_bytes(rng, rng() % (64 * 1024 + 1));
        p->attester->send(wire::msg::kAppData, payload);
        auto back = p->attester->recv();
        ASSERT_EQ(back.payload, payload) << "record " << i;
    }
    EXPECT_EQ(p->attester->send_seq(), 1001u);  // Finished took sequence 0
    p->a->close();
    echo.join();
}

TEST(Records, OversizedPayloadRefused) {
    World w;
    auto p = established(w);
    EXPECT_THROW(p->attester->send(wire::msg::kAppData, Bytes(kMaxRecordPayload + 1)), std::invalid_argument);
    EXPECT_NO_THROW(p->attester->send(wire::msg::kAppData, Bytes(kMaxRecordPayload)));
}

TEST(Keys, DirectionsAndSessionsAreSeparated) {
    World w;
    std::set<std::string> seen;
    for (int i = 0; i < 10; ++i) {
        auto p = established(w);
        const auto& k = p->attester->keys();
        EXPECT_NE(k.key_a2v, k.key_v2a);
        EXPECT_TRUE(seen.insert(k.key_a2v.hex()).second);
        EXPECT_TRUE(seen.insert(k.key_v2a.hex()).second);
    }
}

}  // namespace
}  // namespace ppml::ra
