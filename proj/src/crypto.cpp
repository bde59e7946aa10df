#include "ppml/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <memory>

namespace ppml::crypto {

namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};
struct PkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxDeleter {
    void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};

using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;
using Pkey = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

void check(int rc, const char* what) {
    if (rc != 1) throw CryptoError(std::string("openssl: ") + what + " failed");
}

CipherCtx new_gcm_ctx(const Aes256GcmKey& key, const Nonce12& nonce, bool encrypt) {
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx) throw CryptoError("openssl: EVP_CIPHER_CTX_new failed");
    check(EVP_CipherInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr, encrypt ? 1 : 0),
          "gcm init");
    check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, Nonce12::size(), nullptr), "gcm ivlen");
    check(EVP_CipherInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data(), encrypt ? 1 : 0),
          "gcm key");
    return ctx;
}

void feed_aad(EVP_CIPHER_CTX* ctx, ByteView aad) {
    if (aad.empty()) return;
    int len = 0;
    check(EVP_CipherUpdate(ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())), "gcm aad");
}

Pkey raw_private(int type, ByteView key) {
    Pkey p(EVP_PKEY_new_raw_private_key(type, nullptr, key.data(), key.size()));
    if (!p) throw CryptoError("openssl: invalid raw private key");
    return p;
}

Pkey raw_public(int type, ByteView key) {
    Pkey p(EVP_PKEY_new_raw_public_key(type, nullptr, key.data(), key.size()));
    if (!p) throw CryptoError("openssl: invalid raw public key");
    return p;
}

template <class Out>
Out public_of(EVP_PKEY* pkey) {
    Out out;
    std::size_t len = Out::size();
    check(EVP_PKEY_get_raw_public_key(pkey, out.data(), &len), "get raw public key");
    if (len != Out::size()) throw CryptoError("unexpected public key length");
    return out;
}

}  // namespace

Bytes aead_seal(const Aes256GcmKey& key, const Nonce12& nonce, ByteView aad, ByteView plaintext) {
    auto ctx = new_gcm_ctx(key, nonce, true);
    feed_aad(ctx.get(), aad);
    Bytes out(plaintext.size() + kTagSize);
    int len = 0;
    if (!plaintext.empty()) {
        check(EVP_CipherUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                               static_cast<int>(plaintext.size())),
              "gcm encrypt");
    }
    int tail = 0;
    check(EVP_CipherFinal_ex(ctx.get(), out.data() + len, &tail), "gcm final");
    check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagSize, out.data() + plaintext.size()),
          "gcm get tag");
    return out;
}

Bytes aead_open(const Aes256GcmKey& key, const Nonce12& nonce, ByteView aad, ByteView sealed) {
    if (sealed.size() < kTagSize) throw CryptoError("sealed input shorter than the GCM tag");
    const std::size_t ct_len = sealed.size() - kTagSize;
    auto ctx = new_gcm_ctx(key, nonce, false);
    feed_aad(ctx.get(), aad);
    Bytes out(ct_len);
    int len = 0;
    if (ct_len > 0) {
        check(EVP_CipherUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(ct_len)),
              "gcm decrypt");
    }
    Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(ct_len), sealed.end());
    check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagSize, tag.data()), "gcm set tag");
    int tail = 0;
    if (EVP_CipherFinal_ex(ctx.get(), out.data() + len, &tail) != 1) {
        OPENSSL_cleanse(out.data(), out.size());
        throw AuthError("AEAD authentication failed");
    }
    return out;
}

Digest32 hash(ByteView data) {
    Digest32 out;
    SHA256(data.data(), data.size(), out.data());
    return out;
}

Aes256GcmKey kdf(ByteView root, std::string_view label, ByteView context) {
    if (label.empty() || label.size() > kMaxLabelSize) {
        throw CryptoError("kdf label must be 1.." + std::to_string(kMaxLabelSize) + " bytes");
    }
    Bytes info;
    info.reserve(label.size() + 1 + context.size());
    append(info, as_bytes(label));
    info.push_back(0x00);
    append(info, context);

    Aes256GcmKey out;
    unsigned int len = 0;
    if (HMAC(EVP_sha256(), root.data(), static_cast<int>(root.size()), info.data(), info.size(),
             out.data(), &len) == nullptr ||
        len != out.size()) {
        throw CryptoError("openssl: HMAC failed");
    }
    return out;
}

void random_bytes(std::span<std::uint8_t> out) {
    if (out.empty()) return;
    check(RAND_bytes(out.data(), static_cast<int>(out.size())), "RAND_bytes");
}

DhKeyPair dh_generate() {
    DhKeyPair kp;
    kp.private_key = random_fixed<DhPrivateKey>();
    kp.public_key = dh_public_from_private(kp.private_key);
    return kp;
}

DhPublicKey dh_public_from_private(const DhPrivateKey& priv) {
    auto pkey = raw_private(EVP_PKEY_X25519, priv.view());
    return public_of<DhPublicKey>(pkey.get());
}

SharedSecret dh_shared(const DhPrivateKey& priv, const DhPublicKey& peer_pub) {
    auto self = raw_private(EVP_PKEY_X25519, priv.view());
    auto peer = raw_public(EVP_PKEY_X25519, peer_pub.view());
    PkeyCtx ctx(EVP_PKEY_CTX_new(self.get(), nullptr));
    if (!ctx) throw CryptoError("openssl: EVP_PKEY_CTX_new failed");
    check(EVP_PKEY_derive_init(ctx.get()), "derive init");
    check(EVP_PKEY_derive_set_peer(ctx.get(), peer.get()), "derive set peer");
    SharedSecret out;
    std::size_t len = out.size();
    // OpenSSL rejects low-order peer points (all-zero output) here.
    check(EVP_PKEY_derive(ctx.get(), out.data(), &len), "x25519 derive");
    if (len != out.size() || out.is_zero()) throw CryptoError("x25519: degenerate shared secret");
    return out;
}

SharedSecret dh_shared(const DhPrivateKey& priv, ByteView peer_pub) {
    if (peer_pub.size() != DhPublicKey::size()) throw CryptoError("x25519 public key must be 32 bytes");
    return dh_shared(priv, DhPublicKey::from_span(peer_pub));
}

SigningKeyPair signing_generate() { return signing_from_seed(random_fixed<SigningSeed>()); }

SigningKeyPair signing_from_seed(const SigningSeed& seed) {
    auto pkey = raw_private(EVP_PKEY_ED25519, seed.view());
    return {seed, public_of<PublicKey>(pkey.get())};
}

Signature sign(const SigningSeed& seed, ByteView message) {
    auto pkey = raw_private(EVP_PKEY_ED25519, seed.view());
    MdCtx ctx(EVP_MD_CTX_new());
    if (!ctx) throw CryptoError("openssl: EVP_MD_CTX_new failed");
    check(EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()), "sign init");
    Signature sig;
    std::size_t len = sig.size();
    check(EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()), "ed25519 sign");
    return sig;
}

bool verify(const PublicKey& public_key, ByteView message, const Signature& signature) {
    Pkey pkey(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_key.data(), public_key.size()));
    if (!pkey) return false;
    MdCtx ctx(EVP_MD_CTX_new());
    if (!ctx) throw CryptoError("openssl: EVP_MD_CTX_new failed");
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1) return false;
    return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(), message.size()) ==
           1;
}

bool verify(const PublicKey& public_key, ByteView message, ByteView signature) {
    if (signature.size() != Signature::size()) throw CryptoError("signature must be 64 bytes");
    return verify(public_key, message, Signature::from_span(signature));
}

bool equal_ct(ByteView a, ByteView b) {
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

}  // namespace ppml::crypto
