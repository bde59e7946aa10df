#pragma once

// Pinned primitives: AES-256-GCM, SHA-256, HMAC-SHA-256 KDF, X25519, Ed25519.
// Every on-disk and on-wire format in this project is defined in terms of
// these functions, so they must never change algorithm.

#include <stdexcept>
#include <string_view>

#include "ppml/bytes.hpp"

namespace ppml::crypto {

using Aes256GcmKey = FixedBytes<32, struct AesKeyTag>;
using Digest32 = FixedBytes<32, struct DigestTag>;
using Nonce12 = FixedBytes<12, struct NonceTag>;

using DhPrivateKey = FixedBytes<32, struct DhPrivateTag>;
using DhPublicKey = FixedBytes<32, struct DhPublicTag>;
using SharedSecret = FixedBytes<32, struct SharedSecretTag>;

using SigningSeed = FixedBytes<32, struct SigningSeedTag>;
using PublicKey = FixedBytes<32, struct SigningPublicTag>;
using Signature = FixedBytes<64, struct SignatureTag>;

inline constexpr std::size_t kTagSize = 16;
inline constexpr std::size_t kMaxLabelSize = 32;

/// AEAD open failed: wrong key, nonce, aad, or modified ciphertext/tag.
class AuthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input to a primitive (bad lengths, invalid keys) or a backend failure.
class CryptoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DhKeyPair {
    DhPrivateKey private_key;
    DhPublicKey public_key;
};

struct SigningKeyPair {
    SigningSeed seed;
    PublicKey public_key;
};

/// Returns ciphertext followed by the 16-byte tag.
Bytes aead_seal(const Aes256GcmKey& key, const Nonce12& nonce, ByteView aad, ByteView plaintext);

/// Throws AuthError on any mismatch; CryptoError if `sealed` is shorter than a tag.
Bytes aead_open(const Aes256GcmKey& key, const Nonce12& nonce, ByteView aad, ByteView sealed);

Digest32 hash(ByteView data);
inline Digest32 hash(std::string_view s) { return hash(as_bytes(s)); }

/// HMAC-SHA-256(root, label || 0x00 || context). Label must be 1..32 bytes.
Aes256GcmKey kdf(ByteView root, std::string_view label, ByteView context);

void random_bytes(std::span<std::uint8_t> out);

template <class Fixed>
Fixed random_fixed() {
    Fixed out;
    random_bytes(out.mutable_view());
    return out;
}

inline Aes256GcmKey random_key() { return random_fixed<Aes256GcmKey>(); }
inline Nonce12 random_nonce() { return random_fixed<Nonce12>(); }

DhKeyPair dh_generate();
DhPublicKey dh_public_from_private(const DhPrivateKey& priv);
/// Throws CryptoError if the peer key yields an all-zero (low-order) result.
SharedSecret dh_shared(const DhPrivateKey& priv, const DhPublicKey& peer_pub);
/// Length-checked overload for keys received off the wire.
SharedSecret dh_shared(const DhPrivateKey& priv, ByteView peer_pub);

SigningKeyPair signing_generate();
SigningKeyPair signing_from_seed(const SigningSeed& seed);
Signature sign(const SigningSeed& seed, ByteView message);
bool verify(const PublicKey& public_key, ByteView message, const Signature& signature);
/// Length-checked overload; throws CryptoError unless `signature` is 64 bytes.
bool verify(const PublicKey& public_key, ByteView message, ByteView signature);

/// Constant-time equality for secrets of equal length.
bool equal_ct(ByteView a, ByteView b);

}  // namespace ppml::crypto
