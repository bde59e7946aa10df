#pragma once

// Small helpers shared by the command-line tools.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "ppml/bytes.hpp"
#include "ppml/crypto.hpp"

namespace ppml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAttestation = 1;
inline constexpr int kExitIntegrity = 2;
inline constexpr int kExitOther = 3;

inline Bytes read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, ByteView data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

inline void write_text(const std::filesystem::path& p, std::string_view text) { write_file(p, as_bytes(text)); }

template <typename Fixed>
Fixed parse_hex_arg(const std::string& what, const std::string& hex) {
    try {
        return Fixed::from_hex(hex);
    } catch (const std::exception&) {
        throw std::invalid_argument(what + " must be " + std::to_string(Fixed::size() * 2) + " hex digits");
    }
}

/// Passphrase from the flag, else from PPML_VAULT_PASSPHRASE.
inline std::string passphrase_or_env(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("PPML_VAULT_PASSPHRASE")) return env;
    throw std::invalid_argument("no passphrase: use --passphrase or PPML_VAULT_PASSPHRASE");
}

}  // namespace ppml::cli

#include <csignal>

namespace ppml::cli {

/// Call before starting any threads so they inherit the mask.
inline sigset_t block_termination_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return set;
}

inline void wait_for_signal(const sigset_t& set) {
    int sig = 0;
    sigwait(&set, &sig);
}

}  // namespace ppml::cli
