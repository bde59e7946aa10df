#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ppml {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s) {
    auto v = as_bytes(s);
    return {v.begin(), v.end()};
}

inline std::string to_string(ByteView b) {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::string to_hex(ByteView data);

/// Throws std::invalid_argument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

inline void append(Bytes& out, ByteView data) { out.insert(out.end(), data.begin(), data.end()); }

void put_u32_be(Bytes& out, std::uint32_t v);
void put_u64_be(Bytes& out, std::uint64_t v);
void put_u32_le(Bytes& out, std::uint32_t v);
void put_u64_le(Bytes& out, std::uint64_t v);
std::uint32_t get_u32_be(ByteView in);
std::uint64_t get_u64_be(ByteView in);
std::uint32_t get_u32_le(ByteView in);
std::uint64_t get_u64_le(ByteView in);

/// Fixed-length byte string. `Tag` makes otherwise identical sizes distinct
/// types, so a nonce cannot be passed where a key is expected.
template <std::size_t N, class Tag>
class FixedBytes {
public:
    static constexpr std::size_t size_bytes = N;

    FixedBytes() = default;
    explicit FixedBytes(const std::array<std::uint8_t, N>& a) : data_(a) {}

    static FixedBytes from_span(ByteView in) {
        if (in.size() != N) {
            throw std::invalid_argument("expected " + std::to_string(N) + " bytes, got " +
                                        std::to_string(in.size()));
        }
        FixedBytes out;
        std::copy(in.begin(), in.end(), out.data_.begin());
        return out;
    }

    static FixedBytes from_hex(std::string_view hex) { return from_span(ppml::from_hex(hex)); }

    std::uint8_t* data() { return data_.data(); }
    const std::uint8_t* data() const { return data_.data(); }
    static constexpr std::size_t size() { return N; }
    ByteView view() const { return {data_.data(), N}; }
    std::span<std::uint8_t, N> mutable_view() { return data_; }
    Bytes to_vector() const { return {data_.begin(), data_.end()}; }
    std::string hex() const { return to_hex(view()); }
    bool is_zero() const {
        return std::all_of(data_.begin(), data_.end(), [](auto b) { return b == 0; });
    }

    std::uint8_t& operator[](std::size_t i) { return data_[i]; }
    std::uint8_t operator[](std::size_t i) const { return data_[i]; }

    friend bool operator==(const FixedBytes&, const FixedBytes&) = default;
    friend auto operator<=>(const FixedBytes&, const FixedBytes&) = default;

private:
    std::array<std::uint8_t, N> data_{};
};

}  // namespace ppml
