#include "bytes.hpp"

#include <array>

#include "errors.hpp"

namespace pgate {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

std::array<int8_t, 256> build_b64_reverse() {
    std::array<int8_t, 256> table{};
    table.fill(-1);
    for (int i = 0; i < 64; ++i) {
        table[static_cast<unsigned char>(kB64Alphabet[i])] = static_cast<int8_t>(i);
    }
    return table;
}

const std::array<int8_t, 256> kB64Reverse = build_b64_reverse();

}  // namespace

std::string to_hex(const Bytes& b) {
    std::string out;
    out.reserve(b.size() * 2);
    for (uint8_t byte : b) {
        out.push_back(kHexDigits[byte >> 4]);
        out.push_back(kHexDigits[byte & 0x0f]);
    }
    return out;
}

Bytes from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) {
        throw Error(ErrorCode::MalformedPayload, "odd-length hex string");
    }
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw Error(ErrorCode::MalformedPayload, "invalid hex digit");
    };
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        out.push_back(static_cast<uint8_t>((nibble(hex[i]) << 4) | nibble(hex[i + 1])));
    }
    return out;
}

std::string base64url_encode(const Bytes& data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        uint32_t n = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kB64Alphabet[(n >> 18) & 0x3f]);
        out.push_back(kB64Alphabet[(n >> 12) & 0x3f]);
        out.push_back(kB64Alphabet[(n >> 6) & 0x3f]);
        out.push_back(kB64Alphabet[n & 0x3f]);
    }
    size_t rest = data.size() - i;
    if (rest == 1) {
        uint32_t n = data[i] << 16;
        out.push_back(kB64Alphabet[(n >> 18) & 0x3f]);
        out.push_back(kB64Alphabet[(n >> 12) & 0x3f]);
    } else if (rest == 2) {
        uint32_t n = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kB64Alphabet[(n >> 18) & 0x3f]);
        out.push_back(kB64Alphabet[(n >> 12) & 0x3f]);
        out.push_back(kB64Alphabet[(n >> 6) & 0x3f]);
    }
    return out;
}

bool base64url_decode(std::string_view text, Bytes& out) {
    out.clear();
    if (text.size() % 4 == 1) {
        return false;
    }
    out.reserve(text.size() / 4 * 3 + 2);
    uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        int8_t v = kB64Reverse[static_cast<unsigned char>(c)];
        if (v < 0) {
            return false;
        }
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
        }
    }
    // Canonical form only: leftover bits must be zero padding.
    if (bits > 0 && (acc & ((1u << bits) - 1)) != 0) {
        return false;
    }
    return true;
}

}  // namespace pgate
