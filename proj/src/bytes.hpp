#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pgate {

using Bytes = std::vector<uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(const Bytes& b) {
    return std::string(b.begin(), b.end());
}

std::string to_hex(const Bytes& b);
Bytes from_hex(std::string_view hex);  // throws MalformedPayload on odd length / bad digit

// Unpadded base64url (RFC 4648 §5). Decoding is strict: rejects padding,
// non-alphabet characters, impossible lengths and non-zero trailing bits.
std::string base64url_encode(const Bytes& data);
bool base64url_decode(std::string_view text, Bytes& out);

}  // namespace pgate
