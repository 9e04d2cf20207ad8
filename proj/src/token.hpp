#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "bytes.hpp"
#include "crypto.hpp"
#include "policy.hpp"

namespace pgate {

// Token text envelope: "<D>" base64url(payload) "." base64url(signature) "</D>",
// appended verbatim after the user prompt. The signature segment is empty for
// on-device tokens, which also carry no public key.
inline constexpr char kTokenOpen[] = "<D>";
inline constexpr char kTokenClose[] = "</D>";
inline constexpr uint8_t kFormatVersion = 1;

enum class TokenMode : uint8_t { ServerVerified = 0, OnDevice = 1 };

struct TokenPayload {
    uint8_t version = kFormatVersion;
    TokenMode mode = TokenMode::ServerVerified;
    Permission permission;
    Bytes public_key;                  // present iff ServerVerified
    std::optional<SchemeId> scheme_id; // present iff ServerVerified
    std::array<uint8_t, 32> prompt_hash{};
    std::array<uint8_t, 16> nonce{};
    int64_t issued_at = 0;
    int64_t expires_at = 0;

    bool operator==(const TokenPayload&) const = default;
};

struct EncodedToken {
    std::string text;
    bool operator==(const EncodedToken&) const = default;
};

struct ParsedInput {
    std::string user_prompt;
    std::optional<EncodedToken> token;
    bool suspicious_delimiters = false;
};

// Canonical, deterministic serialization: fixed field order, big-endian
// integers, length-prefixed variable fields, no two valid payloads share an
// encoding. Throws InvalidPayload when the payload breaks its invariants.
Bytes encode_payload(const TokenPayload& payload);

// Strict inverse of encode_payload. Throws MalformedPayload on truncation,
// trailing bytes, unknown version or any invariant violation (fail closed).
TokenPayload decode_payload(const Bytes& bytes);

// Assembles the text envelope. Throws InvalidSignatureLength unless the
// signature is empty exactly when the payload is on-device.
EncodedToken render_token(const TokenPayload& payload, const Bytes& signature);

// Splits user input into prompt text and the trailing token, if any. The token
// is the maximal well-formed "<D>...</D>" block that is a strict suffix; fake
// delimiter blocks earlier in the input stay part of the prompt and only set
// the suspicious flag. Never throws: a missing token is a valid result.
ParsedInput extract(const std::string& user_input);

struct DecodedToken {
    TokenPayload payload;
    Bytes payload_bytes;  // exact signed bytes, for signature verification
    Bytes signature;
};

// Decodes the two base64url segments of a token. Throws MalformedPayload.
DecodedToken decode_token(const EncodedToken& token);

}  // namespace pgate
