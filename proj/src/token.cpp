#include "token.hpp"

#include <cstring>
#include <limits>

#include "errors.hpp"

namespace pgate {

namespace {

constexpr uint8_t kPermTagLevel = 0;
constexpr uint8_t kPermTagCapabilities = 1;
constexpr uint8_t kPermTagGraph = 2;
constexpr uint32_t kMaxCapabilityBits = 4096;
constexpr size_t kMaxGraphIdLength = 255;

void put_u8(Bytes& out, uint8_t v) { out.push_back(v); }

void put_u16(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_u32(Bytes& out, uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) {
        out.push_back(static_cast<uint8_t>(v >> shift));
    }
}

void put_i64(Bytes& out, int64_t v) {
    auto u = static_cast<uint64_t>(v);
    for (int shift = 56; shift >= 0; shift -= 8) {
        out.push_back(static_cast<uint8_t>(u >> shift));
    }
}

class Reader {
public:
    explicit Reader(const Bytes& data) : data_(data) {}

    uint8_t u8() { return take(1)[0]; }

    uint16_t u16() {
        const uint8_t* p = take(2);
        return static_cast<uint16_t>((p[0] << 8) | p[1]);
    }

    uint32_t u32() {
        const uint8_t* p = take(4);
        return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
               (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
    }

    int64_t i64() {
        const uint8_t* p = take(8);
        uint64_t u = 0;
        for (int i = 0; i < 8; ++i) {
            u = (u << 8) | p[i];
        }
        return static_cast<int64_t>(u);
    }

    Bytes bytes(size_t n) {
        const uint8_t* p = take(n);
        return Bytes(p, p + n);
    }

    bool done() const { return pos_ == data_.size(); }

private:
    const uint8_t* take(size_t n) {
        if (pos_ + n > data_.size()) {
            throw Error(ErrorCode::MalformedPayload, "truncated payload");
        }
        const uint8_t* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    const Bytes& data_;
    size_t pos_ = 0;
};

void validate_payload(const TokenPayload& p) {
    if (p.version != kFormatVersion) {
        throw Error(ErrorCode::InvalidPayload, "unsupported format version");
    }
    if (p.expires_at <= p.issued_at) {
        throw Error(ErrorCode::InvalidPayload, "expires_at must be after issued_at");
    }
    if (p.mode == TokenMode::OnDevice) {
        if (!p.public_key.empty() || p.scheme_id.has_value()) {
            throw Error(ErrorCode::InvalidPayload,
                        "on-device payloads carry no public key or scheme");
        }
    } else {
        if (p.public_key.empty() || !p.scheme_id.has_value()) {
            throw Error(ErrorCode::InvalidPayload,
                        "server-verified payloads need a public key and scheme");
        }
        if (!scheme_can_sign(*p.scheme_id)) {
            throw Error(ErrorCode::InvalidPayload, "scheme cannot sign");
        }
    }
    if (const auto* level = std::get_if<LevelPermission>(&p.permission)) {
        if (level->value < 1) {
            throw Error(ErrorCode::InvalidPayload, "level must be >= 1");
        }
    } else if (const auto* caps = std::get_if<CapabilityPermission>(&p.permission)) {
        if (caps->bits.size() > kMaxCapabilityBits) {
            throw Error(ErrorCode::InvalidPayload, "capability vector too long");
        }
    } else {
        const auto& graph = std::get<SequencePermission>(p.permission);
        if (graph.graph_id.empty() || graph.graph_id.size() > kMaxGraphIdLength) {
            throw Error(ErrorCode::InvalidPayload, "graph id must be 1..255 bytes");
        }
    }
}

void encode_permission(Bytes& out, const Permission& permission) {
    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        put_u8(out, kPermTagLevel);
        put_u32(out, level->value);
    } else if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        put_u8(out, kPermTagCapabilities);
        put_u32(out, static_cast<uint32_t>(caps->bits.size()));
        Bytes packed((caps->bits.size() + 7) / 8, 0);
        for (size_t i = 0; i < caps->bits.size(); ++i) {
            if (caps->bits[i]) {
                packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
            }
        }
        out.insert(out.end(), packed.begin(), packed.end());
    } else {
        const auto& graph = std::get<SequencePermission>(permission);
        put_u8(out, kPermTagGraph);
        put_u16(out, static_cast<uint16_t>(graph.graph_id.size()));
        out.insert(out.end(), graph.graph_id.begin(), graph.graph_id.end());
    }
}

Permission decode_permission(Reader& r) {
    switch (r.u8()) {
        case kPermTagLevel: {
            uint32_t value = r.u32();
            if (value < 1) {
                throw Error(ErrorCode::MalformedPayload, "level must be >= 1");
            }
            return LevelPermission{value};
        }
        case kPermTagCapabilities: {
            uint32_t count = r.u32();
            if (count > kMaxCapabilityBits) {
                throw Error(ErrorCode::MalformedPayload, "capability vector too long");
            }
            Bytes packed = r.bytes((count + 7) / 8);
            std::vector<bool> bits(count);
            for (uint32_t i = 0; i < count; ++i) {
                bits[i] = (packed[i / 8] >> (i % 8)) & 1;
            }
            // canonical form: padding bits beyond count must be zero
            if (count % 8 != 0 && !packed.empty()) {
                uint8_t mask = static_cast<uint8_t>(0xff << (count % 8));
                if (packed.back() & mask) {
                    throw Error(ErrorCode::MalformedPayload, "non-zero capability padding");
                }
            }
            return CapabilityPermission{std::move(bits)};
        }
        case kPermTagGraph: {
            uint16_t len = r.u16();
            if (len == 0 || len > kMaxGraphIdLength) {
                throw Error(ErrorCode::MalformedPayload, "graph id must be 1..255 bytes");
            }
            Bytes id = r.bytes(len);
            return SequencePermission{std::string(id.begin(), id.end())};
        }
        default:
            throw Error(ErrorCode::MalformedPayload, "unknown permission tag");
    }
}

// A well-formed token body is base64url text with exactly one '.' separator.
bool token_body_well_formed(std::string_view body) {
    size_t dots = 0;
    for (char c : body) {
        if (c == '.') {
            ++dots;
            continue;
        }
        bool b64 = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                   c == '-' || c == '_';
        if (!b64) {
            return false;
        }
    }
    if (dots != 1) {
        return false;
    }
    return body[0] != '.';  // payload segment must be non-empty
}

}  // namespace

Bytes encode_payload(const TokenPayload& payload) {
    validate_payload(payload);
    Bytes out;
    out.reserve(96 + payload.public_key.size());
    put_u8(out, payload.version);
    put_u8(out, static_cast<uint8_t>(payload.mode));
    encode_permission(out, payload.permission);
    if (payload.mode == TokenMode::ServerVerified) {
        put_u8(out, static_cast<uint8_t>(*payload.scheme_id));
        put_u32(out, static_cast<uint32_t>(payload.public_key.size()));
        out.insert(out.end(), payload.public_key.begin(), payload.public_key.end());
    }
    out.insert(out.end(), payload.prompt_hash.begin(), payload.prompt_hash.end());
    out.insert(out.end(), payload.nonce.begin(), payload.nonce.end());
    put_i64(out, payload.issued_at);
    put_i64(out, payload.expires_at);
    return out;
}

TokenPayload decode_payload(const Bytes& bytes) {
    Reader r(bytes);
    TokenPayload p;
    p.version = r.u8();
    if (p.version != kFormatVersion) {
        throw Error(ErrorCode::MalformedPayload, "unknown format version");
    }
    uint8_t mode = r.u8();
    if (mode > 1) {
        throw Error(ErrorCode::MalformedPayload, "unknown token mode");
    }
    p.mode = static_cast<TokenMode>(mode);
    p.permission = decode_permission(r);
    if (p.mode == TokenMode::ServerVerified) {
        auto scheme = scheme_from_tag(r.u8());
        if (!scheme || !scheme_can_sign(*scheme)) {
            throw Error(ErrorCode::MalformedPayload, "unknown or unsignable scheme tag");
        }
        p.scheme_id = scheme;
        uint32_t pk_len = r.u32();
        if (pk_len == 0 || pk_len > 65536) {
            throw Error(ErrorCode::MalformedPayload, "implausible public key length");
        }
        p.public_key = r.bytes(pk_len);
    }
    Bytes hash = r.bytes(32);
    std::memcpy(p.prompt_hash.data(), hash.data(), 32);
    Bytes nonce = r.bytes(16);
    std::memcpy(p.nonce.data(), nonce.data(), 16);
    p.issued_at = r.i64();
    p.expires_at = r.i64();
    if (p.expires_at <= p.issued_at) {
        throw Error(ErrorCode::MalformedPayload, "expires_at must be after issued_at");
    }
    if (!r.done()) {
        throw Error(ErrorCode::MalformedPayload, "trailing bytes after payload");
    }
    return p;
}

EncodedToken render_token(const TokenPayload& payload, const Bytes& signature) {
    const bool on_device = payload.mode == TokenMode::OnDevice;
    if (on_device && !signature.empty()) {
        throw Error(ErrorCode::InvalidSignatureLength, "on-device tokens are unsigned");
    }
    if (!on_device && signature.empty()) {
        throw Error(ErrorCode::InvalidSignatureLength,
                    "server-verified tokens require a signature");
    }
    Bytes encoded = encode_payload(payload);
    std::string text;
    text.reserve(encoded.size() * 2);
    text += kTokenOpen;
    text += base64url_encode(encoded);
    text += '.';
    text += base64url_encode(signature);
    text += kTokenClose;
    return EncodedToken{std::move(text)};
}

ParsedInput extract(const std::string& user_input) {
    ParsedInput result;
    result.user_prompt = user_input;

    const std::string_view input(user_input);
    const size_t open_len = std::strlen(kTokenOpen);
    const size_t close_len = std::strlen(kTokenClose);

    if (input.size() >= open_len + close_len && input.ends_with(kTokenClose)) {
        // Only the last "<D>" can open a well-formed suffix block: the body may
        // contain nothing but base64url characters and one dot, so any earlier
        // candidate would swallow a '<' and fail.
        size_t open_pos = input.rfind(kTokenOpen);
        if (open_pos != std::string_view::npos) {
            std::string_view body =
                input.substr(open_pos + open_len, input.size() - close_len - open_pos - open_len);
            if (!body.empty() && token_body_well_formed(body)) {
                result.user_prompt = user_input.substr(0, open_pos);
                result.token = EncodedToken{user_input.substr(open_pos)};
            }
        }
    }

    result.suspicious_delimiters = result.user_prompt.find(kTokenOpen) != std::string::npos;
    return result;
}

DecodedToken decode_token(const EncodedToken& token) {
    std::string_view text(token.text);
    const size_t open_len = std::strlen(kTokenOpen);
    const size_t close_len = std::strlen(kTokenClose);
    if (text.size() < open_len + close_len + 1 || !text.starts_with(kTokenOpen) ||
        !text.ends_with(kTokenClose)) {
        throw Error(ErrorCode::MalformedPayload, "missing token delimiters");
    }
    std::string_view body = text.substr(open_len, text.size() - open_len - close_len);
    size_t dot = body.find('.');
    if (dot == std::string_view::npos || body.find('.', dot + 1) != std::string_view::npos) {
        throw Error(ErrorCode::MalformedPayload, "token body needs exactly one separator");
    }
    DecodedToken out;
    if (!base64url_decode(body.substr(0, dot), out.payload_bytes) || out.payload_bytes.empty()) {
        throw Error(ErrorCode::MalformedPayload, "payload segment is not base64url");
    }
    if (!base64url_decode(body.substr(dot + 1), out.signature)) {
        throw Error(ErrorCode::MalformedPayload, "signature segment is not base64url");
    }
    out.payload = decode_payload(out.payload_bytes);
    const bool has_sig = !out.signature.empty();
    if ((out.payload.mode == TokenMode::OnDevice) == has_sig) {
        throw Error(ErrorCode::MalformedPayload,
                    "signature presence does not match token mode");
    }
    return out;
}

}  // namespace pgate
