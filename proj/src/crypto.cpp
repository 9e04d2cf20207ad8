#include "crypto.hpp"

#include <openssl/ec.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/x509.h>

#include <fstream>
#include <memory>

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

namespace {

using EvpKeyPtr = std::unique_ptr<EVP_PKEY, decltype(&EVP_PKEY_free)>;
using EvpCtxPtr = std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

std::string openssl_error() {
    char buf[256];
    ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
    return buf;
}

EvpKeyPtr parse_public_key(const Bytes& der) {
    const unsigned char* p = der.data();
    EVP_PKEY* key = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
    return EvpKeyPtr(key, EVP_PKEY_free);
}

EvpKeyPtr parse_private_key(const Bytes& der) {
    const unsigned char* p = der.data();
    PKCS8_PRIV_KEY_INFO* p8 =
        d2i_PKCS8_PRIV_KEY_INFO(nullptr, &p, static_cast<long>(der.size()));
    if (!p8) {
        return EvpKeyPtr(nullptr, EVP_PKEY_free);
    }
    EVP_PKEY* key = EVP_PKCS82PKEY(p8);
    PKCS8_PRIV_KEY_INFO_free(p8);
    return EvpKeyPtr(key, EVP_PKEY_free);
}

Bytes export_public_key(EVP_PKEY* key) {
    unsigned char* buf = nullptr;
    int len = i2d_PUBKEY(key, &buf);
    if (len <= 0) {
        throw Error(ErrorCode::SigningFailure, "public key export failed: " + openssl_error());
    }
    Bytes out(buf, buf + len);
    OPENSSL_free(buf);
    return out;
}

Bytes export_private_key(EVP_PKEY* key) {
    PKCS8_PRIV_KEY_INFO* p8 = EVP_PKEY2PKCS8(key);
    if (!p8) {
        throw Error(ErrorCode::SigningFailure, "private key export failed: " + openssl_error());
    }
    unsigned char* buf = nullptr;
    int len = i2d_PKCS8_PRIV_KEY_INFO(p8, &buf);
    PKCS8_PRIV_KEY_INFO_free(p8);
    if (len <= 0) {
        throw Error(ErrorCode::SigningFailure, "private key export failed: " + openssl_error());
    }
    Bytes out(buf, buf + len);
    OPENSSL_free(buf);
    return out;
}

// Scheme for an already-parsed key, cross-checked against curve/size where it matters.
std::optional<SchemeId> scheme_of_evp_key(EVP_PKEY* key) {
    switch (EVP_PKEY_base_id(key)) {
        case EVP_PKEY_RSA:
            return SchemeId::Rsa2048Sha256;
        case EVP_PKEY_EC: {
            char curve[64] = {0};
            size_t len = 0;
            if (EVP_PKEY_get_utf8_string_param(key, "group", curve, sizeof(curve), &len) != 1) {
                return std::nullopt;
            }
            if (std::string_view(curve) != "prime256v1" && std::string_view(curve) != "P-256") {
                return std::nullopt;
            }
            return SchemeId::EcdsaP256Sha256;
        }
        case EVP_PKEY_ED25519:
            return SchemeId::Ed25519;
        default:
            return std::nullopt;
    }
}

const EVP_MD* digest_for(SchemeId scheme) {
    switch (scheme) {
        case SchemeId::Rsa2048Sha256:
        case SchemeId::EcdsaP256Sha256:
            return EVP_sha256();
        case SchemeId::Ed25519:
            return nullptr;  // Ed25519 is one-shot, no external digest
        default:
            return nullptr;
    }
}

}  // namespace

const char* scheme_name(SchemeId id) {
    switch (id) {
        case SchemeId::Rsa2048Sha256: return "rsa-2048";
        case SchemeId::EcdsaP256Sha256: return "ecdsa-p256";
        case SchemeId::Ed25519: return "ed25519";
        case SchemeId::Dh2048: return "dh-2048";
        case SchemeId::EcdhP256: return "ecdh-p256";
    }
    return "unknown";
}

std::optional<SchemeId> scheme_from_name(std::string_view name) {
    if (name == "rsa-2048") return SchemeId::Rsa2048Sha256;
    if (name == "ecdsa-p256") return SchemeId::EcdsaP256Sha256;
    if (name == "ed25519") return SchemeId::Ed25519;
    if (name == "dh-2048") return SchemeId::Dh2048;
    if (name == "ecdh-p256") return SchemeId::EcdhP256;
    return std::nullopt;
}

std::optional<SchemeId> scheme_from_tag(uint8_t tag) {
    switch (tag) {
        case 1: return SchemeId::Rsa2048Sha256;
        case 2: return SchemeId::EcdsaP256Sha256;
        case 3: return SchemeId::Ed25519;
        case 16: return SchemeId::Dh2048;
        case 17: return SchemeId::EcdhP256;
        default: return std::nullopt;
    }
}

bool scheme_can_sign(SchemeId id) {
    switch (id) {
        case SchemeId::Rsa2048Sha256:
        case SchemeId::EcdsaP256Sha256:
        case SchemeId::Ed25519:
            return true;
        case SchemeId::Dh2048:
        case SchemeId::EcdhP256:
            return false;
    }
    return false;
}

std::vector<SchemeId> supported_signature_schemes() {
    return {SchemeId::Rsa2048Sha256, SchemeId::EcdsaP256Sha256, SchemeId::Ed25519};
}

KeyPair generate_keypair(SchemeId scheme) {
    if (!scheme_can_sign(scheme)) {
        throw Error(ErrorCode::UnsupportedScheme,
                    std::string(scheme_name(scheme)) +
                        " is a key-agreement scheme and cannot sign tokens");
    }
    EvpCtxPtr ctx(nullptr, EVP_PKEY_CTX_free);
    switch (scheme) {
        case SchemeId::Rsa2048Sha256:
            ctx.reset(EVP_PKEY_CTX_new_id(EVP_PKEY_RSA, nullptr));
            break;
        case SchemeId::EcdsaP256Sha256:
            ctx.reset(EVP_PKEY_CTX_new_id(EVP_PKEY_EC, nullptr));
            break;
        case SchemeId::Ed25519:
            ctx.reset(EVP_PKEY_CTX_new_id(EVP_PKEY_ED25519, nullptr));
            break;
        default:
            throw Error(ErrorCode::UnsupportedScheme, scheme_name(scheme));
    }
    if (!ctx || EVP_PKEY_keygen_init(ctx.get()) != 1) {
        throw Error(ErrorCode::SigningFailure, "keygen init failed: " + openssl_error());
    }
    if (scheme == SchemeId::Rsa2048Sha256) {
        if (EVP_PKEY_CTX_set_rsa_keygen_bits(ctx.get(), 2048) != 1) {
            throw Error(ErrorCode::SigningFailure, "rsa bits: " + openssl_error());
        }
    } else if (scheme == SchemeId::EcdsaP256Sha256) {
        if (EVP_PKEY_CTX_set_ec_paramgen_curve_nid(ctx.get(), NID_X9_62_prime256v1) != 1) {
            throw Error(ErrorCode::SigningFailure, "ec curve: " + openssl_error());
        }
    }
    EVP_PKEY* raw = nullptr;
    if (EVP_PKEY_keygen(ctx.get(), &raw) != 1) {
        throw Error(ErrorCode::SigningFailure, "keygen failed: " + openssl_error());
    }
    EvpKeyPtr key(raw, EVP_PKEY_free);
    return KeyPair{scheme, export_public_key(key.get()), export_private_key(key.get())};
}

Bytes sign(const Bytes& message, const KeyPair& key) {
    if (!scheme_can_sign(key.scheme)) {
        throw Error(ErrorCode::UnsupportedScheme, scheme_name(key.scheme));
    }
    EvpKeyPtr pkey = parse_private_key(key.private_key);
    if (!pkey) {
        throw Error(ErrorCode::SigningFailure, "bad private key: " + openssl_error());
    }
    MdCtxPtr ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, digest_for(key.scheme), nullptr,
                                   pkey.get()) != 1) {
        throw Error(ErrorCode::SigningFailure, "sign init failed: " + openssl_error());
    }
    size_t sig_len = 0;
    if (EVP_DigestSign(ctx.get(), nullptr, &sig_len, message.data(), message.size()) != 1) {
        throw Error(ErrorCode::SigningFailure, "sign sizing failed: " + openssl_error());
    }
    Bytes sig(sig_len);
    if (EVP_DigestSign(ctx.get(), sig.data(), &sig_len, message.data(), message.size()) != 1) {
        throw Error(ErrorCode::SigningFailure, "sign failed: " + openssl_error());
    }
    sig.resize(sig_len);
    return sig;
}

bool verify(const Bytes& message, const Bytes& signature, const Bytes& public_key) {
    if (signature.empty() || public_key.empty()) {
        return false;
    }
    EvpKeyPtr pkey = parse_public_key(public_key);
    if (!pkey) {
        ERR_clear_error();
        return false;
    }
    auto scheme = scheme_of_evp_key(pkey.get());
    if (!scheme) {
        return false;
    }
    MdCtxPtr ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, digest_for(*scheme), nullptr,
                                     pkey.get()) != 1) {
        ERR_clear_error();
        return false;
    }
    int rc = EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(),
                              message.size());
    ERR_clear_error();
    return rc == 1;
}

std::optional<SchemeId> public_key_scheme(const Bytes& public_key) {
    if (public_key.empty()) {
        return std::nullopt;
    }
    EvpKeyPtr pkey = parse_public_key(public_key);
    if (!pkey) {
        ERR_clear_error();
        return std::nullopt;
    }
    return scheme_of_evp_key(pkey.get());
}

Bytes derive_public_key(const Bytes& private_key_der) {
    EvpKeyPtr key = parse_private_key(private_key_der);
    if (!key) {
        throw Error(ErrorCode::SigningFailure, "bad private key: " + openssl_error());
    }
    return export_public_key(key.get());
}

Bytes sha256(const Bytes& data) {
    Bytes out(32);
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != 32) {
        throw Error(ErrorCode::SigningFailure, "sha256 failed");
    }
    return out;
}

Bytes sha256(std::string_view text) {
    return sha256(to_bytes(text));
}

Bytes random_bytes(size_t count) {
    Bytes out(count);
    if (count > 0 && RAND_bytes(out.data(), static_cast<int>(count)) != 1) {
        throw Error(ErrorCode::SigningFailure, "RAND_bytes failed");
    }
    return out;
}

void save_key_file(const std::filesystem::path& path, SchemeId scheme, const Bytes& key,
                   int64_t created_at) {
    nlohmann::ordered_json doc;
    doc["scheme_id"] = scheme_name(scheme);
    doc["key"] = base64url_encode(key);
    doc["created_at"] = created_at;
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out << doc.dump(2) << "\n";
}

KeyFile load_key_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    if (!doc.contains("scheme_id") || !doc.contains("key")) {
        throw Error(ErrorCode::ConfigError, path.string() + ": missing scheme_id/key");
    }
    auto scheme = scheme_from_name(doc["scheme_id"].get<std::string>());
    if (!scheme) {
        throw Error(ErrorCode::UnsupportedScheme, doc["scheme_id"].get<std::string>());
    }
    Bytes key;
    if (!base64url_decode(doc["key"].get<std::string>(), key)) {
        throw Error(ErrorCode::ConfigError, path.string() + ": key is not base64url");
    }
    return KeyFile{*scheme, std::move(key), doc.value("created_at", int64_t{0})};
}

void KeyRegistry::add(const std::string& permission_class, const Bytes& public_key) {
    auto& keys = entries_[permission_class];
    for (const auto& existing : keys) {
        if (existing == public_key) {
            return;
        }
    }
    keys.push_back(public_key);
}

bool KeyRegistry::check_registered(const Bytes& public_key,
                                   const std::string& permission_class) const {
    auto it = entries_.find(permission_class);
    if (it == entries_.end()) {
        return false;
    }
    for (const auto& key : it->second) {
        if (key == public_key) {
            return true;
        }
    }
    return false;
}

size_t KeyRegistry::size() const {
    size_t n = 0;
    for (const auto& [cls, keys] : entries_) {
        n += keys.size();
    }
    return n;
}

KeyRegistry KeyRegistry::from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("key registry: ") + e.what());
    }
    if (!doc.contains("entries") || !doc["entries"].is_array()) {
        throw Error(ErrorCode::ConfigError, "key registry: missing entries array");
    }
    KeyRegistry reg;
    for (const auto& entry : doc["entries"]) {
        if (!entry.contains("permission_class") || !entry.contains("public_key")) {
            throw Error(ErrorCode::ConfigError,
                        "key registry: entry needs permission_class and public_key");
        }
        Bytes key;
        if (!base64url_decode(entry["public_key"].get<std::string>(), key)) {
            throw Error(ErrorCode::ConfigError, "key registry: public_key is not base64url");
        }
        reg.add(entry["permission_class"].get<std::string>(), key);
    }
    return reg;
}

KeyRegistry KeyRegistry::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string KeyRegistry::to_json_text() const {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [cls, keys] : entries_) {
        for (const auto& key : keys) {
            entries.push_back({{"permission_class", cls}, {"public_key", base64url_encode(key)}});
        }
    }
    nlohmann::ordered_json doc;
    doc["entries"] = std::move(entries);
    return doc.dump(2) + "\n";
}

void KeyRegistry::save_file(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out << to_json_text();
}

NonceCache::NonceCache(int64_t horizon_seconds) : horizon_(horizon_seconds) {}

NonceCache::NonceCache(int64_t horizon_seconds, const std::filesystem::path& persist_path)
    : horizon_(horizon_seconds), persist_path_(persist_path) {
    load_and_compact();
}

bool NonceCache::check_and_record(const Bytes& nonce, int64_t expires_at, int64_t now) {
    std::lock_guard<std::mutex> lock(mutex_);
    purge_locked(now);
    auto it = seen_.find(nonce);
    if (it != seen_.end()) {
        return false;
    }
    seen_.emplace(nonce, expires_at);
    if (persist_path_) {
        append_locked(nonce, expires_at);
    }
    return true;
}

size_t NonceCache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return seen_.size();
}

void NonceCache::purge_locked(int64_t now) {
    for (auto it = seen_.begin(); it != seen_.end();) {
        if (it->second + horizon_ < now) {
            it = seen_.erase(it);
        } else {
            ++it;
        }
    }
}

void NonceCache::append_locked(const Bytes& nonce, int64_t expires_at) {
    std::ofstream out(*persist_path_, std::ios::app);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot append " + persist_path_->string());
    }
    out << to_hex(nonce) << " " << expires_at << "\n";
    out.flush();
}

void NonceCache::load_and_compact() {
    std::ifstream in(*persist_path_);
    if (in) {
        std::string hex;
        int64_t expires_at = 0;
        while (in >> hex >> expires_at) {
            try {
                seen_.emplace(from_hex(hex), expires_at);
            } catch (const Error&) {
                // skip corrupt line; the rewrite below drops it
            }
        }
    }
    // Rewrite with only the surviving entries (append-only log compaction).
    std::ofstream out(*persist_path_, std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + persist_path_->string());
    }
    for (const auto& [nonce, expires_at] : seen_) {
        out << to_hex(nonce) << " " << expires_at << "\n";
    }
}

}  // namespace pgate
