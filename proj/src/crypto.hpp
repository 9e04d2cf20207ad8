#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bytes.hpp"

namespace pgate {

// Signature schemes carried in tokens plus the key-agreement tags that are
// recognized but rejected (key agreement cannot authenticate a payload by
// itself, so those ids never mint or verify anything).
enum class SchemeId : uint8_t {
    Rsa2048Sha256 = 1,
    EcdsaP256Sha256 = 2,
    Ed25519 = 3,
    Dh2048 = 16,
    EcdhP256 = 17,
};

const char* scheme_name(SchemeId id);
std::optional<SchemeId> scheme_from_name(std::string_view name);
std::optional<SchemeId> scheme_from_tag(uint8_t tag);
bool scheme_can_sign(SchemeId id);
std::vector<SchemeId> supported_signature_schemes();

struct KeyPair {
    SchemeId scheme;
    Bytes public_key;   // DER SubjectPublicKeyInfo
    Bytes private_key;  // DER PKCS#8; never serialized into tokens
};

// Throws UnsupportedScheme for key-agreement ids, SigningFailure on backend errors.
KeyPair generate_keypair(SchemeId scheme);

Bytes sign(const Bytes& message, const KeyPair& key);

// Total: any malformed key/signature yields false, never an exception.
bool verify(const Bytes& message, const Bytes& signature, const Bytes& public_key);

// Scheme implied by a DER public key, if it parses to a supported signature key.
std::optional<SchemeId> public_key_scheme(const Bytes& public_key);

// Recovers the SubjectPublicKeyInfo from a PKCS#8 private key.
Bytes derive_public_key(const Bytes& private_key_der);

Bytes sha256(const Bytes& data);
Bytes sha256(std::string_view text);
Bytes random_bytes(size_t count);

// Key files on disk: {"scheme_id", "key", "created_at"} with base64url DER keys.
void save_key_file(const std::filesystem::path& path, SchemeId scheme, const Bytes& key,
                   int64_t created_at);
struct KeyFile {
    SchemeId scheme;
    Bytes key;
    int64_t created_at;
};
KeyFile load_key_file(const std::filesystem::path& path);

// Server-side trust anchor: which public keys may vouch for which permission
// class. A token is only honored when its key is registered for the exact
// class its permission maps to.
class KeyRegistry {
public:
    void add(const std::string& permission_class, const Bytes& public_key);
    bool check_registered(const Bytes& public_key, const std::string& permission_class) const;
    size_t size() const;

    static KeyRegistry load_file(const std::filesystem::path& path);
    static KeyRegistry from_json_text(const std::string& text);
    void save_file(const std::filesystem::path& path) const;
    std::string to_json_text() const;

private:
    std::map<std::string, std::vector<Bytes>> entries_;
};

// Replay guard. check_and_record is an atomic check-and-insert; a nonce stays
// rejected until its expires_at has been past the retention horizon. With a
// backing file the cache compacts it on open and appends each accepted nonce,
// so a restart inside the horizon keeps rejecting replays.
class NonceCache {
public:
    explicit NonceCache(int64_t horizon_seconds);
    NonceCache(int64_t horizon_seconds, const std::filesystem::path& persist_path);

    bool check_and_record(const Bytes& nonce, int64_t expires_at, int64_t now);
    size_t size() const;
    int64_t horizon() const { return horizon_; }

private:
    void purge_locked(int64_t now);
    void append_locked(const Bytes& nonce, int64_t expires_at);
    void load_and_compact();

    mutable std::mutex mutex_;
    std::map<Bytes, int64_t> seen_;  // nonce -> expires_at
    int64_t horizon_;
    std::optional<std::filesystem::path> persist_path_;
};

}  // namespace pgate
