#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crypto.hpp"
#include "policy.hpp"
#include "token.hpp"

namespace pgate {

enum class LocationClass { Trusted, Untrusted, Unknown };

const char* location_class_name(LocationClass lc);
std::optional<LocationClass> location_class_from_name(std::string_view name);

// Device-side signals the permission rules run over. Supplied by the caller
// (or fixtures); this library does not talk to real device telemetry.
struct DeviceStatus {
    std::optional<int64_t> seconds_since_auth;
    std::string account;
    LocationClass location_class = LocationClass::Unknown;
    bool peer_device_ok = false;
    int64_t now = 0;
};

DeviceStatus device_status_from_json(const std::string& json_text);

struct RuleCondition {
    enum class Field { SecondsSinceAuth, Account, LocationClass, PeerDeviceOk };
    enum class Op { Eq, Ne, Lt, Le, Gt, Ge, Present, Absent };
    Field field;
    Op op;
    int64_t int_value = 0;
    std::string str_value;
    bool bool_value = false;

    bool matches(const DeviceStatus& status) const;
};

// Ordered first-match rules; the list must end with an unconditional default
// so derivation is total.
struct PermissionRule {
    std::vector<RuleCondition> when;  // conjunction; empty = always
    Permission grant;
};

std::vector<PermissionRule> load_rules(const std::string& json_text);
std::vector<PermissionRule> load_rules_file(const std::string& path);

Permission derive_permission(const std::vector<PermissionRule>& rules,
                             const DeviceStatus& status);

// Builds the full user input: prompt + rendered token. The payload binds the
// prompt (hash), a fresh nonce and an expiry window; server-verified tokens
// are signed over the exact payload bytes.
std::string mint(const std::string& user_prompt, const Permission& permission,
                 const KeyPair& key, int64_t now, int64_t ttl_seconds,
                 TokenMode mode = TokenMode::ServerVerified);

// On-device variant needs no key material at all.
std::string mint_on_device(const std::string& user_prompt, const Permission& permission,
                           int64_t now, int64_t ttl_seconds);

}  // namespace pgate
