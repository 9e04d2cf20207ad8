#include "minter.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

namespace {

using nlohmann::json;

RuleCondition::Field field_from_name(const std::string& name) {
    if (name == "seconds_since_auth") return RuleCondition::Field::SecondsSinceAuth;
    if (name == "account") return RuleCondition::Field::Account;
    if (name == "location_class") return RuleCondition::Field::LocationClass;
    if (name == "peer_device_ok") return RuleCondition::Field::PeerDeviceOk;
    throw Error(ErrorCode::ConfigError, "rules: unknown field " + name);
}

RuleCondition::Op op_from_name(const std::string& name) {
    if (name == "eq") return RuleCondition::Op::Eq;
    if (name == "ne") return RuleCondition::Op::Ne;
    if (name == "lt") return RuleCondition::Op::Lt;
    if (name == "le") return RuleCondition::Op::Le;
    if (name == "gt") return RuleCondition::Op::Gt;
    if (name == "ge") return RuleCondition::Op::Ge;
    if (name == "present") return RuleCondition::Op::Present;
    if (name == "absent") return RuleCondition::Op::Absent;
    throw Error(ErrorCode::ConfigError, "rules: unknown op " + name);
}

bool compare_int(int64_t lhs, RuleCondition::Op op, int64_t rhs) {
    switch (op) {
        case RuleCondition::Op::Eq: return lhs == rhs;
        case RuleCondition::Op::Ne: return lhs != rhs;
        case RuleCondition::Op::Lt: return lhs < rhs;
        case RuleCondition::Op::Le: return lhs <= rhs;
        case RuleCondition::Op::Gt: return lhs > rhs;
        case RuleCondition::Op::Ge: return lhs >= rhs;
        default: return false;
    }
}

}  // namespace

const char* location_class_name(LocationClass lc) {
    switch (lc) {
        case LocationClass::Trusted: return "trusted";
        case LocationClass::Untrusted: return "untrusted";
        case LocationClass::Unknown: return "unknown";
    }
    return "unknown";
}

std::optional<LocationClass> location_class_from_name(std::string_view name) {
    if (name == "trusted") return LocationClass::Trusted;
    if (name == "untrusted") return LocationClass::Untrusted;
    if (name == "unknown") return LocationClass::Unknown;
    return std::nullopt;
}

DeviceStatus device_status_from_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("device status: ") + e.what());
    }
    DeviceStatus status;
    if (doc.contains("seconds_since_auth") && !doc["seconds_since_auth"].is_null()) {
        int64_t v = doc["seconds_since_auth"].get<int64_t>();
        if (v < 0) {
            throw Error(ErrorCode::ConfigError, "device status: seconds_since_auth must be >= 0");
        }
        status.seconds_since_auth = v;
    }
    status.account = doc.value("account", "");
    const std::string lc = doc.value("location_class", "unknown");
    auto parsed = location_class_from_name(lc);
    if (!parsed) {
        throw Error(ErrorCode::ConfigError, "device status: bad location_class " + lc);
    }
    status.location_class = *parsed;
    status.peer_device_ok = doc.value("peer_device_ok", false);
    status.now = doc.value("now", int64_t{0});
    return status;
}

bool RuleCondition::matches(const DeviceStatus& status) const {
    switch (field) {
        case Field::SecondsSinceAuth:
            if (op == Op::Present) return status.seconds_since_auth.has_value();
            if (op == Op::Absent) return !status.seconds_since_auth.has_value();
            if (!status.seconds_since_auth) return false;
            return compare_int(*status.seconds_since_auth, op, int_value);
        case Field::Account:
            if (op == Op::Eq) return status.account == str_value;
            if (op == Op::Ne) return status.account != str_value;
            return false;
        case Field::LocationClass:
            if (op == Op::Eq) return location_class_name(status.location_class) == str_value;
            if (op == Op::Ne) return location_class_name(status.location_class) != str_value;
            return false;
        case Field::PeerDeviceOk:
            if (op == Op::Eq) return status.peer_device_ok == bool_value;
            if (op == Op::Ne) return status.peer_device_ok != bool_value;
            return false;
    }
    return false;
}

std::vector<PermissionRule> load_rules(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("rules: ") + e.what());
    }
    if (!doc.contains("rules") || !doc["rules"].is_array() || doc["rules"].empty()) {
        throw Error(ErrorCode::ConfigError, "rules: non-empty rules list required");
    }
    std::vector<PermissionRule> rules;
    for (const auto& entry : doc["rules"]) {
        PermissionRule rule;
        for (const auto& cond : entry.value("when", json::array())) {
            RuleCondition c;
            c.field = field_from_name(cond.at("field").get<std::string>());
            c.op = op_from_name(cond.at("op").get<std::string>());
            const bool needs_value =
                c.op != RuleCondition::Op::Present && c.op != RuleCondition::Op::Absent;
            if (needs_value) {
                if (!cond.contains("value")) {
                    throw Error(ErrorCode::ConfigError, "rules: condition missing value");
                }
                const auto& value = cond["value"];
                switch (c.field) {
                    case RuleCondition::Field::SecondsSinceAuth:
                        if (!value.is_number_integer() && !value.is_number_unsigned()) {
                            throw Error(ErrorCode::ConfigError,
                                        "rules: seconds_since_auth needs an integer value");
                        }
                        c.int_value = value.get<int64_t>();
                        break;
                    case RuleCondition::Field::Account:
                        c.str_value = value.get<std::string>();
                        break;
                    case RuleCondition::Field::LocationClass:
                        c.str_value = value.get<std::string>();
                        if (!location_class_from_name(c.str_value)) {
                            throw Error(ErrorCode::ConfigError,
                                        "rules: bad location_class value " + c.str_value);
                        }
                        break;
                    case RuleCondition::Field::PeerDeviceOk:
                        if (!value.is_boolean()) {
                            throw Error(ErrorCode::ConfigError,
                                        "rules: peer_device_ok needs a boolean value");
                        }
                        c.bool_value = value.get<bool>();
                        break;
                }
            }
            rule.when.push_back(std::move(c));
        }
        if (!entry.contains("grant")) {
            throw Error(ErrorCode::ConfigError, "rules: rule missing grant");
        }
        rule.grant = permission_from_json(entry["grant"].dump());
        rules.push_back(std::move(rule));
    }
    if (!rules.back().when.empty()) {
        throw Error(ErrorCode::ConfigError, "rules: last rule must be an unconditional default");
    }
    return rules;
}

std::vector<PermissionRule> load_rules_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_rules(text);
}

Permission derive_permission(const std::vector<PermissionRule>& rules,
                             const DeviceStatus& status) {
    for (const auto& rule : rules) {
        bool all = true;
        for (const auto& cond : rule.when) {
            if (!cond.matches(status)) {
                all = false;
                break;
            }
        }
        if (all) {
            return rule.grant;
        }
    }
    // unreachable when load_rules validated the default; fail closed anyway
    throw Error(ErrorCode::ConfigError, "rules: no rule matched and no default present");
}

std::string mint(const std::string& user_prompt, const Permission& permission,
                 const KeyPair& key, int64_t now, int64_t ttl_seconds, TokenMode mode) {
    if (ttl_seconds <= 0) {
        throw Error(ErrorCode::InvalidArgument, "ttl must be positive");
    }
    TokenPayload payload;
    payload.mode = mode;
    payload.permission = permission;
    if (mode == TokenMode::ServerVerified) {
        if (!scheme_can_sign(key.scheme)) {
            throw Error(ErrorCode::UnsupportedScheme, scheme_name(key.scheme));
        }
        payload.public_key = key.public_key;
        payload.scheme_id = key.scheme;
    }
    Bytes hash = sha256(user_prompt);
    std::memcpy(payload.prompt_hash.data(), hash.data(), 32);
    Bytes nonce = random_bytes(16);
    std::memcpy(payload.nonce.data(), nonce.data(), 16);
    payload.issued_at = now;
    payload.expires_at = now + ttl_seconds;

    Bytes encoded = encode_payload(payload);
    Bytes signature;
    if (mode == TokenMode::ServerVerified) {
        signature = sign(encoded, key);
    }
    return user_prompt + render_token(payload, signature).text;
}

std::string mint_on_device(const std::string& user_prompt, const Permission& permission,
                           int64_t now, int64_t ttl_seconds) {
    KeyPair no_key{SchemeId::Ed25519, {}, {}};
    return mint(user_prompt, permission, no_key, now, ttl_seconds, TokenMode::OnDevice);
}

}  // namespace pgate
