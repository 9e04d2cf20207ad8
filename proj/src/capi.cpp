#include "promptgate/promptgate.h"

#include <cstring>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "crypto.hpp"
#include "errors.hpp"
#include "gateway.hpp"
#include "minter.hpp"
#include "policy.hpp"
#include "scenario.hpp"
#include "service.hpp"
#include "token.hpp"

using namespace pgate;

namespace {

thread_local std::string g_last_error;

pgt_status status_from_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return PGT_ERR_INVALID_ARGUMENT;
        case ErrorCode::InvalidPayload:
        case ErrorCode::MalformedPayload:
        case ErrorCode::InvalidSignatureLength: return PGT_ERR_MALFORMED;
        case ErrorCode::UnsupportedScheme: return PGT_ERR_UNSUPPORTED_SCHEME;
        case ErrorCode::SigningFailure: return PGT_ERR_CRYPTO;
        case ErrorCode::ConfigError: return PGT_ERR_CONFIG;
        case ErrorCode::UnknownApi: return PGT_ERR_UNKNOWN_API;
        case ErrorCode::ModelMismatch: return PGT_ERR_MODEL_MISMATCH;
        case ErrorCode::StepBudgetExceeded: return PGT_ERR_STEP_BUDGET;
        case ErrorCode::UnknownChallenge: return PGT_ERR_UNKNOWN_CHALLENGE;
        case ErrorCode::FixtureMissing: return PGT_ERR_FIXTURE_MISSING;
        case ErrorCode::IoError: return PGT_ERR_IO;
    }
    return PGT_ERR_INTERNAL;
}

// Every entry point funnels through here so no exception ever crosses the
// C boundary.
template <typename Fn>
pgt_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_from_code(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PGT_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return PGT_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

pgt_status require(bool ok, const char* what) {
    if (!ok) {
        g_last_error = std::string("invalid argument: ") + what;
        return PGT_ERR_INVALID_ARGUMENT;
    }
    return PGT_OK;
}

pgt_outcome outcome_to_c(VerificationOutcome outcome) {
    switch (outcome) {
        case VerificationOutcome::Valid: return PGT_OUTCOME_VALID;
        case VerificationOutcome::InvalidSignature: return PGT_OUTCOME_INVALID_SIGNATURE;
        case VerificationOutcome::UnregisteredKey: return PGT_OUTCOME_UNREGISTERED_KEY;
        case VerificationOutcome::Expired: return PGT_OUTCOME_EXPIRED;
        case VerificationOutcome::ReplayedNonce: return PGT_OUTCOME_REPLAYED_NONCE;
        case VerificationOutcome::MissingToken: return PGT_OUTCOME_MISSING_TOKEN;
        case VerificationOutcome::Malformed: return PGT_OUTCOME_MALFORMED;
    }
    return PGT_OUTCOME_MALFORMED;
}

nlohmann::ordered_json payload_to_json(const TokenPayload& payload) {
    nlohmann::ordered_json doc;
    doc["version"] = payload.version;
    doc["mode"] = payload.mode == TokenMode::ServerVerified ? "server_verified" : "on_device";
    doc["permission"] = nlohmann::ordered_json::parse(permission_to_json(payload.permission));
    if (payload.scheme_id) {
        doc["scheme_id"] = scheme_name(*payload.scheme_id);
        doc["public_key"] = base64url_encode(payload.public_key);
    }
    doc["prompt_hash"] = to_hex(Bytes(payload.prompt_hash.begin(), payload.prompt_hash.end()));
    doc["nonce"] = to_hex(Bytes(payload.nonce.begin(), payload.nonce.end()));
    doc["issued_at"] = payload.issued_at;
    doc["expires_at"] = payload.expires_at;
    return doc;
}

// Bridges the C callbacks into the C++ adapter interfaces.
class CallbackAdapter : public LlmAdapter {
public:
    CallbackAdapter(pgt_next_step_fn fn, void* user_data) : fn_(fn), user_data_(user_data) {}

    LlmStep next_step(const std::string& user_prompt,
                      const std::vector<TranscriptEntry>& history) override {
        char* step_json = nullptr;
        const std::string history_json = transcript_to_json(history);
        if (fn_(user_data_, user_prompt.c_str(), history_json.c_str(), &step_json) != 0 ||
            !step_json) {
            throw Error(ErrorCode::IoError, "next_step callback failed");
        }
        std::string text(step_json);
        pgt_string_free(step_json);
        nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
        if (doc.is_discarded()) {
            throw Error(ErrorCode::InvalidArgument, "next_step callback returned invalid JSON");
        }
        if (doc.value("kind", "") == "call") {
            std::map<std::string, std::string> args;
            const nlohmann::json step_args = doc.value("args", nlohmann::json::object());
            for (const auto& [k, v] : step_args.items()) {
                args[k] = v.get<std::string>();
            }
            return LlmStep::call(doc.at("api").get<std::string>(), std::move(args));
        }
        return LlmStep::say(doc.value("text", ""));
    }

private:
    pgt_next_step_fn fn_;
    void* user_data_;
};

class CallbackExecutor : public ToolExecutor {
public:
    CallbackExecutor(pgt_execute_fn fn, void* user_data) : fn_(fn), user_data_(user_data) {}

    std::string execute(const std::string& api,
                        const std::map<std::string, std::string>& args) override {
        char* observation = nullptr;
        const std::string args_json = nlohmann::json(args).dump();
        if (fn_(user_data_, api.c_str(), args_json.c_str(), &observation) != 0 || !observation) {
            throw Error(ErrorCode::IoError, "execute callback failed");
        }
        std::string text(observation);
        pgt_string_free(observation);
        return text;
    }

private:
    pgt_execute_fn fn_;
    void* user_data_;
};

}  // namespace

struct pgt_keypair {
    KeyPair key;
};
struct pgt_policy {
    Registry registry;
};
struct pgt_key_registry {
    KeyRegistry registry;
};
struct pgt_nonce_cache {
    std::unique_ptr<NonceCache> cache;
};
struct pgt_gateway {
    const pgt_policy* policy;
    const pgt_key_registry* keys;
    pgt_nonce_cache* nonces;
    GatewayConfig config;
    std::mutex mutex;
    std::map<std::string, Session> sessions;
    std::map<std::string, std::string> challenge_index;
};

extern "C" {

const char* pgt_version(void) {
    return "0.1.0";
}

const char* pgt_status_name(pgt_status status) {
    switch (status) {
        case PGT_OK: return "ok";
        case PGT_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case PGT_ERR_MALFORMED: return "malformed";
        case PGT_ERR_UNSUPPORTED_SCHEME: return "unsupported_scheme";
        case PGT_ERR_CRYPTO: return "crypto_error";
        case PGT_ERR_CONFIG: return "config_error";
        case PGT_ERR_IO: return "io_error";
        case PGT_ERR_UNKNOWN_API: return "unknown_api";
        case PGT_ERR_MODEL_MISMATCH: return "model_mismatch";
        case PGT_ERR_STEP_BUDGET: return "step_budget_exceeded";
        case PGT_ERR_UNKNOWN_CHALLENGE: return "unknown_challenge";
        case PGT_ERR_FIXTURE_MISSING: return "fixture_missing";
        case PGT_ERR_INTERNAL: return "internal_error";
    }
    return "unknown";
}

const char* pgt_outcome_name(pgt_outcome outcome) {
    switch (outcome) {
        case PGT_OUTCOME_VALID: return "valid";
        case PGT_OUTCOME_INVALID_SIGNATURE: return "invalid_signature";
        case PGT_OUTCOME_UNREGISTERED_KEY: return "unregistered_key";
        case PGT_OUTCOME_EXPIRED: return "expired";
        case PGT_OUTCOME_REPLAYED_NONCE: return "replayed_nonce";
        case PGT_OUTCOME_MISSING_TOKEN: return "missing_token";
        case PGT_OUTCOME_MALFORMED: return "malformed";
    }
    return "unknown";
}

const char* pgt_last_error(void) {
    return g_last_error.c_str();
}

void pgt_string_free(char* s) {
    ::free(s);
}

pgt_status pgt_keypair_generate(const char* scheme_id, pgt_keypair** out) {
    if (auto rc = require(scheme_id && out, "scheme_id and out required")) return rc;
    return guarded([&]() {
        auto scheme = scheme_from_name(scheme_id);
        if (!scheme) {
            throw Error(ErrorCode::UnsupportedScheme, scheme_id);
        }
        *out = new pgt_keypair{generate_keypair(*scheme)};
        return PGT_OK;
    });
}

pgt_status pgt_keypair_save(const pgt_keypair* key, const char* private_path,
                            const char* public_path, int64_t created_at) {
    if (auto rc = require(key && private_path && public_path, "key and paths required")) return rc;
    return guarded([&]() {
        save_key_file(private_path, key->key.scheme, key->key.private_key, created_at);
        save_key_file(public_path, key->key.scheme, key->key.public_key, created_at);
        return PGT_OK;
    });
}

pgt_status pgt_keypair_load(const char* private_path, pgt_keypair** out) {
    if (auto rc = require(private_path && out, "path and out required")) return rc;
    return guarded([&]() {
        KeyFile file = load_key_file(private_path);
        KeyPair pair{file.scheme, derive_public_key(file.key), file.key};
        *out = new pgt_keypair{std::move(pair)};
        return PGT_OK;
    });
}

const char* pgt_keypair_scheme(const pgt_keypair* key) {
    return key ? scheme_name(key->key.scheme) : "unknown";
}

pgt_status pgt_keypair_public(const pgt_keypair* key, char** out) {
    if (auto rc = require(key && out, "key and out required")) return rc;
    return guarded([&]() {
        *out = dup_string(base64url_encode(key->key.public_key));
        return PGT_OK;
    });
}

void pgt_keypair_free(pgt_keypair* key) {
    delete key;
}

pgt_status pgt_policy_load_file(const char* path, pgt_policy** out) {
    if (auto rc = require(path && out, "path and out required")) return rc;
    return guarded([&]() {
        *out = new pgt_policy{load_registry_file(path)};
        return PGT_OK;
    });
}

pgt_status pgt_policy_load_json(const char* json_text, pgt_policy** out) {
    if (auto rc = require(json_text && out, "json and out required")) return rc;
    return guarded([&]() {
        *out = new pgt_policy{load_registry(json_text)};
        return PGT_OK;
    });
}

pgt_status pgt_policy_summary(const pgt_policy* policy, char** json_out) {
    if (auto rc = require(policy && json_out, "policy and out required")) return rc;
    return guarded([&]() {
        nlohmann::ordered_json doc;
        doc["max_level"] = policy->registry.max_level();
        nlohmann::ordered_json apis = nlohmann::ordered_json::array();
        for (const auto& spec : policy->registry.apis()) {
            nlohmann::ordered_json entry;
            entry["name"] = spec.name;
            if (spec.required.kind == ApiRequirement::Kind::MinLevel) {
                entry["required"] = {{"min_level", spec.required.value}};
            } else {
                entry["required"] = {{"capability_index", spec.required.value}};
            }
            entry["on_deny"] =
                spec.on_deny == DenyBehavior::Reject ? "reject" : "request_verification";
            entry["kind"] = spec.kind == ApiKind::Read ? "read" : "write";
            apis.push_back(std::move(entry));
        }
        doc["apis"] = std::move(apis);
        std::vector<std::string> graph_ids;
        for (const auto& [id, graph] : policy->registry.graphs()) {
            graph_ids.push_back(id);
        }
        doc["graphs"] = graph_ids;
        *json_out = dup_string(doc.dump());
        return PGT_OK;
    });
}

void pgt_policy_free(pgt_policy* policy) {
    delete policy;
}

pgt_status pgt_key_registry_new(pgt_key_registry** out) {
    if (auto rc = require(out != nullptr, "out required")) return rc;
    *out = new pgt_key_registry{};
    return PGT_OK;
}

pgt_status pgt_key_registry_load_file(const char* path, pgt_key_registry** out) {
    if (auto rc = require(path && out, "path and out required")) return rc;
    return guarded([&]() {
        *out = new pgt_key_registry{KeyRegistry::load_file(path)};
        return PGT_OK;
    });
}

pgt_status pgt_key_registry_add(pgt_key_registry* registry, const char* permission_class,
                                const char* public_key) {
    if (auto rc = require(registry && permission_class && public_key, "all args required")) {
        return rc;
    }
    return guarded([&]() {
        Bytes key;
        if (!base64url_decode(public_key, key)) {
            throw Error(ErrorCode::InvalidArgument, "public_key is not base64url");
        }
        registry->registry.add(permission_class, key);
        return PGT_OK;
    });
}

pgt_status pgt_key_registry_save(const pgt_key_registry* registry, const char* path) {
    if (auto rc = require(registry && path, "registry and path required")) return rc;
    return guarded([&]() {
        registry->registry.save_file(path);
        return PGT_OK;
    });
}

void pgt_key_registry_free(pgt_key_registry* registry) {
    delete registry;
}

pgt_status pgt_nonce_cache_open(const char* path, int64_t horizon_seconds,
                                pgt_nonce_cache** out) {
    if (auto rc = require(out != nullptr, "out required")) return rc;
    return guarded([&]() {
        auto cache = path ? std::make_unique<NonceCache>(horizon_seconds,
                                                         std::filesystem::path(path))
                          : std::make_unique<NonceCache>(horizon_seconds);
        *out = new pgt_nonce_cache{std::move(cache)};
        return PGT_OK;
    });
}

void pgt_nonce_cache_free(pgt_nonce_cache* cache) {
    delete cache;
}

pgt_status pgt_derive_permission(const char* rules_json, const char* status_json,
                                 char** permission_json_out) {
    if (auto rc = require(rules_json && status_json && permission_json_out, "all args required")) {
        return rc;
    }
    return guarded([&]() {
        auto rules = load_rules(rules_json);
        DeviceStatus status = device_status_from_json(status_json);
        Permission permission = derive_permission(rules, status);
        *permission_json_out = dup_string(permission_to_json(permission));
        return PGT_OK;
    });
}

pgt_status pgt_mint(const char* prompt, const char* permission_json, const pgt_keypair* key,
                    int64_t now, int64_t ttl_seconds, int on_device, char** user_input_out) {
    if (auto rc = require(prompt && permission_json && user_input_out,
                          "prompt, permission and out required")) {
        return rc;
    }
    if (auto rc = require(on_device || key, "server-verified minting needs a key")) return rc;
    return guarded([&]() {
        Permission permission = permission_from_json(permission_json);
        std::string input =
            on_device ? mint_on_device(prompt, permission, now, ttl_seconds)
                      : mint(prompt, permission, key->key, now, ttl_seconds);
        *user_input_out = dup_string(input);
        return PGT_OK;
    });
}

pgt_status pgt_inspect(const char* user_input, char** payload_json_out) {
    if (auto rc = require(user_input && payload_json_out, "input and out required")) return rc;
    return guarded([&]() {
        ParsedInput parsed = extract(user_input);
        if (!parsed.token) {
            throw Error(ErrorCode::MalformedPayload, "no token found in input");
        }
        DecodedToken decoded = decode_token(*parsed.token);
        nlohmann::ordered_json doc;
        doc["user_prompt"] = parsed.user_prompt;
        doc["suspicious_delimiters"] = parsed.suspicious_delimiters;
        doc["payload"] = payload_to_json(decoded.payload);
        doc["signature_bytes"] = decoded.signature.size();
        *payload_json_out = dup_string(doc.dump());
        return PGT_OK;
    });
}

pgt_status pgt_verify(const char* user_input, const pgt_policy* policy,
                      const pgt_key_registry* keys, pgt_nonce_cache* nonces, int64_t now,
                      pgt_outcome* outcome_out, char** detail_json_out) {
    if (auto rc = require(user_input && policy && keys && nonces && outcome_out,
                          "input, policy, keys, nonces, outcome required")) {
        return rc;
    }
    return guarded([&]() {
        VerifiedInput verified =
            verify_input(user_input, policy->registry, keys->registry, *nonces->cache, now);
        *outcome_out = outcome_to_c(verified.outcome);
        if (detail_json_out) {
            nlohmann::ordered_json doc;
            doc["outcome"] = verification_outcome_name(verified.outcome);
            doc["user_prompt"] = verified.parsed.user_prompt;
            doc["suspicious_delimiters"] = verified.parsed.suspicious_delimiters;
            if (verified.payload) {
                doc["payload"] = payload_to_json(*verified.payload);
            }
            *detail_json_out = dup_string(doc.dump());
        }
        return PGT_OK;
    });
}

pgt_status pgt_gateway_new(const pgt_policy* policy, const pgt_key_registry* keys,
                           pgt_nonce_cache* nonces, const char* config_json, pgt_gateway** out) {
    if (auto rc = require(policy && keys && nonces && out, "policy, keys, nonces, out required")) {
        return rc;
    }
    return guarded([&]() {
        GatewayConfig config;
        if (config_json) {
            nlohmann::json doc = nlohmann::json::parse(config_json, nullptr, false);
            if (doc.is_discarded()) {
                throw Error(ErrorCode::ConfigError, "gateway config is not valid JSON");
            }
            const std::string mode = doc.value("failure_mode", "refuse_all");
            if (mode == "abort") {
                config.failure_mode = FailureMode::Abort;
            } else if (mode != "refuse_all") {
                throw Error(ErrorCode::ConfigError, "failure_mode must be refuse_all|abort");
            }
            config.step_budget = doc.value("step_budget", 16);
            config.accept_on_device = doc.value("accept_on_device", false);
        }
        auto* gateway = new pgt_gateway{policy, keys, nonces, config, {}, {}, {}};
        *out = gateway;
        return PGT_OK;
    });
}

pgt_status pgt_gateway_handle(pgt_gateway* gateway, const char* user_input, int64_t now,
                              pgt_next_step_fn next_step, void* next_step_data,
                              pgt_execute_fn execute, void* execute_data,
                              char** session_json_out) {
    if (auto rc = require(gateway && user_input && next_step && execute && session_json_out,
                          "gateway, input, callbacks, out required")) {
        return rc;
    }
    return guarded([&]() {
        CallbackAdapter adapter(next_step, next_step_data);
        CallbackExecutor executor(execute, execute_data);
        Session session = handle_input(user_input, adapter, executor, gateway->policy->registry,
                                       gateway->keys->registry, *gateway->nonces->cache,
                                       gateway->config, now);
        *session_json_out = dup_string(session_to_json(session));
        std::lock_guard<std::mutex> lock(gateway->mutex);
        for (const auto& [cid, request] : session.pending_challenges) {
            gateway->challenge_index[cid] = session.id;
        }
        gateway->sessions.emplace(session.id, std::move(session));
        return PGT_OK;
    });
}

pgt_status pgt_gateway_resolve(pgt_gateway* gateway, const char* challenge_id,
                               const char* elevated_input, int64_t now, pgt_execute_fn execute,
                               void* execute_data, char** result_json_out) {
    if (auto rc = require(gateway && challenge_id && elevated_input && execute && result_json_out,
                          "gateway, challenge, input, callback, out required")) {
        return rc;
    }
    return guarded([&]() {
        CallbackExecutor executor(execute, execute_data);
        std::lock_guard<std::mutex> lock(gateway->mutex);
        auto it = gateway->challenge_index.find(challenge_id);
        if (it == gateway->challenge_index.end()) {
            throw Error(ErrorCode::UnknownChallenge, challenge_id);
        }
        Session& session = gateway->sessions.at(it->second);
        ResolutionResult result = resolve_challenge(
            session, challenge_id, elevated_input, executor, gateway->policy->registry,
            gateway->keys->registry, *gateway->nonces->cache, gateway->config, now);
        if (!session.pending_challenges.count(challenge_id)) {
            gateway->challenge_index.erase(challenge_id);
        }
        nlohmann::ordered_json doc;
        doc["decision"] = decision_kind_name(result.decision.kind);
        doc["reason"] = result.decision.reason;
        doc["verification_outcome"] = verification_outcome_name(result.outcome);
        doc["observation"] = result.observation;
        *result_json_out = dup_string(doc.dump());
        return PGT_OK;
    });
}

void pgt_gateway_free(pgt_gateway* gateway) {
    delete gateway;
}

pgt_status pgt_policy_check_file(const char* path) {
    if (auto rc = require(path != nullptr, "path required")) return rc;
    return guarded([&]() {
        load_registry_file(path);
        return PGT_OK;
    });
}

pgt_status pgt_simulate(const char* fixtures_dir, char** report_json_out, int* failures_out) {
    if (auto rc = require(fixtures_dir && failures_out, "fixtures dir and failures out required")) {
        return rc;
    }
    return guarded([&]() {
        auto reports = run_all_scenarios(fixtures_dir);
        int failures = 0;
        nlohmann::ordered_json doc = nlohmann::ordered_json::array();
        for (const auto& report : reports) {
            if (!report.pass) {
                ++failures;
            }
            doc.push_back(nlohmann::ordered_json::parse(report_to_json(report)));
        }
        *failures_out = failures;
        if (report_json_out) {
            *report_json_out = dup_string(doc.dump(2));
        }
        return PGT_OK;
    });
}

pgt_status pgt_fuzz(const pgt_policy* policy, int episodes, uint64_t seed, int* violations_out) {
    if (auto rc = require(policy && violations_out, "policy and violations out required")) {
        return rc;
    }
    return guarded([&]() {
        FuzzReport report = fuzz_adversary(episodes, seed, policy->registry);
        *violations_out = report.violations;
        return PGT_OK;
    });
}

pgt_status pgt_serve(const char* config_path, const char* listen_override) {
    if (auto rc = require(config_path != nullptr, "config path required")) return rc;
    return guarded([&]() {
        ServiceConfig config = load_service_config(config_path);
        if (listen_override) {
            const std::string listen(listen_override);
            auto colon = listen.rfind(':');
            if (colon == std::string::npos) {
                throw Error(ErrorCode::ConfigError, "listen override must be host:port");
            }
            config.listen_host = listen.substr(0, colon);
            config.listen_port = std::stoi(listen.substr(colon + 1));
        }
        Service service(std::move(config));
        service.run();
        return PGT_OK;
    });
}

}  // extern "C"
