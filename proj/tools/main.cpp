// promptgate CLI: mint, inspect, verify and serve capability tokens for
// LLM tool-call gating. Everything goes through the public C API.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 check failed
// (verification outcome not valid, scenario/fuzz failures, invalid policy).

#include <promptgate/promptgate.h>

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckFailed = 3;

std::string read_stdin() {
    std::ostringstream out;
    out << std::cin.rdbuf();
    return out.str();
}

std::string arg_or_stdin(const std::string& arg) {
    return arg.empty() ? read_stdin() : arg;
}

std::string owned(char* s) {
    if (!s) {
        return {};
    }
    std::string out(s);
    pgt_string_free(s);
    return out;
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int fail(pgt_status status) {
    std::cerr << "error: " << pgt_status_name(status) << ": " << pgt_last_error() << "\n";
    return kExitError;
}

std::string pretty(const std::string& compact_json) {
    return nlohmann::ordered_json::parse(compact_json).dump(2);
}

int cmd_keygen(const std::string& scheme, const std::string& out_prefix,
               const std::string& register_path, const std::vector<std::string>& classes) {
    pgt_keypair* key = nullptr;
    if (auto rc = pgt_keypair_generate(scheme.c_str(), &key)) {
        return fail(rc);
    }
    const std::string private_path = out_prefix + ".key";
    const std::string public_path = out_prefix + ".pub";
    if (auto rc = pgt_keypair_save(key, private_path.c_str(), public_path.c_str(),
                                   std::time(nullptr))) {
        pgt_keypair_free(key);
        return fail(rc);
    }
    char* public_b64 = nullptr;
    pgt_keypair_public(key, &public_b64);
    std::string public_key = owned(public_b64);

    if (!register_path.empty()) {
        pgt_key_registry* registry = nullptr;
        if (std::ifstream(register_path).good()) {
            if (auto rc = pgt_key_registry_load_file(register_path.c_str(), &registry)) {
                pgt_keypair_free(key);
                return fail(rc);
            }
        } else {
            pgt_key_registry_new(&registry);
        }
        for (const auto& cls : classes) {
            if (auto rc = pgt_key_registry_add(registry, cls.c_str(), public_key.c_str())) {
                pgt_key_registry_free(registry);
                pgt_keypair_free(key);
                return fail(rc);
            }
        }
        if (auto rc = pgt_key_registry_save(registry, register_path.c_str())) {
            pgt_key_registry_free(registry);
            pgt_keypair_free(key);
            return fail(rc);
        }
        pgt_key_registry_free(registry);
    }

    std::cout << "wrote " << private_path << " and " << public_path << "\n"
              << "scheme: " << pgt_keypair_scheme(key) << "\n"
              << "public_key: " << public_key << "\n";
    pgt_keypair_free(key);
    return kExitOk;
}

int cmd_mint(const std::string& key_path, const std::string& rules_path,
             const std::string& status_path, const std::string& permission_json, int64_t ttl,
             int64_t now, bool on_device, const std::string& prompt_arg) {
    std::string permission = permission_json;
    try {
        if (permission.empty()) {
            if (rules_path.empty() || status_path.empty()) {
                std::cerr << "error: provide --rules and --status, or --permission\n";
                return kExitUsage;
            }
            char* derived = nullptr;
            if (auto rc = pgt_derive_permission(slurp_file(rules_path).c_str(),
                                                slurp_file(status_path).c_str(), &derived)) {
                return fail(rc);
            }
            permission = owned(derived);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }

    pgt_keypair* key = nullptr;
    if (!on_device) {
        if (key_path.empty()) {
            std::cerr << "error: server-verified minting needs --key\n";
            return kExitUsage;
        }
        if (auto rc = pgt_keypair_load(key_path.c_str(), &key)) {
            return fail(rc);
        }
    }

    const std::string prompt = arg_or_stdin(prompt_arg);
    char* user_input = nullptr;
    auto rc = pgt_mint(prompt.c_str(), permission.c_str(), key,
                       now ? now : std::time(nullptr), ttl, on_device ? 1 : 0, &user_input);
    pgt_keypair_free(key);
    if (rc) {
        return fail(rc);
    }
    // no trailing newline: the token must stay the exact suffix of the output
    std::cout << owned(user_input);
    return kExitOk;
}

int cmd_inspect(const std::string& input_arg) {
    char* payload = nullptr;
    if (auto rc = pgt_inspect(arg_or_stdin(input_arg).c_str(), &payload)) {
        std::cerr << "error: " << pgt_status_name(rc) << ": " << pgt_last_error() << "\n";
        return kExitCheckFailed;
    }
    std::cout << pretty(owned(payload)) << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& policy_path, const std::string& keys_path,
               const std::string& nonce_path, int64_t horizon, int64_t now,
               const std::string& input_arg) {
    pgt_policy* policy = nullptr;
    pgt_key_registry* keys = nullptr;
    pgt_nonce_cache* nonces = nullptr;
    if (auto rc = pgt_policy_load_file(policy_path.c_str(), &policy)) {
        return fail(rc);
    }
    if (auto rc = pgt_key_registry_load_file(keys_path.c_str(), &keys)) {
        pgt_policy_free(policy);
        return fail(rc);
    }
    if (auto rc = pgt_nonce_cache_open(nonce_path.empty() ? nullptr : nonce_path.c_str(), horizon,
                                       &nonces)) {
        pgt_key_registry_free(keys);
        pgt_policy_free(policy);
        return fail(rc);
    }

    pgt_outcome outcome;
    char* detail = nullptr;
    auto rc = pgt_verify(arg_or_stdin(input_arg).c_str(), policy, keys, nonces,
                         now ? now : std::time(nullptr), &outcome, &detail);
    pgt_nonce_cache_free(nonces);
    pgt_key_registry_free(keys);
    pgt_policy_free(policy);
    if (rc) {
        return fail(rc);
    }
    std::cout << pretty(owned(detail)) << "\n";
    return outcome == PGT_OUTCOME_VALID ? kExitOk : kExitCheckFailed;
}

int cmd_policy_check(const std::string& path) {
    if (pgt_policy_check_file(path.c_str()) != PGT_OK) {
        std::cerr << "invalid policy: " << pgt_last_error() << "\n";
        return kExitCheckFailed;
    }
    std::cout << path << ": ok\n";
    return kExitOk;
}

int cmd_simulate(const std::string& fixtures, int fuzz_episodes, uint64_t seed, bool verbose) {
    char* report_json = nullptr;
    int failures = 0;
    if (auto rc = pgt_simulate(fixtures.c_str(), &report_json, &failures)) {
        return fail(rc);
    }
    auto report = nlohmann::json::parse(owned(report_json));
    for (const auto& scenario : report) {
        std::cout << (scenario["pass"].get<bool>() ? "[PASS] " : "[FAIL] ")
                  << scenario["name"].get<std::string>() << " (outcome "
                  << scenario["verification_outcome"].get<std::string>() << ")\n";
        if (verbose || !scenario["pass"].get<bool>()) {
            for (const auto& row : scenario["expectations"]) {
                std::cout << "    " << (row["pass"].get<bool>() ? "ok   " : "FAIL ")
                          << row["api"].get<std::string>() << ": expected "
                          << row["expected"].get<std::string>() << ", got "
                          << row["actual"].get<std::string>() << "\n";
            }
        }
    }

    int violations = 0;
    if (fuzz_episodes > 0) {
        pgt_policy* policy = nullptr;
        const std::string policy_path = fixtures + "/policies/default.json";
        if (auto rc = pgt_policy_load_file(policy_path.c_str(), &policy)) {
            return fail(rc);
        }
        auto rc = pgt_fuzz(policy, fuzz_episodes, seed, &violations);
        pgt_policy_free(policy);
        if (rc) {
            return fail(rc);
        }
        std::cout << (violations == 0 ? "[PASS] " : "[FAIL] ") << "fuzz: " << fuzz_episodes
                  << " adversarial episodes, " << violations << " unsanctioned executions\n";
    }

    return failures == 0 && violations == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_serve(const std::string& config_path, const std::string& listen) {
    std::cerr << "serving from " << config_path << (listen.empty() ? "" : " on " + listen)
              << "\n";
    if (auto rc = pgt_serve(config_path.c_str(), listen.empty() ? nullptr : listen.c_str())) {
        return fail(rc);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"promptgate: permission tokens and enforcement for LLM tool calls"};
    app.require_subcommand(1);

    // keygen
    auto* keygen = app.add_subcommand("keygen", "generate a signing keypair");
    std::string scheme = "ecdsa-p256";
    std::string out_prefix = "promptgate_id";
    std::string register_path;
    std::vector<std::string> classes;
    keygen->add_option("--scheme", scheme, "rsa-2048 | ecdsa-p256 | ed25519")
        ->capture_default_str();
    keygen->add_option("--out", out_prefix, "output prefix (<prefix>.key, <prefix>.pub)")
        ->capture_default_str();
    keygen->add_option("--register", register_path,
                       "key registry file to add the public key to (created if missing)");
    keygen->add_option("--class", classes,
                       "permission class to register under, e.g. level:2 (repeatable)");

    // mint
    auto* mint = app.add_subcommand("mint", "derive a permission and append a signed token");
    std::string key_path, rules_path, status_path, permission_json, prompt_arg;
    int64_t ttl = 300;
    int64_t now = 0;
    bool on_device = false;
    mint->add_option("--key", key_path, "private key file from keygen");
    mint->add_option("--rules", rules_path, "permission rules file");
    mint->add_option("--status", status_path, "device status JSON file");
    mint->add_option("--permission", permission_json,
                     "explicit permission JSON, e.g. {\"level\":2} (overrides rules)");
    mint->add_option("--ttl", ttl, "token lifetime in seconds")->capture_default_str();
    mint->add_option("--now", now, "mint time (unix seconds; default: wall clock)");
    mint->add_flag("--on-device", on_device, "mint an unsigned on-device token");
    mint->add_option("prompt", prompt_arg, "user prompt (default: read stdin)");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "decode a token without verifying it");
    std::string inspect_input;
    inspect->add_option("input", inspect_input, "combined user input (default: read stdin)");

    // verify
    auto* verify = app.add_subcommand("verify", "run the full verification ladder");
    std::string policy_path, keys_path, nonce_path, verify_input_arg;
    int64_t horizon = 600;
    verify->add_option("--policy", policy_path, "policy file")->required();
    verify->add_option("--keys", keys_path, "key registry file")->required();
    verify->add_option("--nonce-cache", nonce_path, "nonce cache file (omit for in-memory)");
    verify->add_option("--horizon", horizon, "nonce retention horizon seconds")
        ->capture_default_str();
    verify->add_option("--now", now, "verification time (unix seconds; default: wall clock)");
    verify->add_option("input", verify_input_arg, "combined user input (default: read stdin)");

    // policy-check
    auto* policy_check = app.add_subcommand("policy-check", "validate a policy file");
    std::string check_path;
    policy_check->add_option("policy", check_path, "policy file")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run the scenario suite and fuzzer");
    std::string fixtures = "fixtures";
    int fuzz_episodes = 0;
    uint64_t seed = 42;
    bool verbose = false;
    simulate->add_option("--fixtures", fixtures, "fixtures directory")->capture_default_str();
    simulate->add_option("--fuzz", fuzz_episodes, "also run N adversarial fuzz episodes");
    simulate->add_option("--seed", seed, "fuzz seed")->capture_default_str();
    simulate->add_flag("-v,--verbose", verbose, "print every expectation row");

    // serve
    auto* serve = app.add_subcommand("serve", "start the HTTP enforcement service");
    std::string config_path;
    std::string listen;
    serve->add_option("--config", config_path,
                      "service config file (or $PROMPTGATE_CONFIG)");
    serve->add_option("--listen", listen, "host:port override (or $PROMPTGATE_LISTEN)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        app.exit(e);
        return kExitUsage;
    }

    if (keygen->parsed()) {
        return cmd_keygen(scheme, out_prefix, register_path, classes);
    }
    if (mint->parsed()) {
        return cmd_mint(key_path, rules_path, status_path, permission_json, ttl, now, on_device,
                        prompt_arg);
    }
    if (inspect->parsed()) {
        return cmd_inspect(inspect_input);
    }
    if (verify->parsed()) {
        return cmd_verify(policy_path, keys_path, nonce_path, horizon, now, verify_input_arg);
    }
    if (policy_check->parsed()) {
        return cmd_policy_check(check_path);
    }
    if (simulate->parsed()) {
        return cmd_simulate(fixtures, fuzz_episodes, seed, verbose);
    }
    if (serve->parsed()) {
        if (config_path.empty()) {
            if (const char* env = std::getenv("PROMPTGATE_CONFIG")) {
                config_path = env;
            }
        }
        if (listen.empty()) {
            if (const char* env = std::getenv("PROMPTGATE_LISTEN")) {
                listen = env;
            }
        }
        if (config_path.empty()) {
            std::cerr << "error: serve needs --config or $PROMPTGATE_CONFIG\n";
            return kExitUsage;
        }
        return cmd_serve(config_path, listen);
    }
    return kExitUsage;
}
