/*
 * promptgate: capability-gated enforcement for LLM tool calls.
 *
 * A device mints a signed permission token ("<D>payload.signature</D>") and
 * appends it to each user prompt; the gateway verifies the token and refuses
 * to execute any model-emitted action outside the token's permission scope.
 *
 * C API conventions:
 *   - every function returns a pgt_status; PGT_OK (0) means success
 *   - objects are opaque handles released with their pgt_*_free function
 *   - output strings are NUL-terminated, UTF-8/JSON, owned by the caller and
 *     released with pgt_string_free
 *   - pgt_last_error() describes the most recent failure on this thread
 *   - handles passed to pgt_gateway_new are borrowed: keep them alive until
 *     the gateway is freed; the nonce cache and gateway are thread-safe, the
 *     other handles are immutable after creation
 */

#ifndef PROMPTGATE_H
#define PROMPTGATE_H

#include <stdint.h>

#if defined(_WIN32)
#define PGT_API __declspec(dllexport)
#else
#define PGT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pgt_status {
    PGT_OK = 0,
    PGT_ERR_INVALID_ARGUMENT = 1,
    PGT_ERR_MALFORMED = 2,         /* unparseable token/payload */
    PGT_ERR_UNSUPPORTED_SCHEME = 3,
    PGT_ERR_CRYPTO = 4,
    PGT_ERR_CONFIG = 5,
    PGT_ERR_IO = 6,
    PGT_ERR_UNKNOWN_API = 7,
    PGT_ERR_MODEL_MISMATCH = 8,
    PGT_ERR_STEP_BUDGET = 9,
    PGT_ERR_UNKNOWN_CHALLENGE = 10,
    PGT_ERR_FIXTURE_MISSING = 11,
    PGT_ERR_INTERNAL = 12
} pgt_status;

/* Result of verifying a combined user input (prompt + token). */
typedef enum pgt_outcome {
    PGT_OUTCOME_VALID = 0,
    PGT_OUTCOME_INVALID_SIGNATURE = 1,
    PGT_OUTCOME_UNREGISTERED_KEY = 2,
    PGT_OUTCOME_EXPIRED = 3,
    PGT_OUTCOME_REPLAYED_NONCE = 4,
    PGT_OUTCOME_MISSING_TOKEN = 5,
    PGT_OUTCOME_MALFORMED = 6
} pgt_outcome;

typedef struct pgt_keypair pgt_keypair;
typedef struct pgt_policy pgt_policy;            /* API registry + graphs */
typedef struct pgt_key_registry pgt_key_registry;
typedef struct pgt_nonce_cache pgt_nonce_cache;
typedef struct pgt_gateway pgt_gateway;

PGT_API const char* pgt_version(void);
PGT_API const char* pgt_status_name(pgt_status status);
PGT_API const char* pgt_outcome_name(pgt_outcome outcome);
/* Detail message for the most recent error on the calling thread. */
PGT_API const char* pgt_last_error(void);
PGT_API void pgt_string_free(char* s);

/* ---- keys ---------------------------------------------------------- */

/* scheme_id: "rsa-2048" | "ecdsa-p256" | "ed25519". The key-agreement ids
 * "dh-2048" and "ecdh-p256" are recognized but rejected with
 * PGT_ERR_UNSUPPORTED_SCHEME: they cannot sign. */
PGT_API pgt_status pgt_keypair_generate(const char* scheme_id, pgt_keypair** out);
PGT_API pgt_status pgt_keypair_save(const pgt_keypair* key, const char* private_path,
                                    const char* public_path, int64_t created_at);
PGT_API pgt_status pgt_keypair_load(const char* private_path, pgt_keypair** out);
PGT_API const char* pgt_keypair_scheme(const pgt_keypair* key);
/* base64url SubjectPublicKeyInfo, as stored in registries and tokens */
PGT_API pgt_status pgt_keypair_public(const pgt_keypair* key, char** out);
PGT_API void pgt_keypair_free(pgt_keypair* key);

/* ---- policy -------------------------------------------------------- */

PGT_API pgt_status pgt_policy_load_file(const char* path, pgt_policy** out);
PGT_API pgt_status pgt_policy_load_json(const char* json_text, pgt_policy** out);
/* Registry summary: names, requirements, deny behavior; never key material. */
PGT_API pgt_status pgt_policy_summary(const pgt_policy* policy, char** json_out);
PGT_API void pgt_policy_free(pgt_policy* policy);

/* ---- key registry --------------------------------------------------- */

PGT_API pgt_status pgt_key_registry_new(pgt_key_registry** out);
PGT_API pgt_status pgt_key_registry_load_file(const char* path, pgt_key_registry** out);
/* public_key: base64url SPKI as produced by pgt_keypair_public */
PGT_API pgt_status pgt_key_registry_add(pgt_key_registry* registry,
                                        const char* permission_class, const char* public_key);
PGT_API pgt_status pgt_key_registry_save(const pgt_key_registry* registry, const char* path);
PGT_API void pgt_key_registry_free(pgt_key_registry* registry);

/* ---- nonce cache ----------------------------------------------------- */

/* path may be NULL for a purely in-memory cache; with a path the cache
 * persists accepted nonces and survives restarts within the horizon. */
PGT_API pgt_status pgt_nonce_cache_open(const char* path, int64_t horizon_seconds,
                                        pgt_nonce_cache** out);
PGT_API void pgt_nonce_cache_free(pgt_nonce_cache* cache);

/* ---- minting and verification ---------------------------------------- */

/* Derives the permission granted by an ordered rules file for a device
 * status; both arguments are JSON texts (see docs/formats.md). The result is
 * a permission JSON like {"level":2}. */
PGT_API pgt_status pgt_derive_permission(const char* rules_json, const char* status_json,
                                         char** permission_json_out);

/* Builds the combined user input: prompt + signed token. permission_json is
 * {"level":n} | {"capabilities":"TF..."} | {"graph":"id"}. on_device != 0
 * mints an unsigned token without a public key (key may then be NULL). */
PGT_API pgt_status pgt_mint(const char* prompt, const char* permission_json,
                            const pgt_keypair* key, int64_t now, int64_t ttl_seconds,
                            int on_device, char** user_input_out);

/* Decodes the trailing token without verifying anything. */
PGT_API pgt_status pgt_inspect(const char* user_input, char** payload_json_out);

/* Runs the whole verification ladder: extract, decode, signature, key
 * registration, expiry, nonce replay, prompt hash. The outcome is a result,
 * not an error; PGT_OK is returned whenever the ladder ran. detail_json_out
 * (optional) carries {"outcome", "user_prompt", "payload"?}. */
PGT_API pgt_status pgt_verify(const char* user_input, const pgt_policy* policy,
                              const pgt_key_registry* keys, pgt_nonce_cache* nonces,
                              int64_t now, pgt_outcome* outcome_out, char** detail_json_out);

/* ---- gateway ---------------------------------------------------------- */

/* Model callback: receive the prompt and history (transcript JSON), produce
 * one step as JSON: {"kind":"say","text":...} or
 * {"kind":"call","api":...,"args":{...}}. Return nonzero to abort. The step
 * string is released with pgt_string_free by the library. */
typedef int (*pgt_next_step_fn)(void* user_data, const char* user_prompt,
                                const char* history_json, char** step_json_out);

/* Tool callback: run a sanctioned call, return the observation text. Called
 * only for actions the policy allowed. Return nonzero to abort. */
typedef int (*pgt_execute_fn)(void* user_data, const char* api, const char* args_json,
                              char** observation_out);

/* config_json (optional): {"failure_mode":"refuse_all"|"abort",
 * "step_budget":16, "accept_on_device":false}. Policy, keys and nonce cache
 * are borrowed. */
PGT_API pgt_status pgt_gateway_new(const pgt_policy* policy, const pgt_key_registry* keys,
                                   pgt_nonce_cache* nonces, const char* config_json,
                                   pgt_gateway** out);

/* One full enforcement episode. session_json_out carries the session id,
 * verification outcome, ordered transcript and pending challenges. */
PGT_API pgt_status pgt_gateway_handle(pgt_gateway* gateway, const char* user_input, int64_t now,
                                      pgt_next_step_fn next_step, void* next_step_data,
                                      pgt_execute_fn execute, void* execute_data,
                                      char** session_json_out);

/* Re-verifies an elevated input against a held challenge; executes the
 * blocked action at most once. result_json_out: {"decision", "reason",
 * "verification_outcome", "observation"}. */
PGT_API pgt_status pgt_gateway_resolve(pgt_gateway* gateway, const char* challenge_id,
                                       const char* elevated_input, int64_t now,
                                       pgt_execute_fn execute, void* execute_data,
                                       char** result_json_out);
PGT_API void pgt_gateway_free(pgt_gateway* gateway);

/* ---- simulation and service ------------------------------------------- */

/* Validates a policy file; PGT_OK when it loads, PGT_ERR_CONFIG otherwise
 * (diagnostics via pgt_last_error). */
PGT_API pgt_status pgt_policy_check_file(const char* path);

/* Runs every scenario under <fixtures_dir>/scenarios. failures_out counts
 * scenarios whose decision table did not match. */
PGT_API pgt_status pgt_simulate(const char* fixtures_dir, char** report_json_out,
                                int* failures_out);

/* Randomized adversarial episodes against a policy; violations_out counts
 * executed calls an independent oracle did not sanction (expected: 0). */
PGT_API pgt_status pgt_fuzz(const pgt_policy* policy, int episodes, uint64_t seed,
                            int* violations_out);

/* Starts the HTTP service from a config file and blocks until the process is
 * signalled. listen_override ("host:port", may be NULL) takes precedence over
 * the config file's listen address. */
PGT_API pgt_status pgt_serve(const char* config_path, const char* listen_override);

#ifdef __cplusplus
}
#endif

#endif /* PROMPTGATE_H */
