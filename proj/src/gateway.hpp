#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crypto.hpp"
#include "policy.hpp"
#include "token.hpp"

namespace pgate {

// One LLM turn: either user-facing text (ends the loop) or a tool call that
// must pass the permission gate before anything executes.
struct LlmStep {
    enum class Kind { Say, Call };
    Kind kind = Kind::Say;
    std::string text;  // Say
    std::string api;   // Call
    std::map<std::string, std::string> args;

    static LlmStep say(std::string t) {
        LlmStep s;
        s.kind = Kind::Say;
        s.text = std::move(t);
        return s;
    }
    static LlmStep call(std::string api_name, std::map<std::string, std::string> call_args = {}) {
        LlmStep s;
        s.kind = Kind::Call;
        s.api = std::move(api_name);
        s.args = std::move(call_args);
        return s;
    }
};

struct TranscriptEntry {
    size_t index = 0;
    LlmStep step;
    std::optional<Decision> decision;  // absent for Say steps
    std::string observation;
};

// The model behind the gate. Adapters are mocks or external clients; the
// gateway only trusts what the policy check says, never the adapter.
class LlmAdapter {
public:
    virtual ~LlmAdapter() = default;
    virtual LlmStep next_step(const std::string& user_prompt,
                              const std::vector<TranscriptEntry>& history) = 0;
};

// Runs a sanctioned call and returns the observation fed back to the model.
// The gateway invokes this only after a Decision of Execute.
class ToolExecutor {
public:
    virtual ~ToolExecutor() = default;
    virtual std::string execute(const std::string& api,
                                const std::map<std::string, std::string>& args) = 0;
};

enum class VerificationOutcome {
    Valid,
    InvalidSignature,
    UnregisteredKey,
    Expired,
    ReplayedNonce,
    MissingToken,
    Malformed,
};

const char* verification_outcome_name(VerificationOutcome outcome);

struct ActionRequest {
    std::string api;
    std::map<std::string, std::string> args;
};

struct ChallengeResolution {
    std::string challenge_id;
    std::string api;
    Decision decision;
    std::string observation;
};

struct Session {
    std::string id;
    std::string user_prompt;
    VerificationOutcome outcome = VerificationOutcome::MissingToken;
    std::optional<TokenPayload> token_context;  // set when outcome is Valid
    SessionPolicyState policy_state;
    std::vector<TranscriptEntry> transcript;
    std::map<std::string, ActionRequest> pending_challenges;
    std::vector<ChallengeResolution> resolutions;
};

enum class FailureMode { RefuseAll, Abort };

struct GatewayConfig {
    FailureMode failure_mode = FailureMode::RefuseAll;
    int step_budget = 16;
    // Whether unsigned on-device tokens are honored. Off by default: a server
    // cannot verify them, so they fail as InvalidSignature unless the gateway
    // itself runs on the device that minted them.
    bool accept_on_device = false;
    // Injectable id generation so scripted runs can produce byte-identical
    // transcripts; production uses random 8/16-byte hex ids.
    std::function<std::string()> session_id_source;
    std::function<std::string()> challenge_id_source;
};

// Frozen denial strings; transcripts must be reproducible byte-for-byte.
inline constexpr char kObservationDenied[] = "ACTION DENIED: insufficient permission";
inline constexpr char kObservationDeniedUnknownApi[] = "ACTION DENIED: unknown api";
inline constexpr char kObservationDeniedModelMismatch[] =
    "ACTION DENIED: permission model mismatch";
inline constexpr char kObservationHeldPrefix[] =
    "ACTION HELD: verification required (challenge ";
inline constexpr char kObservationHeldSuffix[] = ")";

struct VerifiedInput {
    ParsedInput parsed;
    std::optional<TokenPayload> payload;  // set once the token decoded
    VerificationOutcome outcome = VerificationOutcome::MissingToken;
};

// The fixed verification ladder: extract, decode (plus permission-vs-registry
// invariants), signature, key registration, expiry, nonce replay, prompt hash.
// The first failing rung names the outcome; nothing here throws.
VerifiedInput verify_input(const std::string& user_input, const Registry& registry,
                           const KeyRegistry& keys, NonceCache& nonce_cache, int64_t now,
                           bool accept_on_device = false);

// Drives the adapter loop and gates every Call through policy::check under the
// verified token's permission. Executes, rejects, or holds each action; on a
// failed verification either refuses every action (RefuseAll) or never invokes
// the adapter (Abort). Throws StepBudgetExceeded if the adapter never says.
Session handle_input(const std::string& user_input, LlmAdapter& adapter, ToolExecutor& executor,
                     const Registry& registry, const KeyRegistry& keys, NonceCache& nonce_cache,
                     const GatewayConfig& config, int64_t now);

struct ResolutionResult {
    Decision decision;
    VerificationOutcome outcome;  // verification of the elevated input
    std::string observation;
};

// Re-verifies the elevated input and, when its permission covers the blocked
// API, executes it exactly once and clears the challenge. Any other path
// records a Reject and leaves the challenge pending. Throws UnknownChallenge.
ResolutionResult resolve_challenge(Session& session, const std::string& challenge_id,
                                   const std::string& elevated_input, ToolExecutor& executor,
                                   const Registry& registry, const KeyRegistry& keys,
                                   NonceCache& nonce_cache, const GatewayConfig& config,
                                   int64_t now);

// Stable transcript/session serialization used by golden tests and the HTTP
// layer: fixed field order {index, step, decision, observation}.
std::string transcript_to_json(const std::vector<TranscriptEntry>& transcript, bool pretty = false);
std::string session_to_json(const Session& session, bool pretty = false);

}  // namespace pgate
