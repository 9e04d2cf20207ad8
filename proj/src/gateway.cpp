#include "gateway.hpp"

#include <algorithm>

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

namespace {

std::string random_hex_id(size_t bytes) {
    return to_hex(random_bytes(bytes));
}

std::string held_observation(const std::string& challenge_id) {
    return std::string(kObservationHeldPrefix) + challenge_id + kObservationHeldSuffix;
}

std::string new_challenge(Session& session, const GatewayConfig& config, ActionRequest request) {
    std::string id = config.challenge_id_source ? config.challenge_id_source()
                                                : random_hex_id(16);
    session.pending_challenges.emplace(id, std::move(request));
    return id;
}

nlohmann::ordered_json step_to_json(const LlmStep& step) {
    nlohmann::ordered_json out;
    if (step.kind == LlmStep::Kind::Say) {
        out["kind"] = "say";
        out["text"] = step.text;
    } else {
        out["kind"] = "call";
        out["api"] = step.api;
        out["args"] = step.args;
    }
    return out;
}

nlohmann::ordered_json entry_to_json(const TranscriptEntry& entry) {
    nlohmann::ordered_json out;
    out["index"] = entry.index;
    out["step"] = step_to_json(entry.step);
    if (entry.decision) {
        out["decision"] = decision_kind_name(entry.decision->kind);
    } else {
        out["decision"] = nullptr;
    }
    out["observation"] = entry.observation;
    return out;
}

nlohmann::ordered_json transcript_json(const std::vector<TranscriptEntry>& transcript) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& entry : transcript) {
        out.push_back(entry_to_json(entry));
    }
    return out;
}

}  // namespace

const char* verification_outcome_name(VerificationOutcome outcome) {
    switch (outcome) {
        case VerificationOutcome::Valid: return "valid";
        case VerificationOutcome::InvalidSignature: return "invalid_signature";
        case VerificationOutcome::UnregisteredKey: return "unregistered_key";
        case VerificationOutcome::Expired: return "expired";
        case VerificationOutcome::ReplayedNonce: return "replayed_nonce";
        case VerificationOutcome::MissingToken: return "missing_token";
        case VerificationOutcome::Malformed: return "malformed";
    }
    return "unknown";
}

VerifiedInput verify_input(const std::string& user_input, const Registry& registry,
                           const KeyRegistry& keys, NonceCache& nonce_cache, int64_t now,
                           bool accept_on_device) {
    VerifiedInput out;
    out.parsed = extract(user_input);
    if (!out.parsed.token) {
        out.outcome = VerificationOutcome::MissingToken;
        return out;
    }

    DecodedToken decoded;
    try {
        decoded = decode_token(*out.parsed.token);
    } catch (const Error&) {
        out.outcome = VerificationOutcome::Malformed;
        return out;
    }
    out.payload = decoded.payload;

    // A structurally valid payload whose permission cannot exist under the
    // active policy is treated as malformed, before any crypto runs.
    if (!permission_valid_for(decoded.payload.permission, registry)) {
        out.outcome = VerificationOutcome::Malformed;
        return out;
    }

    if (decoded.payload.mode == TokenMode::ServerVerified) {
        auto key_scheme = public_key_scheme(decoded.payload.public_key);
        if (!key_scheme || key_scheme != decoded.payload.scheme_id ||
            !verify(decoded.payload_bytes, decoded.signature, decoded.payload.public_key)) {
            out.outcome = VerificationOutcome::InvalidSignature;
            return out;
        }
        if (!keys.check_registered(decoded.payload.public_key,
                                   permission_class(decoded.payload.permission))) {
            out.outcome = VerificationOutcome::UnregisteredKey;
            return out;
        }
    } else if (!accept_on_device) {
        // Unsigned token presented to a server-side gateway: unverifiable.
        out.outcome = VerificationOutcome::InvalidSignature;
        return out;
    }

    if (now >= decoded.payload.expires_at) {
        out.outcome = VerificationOutcome::Expired;
        return out;
    }

    Bytes nonce(decoded.payload.nonce.begin(), decoded.payload.nonce.end());
    if (!nonce_cache.check_and_record(nonce, decoded.payload.expires_at, now)) {
        out.outcome = VerificationOutcome::ReplayedNonce;
        return out;
    }

    // Token moved onto a different prompt: signature no longer binds this input.
    Bytes hash = sha256(out.parsed.user_prompt);
    if (!std::equal(hash.begin(), hash.end(), decoded.payload.prompt_hash.begin())) {
        out.outcome = VerificationOutcome::InvalidSignature;
        return out;
    }

    out.outcome = VerificationOutcome::Valid;
    return out;
}

Session handle_input(const std::string& user_input, LlmAdapter& adapter, ToolExecutor& executor,
                     const Registry& registry, const KeyRegistry& keys, NonceCache& nonce_cache,
                     const GatewayConfig& config, int64_t now) {
    if (config.step_budget <= 0) {
        throw Error(ErrorCode::InvalidArgument, "step budget must be positive");
    }

    VerifiedInput verified =
        verify_input(user_input, registry, keys, nonce_cache, now, config.accept_on_device);

    Session session;
    session.id = config.session_id_source ? config.session_id_source() : random_hex_id(8);
    session.user_prompt = verified.parsed.user_prompt;
    session.outcome = verified.outcome;

    const bool valid = verified.outcome == VerificationOutcome::Valid;
    if (valid) {
        session.token_context = verified.payload;
    } else if (config.failure_mode == FailureMode::Abort) {
        return session;  // fail closed without ever reaching the model
    }

    for (int i = 0; i < config.step_budget; ++i) {
        LlmStep step = adapter.next_step(session.user_prompt, session.transcript);
        TranscriptEntry entry;
        entry.index = session.transcript.size();
        entry.step = step;

        if (step.kind == LlmStep::Kind::Say) {
            session.transcript.push_back(std::move(entry));
            return session;
        }

        if (!valid) {
            // RefuseAll: the model may keep talking, but no action passes.
            std::string cid = new_challenge(session, config, {step.api, step.args});
            entry.decision = Decision::request_verification(
                std::string("token verification failed: ") +
                verification_outcome_name(verified.outcome));
            entry.observation = held_observation(cid);
        } else if (!registry.find_api(step.api)) {
            entry.decision = Decision::reject("unknown api " + step.api);
            entry.observation = kObservationDeniedUnknownApi;
        } else {
            Decision decision = Decision::reject("");
            SessionPolicyState next_state = session.policy_state;
            bool model_mismatch = false;
            try {
                std::tie(decision, next_state) =
                    check(session.token_context->permission, step.api, session.policy_state,
                          registry);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ModelMismatch) {
                    throw;
                }
                // Deployment bug (token permission model vs registry style);
                // deny loudly instead of taking the server down mid-session.
                decision = Decision::reject(e.what());
                model_mismatch = true;
            }

            switch (decision.kind) {
                case Decision::Kind::Execute:
                    entry.observation = executor.execute(step.api, step.args);
                    session.policy_state = next_state;
                    break;
                case Decision::Kind::Reject:
                    entry.observation =
                        model_mismatch ? kObservationDeniedModelMismatch : kObservationDenied;
                    break;
                case Decision::Kind::RequestVerification: {
                    std::string cid = new_challenge(session, config, {step.api, step.args});
                    entry.observation = held_observation(cid);
                    break;
                }
            }
            entry.decision = std::move(decision);
        }

        session.transcript.push_back(std::move(entry));
    }

    throw Error(ErrorCode::StepBudgetExceeded,
                "adapter produced no final response within " +
                    std::to_string(config.step_budget) + " steps");
}

ResolutionResult resolve_challenge(Session& session, const std::string& challenge_id,
                                   const std::string& elevated_input, ToolExecutor& executor,
                                   const Registry& registry, const KeyRegistry& keys,
                                   NonceCache& nonce_cache, const GatewayConfig& config,
                                   int64_t now) {
    auto it = session.pending_challenges.find(challenge_id);
    if (it == session.pending_challenges.end()) {
        throw Error(ErrorCode::UnknownChallenge, challenge_id);
    }
    const ActionRequest request = it->second;

    auto record = [&](Decision decision, const std::string& observation) {
        session.resolutions.push_back({challenge_id, request.api, decision, observation});
    };

    VerifiedInput verified =
        verify_input(elevated_input, registry, keys, nonce_cache, now, config.accept_on_device);
    if (verified.outcome != VerificationOutcome::Valid) {
        Decision decision = Decision::reject(std::string("verification failed: ") +
                                             verification_outcome_name(verified.outcome));
        record(decision, kObservationDenied);
        return {decision, verified.outcome, kObservationDenied};
    }

    Decision decision = Decision::reject("");
    if (!registry.find_api(request.api)) {
        decision = Decision::reject("unknown api " + request.api);
    } else {
        try {
            // Fresh state: the elevated token stands on its own, including a
            // sequence-graph permission starting from its initial state.
            auto [d, unused] = check(verified.payload->permission, request.api,
                                     SessionPolicyState{}, registry);
            decision = d;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ModelMismatch) {
                throw;
            }
            decision = Decision::reject(e.what());
        }
    }

    if (decision.allows()) {
        std::string observation = executor.execute(request.api, request.args);
        session.pending_challenges.erase(challenge_id);
        record(Decision::execute(), observation);
        return {Decision::execute(), VerificationOutcome::Valid, observation};
    }

    Decision rejected = Decision::reject(
        decision.reason.empty() ? "insufficient permission" : decision.reason);
    record(rejected, kObservationDenied);
    return {rejected, VerificationOutcome::Valid, kObservationDenied};
}

std::string transcript_to_json(const std::vector<TranscriptEntry>& transcript, bool pretty) {
    auto doc = transcript_json(transcript);
    return pretty ? doc.dump(2) : doc.dump();
}

std::string session_to_json(const Session& session, bool pretty) {
    nlohmann::ordered_json doc;
    doc["session_id"] = session.id;
    doc["verification_outcome"] = verification_outcome_name(session.outcome);
    doc["user_prompt"] = session.user_prompt;
    if (session.token_context) {
        doc["permission"] =
            nlohmann::ordered_json::parse(permission_to_json(session.token_context->permission));
    } else {
        doc["permission"] = nullptr;
    }
    doc["transcript"] = transcript_json(session.transcript);
    nlohmann::ordered_json challenges = nlohmann::ordered_json::object();
    for (const auto& [id, request] : session.pending_challenges) {
        challenges[id] = {{"api", request.api}, {"args", request.args}};
    }
    doc["pending_challenges"] = std::move(challenges);
    nlohmann::ordered_json resolutions = nlohmann::ordered_json::array();
    for (const auto& res : session.resolutions) {
        resolutions.push_back({{"challenge_id", res.challenge_id},
                               {"api", res.api},
                               {"decision", decision_kind_name(res.decision.kind)},
                               {"observation", res.observation}});
    }
    doc["resolutions"] = std::move(resolutions);
    return pretty ? doc.dump(2) : doc.dump();
}

}  // namespace pgate
