#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "adapters.hpp"
#include "errors.hpp"
#include "gateway.hpp"
#include "minter.hpp"
#include "scenario.hpp"
#include "test_util.hpp"

using namespace pgate;

namespace {

struct Fixture {
    Registry registry;
    KeyRegistry keys;
    NonceCache nonces{600};
    const KeyPair& key;
    int64_t now = 1700000000;

    Fixture()
        : registry(load_registry_file((test::fixtures_dir() / "policies/default.json").string())),
          key(test::cached_keypair(SchemeId::EcdsaP256Sha256)) {
        keys.add("level:1", key.public_key);
        keys.add("level:2", key.public_key);
        keys.add("graph:crawl_then_share", key.public_key);
    }

    std::string minted(const std::string& prompt, const Permission& permission) const {
        return mint(prompt, permission, key, now, 300);
    }

    GatewayConfig config() const {
        GatewayConfig c;
        c.session_id_source = [n = std::make_shared<int>(0)]() mutable {
            return "s" + std::to_string(++*n);
        };
        c.challenge_id_source = [n = std::make_shared<int>(0)]() mutable {
            return "ch" + std::to_string(++*n);
        };
        return c;
    }
};

// Adapter that must never be consulted (Abort mode assertion).
struct BombAdapter : LlmAdapter {
    LlmStep next_step(const std::string&, const std::vector<TranscriptEntry>&) override {
        FAIL("adapter must not run");
        return LlmStep::say("");
    }
};

// Adapter that never says anything final.
struct BabblingAdapter : LlmAdapter {
    LlmStep next_step(const std::string&, const std::vector<TranscriptEntry>&) override {
        return LlmStep::call("Find_Photo");
    }
};

}  // namespace

TEST_CASE("verify_input walks the ladder in order") {
    Fixture fx;

    SUBCASE("freshly minted input is valid") {
        auto v = verify_input(fx.minted("hello", LevelPermission{1}), fx.registry, fx.keys,
                              fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::Valid);
        CHECK(v.parsed.user_prompt == "hello");
    }
    SUBCASE("no token") {
        auto v = verify_input("just a prompt", fx.registry, fx.keys, fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::MissingToken);
    }
    SUBCASE("well-formed envelope, garbage payload") {
        std::string input = "hi<D>" + base64url_encode(to_bytes("garbage")) + ".Zg</D>";
        auto v = verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::Malformed);
    }
    SUBCASE("tampered permission") {
        std::string input = tamper_permission(fx.minted("hello", LevelPermission{1}));
        auto v = verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::InvalidSignature);
    }
    SUBCASE("valid signature from an unregistered key") {
        KeyRegistry empty;
        auto v = verify_input(fx.minted("hello", LevelPermission{1}), fx.registry, empty,
                              fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::UnregisteredKey);
    }
    SUBCASE("key registered for a different class") {
        KeyRegistry wrong;
        wrong.add("level:2", fx.key.public_key);
        auto v = verify_input(fx.minted("hello", LevelPermission{1}), fx.registry, wrong,
                              fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::UnregisteredKey);
    }
    SUBCASE("expired token") {
        std::string input = fx.minted("hello", LevelPermission{1});
        auto v = verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now + 300);
        CHECK(v.outcome == VerificationOutcome::Expired);
        // registration outranks expiry in the ladder
        KeyRegistry empty;
        auto v2 = verify_input(input, fx.registry, empty, fx.nonces, fx.now + 300);
        CHECK(v2.outcome == VerificationOutcome::UnregisteredKey);
    }
    SUBCASE("replayed nonce") {
        std::string input = fx.minted("hello", LevelPermission{1});
        CHECK(verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now).outcome ==
              VerificationOutcome::Valid);
        CHECK(verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now).outcome ==
              VerificationOutcome::ReplayedNonce);
    }
    SUBCASE("token moved to a different prompt") {
        std::string input = fx.minted("hello", LevelPermission{1});
        std::string token = input.substr(5);  // strip "hello"
        auto v = verify_input("evil prompt" + token, fx.registry, fx.keys, fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::InvalidSignature);
    }
    SUBCASE("permission outside the registry is malformed") {
        auto v = verify_input(fx.minted("hello", LevelPermission{7}), fx.registry, fx.keys,
                              fx.nonces, fx.now);
        CHECK(v.outcome == VerificationOutcome::Malformed);
    }
    SUBCASE("on-device tokens are refused unless explicitly accepted") {
        std::string input = mint_on_device("hello", LevelPermission{1}, fx.now, 300);
        CHECK(verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now).outcome ==
              VerificationOutcome::InvalidSignature);
        CHECK(verify_input(input, fx.registry, fx.keys, fx.nonces, fx.now, true).outcome ==
              VerificationOutcome::Valid);
    }
}

TEST_CASE("handle_input executes allowed calls and feeds observations back") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Find_Photo", {{"query", "cats"}}), false},
        {LlmStep::say("Found them."), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("find cat photos", LevelPermission{1}), adapter,
                                   executor, fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);

    CHECK(session.outcome == VerificationOutcome::Valid);
    REQUIRE(session.transcript.size() == 2);
    CHECK(session.transcript[0].step.kind == LlmStep::Kind::Call);
    CHECK(session.transcript[0].decision->allows());
    CHECK(session.transcript[0].observation == "found 3 photos");
    CHECK(session.transcript[1].step.kind == LlmStep::Kind::Say);
    CHECK_FALSE(session.transcript[1].decision.has_value());
    REQUIRE(executor.executed().size() == 1);
    CHECK(executor.executed()[0].api == "Find_Photo");
}

TEST_CASE("handle_input denies with the configured behavior and frozen strings") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Send_Email", {{"to", "x@y"}}), false},
        {LlmStep::call("Web_Crawl", {{"url", "u"}}), false},
        {LlmStep::say("done"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("p", LevelPermission{1}), adapter, executor,
                                   fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);

    REQUIRE(session.transcript.size() == 3);
    CHECK(session.transcript[0].decision->kind == Decision::Kind::RequestVerification);
    CHECK(session.transcript[0].observation == "ACTION HELD: verification required (challenge ch1)");
    CHECK(session.pending_challenges.count("ch1") == 1);
    CHECK(session.pending_challenges.at("ch1").api == "Send_Email");
    // the denial does not stop the loop; the next allowed call still runs
    CHECK(session.transcript[1].decision->allows());
    REQUIRE(executor.executed().size() == 1);
    CHECK(executor.executed()[0].api == "Web_Crawl");
}

TEST_CASE("unknown api is rejected, not executed") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Format_Disk"), false},
        {LlmStep::say("hmm"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("p", LevelPermission{2}), adapter, executor,
                                   fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);
    CHECK(session.transcript[0].decision->kind == Decision::Kind::Reject);
    CHECK(session.transcript[0].observation == "ACTION DENIED: unknown api");
    CHECK(executor.executed().empty());
}

TEST_CASE("capability token against a min-level registry denies loudly") {
    Fixture fx;
    Permission caps = CapabilityPermission{std::vector<bool>(5, true)};
    fx.keys.add(permission_class(caps), fx.key.public_key);
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Find_Photo"), false},
        {LlmStep::say("x"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("p", caps), adapter, executor, fx.registry, fx.keys,
                                   fx.nonces, fx.config(), fx.now);
    CHECK(session.outcome == VerificationOutcome::Valid);
    CHECK(session.transcript[0].decision->kind == Decision::Kind::Reject);
    CHECK(session.transcript[0].observation == "ACTION DENIED: permission model mismatch");
    CHECK(executor.executed().empty());
}

TEST_CASE("sequence permission advances per session and denial consumes nothing") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Send_Email"), false},  // no edge from idle: denied
        {LlmStep::call("Web_Crawl"), false},   // idle -> fetched
        {LlmStep::call("Send_Email"), false},  // fetched -> idle
        {LlmStep::call("Send_Email"), false},  // denied again from idle
        {LlmStep::say("done"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session =
        handle_input(fx.minted("p", SequencePermission{"crawl_then_share"}), adapter, executor,
                     fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);

    REQUIRE(session.transcript.size() == 5);
    CHECK_FALSE(session.transcript[0].decision->allows());
    CHECK(session.transcript[1].decision->allows());
    CHECK(session.transcript[2].decision->allows());
    CHECK_FALSE(session.transcript[3].decision->allows());
    REQUIRE(executor.executed().size() == 2);
    CHECK(executor.executed()[0].api == "Web_Crawl");
    CHECK(executor.executed()[1].api == "Send_Email");
}

TEST_CASE("refuse-all mode runs the model but denies every call") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Find_Photo"), false},  // would be allowed with a valid token
        {LlmStep::say("sorry"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    // replay the same minted input twice: the second pass fails verification
    std::string input = fx.minted("p", LevelPermission{2});
    auto config = fx.config();
    handle_input(input, adapter, executor, fx.registry, fx.keys, fx.nonces, config, fx.now);

    ScriptedAdapter adapter2(script);
    executor.reset();
    Session session =
        handle_input(input, adapter2, executor, fx.registry, fx.keys, fx.nonces, config, fx.now);
    CHECK(session.outcome == VerificationOutcome::ReplayedNonce);
    REQUIRE(session.transcript.size() == 2);
    CHECK(session.transcript[0].decision->kind == Decision::Kind::RequestVerification);
    CHECK(session.transcript[0].observation.starts_with("ACTION HELD:"));
    CHECK(executor.executed().empty());
    CHECK_FALSE(session.token_context.has_value());
}

TEST_CASE("abort mode never reaches the adapter") {
    Fixture fx;
    BombAdapter adapter;
    MockToolExecutor executor;
    auto config = fx.config();
    config.failure_mode = FailureMode::Abort;
    Session session = handle_input("no token here", adapter, executor, fx.registry, fx.keys,
                                   fx.nonces, config, fx.now);
    CHECK(session.outcome == VerificationOutcome::MissingToken);
    CHECK(session.transcript.empty());
    CHECK(executor.executed().empty());
}

TEST_CASE("step budget bounds a babbling adapter") {
    Fixture fx;
    BabblingAdapter adapter;
    MockToolExecutor executor;
    auto config = fx.config();
    config.step_budget = 4;
    CHECK_THROWS_AS(handle_input(fx.minted("p", LevelPermission{1}), adapter, executor,
                                 fx.registry, fx.keys, fx.nonces, config, fx.now),
                    Error);
    CHECK(executor.executed().size() == 4);  // each step was gated individually

    config.step_budget = 0;
    CHECK_THROWS_AS(handle_input(fx.minted("q", LevelPermission{1}), adapter, executor,
                                 fx.registry, fx.keys, fx.nonces, config, fx.now),
                    Error);
}

TEST_CASE("transcript is complete and ordered") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Web_Crawl", {{"url", "a"}}), false},
        {LlmStep::call("Delete_Email"), false},
        {LlmStep::call("Find_Photo"), false},
        {LlmStep::say("done"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("p", LevelPermission{1}), adapter, executor,
                                   fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);
    REQUIRE(session.transcript.size() == 4);
    for (size_t i = 0; i < session.transcript.size(); ++i) {
        CHECK(session.transcript[i].index == i);
    }
    CHECK(session.transcript[0].step.api == "Web_Crawl");
    CHECK(session.transcript[1].step.api == "Delete_Email");
    CHECK(session.transcript[2].step.api == "Find_Photo");
    CHECK(session.transcript[3].step.kind == LlmStep::Kind::Say);
}

TEST_CASE("challenge resolution") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Send_Email", {{"to", "boss@corp"}}), false},
        {LlmStep::say("waiting for verification"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    auto config = fx.config();
    Session session = handle_input(fx.minted("send the report", LevelPermission{1}), adapter,
                                   executor, fx.registry, fx.keys, fx.nonces, config, fx.now);
    REQUIRE(session.pending_challenges.size() == 1);
    const std::string challenge_id = session.pending_challenges.begin()->first;

    SUBCASE("an equally weak token cannot unblock") {
        std::string weak = fx.minted("send the report", LevelPermission{1});
        auto result = resolve_challenge(session, challenge_id, weak, executor, fx.registry,
                                        fx.keys, fx.nonces, config, fx.now);
        CHECK(result.decision.kind == Decision::Kind::Reject);
        CHECK(session.pending_challenges.count(challenge_id) == 1);  // still pending
        CHECK(executor.executed().empty());

        // an elevated token afterwards still works
        std::string strong = fx.minted("send the report", LevelPermission{2});
        auto retry = resolve_challenge(session, challenge_id, strong, executor, fx.registry,
                                       fx.keys, fx.nonces, config, fx.now);
        CHECK(retry.decision.allows());
        REQUIRE(executor.executed().size() == 1);
        CHECK(executor.executed()[0].api == "Send_Email");
        CHECK(executor.executed()[0].args.at("to") == "boss@corp");
    }
    SUBCASE("an elevated token executes the blocked action exactly once") {
        std::string strong = fx.minted("send the report", LevelPermission{2});
        auto result = resolve_challenge(session, challenge_id, strong, executor, fx.registry,
                                        fx.keys, fx.nonces, config, fx.now);
        CHECK(result.decision.allows());
        CHECK(result.observation == "email sent to boss@corp");
        CHECK(session.pending_challenges.empty());
        CHECK(executor.executed().size() == 1);

        // idempotent on success: the cleared challenge is unknown now
        std::string again = fx.minted("send the report", LevelPermission{2});
        CHECK_THROWS_AS(resolve_challenge(session, challenge_id, again, executor, fx.registry,
                                          fx.keys, fx.nonces, config, fx.now),
                        Error);
        CHECK(executor.executed().size() == 1);
    }
    SUBCASE("a tampered elevated token is rejected") {
        std::string tampered = tamper_permission(fx.minted("send the report", LevelPermission{1}));
        auto result = resolve_challenge(session, challenge_id, tampered, executor, fx.registry,
                                        fx.keys, fx.nonces, config, fx.now);
        CHECK(result.decision.kind == Decision::Kind::Reject);
        CHECK(result.outcome == VerificationOutcome::InvalidSignature);
        CHECK(session.pending_challenges.count(challenge_id) == 1);
        CHECK(executor.executed().empty());
    }
    SUBCASE("unknown challenge id") {
        std::string strong = fx.minted("send the report", LevelPermission{2});
        CHECK_THROWS_AS(resolve_challenge(session, "nope", strong, executor, fx.registry, fx.keys,
                                          fx.nonces, config, fx.now),
                        Error);
    }
    SUBCASE("replaying the original input as elevation fails") {
        // the original nonce was burned during handle_input
        std::string original = fx.minted("send the report", LevelPermission{2});
        auto first = resolve_challenge(session, challenge_id, original, executor, fx.registry,
                                       fx.keys, fx.nonces, config, fx.now);
        CHECK(first.decision.allows());
    }
}

TEST_CASE("session serialization has stable shape") {
    Fixture fx;
    std::vector<ScriptedStep> script = {
        {LlmStep::call("Find_Photo", {{"query", "q"}}), false},
        {LlmStep::say("ok"), false},
    };
    ScriptedAdapter adapter(script);
    MockToolExecutor executor;
    Session session = handle_input(fx.minted("p", LevelPermission{1}), adapter, executor,
                                   fx.registry, fx.keys, fx.nonces, fx.config(), fx.now);
    std::string json = session_to_json(session);
    CHECK(json.find("\"session_id\":\"s1\"") != std::string::npos);
    CHECK(json.find("\"verification_outcome\":\"valid\"") != std::string::npos);
    CHECK(json.find("\"transcript\":[{\"index\":0,\"step\":{\"kind\":\"call\",\"api\":\"Find_Photo\"") !=
          std::string::npos);
    // transcript JSON field order is frozen
    std::string t = transcript_to_json(session.transcript);
    CHECK(t.starts_with("[{\"index\":0,\"step\":"));
    CHECK(t.find("\"decision\":\"execute\",\"observation\":\"found 3 photos\"") !=
          std::string::npos);
    CHECK(t.find("\"decision\":null,\"observation\":\"\"") != std::string::npos);
}

TEST_CASE("randomized adversarial adapters never reach the executor unsanctioned") {
    // small-scale non-executability property; the acceptance suite runs the
    // full 10k-episode version
    Fixture fx;
    FuzzReport report = fuzz_adversary(500, 20240601, fx.registry);
    CHECK(report.episodes == 500);
    CHECK(report.violations == 0);
}
