#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "errors.hpp"
#include "gateway.hpp"
#include "minter.hpp"
#include "test_util.hpp"

using namespace pgate;

namespace {

std::vector<PermissionRule> demo_rules() {
    return load_rules_file((test::fixtures_dir() / "rules.json").string());
}

DeviceStatus status_with_auth(std::optional<int64_t> seconds, LocationClass location) {
    DeviceStatus status;
    status.seconds_since_auth = seconds;
    status.account = "alice";
    status.location_class = location;
    status.peer_device_ok = true;
    status.now = 1700000000;
    return status;
}

}  // namespace

TEST_CASE("stale auth derives the low level") {
    // no password entered within five minutes -> low permission
    Permission p = derive_permission(demo_rules(), status_with_auth(400, LocationClass::Trusted));
    CHECK(p == Permission{LevelPermission{1}});
}

TEST_CASE("recent auth at a trusted location derives the high level") {
    Permission p = derive_permission(demo_rules(), status_with_auth(60, LocationClass::Trusted));
    CHECK(p == Permission{LevelPermission{2}});

    // recency alone is not enough under the demo rules
    CHECK(derive_permission(demo_rules(), status_with_auth(60, LocationClass::Untrusted)) ==
          Permission{LevelPermission{1}});
    // boundary: exactly 300 seconds still counts as recent
    CHECK(derive_permission(demo_rules(), status_with_auth(300, LocationClass::Trusted)) ==
          Permission{LevelPermission{2}});
    CHECK(derive_permission(demo_rules(), status_with_auth(301, LocationClass::Trusted)) ==
          Permission{LevelPermission{1}});
}

TEST_CASE("absent auth signal falls through to the default") {
    CHECK(derive_permission(demo_rules(), status_with_auth(std::nullopt, LocationClass::Trusted)) ==
          Permission{LevelPermission{1}});
}

TEST_CASE("default-only rule set always grants its default") {
    auto rules = load_rules(R"({"rules": [{"when": [], "grant": {"level": 3}}]})");
    for (auto location : {LocationClass::Trusted, LocationClass::Untrusted}) {
        CHECK(derive_permission(rules, status_with_auth(5, location)) ==
              Permission{LevelPermission{3}});
    }
}

TEST_CASE("first matching rule wins") {
    auto rules = load_rules(R"({"rules": [
      {"when": [{"field": "account", "op": "eq", "value": "root"}], "grant": {"level": 9}},
      {"when": [{"field": "account", "op": "ne", "value": ""}], "grant": {"level": 2}},
      {"when": [], "grant": {"level": 1}}
    ]})");
    DeviceStatus status = status_with_auth(0, LocationClass::Trusted);
    status.account = "root";
    CHECK(derive_permission(rules, status) == Permission{LevelPermission{9}});
    status.account = "alice";
    CHECK(derive_permission(rules, status) == Permission{LevelPermission{2}});
    status.account = "";
    CHECK(derive_permission(rules, status) == Permission{LevelPermission{1}});
}

TEST_CASE("rules files must end with an unconditional default") {
    CHECK_THROWS_WITH_AS(
        load_rules(R"({"rules": [
          {"when": [{"field": "peer_device_ok", "op": "eq", "value": true}],
           "grant": {"level": 1}}
        ]})"),
        doctest::Contains("default"), Error);
    CHECK_THROWS_AS(load_rules(R"({"rules": []})"), Error);
    CHECK_THROWS_AS(load_rules(R"({"rules": [{"when": [], "grant": {"level": 0}}]})"), Error);
    CHECK_THROWS_AS(
        load_rules(R"({"rules": [{"when": [{"field": "shoe_size", "op": "eq", "value": 9}],
                                   "grant": {"level": 1}},
                                  {"when": [], "grant": {"level": 1}}]})"),
        Error);
}

TEST_CASE("device status parsing rejects bad values") {
    CHECK_THROWS_AS(device_status_from_json(R"({"seconds_since_auth": -1})"), Error);
    CHECK_THROWS_AS(device_status_from_json(R"({"location_class": "mars"})"), Error);
    CHECK_THROWS_AS(device_status_from_json("not json"), Error);
    DeviceStatus status = device_status_from_json(R"({"seconds_since_auth": null})");
    CHECK_FALSE(status.seconds_since_auth.has_value());
}

TEST_CASE("non-level grants and rich conditions load") {
    auto rules = load_rules(R"({"rules": [
      {"when": [{"field": "location_class", "op": "ne", "value": "untrusted"},
                {"field": "peer_device_ok", "op": "eq", "value": true},
                {"field": "seconds_since_auth", "op": "present"}],
       "grant": {"capabilities": "TTFFT"}},
      {"when": [], "grant": {"graph": "crawl_then_share"}}
    ]})");
    CHECK(derive_permission(rules, status_with_auth(10, LocationClass::Trusted)) ==
          Permission{CapabilityPermission{{true, true, false, false, true}}});
    CHECK(derive_permission(rules, status_with_auth(std::nullopt, LocationClass::Trusted)) ==
          Permission{SequencePermission{"crawl_then_share"}});
    CHECK(derive_permission(rules, status_with_auth(10, LocationClass::Untrusted)) ==
          Permission{SequencePermission{"crawl_then_share"}});
}

TEST_CASE("mint produces a verifiable input") {
    const KeyPair& key = test::cached_keypair(SchemeId::EcdsaP256Sha256);
    Registry registry = load_registry_file((test::fixtures_dir() / "policies/default.json").string());
    KeyRegistry keys;
    keys.add("level:1", key.public_key);
    NonceCache nonces(600);

    const int64_t now = 1700000000;
    std::string input = mint("find my photos", LevelPermission{1}, key, now, 300);
    CHECK(input.starts_with("find my photos<D>"));

    VerifiedInput verified = verify_input(input, registry, keys, nonces, now);
    CHECK(verified.outcome == VerificationOutcome::Valid);
    REQUIRE(verified.payload.has_value());
    CHECK(verified.payload->permission == Permission{LevelPermission{1}});
    CHECK(verified.payload->issued_at == now);
    CHECK(verified.payload->expires_at == now + 300);
}

TEST_CASE("single-character token tampering always fails verification") {
    // tamper oracle: flip every character of the payload segment, one at a
    // time; every mutation must fail (invalid signature or unparseable)
    const KeyPair& key = test::cached_keypair(SchemeId::Ed25519);
    Registry registry = load_registry_file((test::fixtures_dir() / "policies/default.json").string());
    KeyRegistry keys;
    keys.add("level:2", key.public_key);

    const int64_t now = 1700000000;
    std::string input = mint("do the thing", LevelPermission{2}, key, now, 300);
    {
        NonceCache nonces(600);
        REQUIRE(verify_input(input, registry, keys, nonces, now).outcome ==
                VerificationOutcome::Valid);
    }

    const size_t token_start = input.find("<D>");
    const size_t payload_end = input.find('.', token_start);
    REQUIRE(token_start != std::string::npos);
    REQUIRE(payload_end != std::string::npos);

    int failures = 0;
    int total = 0;
    for (size_t i = token_start + 3; i < payload_end; ++i) {
        std::string mutated = input;
        mutated[i] = mutated[i] == 'A' ? 'B' : 'A';
        if (mutated == input) {
            continue;
        }
        NonceCache nonces(600);
        auto outcome = verify_input(mutated, registry, keys, nonces, now).outcome;
        ++total;
        if (outcome != VerificationOutcome::Valid) {
            ++failures;
        }
    }
    CHECK(total > 100);
    CHECK(failures == total);  // 100% rejection
}

TEST_CASE("two mints of the same prompt use distinct nonces") {
    const KeyPair& key = test::cached_keypair(SchemeId::Ed25519);
    std::string a = mint("same prompt", LevelPermission{1}, key, 1000, 60);
    std::string b = mint("same prompt", LevelPermission{1}, key, 1000, 60);
    CHECK(a != b);
    TokenPayload pa = decode_token(*extract(a).token).payload;
    TokenPayload pb = decode_token(*extract(b).token).payload;
    CHECK(pa.nonce != pb.nonce);
}

TEST_CASE("minted prompt hash matches a recomputation") {
    const KeyPair& key = test::cached_keypair(SchemeId::Ed25519);
    std::string input = mint("check my math", LevelPermission{1}, key, 1000, 60);
    ParsedInput parsed = extract(input);
    REQUIRE(parsed.token.has_value());
    TokenPayload payload = decode_token(*parsed.token).payload;
    Bytes expected = sha256(parsed.user_prompt);
    CHECK(std::equal(expected.begin(), expected.end(), payload.prompt_hash.begin()));
}

TEST_CASE("on-device mint omits key material and signature") {
    std::string input = mint_on_device("local prompt", LevelPermission{2}, 1000, 60);
    ParsedInput parsed = extract(input);
    REQUIRE(parsed.token.has_value());
    DecodedToken decoded = decode_token(*parsed.token);
    CHECK(decoded.payload.mode == TokenMode::OnDevice);
    CHECK(decoded.payload.public_key.empty());
    CHECK_FALSE(decoded.payload.scheme_id.has_value());
    CHECK(decoded.signature.empty());
    // the envelope has an empty signature segment
    CHECK(parsed.token->text.find(".</D>") != std::string::npos);
}

TEST_CASE("mint rejects bad arguments") {
    const KeyPair& key = test::cached_keypair(SchemeId::Ed25519);
    CHECK_THROWS_AS(mint("p", LevelPermission{1}, key, 1000, 0), Error);
    CHECK_THROWS_AS(mint("p", LevelPermission{1}, key, 1000, -5), Error);
    KeyPair dh{SchemeId::Dh2048, {0x01}, {0x02}};
    CHECK_THROWS_AS(mint("p", LevelPermission{1}, dh, 1000, 60), Error);
}
