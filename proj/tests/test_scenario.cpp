#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "errors.hpp"
#include "scenario.hpp"
#include "test_util.hpp"

using namespace pgate;

namespace {

Registry demo_registry() {
    return load_registry_file((test::fixtures_dir() / "policies/default.json").string());
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "missing file: ", path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("all shipped scenarios pass their decision tables") {
    auto reports = run_all_scenarios(test::fixtures_dir());
    REQUIRE(reports.size() == 6);
    const std::string expected_names[] = {"delete_email_blocked", "find_photo_executed",
                                          "malicious_user",       "malicious_web",
                                          "malicious_llm",        "tamper"};
    for (size_t i = 0; i < reports.size(); ++i) {
        CAPTURE(reports[i].name);
        CHECK(reports[i].name == expected_names[i]);
        CHECK(reports[i].pass);
        for (const auto& row : reports[i].rows) {
            INFO(row.api, " expected=", row.expected, " actual=", row.actual);
            CHECK(row.pass);
        }
    }
}

TEST_CASE("malicious_web: the marker only fires after the crawl feeds it back") {
    auto spec = load_scenario(test::fixtures_dir(),
                              test::fixtures_dir() / "scenarios/04_malicious_web.json");
    auto report = run_scenario(test::fixtures_dir(), spec);
    REQUIRE(report.pass);
    CHECK(report.executed == std::vector<std::string>{"Web_Crawl"});
    // the crawl's observation contains the injected instruction
    REQUIRE(report.transcript.size() >= 2);
    CHECK(report.transcript[0].observation.find("<ADV_PROMPT>") != std::string::npos);
    CHECK(report.transcript[1].step.api == "Send_Email");
    CHECK(report.transcript[1].decision->kind == Decision::Kind::Reject);
}

TEST_CASE("tamper scenario: rewritten permission invalidates the signature") {
    auto spec =
        load_scenario(test::fixtures_dir(), test::fixtures_dir() / "scenarios/06_tamper.json");
    auto report = run_scenario(test::fixtures_dir(), spec);
    CHECK(report.pass);
    CHECK(report.outcome == VerificationOutcome::InvalidSignature);
    CHECK(report.executed.empty());
}

TEST_CASE("tamper_permission flips the carried permission") {
    const KeyPair& key = test::cached_keypair(SchemeId::Ed25519);
    std::string input = mint("p", LevelPermission{1}, key, 1000, 60);
    std::string tampered = tamper_permission(input);
    CHECK(tampered != input);
    auto payload = decode_token(*extract(tampered).token).payload;
    CHECK(payload.permission == Permission{LevelPermission{2}});  // 1 -> 2
    CHECK_THROWS_AS(tamper_permission("no token"), Error);
}

TEST_CASE("scenarios referencing missing fixtures fail to load") {
    auto dir = test::temp_dir("scenario");
    std::ofstream out(dir / "bad.json");
    out << R"({
      "name": "bad",
      "prompt": "x",
      "web_fixtures": {"https://a": "pages/does_not_exist.txt"},
      "adapter": [{"say": "x"}],
      "expect": {"verification_outcome": "valid"}
    })";
    out.close();
    try {
        load_scenario(test::fixtures_dir(), dir / "bad.json");
        FAIL("expected FixtureMissing");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FixtureMissing);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("oracle_sanctions agrees with plain reasoning") {
    Registry registry = demo_registry();
    CHECK(oracle_sanctions(LevelPermission{2}, {"Send_Email", "Find_Photo"}, registry));
    CHECK_FALSE(oracle_sanctions(LevelPermission{1}, {"Send_Email"}, registry));
    CHECK(oracle_sanctions(LevelPermission{1}, {}, registry));
    CHECK_FALSE(oracle_sanctions(LevelPermission{2}, {"Nonexistent"}, registry));
    CHECK(oracle_sanctions(SequencePermission{"crawl_then_share"},
                           {"Web_Crawl", "Find_Photo", "Send_Email"}, registry));
    CHECK_FALSE(oracle_sanctions(SequencePermission{"crawl_then_share"}, {"Send_Email"}, registry));
}

TEST_CASE("fuzzer rejects a non-positive episode count") {
    Registry registry = demo_registry();
    CHECK_THROWS_AS(fuzz_adversary(0, 1, registry), Error);
    CHECK_THROWS_AS(fuzz_adversary(-3, 1, registry), Error);
}

TEST_CASE("fuzzer finds no violations at unit scale") {
    Registry registry = demo_registry();
    for (uint64_t seed : {1ull, 99ull, 31337ull}) {
        FuzzReport report = fuzz_adversary(200, seed, registry);
        CHECK(report.episodes == 200);
        CHECK(report.violations == 0);
    }
}

TEST_CASE("identical seeds give byte-identical transcripts") {
    Registry registry = demo_registry();
    FuzzReport a = fuzz_adversary(1, 424242, registry);
    FuzzReport b = fuzz_adversary(1, 424242, registry);
    CHECK(a.first_episode_transcript == b.first_episode_transcript);
    CHECK_FALSE(a.first_episode_transcript.empty());
}

TEST_CASE("golden fuzz transcript") {
    Registry registry = demo_registry();
    FuzzReport report = fuzz_adversary(1, 424242, registry);
    CHECK(report.first_episode_transcript == slurp(test::golden_dir() / "fuzz_seed424242.json"));
}

TEST_CASE("golden scenario transcript") {
    auto spec = load_scenario(test::fixtures_dir(),
                              test::fixtures_dir() / "scenarios/03_malicious_user.json");
    auto report = run_scenario(test::fixtures_dir(), spec);
    CHECK(transcript_to_json(report.transcript) ==
          slurp(test::golden_dir() / "scenario_malicious_user.json"));
}
