#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adapters.hpp"
#include "gateway.hpp"
#include "minter.hpp"

namespace pgate {

struct ExpectedDecision {
    std::string api;
    Decision::Kind decision;
};

struct ScenarioSpec {
    std::string name;
    std::string policy_file;  // relative to the fixtures dir
    std::string rules_file;
    std::string prompt;
    DeviceStatus device_status;
    std::map<std::string, std::string> web_fixtures;  // url -> page file
    std::vector<ScriptedStep> adapter_script;
    std::optional<std::string> tamper;  // "permission": rewrite in transit
    VerificationOutcome expected_outcome = VerificationOutcome::Valid;
    std::vector<ExpectedDecision> expected_decisions;
    std::optional<std::vector<std::string>> expected_executed;
};

struct ExpectationRow {
    std::string api;
    std::string expected;
    std::string actual;
    bool pass = false;
};

struct ScenarioReport {
    std::string name;
    VerificationOutcome outcome = VerificationOutcome::Valid;
    std::vector<ExpectationRow> rows;
    std::vector<std::string> executed;
    std::vector<TranscriptEntry> transcript;
    bool pass = false;
};

// Loads a scenario file; referenced policy/rules/page fixtures must exist
// (FixtureMissing otherwise). Paths resolve against the fixtures directory.
ScenarioSpec load_scenario(const std::filesystem::path& fixtures_dir,
                           const std::filesystem::path& scenario_file);

// Full pipeline run: derive the permission from the device status, mint a
// signed input, optionally tamper with it in transit, push it through the
// gateway with the scripted adapter, and diff the decision table.
ScenarioReport run_scenario(const std::filesystem::path& fixtures_dir, const ScenarioSpec& spec);

// Every *.json under <fixtures_dir>/scenarios, in filename order.
std::vector<ScenarioReport> run_all_scenarios(const std::filesystem::path& fixtures_dir);

std::string report_to_json(const ScenarioReport& report, bool pretty = false);

// Rewrites the permission inside a minted input while keeping the original
// signature: the man-in-the-middle of the tamper scenario.
std::string tamper_permission(const std::string& user_input);

struct FuzzReport {
    int episodes = 0;
    int violations = 0;
    std::string first_episode_transcript;  // JSON, for golden comparisons
};

// Randomized adversarial adapters against the gateway: every executed call is
// re-checked by an independent naive oracle; the count of unsanctioned
// executions comes back (zero, if the gate holds). Deterministic per seed.
FuzzReport fuzz_adversary(int episodes, uint64_t seed, const Registry& registry);

// The naive re-check used by the fuzzer: evaluates the executed call sequence
// against the permission with plain table scans, sharing no code with
// policy::check.
bool oracle_sanctions(const Permission& permission, const std::vector<std::string>& executed,
                      const Registry& registry);

}  // namespace pgate
