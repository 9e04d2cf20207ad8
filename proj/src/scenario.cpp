#include "scenario.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

namespace {

using nlohmann::json;

constexpr int64_t kScenarioEpoch = 1700000000;
constexpr int64_t kScenarioTtl = 300;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::FixtureMissing, path.string());
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Decision::Kind decision_kind_from_name(const std::string& name) {
    if (name == "execute") return Decision::Kind::Execute;
    if (name == "reject") return Decision::Kind::Reject;
    if (name == "request_verification") return Decision::Kind::RequestVerification;
    throw Error(ErrorCode::ConfigError, "scenario: unknown decision " + name);
}

VerificationOutcome outcome_from_name(const std::string& name) {
    for (auto o : {VerificationOutcome::Valid, VerificationOutcome::InvalidSignature,
                   VerificationOutcome::UnregisteredKey, VerificationOutcome::Expired,
                   VerificationOutcome::ReplayedNonce, VerificationOutcome::MissingToken,
                   VerificationOutcome::Malformed}) {
        if (name == verification_outcome_name(o)) {
            return o;
        }
    }
    throw Error(ErrorCode::ConfigError, "scenario: unknown outcome " + name);
}

// Sequential ids instead of random ones so scenario transcripts and fuzz
// episodes are byte-identical run to run.
std::function<std::string()> counting_ids(const std::string& prefix) {
    auto counter = std::make_shared<int>(0);
    return [prefix, counter]() { return prefix + std::to_string(++*counter); };
}

// One keypair for the whole process: scenario runs only care about the trust
// relationship, not key freshness, and EC keygen en masse would dominate fuzz
// runtime.
const KeyPair& scenario_keypair() {
    static const KeyPair key = generate_keypair(SchemeId::EcdsaP256Sha256);
    return key;
}

}  // namespace

ScenarioSpec load_scenario(const std::filesystem::path& fixtures_dir,
                           const std::filesystem::path& scenario_file) {
    json doc;
    try {
        doc = json::parse(read_file(scenario_file));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, scenario_file.string() + ": " + e.what());
    }

    ScenarioSpec spec;
    spec.name = doc.value("name", scenario_file.stem().string());
    spec.policy_file = doc.value("policy", "policies/default.json");
    spec.rules_file = doc.value("rules", "rules.json");
    spec.prompt = doc.at("prompt").get<std::string>();
    spec.device_status = device_status_from_json(doc.value("device_status", json::object()).dump());
    const json web_fixtures = doc.value("web_fixtures", json::object());
    for (const auto& [url, page] : web_fixtures.items()) {
        spec.web_fixtures[url] = page.get<std::string>();
    }
    spec.adapter_script = ScriptedAdapter::script_from_json(doc.at("adapter").dump());
    if (doc.contains("tamper") && !doc["tamper"].is_null()) {
        spec.tamper = doc["tamper"].get<std::string>();
        if (*spec.tamper != "permission") {
            throw Error(ErrorCode::ConfigError, "scenario: unknown tamper mode " + *spec.tamper);
        }
    }
    const auto& expect = doc.at("expect");
    spec.expected_outcome = outcome_from_name(expect.value("verification_outcome", "valid"));
    for (const auto& row : expect.value("decisions", json::array())) {
        spec.expected_decisions.push_back(
            {row.at("api").get<std::string>(),
             decision_kind_from_name(row.at("decision").get<std::string>())});
    }
    if (expect.contains("executed")) {
        std::vector<std::string> executed;
        for (const auto& api : expect["executed"]) {
            executed.push_back(api.get<std::string>());
        }
        spec.expected_executed = std::move(executed);
    }

    // fail fast on unloadable fixtures
    if (!std::filesystem::exists(fixtures_dir / spec.policy_file)) {
        throw Error(ErrorCode::FixtureMissing, (fixtures_dir / spec.policy_file).string());
    }
    if (!std::filesystem::exists(fixtures_dir / spec.rules_file)) {
        throw Error(ErrorCode::FixtureMissing, (fixtures_dir / spec.rules_file).string());
    }
    for (const auto& [url, page] : spec.web_fixtures) {
        if (!std::filesystem::exists(fixtures_dir / page)) {
            throw Error(ErrorCode::FixtureMissing, (fixtures_dir / page).string());
        }
    }
    return spec;
}

std::string tamper_permission(const std::string& user_input) {
    ParsedInput parsed = extract(user_input);
    if (!parsed.token) {
        throw Error(ErrorCode::InvalidArgument, "no token to tamper with");
    }
    DecodedToken decoded = decode_token(*parsed.token);

    TokenPayload& payload = decoded.payload;
    if (auto* level = std::get_if<LevelPermission>(&payload.permission)) {
        level->value = level->value == 1 ? 2 : 1;  // elevate (or flip) the level
    } else if (auto* caps = std::get_if<CapabilityPermission>(&payload.permission)) {
        if (caps->bits.empty()) {
            caps->bits.push_back(true);
        } else {
            caps->bits[0] = !caps->bits[0];
        }
    } else {
        auto& graph = std::get<SequencePermission>(payload.permission);
        graph.graph_id += "x";
    }

    // Re-encode the altered payload but keep the original signature, exactly
    // what an attacker without the private key can do.
    std::string text = std::string(kTokenOpen) + base64url_encode(encode_payload(payload)) + "." +
                       base64url_encode(decoded.signature) + kTokenClose;
    return parsed.user_prompt + text;
}

ScenarioReport run_scenario(const std::filesystem::path& fixtures_dir, const ScenarioSpec& spec) {
    Registry registry = load_registry_file((fixtures_dir / spec.policy_file).string());
    auto rules = load_rules_file((fixtures_dir / spec.rules_file).string());
    Permission permission = derive_permission(rules, spec.device_status);

    const KeyPair& key = scenario_keypair();
    KeyRegistry keys;
    keys.add(permission_class(permission), key.public_key);

    const int64_t now = spec.device_status.now > 0 ? spec.device_status.now : kScenarioEpoch;
    std::string user_input = mint(spec.prompt, permission, key, now, kScenarioTtl);
    if (spec.tamper) {
        user_input = tamper_permission(user_input);
    }

    std::map<std::string, std::string> pages;
    for (const auto& [url, page] : spec.web_fixtures) {
        pages[url] = read_file(fixtures_dir / page);
    }

    ScriptedAdapter adapter(spec.adapter_script);
    MockToolExecutor executor(pages);
    NonceCache nonces(600);
    GatewayConfig config;
    config.session_id_source = counting_ids("s");
    config.challenge_id_source = counting_ids("ch");

    Session session =
        handle_input(user_input, adapter, executor, registry, keys, nonces, config, now);

    ScenarioReport report;
    report.name = spec.name;
    report.outcome = session.outcome;
    report.transcript = session.transcript;
    for (const auto& request : executor.executed()) {
        report.executed.push_back(request.api);
    }

    bool all = true;

    ExpectationRow outcome_row;
    outcome_row.api = "(verification)";
    outcome_row.expected = verification_outcome_name(spec.expected_outcome);
    outcome_row.actual = verification_outcome_name(session.outcome);
    outcome_row.pass = spec.expected_outcome == session.outcome;
    all = all && outcome_row.pass;
    report.rows.push_back(std::move(outcome_row));

    std::vector<const TranscriptEntry*> calls;
    for (const auto& entry : session.transcript) {
        if (entry.step.kind == LlmStep::Kind::Call) {
            calls.push_back(&entry);
        }
    }
    const size_t n = std::max(calls.size(), spec.expected_decisions.size());
    for (size_t i = 0; i < n; ++i) {
        ExpectationRow row;
        if (i < spec.expected_decisions.size()) {
            row.api = spec.expected_decisions[i].api;
            row.expected = decision_kind_name(spec.expected_decisions[i].decision);
        } else {
            row.api = calls[i]->step.api;
            row.expected = "(no further call)";
        }
        if (i < calls.size()) {
            row.actual = std::string(calls[i]->step.api) + ":" +
                         decision_kind_name(calls[i]->decision->kind);
            row.pass = i < spec.expected_decisions.size() &&
                       calls[i]->step.api == spec.expected_decisions[i].api &&
                       calls[i]->decision->kind == spec.expected_decisions[i].decision;
        } else {
            row.actual = "(missing call)";
            row.pass = false;
        }
        all = all && row.pass;
        report.rows.push_back(std::move(row));
    }

    if (spec.expected_executed && *spec.expected_executed != report.executed) {
        all = false;
        ExpectationRow row;
        row.api = "(executed set)";
        std::string expected;
        for (const auto& api : *spec.expected_executed) {
            expected += api + " ";
        }
        std::string actual;
        for (const auto& api : report.executed) {
            actual += api + " ";
        }
        row.expected = expected;
        row.actual = actual;
        row.pass = false;
        report.rows.push_back(std::move(row));
    }

    report.pass = all;
    return report;
}

std::vector<ScenarioReport> run_all_scenarios(const std::filesystem::path& fixtures_dir) {
    const auto scenario_dir = fixtures_dir / "scenarios";
    if (!std::filesystem::is_directory(scenario_dir)) {
        throw Error(ErrorCode::FixtureMissing, scenario_dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(scenario_dir)) {
        if (entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<ScenarioReport> reports;
    for (const auto& file : files) {
        reports.push_back(run_scenario(fixtures_dir, load_scenario(fixtures_dir, file)));
    }
    return reports;
}

std::string report_to_json(const ScenarioReport& report, bool pretty) {
    nlohmann::ordered_json doc;
    doc["name"] = report.name;
    doc["verification_outcome"] = verification_outcome_name(report.outcome);
    doc["pass"] = report.pass;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : report.rows) {
        rows.push_back({{"api", row.api},
                        {"expected", row.expected},
                        {"actual", row.actual},
                        {"pass", row.pass}});
    }
    doc["expectations"] = std::move(rows);
    doc["executed"] = report.executed;
    doc["transcript"] = nlohmann::ordered_json::parse(transcript_to_json(report.transcript));
    return pretty ? doc.dump(2) : doc.dump();
}

bool oracle_sanctions(const Permission& permission, const std::vector<std::string>& executed,
                      const Registry& registry) {
    // Plain linear scans on purpose; this is the second, independent route.
    auto find_spec = [&](const std::string& api) -> const ApiSpec* {
        for (const auto& spec : registry.apis()) {
            if (spec.name == api) {
                return &spec;
            }
        }
        return nullptr;
    };

    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        for (const auto& api : executed) {
            const ApiSpec* spec = find_spec(api);
            if (!spec || spec->required.kind != ApiRequirement::Kind::MinLevel ||
                level->value < spec->required.value) {
                return false;
            }
        }
        return true;
    }

    if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        for (const auto& api : executed) {
            const ApiSpec* spec = find_spec(api);
            if (!spec || spec->required.kind != ApiRequirement::Kind::CapabilityIndex ||
                spec->required.value >= caps->bits.size() || !caps->bits[spec->required.value]) {
                return false;
            }
        }
        return true;
    }

    const auto& seq = std::get<SequencePermission>(permission);
    auto graph_it = registry.graphs().find(seq.graph_id);
    if (graph_it == registry.graphs().end()) {
        return executed.empty();
    }
    std::string state = graph_it->second.start;
    for (const auto& api : executed) {
        if (!find_spec(api)) {
            return false;
        }
        bool stepped = false;
        for (const auto& [edge, to] : graph_it->second.transitions) {
            if (edge.first == state && edge.second == api) {
                state = to;
                stepped = true;
                break;
            }
        }
        if (!stepped) {
            return false;
        }
    }
    return true;
}

FuzzReport fuzz_adversary(int episodes, uint64_t seed, const Registry& registry) {
    if (episodes <= 0) {
        throw Error(ErrorCode::InvalidArgument, "episodes must be positive");
    }

    std::mt19937_64 rng(seed);
    // raw modulo sampling: identical sequences on every platform, which the
    // golden-transcript check depends on
    auto pick = [&rng](size_t n) { return static_cast<size_t>(rng() % n); };

    const KeyPair& key = scenario_keypair();
    KeyRegistry keys;
    NonceCache nonces(3600);

    std::vector<std::string> api_names;
    for (const auto& spec : registry.apis()) {
        api_names.push_back(spec.name);
    }
    std::vector<std::string> graph_ids;
    for (const auto& [id, graph] : registry.graphs()) {
        graph_ids.push_back(id);
    }

    FuzzReport report;
    report.episodes = episodes;

    for (int episode = 0; episode < episodes; ++episode) {
        // random permission over every model the registry can host
        Permission permission;
        size_t which = pick(graph_ids.empty() ? 2 : 3);
        if (which == 0) {
            permission = LevelPermission{static_cast<uint32_t>(1 + pick(registry.max_level()))};
        } else if (which == 1) {
            std::vector<bool> bits(registry.apis().size());
            for (size_t i = 0; i < bits.size(); ++i) {
                bits[i] = pick(2) == 1;
            }
            permission = CapabilityPermission{std::move(bits)};
        } else {
            permission = SequencePermission{graph_ids[pick(graph_ids.size())]};
        }
        keys.add(permission_class(permission), key.public_key);

        // random adversarial script: calls drawn from the registry alphabet
        // plus unknown names, with a closing say
        std::vector<ScriptedStep> script;
        const size_t steps = pick(7);
        for (size_t i = 0; i < steps; ++i) {
            if (!api_names.empty() && pick(8) != 0) {
                script.push_back({LlmStep::call(api_names[pick(api_names.size())]), false});
            } else {
                script.push_back({LlmStep::call("Unknown_Api_" + std::to_string(pick(3))), false});
            }
        }
        script.push_back({LlmStep::say("episode done"), false});

        const int64_t now = kScenarioEpoch + episode;
        std::string user_input =
            mint("fuzz episode " + std::to_string(episode), permission, key, now, 3600);

        ScriptedAdapter adapter(std::move(script));
        MockToolExecutor executor;
        GatewayConfig config;
        config.session_id_source = counting_ids("s");
        config.challenge_id_source = counting_ids("ch");

        Session session =
            handle_input(user_input, adapter, executor, registry, keys, nonces, config, now);

        std::vector<std::string> executed;
        for (const auto& request : executor.executed()) {
            executed.push_back(request.api);
        }
        if (session.outcome != VerificationOutcome::Valid) {
            report.violations += static_cast<int>(executed.size());
        } else if (!oracle_sanctions(session.token_context->permission, executed, registry)) {
            ++report.violations;
        }

        if (episode == 0) {
            report.first_episode_transcript = transcript_to_json(session.transcript);
        }
    }

    return report;
}

}  // namespace pgate
