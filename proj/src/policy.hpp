#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace pgate {

// The three permission models a token can carry: a single level (level n
// unlocks every API requiring n or less), a capability bit per API, or a
// named automaton constraining the order of calls within a session.
struct LevelPermission {
    uint32_t value = 1;  // levels start at 1
    bool operator==(const LevelPermission&) const = default;
};

struct CapabilityPermission {
    std::vector<bool> bits;  // index i governs the API with capability index i
    bool operator==(const CapabilityPermission&) const = default;
};

struct SequencePermission {
    std::string graph_id;
    bool operator==(const SequencePermission&) const = default;
};

using Permission = std::variant<LevelPermission, CapabilityPermission, SequencePermission>;

// Registry lookup key for the key registry: which trust class a permission
// belongs to. Deterministic and human-readable, e.g. "level:2", "caps:TFFT",
// "graph:crawl_then_share".
std::string permission_class(const Permission& permission);

struct SequenceGraph {
    std::string start;
    std::set<std::string> states;
    // (state, api) -> next state; determinism enforced at load
    std::map<std::pair<std::string, std::string>, std::string> transitions;

    std::optional<std::string> step(const std::string& state, const std::string& api) const;
};

enum class DenyBehavior { Reject, RequestVerification };
enum class ApiKind { Read, Write };

struct ApiRequirement {
    enum class Kind { MinLevel, CapabilityIndex };
    Kind kind;
    uint32_t value;
};

struct ApiSpec {
    std::string name;
    ApiRequirement required;
    DenyBehavior on_deny = DenyBehavior::Reject;
    ApiKind kind = ApiKind::Read;
};

class Registry {
public:
    Registry() = default;
    Registry(std::vector<ApiSpec> apis, uint32_t max_level,
             std::map<std::string, SequenceGraph> graphs);

    const std::vector<ApiSpec>& apis() const { return apis_; }
    uint32_t max_level() const { return max_level_; }
    const std::map<std::string, SequenceGraph>& graphs() const { return graphs_; }
    const ApiSpec* find_api(const std::string& name) const;
    const SequenceGraph* find_graph(const std::string& graph_id) const;

private:
    std::vector<ApiSpec> apis_;
    uint32_t max_level_ = 1;
    std::map<std::string, SequenceGraph> graphs_;
    std::map<std::string, size_t> index_;
};

struct Decision {
    enum class Kind { Execute, Reject, RequestVerification };
    Kind kind;
    std::string reason;  // deny reason or verification hint; empty on Execute

    static Decision execute() { return {Kind::Execute, {}}; }
    static Decision reject(std::string why) { return {Kind::Reject, std::move(why)}; }
    static Decision request_verification(std::string hint) {
        return {Kind::RequestVerification, std::move(hint)};
    }
    bool allows() const { return kind == Kind::Execute; }
};

const char* decision_kind_name(Decision::Kind kind);

// Per-session cursor for sequence-graph permissions; empty for the other models.
struct SessionPolicyState {
    std::optional<std::string> current_state;
    bool operator==(const SessionPolicyState&) const = default;
};

// The core gate: Execute only when the permission's own allow rule holds for
// this API. Denies return the ApiSpec's configured deny behavior and leave
// the session state untouched; an allowed sequence-graph call advances it.
// Throws UnknownApi when the API is not in the registry and ModelMismatch
// when the permission model cannot be evaluated against the ApiSpec.
std::pair<Decision, SessionPolicyState> check(const Permission& permission,
                                              const std::string& api,
                                              const SessionPolicyState& state,
                                              const Registry& registry);

// True iff every prefix of the sequence is accepted from the start state.
bool graph_run(const SequenceGraph& graph, const std::vector<std::string>& sequence);

// Permission invariants relative to a loaded registry: level within max_level,
// capability vector sized to the API count, graph id resolvable.
bool permission_valid_for(const Permission& permission, const Registry& registry);

// Policy config loading; field names are documented in docs/formats.md.
// Throws ConfigError with a field-level diagnostic on any invariant breach.
Registry load_registry(const std::string& json_text);
Registry load_registry_file(const std::string& path);

// JSON (de)serialization of permissions: {"level": n} | {"capabilities": "TF..."}
// | {"graph": "id"}; used by rules files, CLI output and the HTTP API.
std::string permission_to_json(const Permission& permission);
Permission permission_from_json(const std::string& json_text);

}  // namespace pgate
