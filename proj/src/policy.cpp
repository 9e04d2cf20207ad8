#include "policy.hpp"

#include <fstream>

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

namespace {

using nlohmann::json;

std::string caps_string(const std::vector<bool>& bits) {
    std::string s;
    s.reserve(bits.size());
    for (bool b : bits) {
        s.push_back(b ? 'T' : 'F');
    }
    return s;
}

Permission permission_from_json_obj(const json& obj) {
    if (!obj.is_object()) {
        throw Error(ErrorCode::ConfigError, "permission must be an object");
    }
    if (obj.contains("level")) {
        if (!obj["level"].is_number_unsigned() || obj["level"].get<uint64_t>() < 1) {
            throw Error(ErrorCode::ConfigError, "permission level must be an integer >= 1");
        }
        return LevelPermission{obj["level"].get<uint32_t>()};
    }
    if (obj.contains("capabilities")) {
        const auto text = obj["capabilities"].get<std::string>();
        std::vector<bool> bits;
        bits.reserve(text.size());
        for (char c : text) {
            if (c == 'T') {
                bits.push_back(true);
            } else if (c == 'F') {
                bits.push_back(false);
            } else {
                throw Error(ErrorCode::ConfigError,
                            "capabilities must be a string of T/F characters");
            }
        }
        return CapabilityPermission{std::move(bits)};
    }
    if (obj.contains("graph")) {
        return SequencePermission{obj["graph"].get<std::string>()};
    }
    throw Error(ErrorCode::ConfigError, "permission needs one of level/capabilities/graph");
}

}  // namespace

std::string permission_class(const Permission& permission) {
    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        return "level:" + std::to_string(level->value);
    }
    if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        return "caps:" + caps_string(caps->bits);
    }
    return "graph:" + std::get<SequencePermission>(permission).graph_id;
}

std::optional<std::string> SequenceGraph::step(const std::string& state,
                                               const std::string& api) const {
    auto it = transitions.find({state, api});
    if (it == transitions.end()) {
        return std::nullopt;
    }
    return it->second;
}

Registry::Registry(std::vector<ApiSpec> apis, uint32_t max_level,
                   std::map<std::string, SequenceGraph> graphs)
    : apis_(std::move(apis)), max_level_(max_level), graphs_(std::move(graphs)) {
    for (size_t i = 0; i < apis_.size(); ++i) {
        index_[apis_[i].name] = i;
    }
}

const ApiSpec* Registry::find_api(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &apis_[it->second];
}

const SequenceGraph* Registry::find_graph(const std::string& graph_id) const {
    auto it = graphs_.find(graph_id);
    return it == graphs_.end() ? nullptr : &it->second;
}

const char* decision_kind_name(Decision::Kind kind) {
    switch (kind) {
        case Decision::Kind::Execute: return "execute";
        case Decision::Kind::Reject: return "reject";
        case Decision::Kind::RequestVerification: return "request_verification";
    }
    return "unknown";
}

std::pair<Decision, SessionPolicyState> check(const Permission& permission,
                                              const std::string& api,
                                              const SessionPolicyState& state,
                                              const Registry& registry) {
    const ApiSpec* spec = registry.find_api(api);
    if (!spec) {
        throw Error(ErrorCode::UnknownApi, api);
    }

    Decision denied = spec->on_deny == DenyBehavior::Reject
                          ? Decision::reject("insufficient permission for " + api)
                          : Decision::request_verification("verification required for " + api);

    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        if (spec->required.kind != ApiRequirement::Kind::MinLevel) {
            throw Error(ErrorCode::ModelMismatch,
                        api + " declares a capability index but the permission is a level");
        }
        bool allowed = level->value >= spec->required.value;
        return {allowed ? Decision::execute() : denied, state};
    }

    if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        if (spec->required.kind != ApiRequirement::Kind::CapabilityIndex) {
            throw Error(ErrorCode::ModelMismatch,
                        api + " declares a level requirement but the permission is a bit-vector");
        }
        if (spec->required.value >= caps->bits.size()) {
            throw Error(ErrorCode::ModelMismatch,
                        api + ": capability index out of range for this permission");
        }
        bool allowed = caps->bits[spec->required.value];
        return {allowed ? Decision::execute() : denied, state};
    }

    const auto& seq = std::get<SequencePermission>(permission);
    const SequenceGraph* graph = registry.find_graph(seq.graph_id);
    if (!graph) {
        throw Error(ErrorCode::ModelMismatch, "unknown sequence graph " + seq.graph_id);
    }
    const std::string current = state.current_state.value_or(graph->start);
    auto next = graph->step(current, api);
    if (!next) {
        return {denied, state};
    }
    return {Decision::execute(), SessionPolicyState{*next}};
}

bool graph_run(const SequenceGraph& graph, const std::vector<std::string>& sequence) {
    std::string state = graph.start;
    for (const auto& api : sequence) {
        auto next = graph.step(state, api);
        if (!next) {
            return false;
        }
        state = *next;
    }
    return true;
}

bool permission_valid_for(const Permission& permission, const Registry& registry) {
    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        return level->value >= 1 && level->value <= registry.max_level();
    }
    if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        return caps->bits.size() == registry.apis().size();
    }
    return registry.find_graph(std::get<SequencePermission>(permission).graph_id) != nullptr;
}

Registry load_registry(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("policy: ") + e.what());
    }
    if (!doc.is_object()) {
        throw Error(ErrorCode::ConfigError, "policy: top level must be an object");
    }
    if (!doc.contains("max_level") || !doc["max_level"].is_number_unsigned() ||
        doc["max_level"].get<uint64_t>() < 1) {
        throw Error(ErrorCode::ConfigError, "policy: max_level must be an integer >= 1");
    }
    const uint32_t max_level = doc["max_level"].get<uint32_t>();
    if (!doc.contains("apis") || !doc["apis"].is_array()) {
        throw Error(ErrorCode::ConfigError, "policy: apis must be a list");
    }

    std::vector<ApiSpec> apis;
    std::set<std::string> names;
    for (const auto& entry : doc["apis"]) {
        ApiSpec spec;
        if (!entry.contains("name") || !entry["name"].is_string()) {
            throw Error(ErrorCode::ConfigError, "policy: api entry missing name");
        }
        spec.name = entry["name"].get<std::string>();
        if (!names.insert(spec.name).second) {
            throw Error(ErrorCode::ConfigError, "policy: duplicate api " + spec.name);
        }
        if (!entry.contains("required") || !entry["required"].is_object()) {
            throw Error(ErrorCode::ConfigError, "policy: " + spec.name + ": missing required");
        }
        const auto& req = entry["required"];
        if (req.contains("min_level")) {
            if (!req["min_level"].is_number_unsigned() || req["min_level"].get<uint64_t>() < 1) {
                throw Error(ErrorCode::ConfigError,
                            "policy: " + spec.name + ": min_level must be an integer >= 1");
            }
            spec.required = {ApiRequirement::Kind::MinLevel, req["min_level"].get<uint32_t>()};
            if (spec.required.value > max_level) {
                throw Error(ErrorCode::ConfigError,
                            "policy: " + spec.name + ": min_level exceeds max_level");
            }
        } else if (req.contains("capability_index")) {
            if (!req["capability_index"].is_number_unsigned()) {
                throw Error(ErrorCode::ConfigError, "policy: " + spec.name +
                                                        ": capability_index must be an integer");
            }
            spec.required = {ApiRequirement::Kind::CapabilityIndex,
                             req["capability_index"].get<uint32_t>()};
        } else {
            throw Error(ErrorCode::ConfigError,
                        "policy: " + spec.name + ": required needs min_level or capability_index");
        }
        const std::string on_deny = entry.value("on_deny", "reject");
        if (on_deny == "reject") {
            spec.on_deny = DenyBehavior::Reject;
        } else if (on_deny == "request_verification") {
            spec.on_deny = DenyBehavior::RequestVerification;
        } else {
            throw Error(ErrorCode::ConfigError,
                        "policy: " + spec.name + ": on_deny must be reject|request_verification");
        }
        const std::string kind = entry.value("kind", "read");
        if (kind == "read") {
            spec.kind = ApiKind::Read;
        } else if (kind == "write") {
            spec.kind = ApiKind::Write;
        } else {
            throw Error(ErrorCode::ConfigError,
                        "policy: " + spec.name + ": kind must be read|write");
        }
        apis.push_back(std::move(spec));
    }
    for (const auto& spec : apis) {
        if (spec.required.kind == ApiRequirement::Kind::CapabilityIndex &&
            spec.required.value >= apis.size()) {
            throw Error(ErrorCode::ConfigError,
                        "policy: " + spec.name + ": capability_index out of range");
        }
    }

    std::map<std::string, SequenceGraph> graphs;
    if (doc.contains("graphs")) {
        if (!doc["graphs"].is_object()) {
            throw Error(ErrorCode::ConfigError, "policy: graphs must be an object");
        }
        for (const auto& [graph_id, gdoc] : doc["graphs"].items()) {
            SequenceGraph graph;
            if (!gdoc.contains("start") || !gdoc.contains("states") ||
                !gdoc["states"].is_array()) {
                throw Error(ErrorCode::ConfigError,
                            "policy: graph " + graph_id + ": needs start and states");
            }
            graph.start = gdoc["start"].get<std::string>();
            for (const auto& s : gdoc["states"]) {
                graph.states.insert(s.get<std::string>());
            }
            if (!graph.states.count(graph.start)) {
                throw Error(ErrorCode::ConfigError,
                            "policy: graph " + graph_id + ": start state not declared");
            }
            for (const auto& t : gdoc.value("transitions", json::array())) {
                if (!t.contains("from") || !t.contains("api") || !t.contains("to")) {
                    throw Error(ErrorCode::ConfigError,
                                "policy: graph " + graph_id + ": transition needs from/api/to");
                }
                const auto from = t["from"].get<std::string>();
                const auto api = t["api"].get<std::string>();
                const auto to = t["to"].get<std::string>();
                if (!graph.states.count(from) || !graph.states.count(to)) {
                    throw Error(ErrorCode::ConfigError, "policy: graph " + graph_id +
                                                            ": transition references undeclared "
                                                            "state " +
                                                            (graph.states.count(from) ? to : from));
                }
                if (!names.count(api)) {
                    throw Error(ErrorCode::ConfigError,
                                "policy: graph " + graph_id + ": unknown api " + api);
                }
                if (!graph.transitions.emplace(std::make_pair(from, api), to).second) {
                    throw Error(ErrorCode::ConfigError, "policy: graph " + graph_id +
                                                            ": duplicate transition from " + from +
                                                            " on " + api);
                }
            }
            graphs.emplace(graph_id, std::move(graph));
        }
    }

    return Registry(std::move(apis), max_level, std::move(graphs));
}

Registry load_registry_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_registry(text);
}

std::string permission_to_json(const Permission& permission) {
    nlohmann::ordered_json obj;
    if (const auto* level = std::get_if<LevelPermission>(&permission)) {
        obj["level"] = level->value;
    } else if (const auto* caps = std::get_if<CapabilityPermission>(&permission)) {
        obj["capabilities"] = caps_string(caps->bits);
    } else {
        obj["graph"] = std::get<SequencePermission>(permission).graph_id;
    }
    return obj.dump();
}

Permission permission_from_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("permission: ") + e.what());
    }
    return permission_from_json_obj(doc);
}

}  // namespace pgate
