#include "service.hpp"

#include <ctime>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "errors.hpp"
#include "policy.hpp"

namespace pgate {

namespace {

using nlohmann::json;

std::string read_file_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Chat-completions-style external model: POST {user_prompt, history} and get
// one step back as {"kind":"say"|"call", ...}. Integration use only.
class HttpLlmAdapter : public LlmAdapter {
public:
    explicit HttpLlmAdapter(const std::string& endpoint) {
        auto split = endpoint.find('/', endpoint.find("//") + 2);
        base_ = split == std::string::npos ? endpoint : endpoint.substr(0, split);
        path_ = split == std::string::npos ? "/" : endpoint.substr(split);
    }

    LlmStep next_step(const std::string& user_prompt,
                      const std::vector<TranscriptEntry>& history) override {
        json body;
        body["user_prompt"] = user_prompt;
        body["history"] = json::parse(transcript_to_json(history));
        httplib::Client client(base_);
        client.set_read_timeout(30, 0);
        auto res = client.Post(path_, body.dump(), "application/json");
        if (!res || res->status != 200) {
            throw Error(ErrorCode::IoError, "llm adapter endpoint unreachable: " + base_ + path_);
        }
        json step = json::parse(res->body);
        if (step.value("kind", "") == "call") {
            std::map<std::string, std::string> args;
            const json step_args = step.value("args", json::object());
            for (const auto& [k, v] : step_args.items()) {
                args[k] = v.get<std::string>();
            }
            return LlmStep::call(step.at("api").get<std::string>(), std::move(args));
        }
        return LlmStep::say(step.value("text", ""));
    }

private:
    std::string base_;
    std::string path_;
};

}  // namespace

ServiceConfig load_service_config(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file_or_throw(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    auto resolve = [&base](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    ServiceConfig config;
    if (doc.contains("listen")) {
        const auto listen = doc["listen"].get<std::string>();
        auto colon = listen.rfind(':');
        if (colon == std::string::npos) {
            throw Error(ErrorCode::ConfigError, "listen must be host:port");
        }
        config.listen_host = listen.substr(0, colon);
        config.listen_port = std::stoi(listen.substr(colon + 1));
    }
    if (!doc.contains("policy") || !doc.contains("key_registry") || !doc.contains("nonce_cache")) {
        throw Error(ErrorCode::ConfigError,
                    "service config needs policy, key_registry and nonce_cache paths");
    }
    config.policy_path = resolve(doc["policy"].get<std::string>());
    config.key_registry_path = resolve(doc["key_registry"].get<std::string>());
    config.nonce_cache_path = resolve(doc["nonce_cache"].get<std::string>());
    config.nonce_horizon_seconds = doc.value("nonce_horizon_seconds", int64_t{600});
    const std::string mode = doc.value("failure_mode", "refuse_all");
    if (mode == "refuse_all") {
        config.failure_mode = FailureMode::RefuseAll;
    } else if (mode == "abort") {
        config.failure_mode = FailureMode::Abort;
    } else {
        throw Error(ErrorCode::ConfigError, "failure_mode must be refuse_all|abort");
    }
    config.step_budget = doc.value("step_budget", 16);
    if (config.step_budget <= 0) {
        throw Error(ErrorCode::ConfigError, "step_budget must be positive");
    }
    config.token_ttl_seconds = doc.value("token_ttl_seconds", int64_t{300});
    config.accept_on_device = doc.value("accept_on_device", false);
    if (doc.contains("adapter")) {
        const auto& adapter = doc["adapter"];
        const std::string type = adapter.value("type", "scripted");
        if (type == "scripted") {
            config.adapter.type = AdapterConfig::Type::Scripted;
            config.adapter.script =
                ScriptedAdapter::script_from_json(adapter.value("script", json::array()).dump());
        } else if (type == "http") {
            config.adapter.type = AdapterConfig::Type::Http;
            config.adapter.endpoint = adapter.at("endpoint").get<std::string>();
        } else {
            throw Error(ErrorCode::ConfigError, "adapter type must be scripted|http");
        }
    }
    const json web_fixtures = doc.value("web_fixtures", json::object());
    for (const auto& [url, page] : web_fixtures.items()) {
        config.web_fixtures[url] = resolve(page.get<std::string>()).string();
    }

    // fail fast: these must exist and load before we serve anything
    if (!std::filesystem::exists(config.policy_path)) {
        throw Error(ErrorCode::ConfigError, "policy file missing: " + config.policy_path.string());
    }
    if (!std::filesystem::exists(config.key_registry_path)) {
        throw Error(ErrorCode::ConfigError,
                    "key registry missing: " + config.key_registry_path.string());
    }
    return config;
}

struct Service::Impl {
    explicit Impl(ServiceConfig cfg)
        : config(std::move(cfg)),
          registry(load_registry_file(config.policy_path.string())),
          keys(KeyRegistry::load_file(config.key_registry_path)),
          nonces(config.nonce_horizon_seconds, config.nonce_cache_path) {
        for (const auto& [url, page] : config.web_fixtures) {
            pages[url] = read_file_or_throw(page);
        }
        gateway_config.failure_mode = config.failure_mode;
        gateway_config.step_budget = config.step_budget;
        gateway_config.accept_on_device = config.accept_on_device;
        setup_routes();
    }

    std::unique_ptr<LlmAdapter> make_adapter() {
        if (config.adapter.type == AdapterConfig::Type::Http) {
            return std::make_unique<HttpLlmAdapter>(config.adapter.endpoint);
        }
        return std::make_unique<ScriptedAdapter>(config.adapter.script);
    }

    void setup_routes() {
        server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });

        server.Get("/v1/policy", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::ordered_json doc;
            doc["max_level"] = registry.max_level();
            nlohmann::ordered_json apis = nlohmann::ordered_json::array();
            for (const auto& spec : registry.apis()) {
                nlohmann::ordered_json entry;
                entry["name"] = spec.name;
                if (spec.required.kind == ApiRequirement::Kind::MinLevel) {
                    entry["required"] = {{"min_level", spec.required.value}};
                } else {
                    entry["required"] = {{"capability_index", spec.required.value}};
                }
                entry["on_deny"] = spec.on_deny == DenyBehavior::Reject ? "reject"
                                                                        : "request_verification";
                entry["kind"] = spec.kind == ApiKind::Read ? "read" : "write";
                apis.push_back(std::move(entry));
            }
            doc["apis"] = std::move(apis);
            nlohmann::ordered_json graphs = nlohmann::ordered_json::object();
            for (const auto& [id, graph] : registry.graphs()) {
                graphs[id] = {{"start", graph.start},
                              {"states", graph.states},
                              {"transitions", graph.transitions.size()}};
            }
            doc["graphs"] = std::move(graphs);
            res.set_content(doc.dump(), "application/json");
        });

        server.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception&) {
                res.status = 400;
                res.set_content(R"({"error":"body must be JSON"})", "application/json");
                return;
            }
            if (!body.contains("user_input") || !body["user_input"].is_string()) {
                res.status = 400;
                res.set_content(R"({"error":"user_input required"})", "application/json");
                return;
            }
            auto adapter = make_adapter();
            MockToolExecutor executor(pages);
            try {
                Session session =
                    handle_input(body["user_input"].get<std::string>(), *adapter, executor,
                                 registry, keys, nonces, gateway_config, std::time(nullptr));
                // verification failures are in-body results, not transport errors
                res.status = session.outcome == VerificationOutcome::Valid ? 200 : 422;
                res.set_content(session_to_json(session), "application/json");
                std::lock_guard<std::mutex> lock(sessions_mutex);
                for (const auto& [cid, request] : session.pending_challenges) {
                    challenge_index[cid] = session.id;
                }
                sessions.emplace(session.id, std::move(session));
            } catch (const Error& e) {
                res.status = 422;
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            }
        });

        server.Post(R"(/v1/challenge/([0-9A-Za-z_\-]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        json body;
                        try {
                            body = json::parse(req.body);
                        } catch (const json::exception&) {
                            res.status = 400;
                            res.set_content(R"({"error":"body must be JSON"})",
                                            "application/json");
                            return;
                        }
                        if (!body.contains("elevated_input") ||
                            !body["elevated_input"].is_string()) {
                            res.status = 400;
                            res.set_content(R"({"error":"elevated_input required"})",
                                            "application/json");
                            return;
                        }
                        const std::string challenge_id = req.matches[1];
                        MockToolExecutor executor(pages);
                        std::lock_guard<std::mutex> lock(sessions_mutex);
                        auto session_id = challenge_index.find(challenge_id);
                        if (session_id == challenge_index.end()) {
                            res.status = 404;
                            res.set_content(R"({"error":"unknown challenge"})",
                                            "application/json");
                            return;
                        }
                        Session& session = sessions.at(session_id->second);
                        try {
                            ResolutionResult result = resolve_challenge(
                                session, challenge_id, body["elevated_input"].get<std::string>(),
                                executor, registry, keys, nonces, gateway_config,
                                std::time(nullptr));
                            if (!session.pending_challenges.count(challenge_id)) {
                                challenge_index.erase(challenge_id);
                            }
                            nlohmann::ordered_json doc;
                            doc["decision"] = decision_kind_name(result.decision.kind);
                            doc["reason"] = result.decision.reason;
                            doc["verification_outcome"] =
                                verification_outcome_name(result.outcome);
                            doc["observation"] = result.observation;
                            res.status =
                                result.outcome == VerificationOutcome::Valid ? 200 : 422;
                            res.set_content(doc.dump(), "application/json");
                        } catch (const Error& e) {
                            if (e.code() == ErrorCode::UnknownChallenge) {
                                res.status = 404;
                                res.set_content(R"({"error":"unknown challenge"})",
                                                "application/json");
                            } else {
                                res.status = 422;
                                res.set_content(json{{"error", e.what()}}.dump(),
                                                "application/json");
                            }
                        }
                    });
    }

    ServiceConfig config;
    Registry registry;
    KeyRegistry keys;
    NonceCache nonces;
    GatewayConfig gateway_config;
    std::map<std::string, std::string> pages;

    std::mutex sessions_mutex;
    std::map<std::string, Session> sessions;
    std::map<std::string, std::string> challenge_index;  // challenge id -> session id

    httplib::Server server;
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
    stop();
}

void Service::start() {
    if (impl_->config.listen_port == 0) {
        bound_port_ = impl_->server.bind_to_any_port(impl_->config.listen_host);
    } else {
        if (!impl_->server.bind_to_port(impl_->config.listen_host, impl_->config.listen_port)) {
            throw Error(ErrorCode::IoError,
                        "cannot bind " + impl_->config.listen_host + ":" +
                            std::to_string(impl_->config.listen_port));
        }
        bound_port_ = impl_->config.listen_port;
    }
    server_thread_ = std::thread([this]() { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void Service::stop() {
    if (server_thread_.joinable()) {
        impl_->server.stop();
        server_thread_.join();
    }
}

void Service::run() {
    if (!impl_->server.bind_to_port(impl_->config.listen_host, impl_->config.listen_port)) {
        throw Error(ErrorCode::IoError, "cannot bind " + impl_->config.listen_host + ":" +
                                            std::to_string(impl_->config.listen_port));
    }
    bound_port_ = impl_->config.listen_port;
    impl_->server.listen_after_bind();
}

}  // namespace pgate
