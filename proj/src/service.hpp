#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "adapters.hpp"
#include "gateway.hpp"

namespace pgate {

struct AdapterConfig {
    enum class Type { Scripted, Http };
    Type type = Type::Scripted;
    std::vector<ScriptedStep> script;  // Scripted
    std::string endpoint;              // Http: chat-step endpoint
};

struct ServiceConfig {
    std::string listen_host = "127.0.0.1";
    int listen_port = 8787;
    std::filesystem::path policy_path;
    std::filesystem::path key_registry_path;
    std::filesystem::path nonce_cache_path;
    int64_t nonce_horizon_seconds = 600;
    FailureMode failure_mode = FailureMode::RefuseAll;
    int step_budget = 16;
    int64_t token_ttl_seconds = 300;
    bool accept_on_device = false;
    AdapterConfig adapter;
    std::map<std::string, std::string> web_fixtures;  // url -> page file path
};

// Relative paths in the file resolve against its parent directory. Referenced
// policy and key registry files must exist and load; the nonce cache file is
// state and is created on first use.
ServiceConfig load_service_config(const std::filesystem::path& path);

// HTTP front end over the gateway:
//   POST /v1/chat           {"user_input"}      -> session (200, or 422 when
//                                                  token verification failed)
//   POST /v1/challenge/<id> {"elevated_input"}  -> resolution decision
//   GET  /v1/policy                             -> registry summary, no keys
//   GET  /v1/health                             -> {"status":"ok"}
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds and serves on a background thread; port 0 picks a free port.
    void start();
    void stop();
    int port() const { return bound_port_; }

    // Blocking variant for the CLI `serve` path.
    void run();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread server_thread_;
    int bound_port_ = 0;
};

}  // namespace pgate
