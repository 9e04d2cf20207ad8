#include "adapters.hpp"

#include <json.hpp>

#include "errors.hpp"

namespace pgate {

ScriptedAdapter::ScriptedAdapter(std::vector<ScriptedStep> script) : script_(std::move(script)) {}

bool ScriptedAdapter::marker_visible(const std::string& user_prompt,
                                     const std::vector<TranscriptEntry>& history) {
    if (user_prompt.find(kAdvMarker) != std::string::npos) {
        return true;
    }
    for (const auto& entry : history) {
        if (entry.observation.find(kAdvMarker) != std::string::npos) {
            return true;
        }
    }
    return false;
}

LlmStep ScriptedAdapter::next_step(const std::string& user_prompt,
                                   const std::vector<TranscriptEntry>& history) {
    const bool marker = marker_visible(user_prompt, history);
    while (cursor_ < script_.size()) {
        const ScriptedStep& scripted = script_[cursor_];
        ++cursor_;
        if (scripted.require_marker && !marker) {
            continue;
        }
        return scripted.step;
    }
    return LlmStep::say("Done.");
}

std::vector<ScriptedStep> ScriptedAdapter::script_from_json(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("adapter script: ") + e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::ConfigError, "adapter script: must be a list of steps");
    }
    std::vector<ScriptedStep> script;
    for (const auto& entry : doc) {
        ScriptedStep scripted;
        if (entry.contains("say")) {
            scripted.step = LlmStep::say(entry["say"].get<std::string>());
        } else if (entry.contains("call")) {
            const auto& call = entry["call"];
            if (!call.contains("api")) {
                throw Error(ErrorCode::ConfigError, "adapter script: call needs an api");
            }
            std::map<std::string, std::string> args;
            const nlohmann::json call_args = call.value("args", nlohmann::json::object());
            for (const auto& [k, v] : call_args.items()) {
                args[k] = v.get<std::string>();
            }
            scripted.step = LlmStep::call(call["api"].get<std::string>(), std::move(args));
        } else {
            throw Error(ErrorCode::ConfigError, "adapter script: step needs say or call");
        }
        scripted.require_marker = entry.value("require_marker", false);
        script.push_back(std::move(scripted));
    }
    return script;
}

MockToolExecutor::MockToolExecutor(std::map<std::string, std::string> web_pages)
    : web_pages_(std::move(web_pages)) {}

std::string MockToolExecutor::execute(const std::string& api,
                                      const std::map<std::string, std::string>& args) {
    executed_.push_back({api, args});
    if (api == "Web_Crawl") {
        auto url = args.find("url");
        if (url != args.end()) {
            auto page = web_pages_.find(url->second);
            if (page != web_pages_.end()) {
                return page->second;
            }
        }
        return "ERROR: page not found";
    }
    if (api == "Send_Email") {
        auto to = args.find("to");
        return "email sent to " + (to != args.end() ? to->second : "(unknown)");
    }
    if (api == "Delete_Email") {
        return "emails deleted";
    }
    if (api == "Find_Photo") {
        return "found 3 photos";
    }
    if (api == "Move_Data") {
        return "data moved to cloud storage";
    }
    return "ok";
}

}  // namespace pgate
