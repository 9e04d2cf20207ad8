#pragma once

#include <map>
#include <string>
#include <vector>

#include "gateway.hpp"

namespace pgate {

// Fixture marker standing in for a strong adversarial prompt. Scripted
// adapters emit their marker-gated harmful calls only once this string is
// visible in the prompt or any observation, so the simulator models a model
// whose alignment has already been bypassed.
inline constexpr char kAdvMarker[] = "<ADV_PROMPT>";

struct ScriptedStep {
    LlmStep step;
    bool require_marker = false;  // skip until the marker is visible
};

// Deterministic mock model: walks its script, skipping marker-gated steps
// while the marker is not visible; says a fixed closing line if the script
// runs out. What the gateway lets through is none of its business.
class ScriptedAdapter : public LlmAdapter {
public:
    explicit ScriptedAdapter(std::vector<ScriptedStep> script);

    LlmStep next_step(const std::string& user_prompt,
                      const std::vector<TranscriptEntry>& history) override;

    static bool marker_visible(const std::string& user_prompt,
                               const std::vector<TranscriptEntry>& history);

    // Schema: [{"call": {"api": ..., "args": {...}}, "require_marker": bool} |
    //          {"say": "..."}]
    static std::vector<ScriptedStep> script_from_json(const std::string& json_text);

private:
    std::vector<ScriptedStep> script_;
    size_t cursor_ = 0;
};

// Canned tool backend. Web pages come from local fixtures; every execution is
// recorded so tests can assert exactly which calls got through the gate.
class MockToolExecutor : public ToolExecutor {
public:
    MockToolExecutor() = default;
    explicit MockToolExecutor(std::map<std::string, std::string> web_pages);

    std::string execute(const std::string& api,
                        const std::map<std::string, std::string>& args) override;

    const std::vector<ActionRequest>& executed() const { return executed_; }
    void reset() { executed_.clear(); }

private:
    std::map<std::string, std::string> web_pages_;  // url -> page text
    std::vector<ActionRequest> executed_;
};

}  // namespace pgate
