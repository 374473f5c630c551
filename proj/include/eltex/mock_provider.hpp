#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "eltex/gateway.hpp"

namespace eltex {

/// One scripted reaction. Rules are tried in order; the first that matches
/// (and still has uses left) decides the reply.
///
/// Script lines (JSONL) look like
///   {"match": "substring" | 3, "model": "gpt", "response": "...",
///    "usage": {"input": 500, "output": 1500}, "finish_reason": "refused",
///    "error": "rate_limit", "times": 2, "behavior": "synthesize"}
/// An integer match selects the provider's Nth call (0-based, counting
/// retries). Without "match" the rule matches every call.
struct MockRule {
    std::variant<std::monostate, std::string, std::size_t> match;
    std::optional<std::string> model;
    std::string response;
    std::optional<TokenUsage> usage;
    FinishReason finish_reason = FinishReason::complete;
    std::optional<ProviderErrorKind> error;
    std::optional<std::size_t> times;
    /// Generated reply instead of `response`: echo, list, summarize_unique,
    /// synthesize, annotate, scores.
    std::string behavior;

    static MockRule from_json(const nlohmann::json& j);
};

struct MockOptions {
    std::string name = "mock";
    std::uint64_t seed = 0;
    /// Real sleep per call.
    std::chrono::milliseconds latency{0};
    /// Synthesized arrays hold expected ± uniform(0..count_jitter) items.
    std::size_t count_jitter = 0;
    /// Reported usage for generated replies; omitted (so the gateway
    /// estimates) when unset.
    std::optional<TokenUsage> default_usage;
};

/// Deterministic provider for tests and offline runs. Without a matching rule
/// it synthesizes a reply from the request's schema: message arrays,
/// annotation arrays or score maps; plain prompts get an indicator list.
/// Every generated reply is a pure function of (seed, model, prompt,
/// temperature).
class MockProvider : public Provider {
public:
    explicit MockProvider(std::vector<MockRule> rules = {}, MockOptions options = {});

    static std::vector<MockRule> parse_script(std::string_view jsonl);
    static std::shared_ptr<MockProvider> from_script_file(const std::filesystem::path& path, MockOptions options = {});

    std::string name() const override { return options_.name; }
    ProviderReply complete(const ChatRequest& request, std::string_view model) override;

    /// Invoked at the start of each call, outside the provider's lock.
    void set_call_hook(std::function<void(const ChatRequest&, std::size_t call_index)> hook);

    std::size_t call_count() const;
    std::vector<ChatRequest> calls() const;

private:
    ProviderReply generate(const std::string& behavior, const ChatRequest& request, std::string_view model) const;

    std::vector<MockRule> rules_;
    std::vector<std::optional<std::size_t>> remaining_;
    MockOptions options_;
    std::function<void(const ChatRequest&, std::size_t)> hook_;
    mutable std::mutex mu_;
    std::vector<ChatRequest> calls_;
};

}  // namespace eltex
