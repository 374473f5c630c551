#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>

#include "eltex/gateway.hpp"

namespace eltex {

struct HttpProviderConfig {
    /// Name the gateway routes on (the part before '/' in model references).
    std::string name;
    /// "openai" (any OpenAI-compatible chat-completions API) or "anthropic".
    std::string kind = "openai";
    /// Including the version prefix, e.g. "https://api.openai.com/v1".
    std::string base_url;
    std::string api_key;
    /// "bearer" (Authorization header) or "api-key" (Azure-style header).
    std::string auth_style = "bearer";
    /// Extra query parameters appended to every call (e.g. api-version).
    std::map<std::string, std::string> query;
    std::chrono::seconds timeout{180};
    /// Used when a request leaves max_output_tokens unset and the API
    /// requires one (Anthropic).
    int default_max_tokens = 4096;
};

/// Throws ValidationError for an unknown kind or malformed base URL.
std::shared_ptr<Provider> make_http_provider(const HttpProviderConfig& config);

}  // namespace eltex
