#include "eltex/http_providers.hpp"

#include <httplib.h>

#include <sstream>

#include "eltex/http_util.hpp"

namespace eltex {

SplitUrl split_url(std::string_view url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0) {
        throw ValidationError("URL must include a scheme: '" + std::string(url) + "'");
    }
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.origin = std::string(url.substr(0, path_start));
    out.path = path_start == std::string_view::npos ? "" : std::string(url.substr(path_start));
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    if (out.origin.size() <= scheme_end + 3) throw ValidationError("URL has no host: '" + std::string(url) + "'");
    return out;
}

namespace {

ProviderErrorKind kind_for_status(int status) {
    if (status == 429) return ProviderErrorKind::rate_limited;
    if (status == 401 || status == 403) return ProviderErrorKind::auth;
    if (status == 408 || status == 409 || status >= 500) return ProviderErrorKind::transient;
    if (status == 400 || status == 404 || status == 422) return ProviderErrorKind::invalid_request;
    return ProviderErrorKind::permanent;
}

nlohmann::json checked_json(const httplib::Result& res, const std::string& what) {
    if (!res) {
        throw ProviderError(ProviderErrorKind::transient, what + ": " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
        throw ProviderError(kind_for_status(res->status),
                            what + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 500));
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw ProviderError(ProviderErrorKind::transient, what + ": response is not JSON");
    }
}

bool schema_is_array(const ChatRequest& req) {
    return req.response_schema && req.response_schema->schema.value("type", "") == "array";
}

class HttpBase : public Provider {
public:
    explicit HttpBase(HttpProviderConfig cfg) : cfg_(std::move(cfg)), url_(split_url(cfg_.base_url)) {}

    std::string name() const override { return cfg_.name; }

protected:
    httplib::Client client() const {
        httplib::Client c(url_.origin);
        c.set_connection_timeout(std::chrono::seconds(30));
        c.set_read_timeout(cfg_.timeout);
        c.set_write_timeout(cfg_.timeout);
        return c;
    }

    std::string path(std::string_view endpoint) const {
        std::string p = url_.path + std::string(endpoint);
        char sep = '?';
        for (const auto& [k, v] : cfg_.query) {
            p += sep + httplib::detail::encode_query_param(k) + "=" + httplib::detail::encode_query_param(v);
            sep = '&';
        }
        return p;
    }

    HttpProviderConfig cfg_;
    SplitUrl url_;
};

class OpenAiProvider final : public HttpBase, public NativeBatchApi {
public:
    using HttpBase::HttpBase;

    ProviderReply complete(const ChatRequest& req, std::string_view model) override {
        auto cli = client();
        auto res = cli.Post(path("/chat/completions"), headers(), body(req, model).dump(), "application/json");
        return parse_completion(checked_json(res, "chat completion"), req);
    }

    NativeBatchApi* native_batch() override { return this; }

    std::string submit(const std::vector<ChatRequest>& requests) override {
        std::string jsonl;
        for (std::size_t i = 0; i < requests.size(); ++i) {
            nlohmann::json line = {{"custom_id", "req-" + std::to_string(i)},
                                   {"method", "POST"},
                                   {"url", "/v1/chat/completions"},
                                   {"body", body(requests[i], ModelRef::parse(requests[i].model).model)}};
            jsonl += line.dump();
            jsonl += '\n';
        }
        auto cli = client();
        httplib::MultipartFormDataItems items = {{"purpose", "batch", "", ""},
                                                 {"file", jsonl, "batch.jsonl", "application/jsonl"}};
        auto file = checked_json(cli.Post(path("/files"), headers(), items), "batch file upload");
        nlohmann::json create = {{"input_file_id", file.at("id")},
                                 {"endpoint", "/v1/chat/completions"},
                                 {"completion_window", "24h"}};
        auto batch =
            checked_json(cli.Post(path("/batches"), headers(), create.dump(), "application/json"), "batch create");
        std::lock_guard lock(mu_);
        auto id = batch.at("id").get<std::string>();
        submitted_[id] = requests;
        return id;
    }

    Snapshot poll(const std::string& batch_id) override {
        auto cli = client();
        auto info = checked_json(cli.Get(path("/batches/" + batch_id), headers()), "batch poll");
        Snapshot s;
        auto status = info.value("status", "");
        if (info.contains("request_counts")) s.completed = info["request_counts"].value("completed", std::size_t{0});
        if (status == "validating") {
            s.state = State::queued;
        } else if (status == "in_progress" || status == "finalizing" || status == "cancelling") {
            s.state = State::running;
        } else if (status == "completed") {
            s.state = State::done;
            s.results = collect(cli, info, batch_id);
        } else {
            s.state = State::failed;
            s.error = "batch " + status;
        }
        return s;
    }

private:
    httplib::Headers headers() const {
        if (cfg_.auth_style == "api-key") return {{"api-key", cfg_.api_key}};
        return {{"Authorization", "Bearer " + cfg_.api_key}};
    }

    static nlohmann::json body(const ChatRequest& req, std::string_view model) {
        nlohmann::json messages = nlohmann::json::array();
        if (req.system_prompt) messages.push_back({{"role", "system"}, {"content", *req.system_prompt}});
        messages.push_back({{"role", "user"}, {"content", req.user_prompt}});
        nlohmann::json b = {{"model", model}, {"messages", messages}, {"temperature", req.temperature}};
        if (req.max_output_tokens) b["max_tokens"] = *req.max_output_tokens;
        if (req.response_schema) {
            // Structured outputs need an object at the root; arrays are wrapped
            // under "items" and unwrapped on the way back.
            nlohmann::json schema = req.response_schema->schema;
            if (schema_is_array(req)) {
                schema = {{"type", "object"}, {"properties", {{"items", schema}}}, {"required", {"items"}}};
            }
            b["response_format"] = {{"type", "json_schema"},
                                    {"json_schema", {{"name", req.response_schema->name}, {"schema", schema}, {"strict", false}}}};
        }
        return b;
    }

    static ProviderReply parse_completion(const nlohmann::json& j, const ChatRequest& req) {
        if (!j.contains("choices") || j["choices"].empty()) {
            throw ProviderError(ProviderErrorKind::transient, "chat completion has no choices");
        }
        const auto& choice = j["choices"][0];
        const auto& msg = choice.value("message", nlohmann::json::object());
        ProviderReply r;
        auto finish = choice.value("finish_reason", "stop");
        if (msg.contains("refusal") && msg["refusal"].is_string()) {
            r.text = msg["refusal"].get<std::string>();
            r.finish_reason = FinishReason::refused;
        } else {
            r.text = msg.contains("content") && msg["content"].is_string() ? msg["content"].get<std::string>() : "";
            if (finish == "length") r.finish_reason = FinishReason::truncated;
            if (finish == "content_filter") r.finish_reason = FinishReason::refused;
        }
        if (r.finish_reason == FinishReason::complete && schema_is_array(req)) {
            try {
                auto wrapped = nlohmann::json::parse(r.text);
                if (wrapped.is_object() && wrapped.contains("items")) r.text = wrapped["items"].dump();
            } catch (const nlohmann::json::exception&) {
            }
        }
        if (j.contains("usage") && j["usage"].is_object()) {
            TokenUsage u;
            u.input_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
            u.output_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
            r.usage = u;
        }
        return r;
    }

    std::vector<std::variant<ProviderReply, ProviderError>> collect(httplib::Client& cli, const nlohmann::json& info,
                                                                     const std::string& batch_id) {
        std::vector<ChatRequest> requests;
        {
            std::lock_guard lock(mu_);
            requests = submitted_[batch_id];
        }
        std::vector<std::variant<ProviderReply, ProviderError>> out(
            requests.size(), ProviderError(ProviderErrorKind::permanent, "missing from batch output"));
        for (const char* key : {"output_file_id", "error_file_id"}) {
            if (!info.contains(key) || !info[key].is_string()) continue;
            auto res = cli.Get(path("/files/" + info[key].get<std::string>() + "/content"), headers());
            if (!res || res->status != 200) {
                throw ProviderError(ProviderErrorKind::transient, "cannot download batch results");
            }
            std::istringstream in(res->body);
            for (std::string line; std::getline(in, line);) {
                if (line.empty()) continue;
                auto entry = nlohmann::json::parse(line, nullptr, false);
                if (entry.is_discarded()) continue;
                auto cid = entry.value("custom_id", "");
                if (cid.rfind("req-", 0) != 0) continue;
                std::size_t idx = std::stoul(cid.substr(4));
                if (idx >= out.size()) continue;
                if (entry.contains("error") && !entry["error"].is_null()) {
                    out[idx] = ProviderError(ProviderErrorKind::permanent, entry["error"].dump());
                    continue;
                }
                const auto& resp = entry.value("response", nlohmann::json::object());
                int status = resp.value("status_code", 0);
                if (status != 200) {
                    out[idx] = ProviderError(kind_for_status(status), "batch item HTTP " + std::to_string(status));
                    continue;
                }
                try {
                    out[idx] = parse_completion(resp.at("body"), requests[idx]);
                } catch (const ProviderError& e) {
                    out[idx] = e;
                }
            }
        }
        return out;
    }

    std::mutex mu_;
    std::map<std::string, std::vector<ChatRequest>> submitted_;
};

class AnthropicProvider final : public HttpBase {
public:
    using HttpBase::HttpBase;

    ProviderReply complete(const ChatRequest& req, std::string_view model) override {
        std::string prompt = req.user_prompt;
        if (req.response_schema) {
            prompt += "\n\nRespond only with JSON that matches this JSON Schema:\n" + req.response_schema->schema.dump();
        }
        nlohmann::json b = {{"model", model},
                            {"max_tokens", req.max_output_tokens.value_or(cfg_.default_max_tokens)},
                            {"temperature", req.temperature},
                            {"messages", {{{"role", "user"}, {"content", prompt}}}}};
        if (req.system_prompt) b["system"] = *req.system_prompt;
        httplib::Headers h = {{"x-api-key", cfg_.api_key}, {"anthropic-version", "2023-06-01"}};
        auto cli = client();
        auto j = checked_json(cli.Post(path("/messages"), h, b.dump(), "application/json"), "messages");

        ProviderReply r;
        for (const auto& block : j.value("content", nlohmann::json::array())) {
            if (block.value("type", "") == "text") r.text += block.value("text", "");
        }
        auto stop = j.value("stop_reason", "end_turn");
        if (stop == "max_tokens") r.finish_reason = FinishReason::truncated;
        if (stop == "refusal") r.finish_reason = FinishReason::refused;
        if (j.contains("usage")) {
            TokenUsage u;
            u.input_tokens = j["usage"].value("input_tokens", std::int64_t{0});
            u.output_tokens = j["usage"].value("output_tokens", std::int64_t{0});
            r.usage = u;
        }
        return r;
    }
};

}  // namespace

std::shared_ptr<Provider> make_http_provider(const HttpProviderConfig& config) {
    if (config.name.empty()) throw ValidationError("provider name must be non-empty");
    if (config.kind == "openai") return std::make_shared<OpenAiProvider>(config);
    if (config.kind == "anthropic") return std::make_shared<AnthropicProvider>(config);
    throw ValidationError("unknown provider kind '" + config.kind + "'");
}

}  // namespace eltex
