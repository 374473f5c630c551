#include "eltex/config.hpp"

#include <cstdlib>

#include "eltex/dataset_io.hpp"
#include "eltex/http_providers.hpp"
#include "eltex/mock_provider.hpp"

namespace eltex {

namespace fs = std::filesystem;

namespace {

std::string env_or_empty(const std::string& name) {
    if (name.empty()) return {};
    const char* v = std::getenv(name.c_str());
    return v ? v : "";
}

std::string key_from(const nlohmann::json& p, const std::string& default_env) {
    if (p.contains("api_key") && p["api_key"].is_string()) return p["api_key"].get<std::string>();
    return env_or_empty(p.value("api_key_env", default_env));
}

}  // namespace

AppConfig AppConfig::builtin() {
    nlohmann::json j = {
        {"providers",
         {{{"name", "mock"},
           {"kind", "mock"},
           {"seed", 7},
           {"count_jitter", 3},
           {"rules", {{{"match", "deduplicate and summarize"}, {"behavior", "summarize_unique"}}}}}}},
        {"roles",
         {{"indicator-generation", {"mock/model-a", "mock/model-b", "mock/model-c"}},
          {"summarization", "mock/summarizer"},
          {"generation", "mock/generator"},
          {"annotation", "mock/annotator"}}},
    };
    return from_json(j);
}

AppConfig AppConfig::load(const fs::path& path) {
    auto text = read_file(path);
    auto j = nlohmann::json::parse(text, nullptr, false, true);
    if (j.is_discarded() || !j.is_object()) throw ValidationError("config " + path.string() + " is not a JSON object");
    auto cfg = from_json(j, path.parent_path());
    cfg.source = path;
    return cfg;
}

AppConfig AppConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    AppConfig c;
    c.base_dir_ = base_dir;
    try {
        if (j.contains("providers")) {
            c.providers = j["providers"];
            if (!c.providers.is_array()) throw ValidationError("providers must be an array");
            for (const auto& p : c.providers) {
                auto kind = p.value("kind", "");
                if (p.value("name", "").empty()) throw ValidationError("every provider needs a name");
                if (kind != "mock" && kind != "openai" && kind != "anthropic") {
                    throw ValidationError("provider kind must be mock, openai or anthropic (got '" + kind + "')");
                }
            }
        }
        if (j.contains("roles")) {
            for (const auto& [role, v] : j["roles"].items()) {
                if (v.is_string()) {
                    c.roles[role] = {v.get<std::string>()};
                } else {
                    c.roles[role] = v.get<std::vector<std::string>>();
                }
                for (const auto& m : c.roles[role]) ModelRef::parse(m);
            }
        }
        if (j.contains("embedding")) c.embedding = j["embedding"];
        if (j.contains("gateway")) {
            const auto& g = j["gateway"];
            c.gateway.parallelism = g.value("parallelism", c.gateway.parallelism);
            c.gateway.retry.max_retries = g.value("max_retries", c.gateway.retry.max_retries);
            c.gateway.retry.base_delay = std::chrono::milliseconds(g.value("base_delay_ms", c.gateway.retry.base_delay.count()));
            c.gateway.use_native_batch = g.value("native_batch", false);
            c.gateway.native_poll_interval =
                std::chrono::milliseconds(g.value("native_poll_ms", c.gateway.native_poll_interval.count()));
            if (c.gateway.parallelism < 1) throw ValidationError("gateway.parallelism must be at least 1");
        }
        if (j.contains("service")) {
            const auto& s = j["service"];
            c.service.host = s.value("host", c.service.host);
            c.service.port = s.value("port", c.service.port);
            if (s.contains("data_dir")) c.service.data_dir = s["data_dir"].get<std::string>();
            if (s.contains("static_dir")) c.service.static_dir = s["static_dir"].get<std::string>();
            c.service.api_token = env_or_empty(s.value("api_token_env", "ELTEX_API_TOKEN"));
            c.service.ttl_sweep_interval = std::chrono::minutes(s.value("ttl_sweep_minutes", 10));
        } else {
            c.service.api_token = env_or_empty("ELTEX_API_TOKEN");
        }
        if (j.contains("defaults")) {
            const auto& d = j["defaults"];
            c.defaults.temperature = d.value("temperature", c.defaults.temperature);
            c.defaults.dedup_threshold = d.value("threshold", c.defaults.dedup_threshold);
            c.defaults.dedup_batch_size = d.value("batch_size", c.defaults.dedup_batch_size);
            c.defaults.ttl = std::chrono::hours(d.value("ttl_hours", 24));
            c.defaults.annotation_threshold = d.value("annotation_threshold", c.defaults.annotation_threshold);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed config: ") + e.what());
    }
    return c;
}

AppConfig AppConfig::discover(const std::optional<fs::path>& explicit_path) {
    if (explicit_path) return load(*explicit_path);
    auto env = env_or_empty("ELTEX_CONFIG");
    if (!env.empty()) return load(env);
    if (fs::exists("eltex.json")) return load("eltex.json");
    return builtin();
}

std::vector<std::string> AppConfig::role_models(std::string_view role) const {
    auto it = roles.find(std::string(role));
    if (it == roles.end()) return {};
    return it->second;
}

std::string AppConfig::role_model(std::string_view role) const {
    auto m = role_models(role);
    if (m.empty()) {
        // Summarization falls back to the first indicator model.
        if (role == "summarization") {
            auto ind = role_models("indicator-generation");
            if (!ind.empty()) return ind.front();
        }
        throw ValidationError("no model configured for role '" + std::string(role) + "'");
    }
    return m.front();
}

std::map<std::string, std::string> AppConfig::provider_models() const {
    std::map<std::string, std::string> out;
    for (const auto& [role, models] : roles) {
        if (!models.empty()) out[role] = models.front();
    }
    return out;
}

fs::path AppConfig::resolve(const fs::path& p) const {
    if (p.empty() || p.is_absolute() || base_dir_.empty()) return p;
    return base_dir_ / p;
}

std::unique_ptr<Gateway> AppConfig::make_gateway() const {
    auto gw = std::make_unique<Gateway>(gateway);
    for (const auto& p : providers) {
        auto kind = p.value("kind", "");
        auto name = p.value("name", "");
        if (kind == "mock") {
            MockOptions o;
            o.name = name;
            o.seed = p.value("seed", std::uint64_t{0});
            o.count_jitter = p.value("count_jitter", std::size_t{0});
            o.latency = std::chrono::milliseconds(p.value("latency_ms", 0));
            if (p.contains("usage")) {
                TokenUsage u;
                u.input_tokens = p["usage"].value("input", std::int64_t{0});
                u.output_tokens = p["usage"].value("output", std::int64_t{0});
                o.default_usage = u;
            }
            std::vector<MockRule> rules;
            if (p.contains("script")) {
                rules = MockProvider::parse_script(read_file(resolve(p["script"].get<std::string>())));
            }
            for (const auto& r : p.value("rules", nlohmann::json::array())) rules.push_back(MockRule::from_json(r));
            gw->register_provider(std::make_shared<MockProvider>(std::move(rules), o));
        } else {
            HttpProviderConfig h;
            h.name = name;
            h.kind = kind;
            h.base_url = p.value("base_url", kind == "openai" ? "https://api.openai.com/v1" : "https://api.anthropic.com/v1");
            h.api_key = key_from(p, kind == "openai" ? "OPENAI_API_KEY" : "ANTHROPIC_API_KEY");
            h.auth_style = p.value("auth_style", "bearer");
            if (p.contains("query")) h.query = p["query"].get<std::map<std::string, std::string>>();
            h.timeout = std::chrono::seconds(p.value("timeout_s", 180));
            h.default_max_tokens = p.value("max_tokens", 4096);
            gw->register_provider(make_http_provider(h));
        }
    }
    return gw;
}

std::unique_ptr<Embedder> AppConfig::make_embedder() const {
    auto kind = embedding.value("kind", "hashing");
    if (kind == "hashing") {
        return std::make_unique<HashingEmbedder>(embedding.value("dimension", std::size_t{768}),
                                                 embedding.value("ngram", std::size_t{3}));
    }
    if (kind == "http") {
        HttpEmbedderConfig h;
        h.base_url = embedding.value("base_url", "");
        h.model = embedding.value("model", h.model);
        h.dimension = embedding.value("dimension", h.dimension);
        h.api_key = key_from(embedding, "EMBEDDING_API_KEY");
        return std::make_unique<HttpEmbedder>(h);
    }
    throw ValidationError("embedding kind must be hashing or http (got '" + kind + "')");
}

nlohmann::json AppConfig::to_json() const {
    nlohmann::json p = providers;
    for (auto& e : p) e.erase("api_key");
    return {{"providers", p},
            {"roles", roles},
            {"embedding", embedding},
            {"gateway", {{"parallelism", gateway.parallelism}, {"max_retries", gateway.retry.max_retries},
                         {"native_batch", gateway.use_native_batch}}},
            {"service", {{"host", service.host}, {"port", service.port}, {"data_dir", service.data_dir.string()}}},
            {"defaults",
             {{"temperature", defaults.temperature},
              {"threshold", defaults.dedup_threshold},
              {"batch_size", defaults.dedup_batch_size},
              {"ttl_hours", defaults.ttl.count()},
              {"annotation_threshold", defaults.annotation_threshold}}}};
}

}  // namespace eltex
