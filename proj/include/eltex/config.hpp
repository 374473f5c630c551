#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eltex/dedup.hpp"
#include "eltex/gateway.hpp"

namespace eltex {

struct ServiceSettings {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "eltex-data";
    /// Static bearer token; empty disables the check.
    std::string api_token;
    /// Directory of a built web UI to serve under /ui (optional).
    std::filesystem::path static_dir;
    std::chrono::minutes ttl_sweep_interval{10};
    /// One stderr line per request (method, path, status).
    bool access_log = false;
};

struct PipelineDefaults {
    double temperature = 0.8;
    double dedup_threshold = 0.9;
    std::size_t dedup_batch_size = 100;
    std::chrono::hours ttl{24};
    double annotation_threshold = 0.5;
    std::size_t seeds_per_batch = 10;
    std::size_t messages_per_request = 100;
};

/// Runtime configuration: providers, role -> model mapping, embedding
/// backend, gateway and service settings. Credentials are read from
/// environment variables named in the file (api_key_env), never stored.
struct AppConfig {
    nlohmann::json providers = nlohmann::json::array();
    /// Role -> model references. indicator-generation may list several.
    std::map<std::string, std::vector<std::string>> roles;
    nlohmann::json embedding = {{"kind", "hashing"}, {"dimension", 768}};
    GatewayOptions gateway;
    ServiceSettings service;
    PipelineDefaults defaults;
    std::optional<std::filesystem::path> source;

    /// Built-in offline setup: one deterministic mock provider covering every role.
    static AppConfig builtin();
    /// Throws ValidationError on malformed content and NotFoundError for a missing file.
    static AppConfig load(const std::filesystem::path& path);
    static AppConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    /// Explicit path, else $ELTEX_CONFIG, else ./eltex.json, else builtin().
    static AppConfig discover(const std::optional<std::filesystem::path>& explicit_path);

    /// Throws ValidationError when the role has no model.
    std::string role_model(std::string_view role) const;
    std::vector<std::string> role_models(std::string_view role) const;
    /// Model references for GenerationParams::provider_models (first model per role).
    std::map<std::string, std::string> provider_models() const;

    /// Registers every configured provider.
    std::unique_ptr<Gateway> make_gateway() const;
    std::unique_ptr<Embedder> make_embedder() const;
    /// Parses the file-relative paths with this config's base directory.
    std::filesystem::path resolve(const std::filesystem::path& p) const;

    nlohmann::json to_json() const;

private:
    std::filesystem::path base_dir_;
};

}  // namespace eltex
