#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "eltex/gateway.hpp"
#include "eltex/message.hpp"
#include "eltex/mock_provider.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("eltex-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline eltex::GatewayOptions fast_options(std::size_t parallelism = 4) {
    eltex::GatewayOptions o;
    o.parallelism = parallelism;
    o.sleeper = [](std::chrono::milliseconds) {};
    o.native_poll_interval = std::chrono::milliseconds(1);
    return o;
}

struct MockSetup {
    std::shared_ptr<eltex::MockProvider> provider;
    std::unique_ptr<eltex::Gateway> gateway;
};

inline MockSetup mock_gateway(std::vector<eltex::MockRule> rules = {}, std::uint64_t seed = 1,
                              std::string name = "mock", std::size_t jitter = 0) {
    eltex::MockOptions mo;
    mo.name = std::move(name);
    mo.seed = seed;
    mo.count_jitter = jitter;
    MockSetup s;
    s.provider = std::make_shared<eltex::MockProvider>(std::move(rules), mo);
    s.gateway = std::make_unique<eltex::Gateway>(fast_options());
    s.gateway->register_provider(s.provider);
    return s;
}

inline eltex::MockRule rule(const nlohmann::json& j) { return eltex::MockRule::from_json(j); }

inline std::vector<eltex::Message> seeds(std::size_t n, const std::string& prefix = "seed message number") {
    std::vector<eltex::Message> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(eltex::Message::make(prefix + " " + std::to_string(i), eltex::Source::seed, "target"));
    }
    return out;
}

}  // namespace testing
