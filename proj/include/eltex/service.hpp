#pragma once

#include <memory>
#include <string>

#include "eltex/config.hpp"

namespace eltex {

struct ServiceDeps {
    /// Built from the config when null.
    std::shared_ptr<Gateway> gateway;
    std::shared_ptr<Embedder> embedder;
    /// Defaults to a SQLite store at <data_dir>/embeddings.sqlite.
    std::shared_ptr<EmbeddingStore> store;
    const Clock* clock = nullptr;
};

/// REST front end over a data directory. Sessions, jobs, datasets and the
/// embedding store live on disk; jobs interrupted by a restart are resumed
/// when the service is constructed.
///
/// Layout under data_dir:
///   sessions/<sid>/session.json, seeds.jsonl, indicators.json,
///     candidates/, jobs.json, dedup.json, deduplicated.jsonl, final.jsonl
///   jobs/<jid>/  (run_job layout plus job.json)
///   tasks/<tid>.json
class Service {
public:
    explicit Service(AppConfig config, ServiceDeps deps = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds without serving; port 0 picks a free port. Returns the port.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Call bind() first.
    void run();
    void stop();
    /// Blocks until background tasks and jobs have finished.
    void wait_idle();
    /// Removes expired embedding records; returns how many.
    std::size_t sweep_expired();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eltex
