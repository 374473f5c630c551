#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "eltex/clock.hpp"
#include "eltex/message.hpp"

namespace eltex {

// --- embeddings -----------------------------------------------------------

struct EmbeddingVector {
    std::vector<float> values;

    std::size_t dimension() const noexcept { return values.size(); }
    double norm() const;
    /// Throws ValidationError on NaN or infinite components.
    void validate() const;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dimension() const = 0;
    /// One vector per input, same order. Throws BackendError when the
    /// backend is unavailable and ValidationError on empty text.
    virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) = 0;
    EmbeddingVector embed(const std::string& text);
};

/// Local deterministic backend: signed feature hashing of character 3-grams
/// (with a space on either side of the text), L2-normalized.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = 768, std::size_t ngram = 3);
    std::string name() const override { return "hashing-" + std::to_string(ngram_) + "gram-" + std::to_string(dim_); }
    std::size_t dimension() const override { return dim_; }
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

private:
    std::size_t dim_;
    std::size_t ngram_;
};

struct HttpEmbedderConfig {
    /// OpenAI-compatible base URL including the version prefix; the
    /// embeddings endpoint is <base_url>/embeddings.
    std::string base_url;
    std::string api_key;
    std::string model = "BAAI/bge-base-en-v1.5";
    std::size_t dimension = 768;
    std::chrono::seconds timeout{60};
};

/// Remote backend (e.g. a text-embeddings-inference server hosting BGE).
class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(HttpEmbedderConfig cfg);
    std::string name() const override { return cfg_.model; }
    std::size_t dimension() const override { return cfg_.dimension; }
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

private:
    HttpEmbedderConfig cfg_;
};

/// Cosine of the angle between a and b, clamped to [-1, 1]. Throws
/// ValidationError on a dimension mismatch or a zero vector.
double similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// --- store ----------------------------------------------------------------

struct EmbeddingRecord {
    std::string message_id;
    EmbeddingVector vector;
    std::string session_id;
    std::string ns = "default";
    Timestamp inserted_at{};
    Timestamp expires_at{};
};

/// Session-scoped embedding store with per-namespace tables and TTL.
/// Implementations are thread-safe.
class EmbeddingStore {
public:
    virtual ~EmbeddingStore() = default;
    /// Replaces any record with the same (session, namespace, message id).
    virtual void insert(const EmbeddingRecord& record) = 0;
    virtual void insert_many(const std::vector<EmbeddingRecord>& records);
    /// Records with expires_at > now, in insertion order.
    virtual std::vector<EmbeddingRecord> active(const std::string& session_id, const std::string& ns,
                                                Timestamp now) const = 0;
    /// Removes records with expires_at <= now; returns how many.
    virtual std::size_t purge_expired(Timestamp now) = 0;
    /// Total records, expired or not.
    virtual std::size_t size() const = 0;
    virtual std::size_t clear_session(const std::string& session_id) = 0;
    /// Audit snapshot: one object per record without the vector values.
    virtual nlohmann::json snapshot() const = 0;
};

class MemoryEmbeddingStore final : public EmbeddingStore {
public:
    void insert(const EmbeddingRecord& record) override;
    std::vector<EmbeddingRecord> active(const std::string& session_id, const std::string& ns,
                                        Timestamp now) const override;
    std::size_t purge_expired(Timestamp now) override;
    std::size_t size() const override;
    std::size_t clear_session(const std::string& session_id) override;
    nlohmann::json snapshot() const override;

private:
    mutable std::mutex mu_;
    std::vector<EmbeddingRecord> records_;
};

/// SQLite-backed store: one table per namespace.
class SqliteEmbeddingStore final : public EmbeddingStore {
public:
    /// Throws BackendError when the database cannot be opened.
    explicit SqliteEmbeddingStore(const std::filesystem::path& path);
    ~SqliteEmbeddingStore() override;
    SqliteEmbeddingStore(const SqliteEmbeddingStore&) = delete;
    SqliteEmbeddingStore& operator=(const SqliteEmbeddingStore&) = delete;

    void insert(const EmbeddingRecord& record) override;
    void insert_many(const std::vector<EmbeddingRecord>& records) override;
    std::vector<EmbeddingRecord> active(const std::string& session_id, const std::string& ns,
                                        Timestamp now) const override;
    std::size_t purge_expired(Timestamp now) override;
    std::size_t size() const override;
    std::size_t clear_session(const std::string& session_id) override;
    nlohmann::json snapshot() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::size_t purge_expired(EmbeddingStore& store, Timestamp now);

// --- dedup ----------------------------------------------------------------

struct DedupConfig {
    double threshold = 0.9;
    std::size_t batch_size = 100;
    std::chrono::milliseconds ttl = std::chrono::hours(24);
    std::string ns = "default";

    /// Throws ValidationError unless 0 < threshold <= 1 and batch_size >= 1.
    void validate() const;
};

struct ExactDedupResult {
    std::vector<Message> unique;
    std::size_t removed = 0;
};

/// Keeps the first occurrence of each content string, in order.
ExactDedupResult exact_dedup(const std::vector<Message>& messages);

/// Progress of a semantic pass; lets a failed run resume where it stopped.
struct DedupCheckpoint {
    std::size_t processed = 0;
    std::set<std::string> retained_ids;

    nlohmann::json to_json() const;
    static DedupCheckpoint from_json(const nlohmann::json& j);
};

struct SemanticResult {
    std::vector<Message> retained;
    std::vector<Message> filtered;
    /// Highest similarity each input message saw (-1 against an empty pool,
    /// NaN for messages restored from a checkpoint).
    std::vector<double> max_similarity;
};

/// Admits messages in input order: a message is kept iff its highest
/// similarity to every active record of the session (including earlier
/// admissions from this call) is below the threshold. Kept messages are
/// inserted into the store immediately. Vectors are fetched in batches of
/// cfg.batch_size. When `checkpoint` is given, the first
/// checkpoint->processed messages are taken as already decided and the
/// checkpoint is advanced after each batch.
SemanticResult semantic_filter(const std::vector<Message>& messages, EmbeddingStore& store, const DedupConfig& cfg,
                               Embedder& embedder, const std::string& session_id, const Clock& clock,
                               DedupCheckpoint* checkpoint = nullptr);

struct CategoryDedupStats {
    std::size_t received = 0;
    std::size_t retained = 0;
    std::size_t filtered = 0;
};

struct DedupReport {
    std::size_t received = 0;
    std::size_t retained = 0;
    std::size_t filtered = 0;
    double insertion_rate = 0.0;
    std::size_t exact_removed = 0;
    std::size_t semantic_removed = 0;
    std::map<std::string, CategoryDedupStats> per_category;
    double threshold = 0.9;
    std::size_t batch_size = 100;
    std::string embedder;

    nlohmann::json to_json() const;
};

struct DedupOutcome {
    Dataset retained;
    DedupReport report;
    std::vector<Message> filtered;
};

/// Exact matching, then semantic filtering against the session's store.
DedupOutcome dedup_pipeline(const std::vector<Message>& messages, const std::string& session_id,
                            const DedupConfig& cfg, Embedder& embedder, EmbeddingStore& store, const Clock& clock,
                            DedupCheckpoint* checkpoint = nullptr);

/// Per-session mutual exclusion for dedup passes.
class SessionLocks {
public:
    class Guard {
    public:
        Guard() = default;
        Guard(SessionLocks* owner, std::string session) : owner_(owner), session_(std::move(session)) {}
        Guard(Guard&& o) noexcept : owner_(std::exchange(o.owner_, nullptr)), session_(std::move(o.session_)) {}
        Guard& operator=(Guard&& o) noexcept;
        ~Guard();
        explicit operator bool() const noexcept { return owner_ != nullptr; }

    private:
        SessionLocks* owner_ = nullptr;
        std::string session_;
    };

    /// Empty guard when the session is already locked.
    Guard try_acquire(const std::string& session_id);
    Guard acquire(const std::string& session_id);

private:
    void release(const std::string& session_id);

    std::mutex mu_;
    std::condition_variable cv_;
    std::set<std::string> held_;
};

}  // namespace eltex
