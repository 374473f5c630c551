#include "eltex/dedup.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "eltex/errors.hpp"
#include "eltex/http_util.hpp"
#include "eltex/rng.hpp"

namespace eltex {

namespace {

double dot(const float* a, const float* b, std::size_t n) {
    // Eight independent accumulators so the loop vectorizes without
    // -ffast-math; the result is the same on every run.
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t k = 0; k < 8; ++k) acc[k] += static_cast<double>(a[i + k]) * b[i + k];
    }
    double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

double EmbeddingVector::norm() const { return std::sqrt(dot(values.data(), values.data(), values.size())); }

void EmbeddingVector::validate() const {
    for (float v : values) {
        if (!std::isfinite(v)) throw ValidationError("embedding has a non-finite component");
    }
}

EmbeddingVector Embedder::embed(const std::string& text) {
    auto out = embed_batch({text});
    if (out.size() != 1) throw BackendError("embedding backend returned " + std::to_string(out.size()) + " vectors");
    return std::move(out.front());
}

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::size_t ngram) : dim_(dimension), ngram_(ngram) {
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
    if (ngram_ == 0) throw ValidationError("n-gram size must be positive");
}

std::vector<EmbeddingVector> HashingEmbedder::embed_batch(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        if (text.empty()) throw ValidationError("cannot embed empty text");
        std::string padded = " " + text + " ";
        std::vector<double> acc(dim_, 0.0);
        std::size_t grams = padded.size() >= ngram_ ? padded.size() - ngram_ + 1 : 1;
        for (std::size_t i = 0; i < grams; ++i) {
            auto g = std::string_view(padded).substr(i, ngram_);
            std::uint64_t h = mix64(fnv1a(g));
            acc[h % dim_] += (h >> 63) ? -1.0 : 1.0;
        }
        double n = 0;
        for (double v : acc) n += v * v;
        n = std::sqrt(n);
        EmbeddingVector e;
        e.values.resize(dim_);
        if (n == 0) {
            // Every n-gram cancelled out; fall back to a fixed direction so the
            // vector stays usable.
            e.values[mix64(fnv1a(text)) % dim_] = 1.0f;
        } else {
            for (std::size_t k = 0; k < dim_; ++k) e.values[k] = static_cast<float>(acc[k] / n);
        }
        out.push_back(std::move(e));
    }
    return out;
}

HttpEmbedder::HttpEmbedder(HttpEmbedderConfig cfg) : cfg_(std::move(cfg)) {
    split_url(cfg_.base_url);
    if (cfg_.dimension == 0) throw ValidationError("embedding dimension must be positive");
}

std::vector<EmbeddingVector> HttpEmbedder::embed_batch(const std::vector<std::string>& texts) {
    for (const auto& t : texts) {
        if (t.empty()) throw ValidationError("cannot embed empty text");
    }
    if (texts.empty()) return {};
    auto url = split_url(cfg_.base_url);
    httplib::Client cli(url.origin);
    cli.set_connection_timeout(std::chrono::seconds(10));
    cli.set_read_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    nlohmann::json body = {{"model", cfg_.model}, {"input", texts}};
    auto res = cli.Post(url.path + "/embeddings", headers, body.dump(), "application/json");
    if (!res) throw BackendError("embedding backend unavailable: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw BackendError("embedding backend returned HTTP " + std::to_string(res->status));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array()) {
        throw BackendError("embedding backend returned an unexpected body");
    }
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<bool> filled(texts.size(), false);
    std::size_t pos = 0;
    for (const auto& item : j["data"]) {
        std::size_t idx = item.value("index", pos);
        ++pos;
        if (idx >= out.size() || !item.contains("embedding")) throw BackendError("embedding response is malformed");
        out[idx].values = item["embedding"].get<std::vector<float>>();
        if (out[idx].dimension() != cfg_.dimension) {
            throw BackendError("embedding dimension " + std::to_string(out[idx].dimension()) + " != expected " +
                               std::to_string(cfg_.dimension));
        }
        out[idx].validate();
        filled[idx] = true;
    }
    if (std::find(filled.begin(), filled.end(), false) != filled.end()) {
        throw BackendError("embedding response is missing vectors");
    }
    return out;
}

double similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension()) {
        throw ValidationError("embedding dimensions differ: " + std::to_string(a.dimension()) + " vs " +
                              std::to_string(b.dimension()));
    }
    double na = a.norm();
    double nb = b.norm();
    if (na == 0 || nb == 0) throw ValidationError("cosine similarity is undefined for a zero vector");
    return clamp_unit(dot(a.values.data(), b.values.data(), a.dimension()) / (na * nb));
}

void EmbeddingStore::insert_many(const std::vector<EmbeddingRecord>& records) {
    for (const auto& r : records) insert(r);
}

std::size_t purge_expired(EmbeddingStore& store, Timestamp now) { return store.purge_expired(now); }

void DedupConfig::validate() const {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in (0, 1]");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (ttl.count() <= 0) throw ValidationError("ttl must be positive");
    if (ns.empty()) throw ValidationError("namespace must be non-empty");
}

ExactDedupResult exact_dedup(const std::vector<Message>& messages) {
    ExactDedupResult r;
    std::unordered_set<std::string_view> seen;
    for (const auto& m : messages) {
        if (seen.insert(m.content).second) {
            r.unique.push_back(m);
        } else {
            ++r.removed;
        }
    }
    return r;
}

nlohmann::json DedupCheckpoint::to_json() const {
    return {{"processed", processed}, {"retained_ids", retained_ids}};
}

DedupCheckpoint DedupCheckpoint::from_json(const nlohmann::json& j) {
    DedupCheckpoint c;
    c.processed = j.value("processed", std::size_t{0});
    if (j.contains("retained_ids")) c.retained_ids = j["retained_ids"].get<std::set<std::string>>();
    return c;
}

SemanticResult semantic_filter(const std::vector<Message>& messages, EmbeddingStore& store, const DedupConfig& cfg,
                               Embedder& embedder, const std::string& session_id, const Clock& clock,
                               DedupCheckpoint* checkpoint) {
    cfg.validate();
    SemanticResult out;
    out.max_similarity.assign(messages.size(), std::numeric_limits<double>::quiet_NaN());

    std::size_t start = checkpoint ? std::min(checkpoint->processed, messages.size()) : 0;
    for (std::size_t i = 0; i < start; ++i) {
        (checkpoint->retained_ids.count(messages[i].id) ? out.retained : out.filtered).push_back(messages[i]);
    }

    // Vectors the next message must be compared to, with their norms. The
    // arithmetic matches similarity() exactly.
    struct Entry {
        EmbeddingVector v;
        double norm;
    };
    std::vector<Entry> pool;
    auto entry = [](EmbeddingVector v) {
        double n = v.norm();
        if (n == 0) throw ValidationError("cosine similarity is undefined for a zero vector");
        return Entry{std::move(v), n};
    };
    for (auto& r : store.active(session_id, cfg.ns, clock.now())) {
        if (r.vector.dimension() != embedder.dimension()) {
            throw ValidationError("stored embeddings have dimension " + std::to_string(r.vector.dimension()) +
                                  " but the backend produces " + std::to_string(embedder.dimension()));
        }
        pool.push_back(entry(std::move(r.vector)));
    }

    for (std::size_t b = start; b < messages.size(); b += cfg.batch_size) {
        std::size_t e = std::min(messages.size(), b + cfg.batch_size);
        std::vector<std::string> texts;
        for (std::size_t i = b; i < e; ++i) texts.push_back(messages[i].content);
        auto vectors = embedder.embed_batch(texts);
        if (vectors.size() != texts.size()) throw BackendError("embedding backend returned the wrong count");

        std::vector<EmbeddingRecord> admitted;
        auto now = clock.now();
        for (std::size_t i = b; i < e; ++i) {
            const auto& v = vectors[i - b];
            if (v.dimension() != embedder.dimension()) throw BackendError("embedding has the wrong dimension");
            v.validate();
            auto cur = entry(v);
            double best = -1.0;
            for (const auto& p : pool) {
                best = std::max(best, clamp_unit(dot(cur.v.values.data(), p.v.values.data(), cur.v.dimension()) /
                                                 (cur.norm * p.norm)));
            }
            out.max_similarity[i] = best;
            if (best < cfg.threshold) {
                out.retained.push_back(messages[i]);
                pool.push_back(std::move(cur));
                admitted.push_back({messages[i].id, v, session_id, cfg.ns, now, now + cfg.ttl});
                if (checkpoint) checkpoint->retained_ids.insert(messages[i].id);
            } else {
                out.filtered.push_back(messages[i]);
            }
        }
        store.insert_many(admitted);
        if (checkpoint) checkpoint->processed = e;
    }
    return out;
}

nlohmann::json DedupReport::to_json() const {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, s] : per_category) {
        cats[name] = {{"received", s.received}, {"retained", s.retained}, {"filtered", s.filtered}};
    }
    return {{"received", received},
            {"retained", retained},
            {"filtered", filtered},
            {"insertion_rate", insertion_rate},
            {"exact_removed", exact_removed},
            {"semantic_removed", semantic_removed},
            {"per_category", cats},
            {"threshold", threshold},
            {"batch_size", batch_size},
            {"embedder", embedder}};
}

DedupOutcome dedup_pipeline(const std::vector<Message>& messages, const std::string& session_id,
                            const DedupConfig& cfg, Embedder& embedder, EmbeddingStore& store, const Clock& clock,
                            DedupCheckpoint* checkpoint) {
    cfg.validate();
    if (session_id.empty()) throw ValidationError("session id must be non-empty");
    auto exact = exact_dedup(messages);
    auto sem = semantic_filter(exact.unique, store, cfg, embedder, session_id, clock, checkpoint);

    DedupOutcome out;
    out.retained = Dataset::from_messages("deduplicated", Provenance::deduplicated, sem.retained);
    auto& r = out.report;
    r.received = messages.size();
    r.retained = sem.retained.size();
    r.filtered = r.received - r.retained;
    r.insertion_rate = r.received ? static_cast<double>(r.retained) / static_cast<double>(r.received) : 0.0;
    r.exact_removed = exact.removed;
    r.semantic_removed = sem.filtered.size();
    r.threshold = cfg.threshold;
    r.batch_size = cfg.batch_size;
    r.embedder = embedder.name();
    for (const auto& m : messages) ++r.per_category[m.category].received;
    for (const auto& m : sem.retained) ++r.per_category[m.category].retained;
    for (auto& [name, s] : r.per_category) s.filtered = s.received - s.retained;

    // Exact repeats never reach the semantic stage; report them as filtered too.
    std::unordered_set<std::string> kept;
    for (const auto& m : sem.retained) kept.insert(m.id);
    for (const auto& m : messages) {
        // erase() so only the first copy of a kept message counts as kept
        if (!kept.erase(m.id)) out.filtered.push_back(m);
    }
    return out;
}

SessionLocks::Guard& SessionLocks::Guard::operator=(Guard&& o) noexcept {
    if (this != &o) {
        if (owner_) owner_->release(session_);
        owner_ = std::exchange(o.owner_, nullptr);
        session_ = std::move(o.session_);
    }
    return *this;
}

SessionLocks::Guard::~Guard() {
    if (owner_) owner_->release(session_);
}

SessionLocks::Guard SessionLocks::try_acquire(const std::string& session_id) {
    std::lock_guard lock(mu_);
    if (!held_.insert(session_id).second) return {};
    return Guard(this, session_id);
}

SessionLocks::Guard SessionLocks::acquire(const std::string& session_id) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return held_.count(session_id) == 0; });
    held_.insert(session_id);
    return Guard(this, session_id);
}

void SessionLocks::release(const std::string& session_id) {
    {
        std::lock_guard lock(mu_);
        held_.erase(session_id);
    }
    cv_.notify_all();
}

}  // namespace eltex
