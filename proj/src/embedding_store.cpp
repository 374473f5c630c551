#include <sqlite3.h>

#include <algorithm>
#include <cstring>
#include <unordered_map>

#include "eltex/dedup.hpp"
#include "eltex/errors.hpp"

namespace eltex {

namespace {

nlohmann::json record_summary(const EmbeddingRecord& r) {
    return {{"message_id", r.message_id},
            {"session_id", r.session_id},
            {"namespace", r.ns},
            {"dimension", r.vector.dimension()},
            {"inserted_at", format_rfc3339(r.inserted_at)},
            {"expires_at", format_rfc3339(r.expires_at)}};
}

std::string table_for(const std::string& ns) {
    if (ns.empty() || ns.size() > 64) throw ValidationError("invalid namespace '" + ns + "'");
    for (char c : ns) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) {
            throw ValidationError("namespace may only contain letters, digits and '_': '" + ns + "'");
        }
    }
    return "emb_" + ns;
}

std::int64_t ms(Timestamp t) { return t.time_since_epoch().count(); }
Timestamp from_ms(std::int64_t v) { return Timestamp{std::chrono::milliseconds{v}}; }

}  // namespace

// --- memory ---------------------------------------------------------------

void MemoryEmbeddingStore::insert(const EmbeddingRecord& record) {
    std::lock_guard lock(mu_);
    for (auto& r : records_) {
        if (r.session_id == record.session_id && r.ns == record.ns && r.message_id == record.message_id) {
            r = record;
            return;
        }
    }
    records_.push_back(record);
}

std::vector<EmbeddingRecord> MemoryEmbeddingStore::active(const std::string& session_id, const std::string& ns,
                                                          Timestamp now) const {
    std::lock_guard lock(mu_);
    std::vector<EmbeddingRecord> out;
    for (const auto& r : records_) {
        if (r.session_id == session_id && r.ns == ns && r.expires_at > now) out.push_back(r);
    }
    return out;
}

std::size_t MemoryEmbeddingStore::purge_expired(Timestamp now) {
    std::lock_guard lock(mu_);
    auto before = records_.size();
    records_.erase(std::remove_if(records_.begin(), records_.end(), [&](const auto& r) { return r.expires_at <= now; }),
                   records_.end());
    return before - records_.size();
}

std::size_t MemoryEmbeddingStore::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

std::size_t MemoryEmbeddingStore::clear_session(const std::string& session_id) {
    std::lock_guard lock(mu_);
    auto before = records_.size();
    records_.erase(std::remove_if(records_.begin(), records_.end(),
                                  [&](const auto& r) { return r.session_id == session_id; }),
                   records_.end());
    return before - records_.size();
}

nlohmann::json MemoryEmbeddingStore::snapshot() const {
    std::lock_guard lock(mu_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : records_) out.push_back(record_summary(r));
    return out;
}

// --- sqlite ---------------------------------------------------------------

struct SqliteEmbeddingStore::Impl {
    sqlite3* db = nullptr;
    mutable std::mutex mu;

    void exec(const std::string& sql) const {
        char* err = nullptr;
        if (sqlite3_exec(db, sql.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
            std::string msg = err ? err : "unknown error";
            sqlite3_free(err);
            throw BackendError("sqlite: " + msg);
        }
    }

    struct Stmt {
        sqlite3_stmt* s = nullptr;
        Stmt(sqlite3* db, const std::string& sql) {
            if (sqlite3_prepare_v2(db, sql.c_str(), -1, &s, nullptr) != SQLITE_OK) {
                throw BackendError(std::string("sqlite: ") + sqlite3_errmsg(db));
            }
        }
        ~Stmt() { sqlite3_finalize(s); }
        Stmt(const Stmt&) = delete;
        Stmt& operator=(const Stmt&) = delete;
    };

    void ensure_table(const std::string& table) const {
        exec("CREATE TABLE IF NOT EXISTS " + table +
             " (seq INTEGER PRIMARY KEY AUTOINCREMENT, session_id TEXT NOT NULL, message_id TEXT NOT NULL,"
             " dim INTEGER NOT NULL, vec BLOB NOT NULL, inserted_at INTEGER NOT NULL, expires_at INTEGER NOT NULL,"
             " UNIQUE(session_id, message_id))");
        exec("CREATE INDEX IF NOT EXISTS " + table + "_expiry ON " + table + "(expires_at)");
    }

    std::vector<std::string> tables() const {
        Stmt st(db, "SELECT name FROM sqlite_master WHERE type='table' AND name LIKE 'emb\\_%' ESCAPE '\\' ORDER BY name");
        std::vector<std::string> out;
        while (sqlite3_step(st.s) == SQLITE_ROW) {
            out.emplace_back(reinterpret_cast<const char*>(sqlite3_column_text(st.s, 0)));
        }
        return out;
    }

    void insert_locked(const EmbeddingRecord& r) const {
        auto table = table_for(r.ns);
        ensure_table(table);
        Stmt st(db, "INSERT INTO " + table +
                        " (session_id, message_id, dim, vec, inserted_at, expires_at) VALUES (?,?,?,?,?,?)"
                        " ON CONFLICT(session_id, message_id) DO UPDATE SET dim=excluded.dim, vec=excluded.vec,"
                        " inserted_at=excluded.inserted_at, expires_at=excluded.expires_at");
        sqlite3_bind_text(st.s, 1, r.session_id.c_str(), -1, SQLITE_TRANSIENT);
        sqlite3_bind_text(st.s, 2, r.message_id.c_str(), -1, SQLITE_TRANSIENT);
        sqlite3_bind_int64(st.s, 3, static_cast<sqlite3_int64>(r.vector.dimension()));
        sqlite3_bind_blob(st.s, 4, r.vector.values.data(), static_cast<int>(r.vector.values.size() * sizeof(float)),
                          SQLITE_TRANSIENT);
        sqlite3_bind_int64(st.s, 5, ms(r.inserted_at));
        sqlite3_bind_int64(st.s, 6, ms(r.expires_at));
        if (sqlite3_step(st.s) != SQLITE_DONE) throw BackendError(std::string("sqlite: ") + sqlite3_errmsg(db));
    }

    std::vector<EmbeddingRecord> read(const std::string& table, const std::string& where, bool with_vectors,
                                      const std::vector<std::string>& text_args, std::optional<std::int64_t> int_arg,
                                      const std::string& ns) const {
        Stmt st(db, "SELECT session_id, message_id, dim, vec, inserted_at, expires_at FROM " + table + " " + where +
                        " ORDER BY seq");
        int i = 1;
        for (const auto& a : text_args) sqlite3_bind_text(st.s, i++, a.c_str(), -1, SQLITE_TRANSIENT);
        if (int_arg) sqlite3_bind_int64(st.s, i++, *int_arg);
        std::vector<EmbeddingRecord> out;
        int rc;
        while ((rc = sqlite3_step(st.s)) == SQLITE_ROW) {
            EmbeddingRecord r;
            r.session_id = reinterpret_cast<const char*>(sqlite3_column_text(st.s, 0));
            r.message_id = reinterpret_cast<const char*>(sqlite3_column_text(st.s, 1));
            auto dim = static_cast<std::size_t>(sqlite3_column_int64(st.s, 2));
            r.vector.values.resize(dim);
            if (with_vectors) {
                auto bytes = static_cast<std::size_t>(sqlite3_column_bytes(st.s, 3));
                if (bytes != dim * sizeof(float)) throw BackendError("sqlite: corrupt embedding blob");
                std::memcpy(r.vector.values.data(), sqlite3_column_blob(st.s, 3), bytes);
            }
            r.ns = ns;
            r.inserted_at = from_ms(sqlite3_column_int64(st.s, 4));
            r.expires_at = from_ms(sqlite3_column_int64(st.s, 5));
            out.push_back(std::move(r));
        }
        if (rc != SQLITE_DONE) throw BackendError(std::string("sqlite: ") + sqlite3_errmsg(db));
        return out;
    }
};

SqliteEmbeddingStore::SqliteEmbeddingStore(const std::filesystem::path& path) : impl_(std::make_unique<Impl>()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (sqlite3_open_v2(path.string().c_str(), &impl_->db, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        std::string msg = impl_->db ? sqlite3_errmsg(impl_->db) : "out of memory";
        sqlite3_close(impl_->db);
        impl_->db = nullptr;
        throw BackendError("cannot open embedding store " + path.string() + ": " + msg);
    }
    sqlite3_busy_timeout(impl_->db, 5000);
    impl_->exec("PRAGMA journal_mode=WAL");
    impl_->exec("PRAGMA synchronous=NORMAL");
}

SqliteEmbeddingStore::~SqliteEmbeddingStore() {
    if (impl_ && impl_->db) sqlite3_close(impl_->db);
}

void SqliteEmbeddingStore::insert(const EmbeddingRecord& record) {
    std::lock_guard lock(impl_->mu);
    impl_->insert_locked(record);
}

void SqliteEmbeddingStore::insert_many(const std::vector<EmbeddingRecord>& records) {
    if (records.empty()) return;
    std::lock_guard lock(impl_->mu);
    impl_->exec("BEGIN");
    try {
        for (const auto& r : records) impl_->insert_locked(r);
        impl_->exec("COMMIT");
    } catch (...) {
        sqlite3_exec(impl_->db, "ROLLBACK", nullptr, nullptr, nullptr);
        throw;
    }
}

std::vector<EmbeddingRecord> SqliteEmbeddingStore::active(const std::string& session_id, const std::string& ns,
                                                          Timestamp now) const {
    auto table = table_for(ns);
    std::lock_guard lock(impl_->mu);
    auto tables = impl_->tables();
    if (std::find(tables.begin(), tables.end(), table) == tables.end()) return {};
    return impl_->read(table, "WHERE session_id = ? AND expires_at > ?", true, {session_id}, ms(now), ns);
}

std::size_t SqliteEmbeddingStore::purge_expired(Timestamp now) {
    std::lock_guard lock(impl_->mu);
    std::size_t n = 0;
    for (const auto& t : impl_->tables()) {
        Impl::Stmt st(impl_->db, "DELETE FROM " + t + " WHERE expires_at <= ?");
        sqlite3_bind_int64(st.s, 1, ms(now));
        if (sqlite3_step(st.s) != SQLITE_DONE) throw BackendError(std::string("sqlite: ") + sqlite3_errmsg(impl_->db));
        n += static_cast<std::size_t>(sqlite3_changes(impl_->db));
    }
    return n;
}

std::size_t SqliteEmbeddingStore::size() const {
    std::lock_guard lock(impl_->mu);
    std::size_t n = 0;
    for (const auto& t : impl_->tables()) {
        Impl::Stmt st(impl_->db, "SELECT COUNT(*) FROM " + t);
        if (sqlite3_step(st.s) == SQLITE_ROW) n += static_cast<std::size_t>(sqlite3_column_int64(st.s, 0));
    }
    return n;
}

std::size_t SqliteEmbeddingStore::clear_session(const std::string& session_id) {
    std::lock_guard lock(impl_->mu);
    std::size_t n = 0;
    for (const auto& t : impl_->tables()) {
        Impl::Stmt st(impl_->db, "DELETE FROM " + t + " WHERE session_id = ?");
        sqlite3_bind_text(st.s, 1, session_id.c_str(), -1, SQLITE_TRANSIENT);
        if (sqlite3_step(st.s) != SQLITE_DONE) throw BackendError(std::string("sqlite: ") + sqlite3_errmsg(impl_->db));
        n += static_cast<std::size_t>(sqlite3_changes(impl_->db));
    }
    return n;
}

nlohmann::json SqliteEmbeddingStore::snapshot() const {
    std::lock_guard lock(impl_->mu);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& t : impl_->tables()) {
        for (const auto& r : impl_->read(t, "", false, {}, std::nullopt, t.substr(4))) out.push_back(record_summary(r));
    }
    return out;
}

}  // namespace eltex
