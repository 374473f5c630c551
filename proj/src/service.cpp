#include "eltex/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "eltex/annotation.hpp"
#include "eltex/dataset_io.hpp"
#include "eltex/metrics.hpp"
#include "eltex/orchestrator.hpp"
#include "eltex/pipeline.hpp"
#include "httplib.h"

namespace eltex {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kIdPattern = "([A-Za-z0-9_-]+)";

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw ValidationError("request body is not valid JSON");
    return j;
}

void send_json(httplib::Response& res, int status, const json& j) {
    res.status = status;
    res.set_content(j.dump(), kJson);
}

void send_error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
    send_json(res, status, {{"error", {{"kind", kind}, {"message", message}}}});
}

std::size_t query_size(const httplib::Request& req, const char* name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    auto v = req.get_param_value(name);
    try {
        std::size_t used = 0;
        auto n = std::stoll(v, &used);
        if (used != v.size() || n < 1) throw std::invalid_argument("bad");
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ValidationError(std::string(name) + " must be a positive integer");
    }
}

}  // namespace

struct Service::Impl {
    AppConfig config;
    fs::path root;
    std::shared_ptr<Gateway> gateway;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<EmbeddingStore> store;
    SystemClock system_clock;
    const Clock* clock;
    std::unique_ptr<JobRunner> runner;
    SessionLocks dedup_locks;
    SessionLocks annotate_locks;
    SessionLocks mutate_locks;
    httplib::Server server;

    std::mutex mu;
    std::mt19937_64 rng{std::random_device{}()};
    std::map<std::string, json> tasks;
    std::vector<std::thread> workers;
    std::vector<std::string> started_jobs;

    std::mutex sweep_mu;
    std::condition_variable sweep_cv;
    bool stopping = false;
    std::thread sweeper;

    Impl(AppConfig cfg, ServiceDeps deps) : config(std::move(cfg)) {
        root = config.service.data_dir;
        fs::create_directories(root / "sessions");
        fs::create_directories(root / "jobs");
        fs::create_directories(root / "tasks");
        clock = deps.clock ? deps.clock : &system_clock;
        gateway = deps.gateway ? deps.gateway : std::shared_ptr<Gateway>(config.make_gateway());
        embedder = deps.embedder ? deps.embedder : std::shared_ptr<Embedder>(config.make_embedder());
        store = deps.store ? deps.store : std::make_shared<SqliteEmbeddingStore>(root / "embeddings.sqlite");
        runner = std::make_unique<JobRunner>(*gateway);
        routes();
        recover();
        sweeper = std::thread([this] { sweep_loop(); });
    }

    ~Impl() {
        {
            std::lock_guard l(sweep_mu);
            stopping = true;
        }
        sweep_cv.notify_all();
        if (sweeper.joinable()) sweeper.join();
        server.stop();
        join_workers();
        runner.reset();
    }

    // --- ids, paths -------------------------------------------------------

    std::string new_id(std::string_view prefix) {
        std::lock_guard l(mu);
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
        return std::string(prefix) + "-" + buf;
    }

    fs::path session_dir(const std::string& sid) const {
        auto d = root / "sessions" / sid;
        if (!fs::exists(d / "session.json")) throw NotFoundError("unknown session '" + sid + "'");
        return d;
    }

    fs::path job_dir(const std::string& jid) const { return root / "jobs" / jid; }

    // --- session data -------------------------------------------------------

    std::vector<std::string> session_jobs(const fs::path& sdir) const {
        auto p = sdir / "jobs.json";
        if (!fs::exists(p)) return {};
        return read_json(p).get<std::vector<std::string>>();
    }

    std::optional<JobStatus> disk_status(const std::string& jid) const {
        auto d = job_dir(jid);
        if (!fs::exists(d / "status.json")) return std::nullopt;
        return job_status(d);
    }

    /// Raw output of every finished job of the session, job by job.
    std::vector<std::pair<std::string, std::vector<Message>>> finished_outputs(const fs::path& sdir) const {
        std::vector<std::pair<std::string, std::vector<Message>>> out;
        for (const auto& jid : session_jobs(sdir)) {
            auto st = disk_status(jid);
            if (!st || st->state != JobState::done) continue;
            auto p = job_dir(jid) / "produced.jsonl";
            out.emplace_back(jid, fs::exists(p) ? load_messages(p, Source::synthetic, nullptr, true)
                                                : std::vector<Message>{});
        }
        return out;
    }

    std::vector<Message> messages_for(const fs::path& sdir, std::string_view provenance) const {
        auto load = [&](const char* name) {
            auto p = sdir / name;
            return fs::exists(p) ? load_messages(p, Source::synthetic, nullptr, true) : std::vector<Message>{};
        };
        if (provenance == "seeds") {
            auto p = sdir / "seeds.jsonl";
            return fs::exists(p) ? load_messages(p, Source::seed) : std::vector<Message>{};
        }
        switch (parse_provenance(provenance)) {
            case Provenance::initial: {
                std::vector<Message> all;
                for (auto& [jid, msgs] : finished_outputs(sdir)) all.insert(all.end(), msgs.begin(), msgs.end());
                return all;
            }
            case Provenance::deduplicated: return load("deduplicated.jsonl");
            case Provenance::final: return load("final.jsonl");
        }
        return {};
    }

    IndicatorSet session_indicators(const fs::path& sdir) const {
        auto p = sdir / "indicators.json";
        if (!fs::exists(p)) throw ValidationError("the session has no indicators yet; generate or upload them first");
        return indicator_set_from_json(read_json(p));
    }

    // --- background tasks ---------------------------------------------------

    void set_task(const std::string& tid, json t) {
        std::lock_guard l(mu);
        write_json(root / "tasks" / (tid + ".json"), t);
        tasks[tid] = std::move(t);
    }

    json get_task(const std::string& tid) {
        {
            std::lock_guard l(mu);
            auto it = tasks.find(tid);
            if (it != tasks.end()) return it->second;
        }
        auto p = root / "tasks" / (tid + ".json");
        if (!fs::exists(p)) throw NotFoundError("unknown task '" + tid + "'");
        return read_json(p);
    }

    std::string spawn_task(const std::string& sid, std::string kind, std::function<json()> work) {
        auto tid = new_id("task");
        json t = {{"task_id", tid}, {"session_id", sid}, {"kind", kind}, {"state", "running"},
                  {"created_at", format_rfc3339(clock->now())}, {"result", nullptr}, {"error", nullptr}};
        set_task(tid, t);
        std::lock_guard l(mu);
        workers.emplace_back([this, tid, t, work = std::move(work)]() mutable {
            try {
                t["result"] = work();
                t["state"] = "done";
            } catch (const std::exception& e) {
                t["state"] = "failed";
                t["error"] = e.what();
            }
            set_task(tid, t);
        });
        return tid;
    }

    void join_workers() {
        for (;;) {
            std::vector<std::thread> batch;
            {
                std::lock_guard l(mu);
                batch.swap(workers);
            }
            if (batch.empty()) return;
            for (auto& w : batch) {
                if (w.joinable()) w.join();
            }
        }
    }

    void start_job(const GenerationPlan& plan, const std::string& sid) {
        RunOptions o;
        o.session_id = sid;
        runner->start(plan, job_dir(plan.job_id), o);
        std::lock_guard l(mu);
        started_jobs.push_back(plan.job_id);
    }

    /// Resumes unfinished jobs and closes tasks cut off by a restart.
    void recover() {
        for (const auto& e : fs::directory_iterator(root / "jobs")) {
            auto meta = e.path() / "job.json";
            auto plan_file = e.path() / "plan.json";
            if (!fs::exists(meta) || !fs::exists(plan_file)) continue;
            auto st = disk_status(e.path().filename().string());
            if (st && (st->state == JobState::done || st->state == JobState::failed)) continue;
            auto plan = generation_plan_from_json(read_json(plan_file));
            start_job(plan, read_json(meta).at("session_id").get<std::string>());
        }
        for (const auto& e : fs::directory_iterator(root / "tasks")) {
            if (e.path().extension() != ".json") continue;
            auto t = read_json(e.path());
            if (t.value("state", "") == "running") {
                t["state"] = "failed";
                t["error"] = "interrupted by a service restart";
                write_json(e.path(), t);
            }
        }
    }

    void sweep_loop() {
        std::unique_lock l(sweep_mu);
        while (!stopping) {
            if (sweep_cv.wait_for(l, config.service.ttl_sweep_interval, [this] { return stopping; })) break;
            l.unlock();
            try {
                purge_expired(*store, clock->now());
            } catch (const std::exception& e) {
                std::cerr << "ttl sweep failed: " << e.what() << "\n";
            }
            l.lock();
        }
    }

    // --- routing ------------------------------------------------------------

    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    static Handler guarded(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const NotFoundError& e) {
                send_error(res, 404, "not_found", e.what());
            } catch (const ConflictError& e) {
                send_error(res, 409, "conflict", e.what());
            } catch (const ValidationError& e) {
                send_error(res, 422, "validation", e.what());
            } catch (const SchemaParseError& e) {
                send_error(res, 502, "schema_parse", e.what());
            } catch (const RefusalError& e) {
                send_error(res, 502, "refusal", e.what());
            } catch (const BackendError& e) {
                send_error(res, 502, "backend", e.what());
            } catch (const ProviderError& e) {
                send_error(res, 502, "provider", e.what());
            } catch (const json::exception& e) {
                send_error(res, 422, "validation", e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "internal", e.what());
            }
        };
    }

    std::string path(std::string_view pattern) const {
        std::string p(pattern);
        for (auto pos = p.find("{id}"); pos != std::string::npos; pos = p.find("{id}")) p.replace(pos, 4, kIdPattern);
        return p;
    }

    void routes() {
        auto& s = server;
        s.set_payload_max_length(256u << 20);
        if (config.service.access_log) {
            s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
                std::cerr << req.method << " " << req.path << " " << res.status << "\n";
            });
        }
        const auto token = config.service.api_token;
        if (!token.empty()) {
            s.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
                if (req.path.rfind("/ui", 0) == 0 || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
                if (req.get_header_value("Authorization") == "Bearer " + token) {
                    return httplib::Server::HandlerResponse::Unhandled;
                }
                send_error(res, 401, "unauthorized", "missing or wrong bearer token");
                return httplib::Server::HandlerResponse::Handled;
            });
        }
        if (!config.service.static_dir.empty() && fs::is_directory(config.service.static_dir)) {
            s.set_mount_point("/ui", config.service.static_dir.string());
        }

        s.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });
        s.Get("/defaults", guarded([this](const httplib::Request&, httplib::Response& res) {
            const auto& d = config.defaults;
            send_json(res, 200,
                      {{"temperature", d.temperature},
                       {"threshold", d.dedup_threshold},
                       {"batch_size", d.dedup_batch_size},
                       {"ttl_hours", d.ttl.count()},
                       {"annotation_threshold", d.annotation_threshold},
                       {"seeds_per_batch", d.seeds_per_batch},
                       {"messages_per_request", d.messages_per_request},
                       {"roles", config.roles}});
        }));

        s.Post("/sessions", guarded([this](const auto& req, auto& res) { create_session(req, res); }));
        s.Get(path("/sessions/{id}"), guarded([this](const auto& req, auto& res) { get_session(req, res); }));
        s.Delete(path("/sessions/{id}"), guarded([this](const auto& req, auto& res) { delete_session(req, res); }));
        s.Post(path("/sessions/{id}/indicators"), guarded([this](const auto& req, auto& res) { post_indicators(req, res); }));
        s.Get(path("/sessions/{id}/indicators"), guarded([this](const auto& req, auto& res) {
            send_json(res, 200, to_json(session_indicators(session_dir(req.matches[1]))));
        }));
        s.Put(path("/sessions/{id}/indicators"), guarded([this](const auto& req, auto& res) { put_indicators(req, res); }));
        s.Get(path("/tasks/{id}"), guarded([this](const auto& req, auto& res) { send_json(res, 200, get_task(req.matches[1])); }));
        s.Post(path("/sessions/{id}/seeds"), guarded([this](const auto& req, auto& res) { post_seeds(req, res); }));
        s.Post(path("/sessions/{id}/jobs"), guarded([this](const auto& req, auto& res) { post_job(req, res); }));
        s.Get(path("/sessions/{id}/jobs"), guarded([this](const auto& req, auto& res) {
            json out = json::array();
            for (const auto& jid : session_jobs(session_dir(req.matches[1]))) out.push_back(job_json(jid));
            send_json(res, 200, out);
        }));
        s.Get(path("/jobs/{id}"), guarded([this](const auto& req, auto& res) { send_json(res, 200, job_json(req.matches[1])); }));
        s.Post(path("/sessions/{id}/dedup"), guarded([this](const auto& req, auto& res) { post_dedup(req, res); }));
        s.Post(path("/sessions/{id}/annotate"), guarded([this](const auto& req, auto& res) { post_annotate(req, res); }));
        s.Post(path("/sessions/{id}/validate"), guarded([this](const auto& req, auto& res) { post_validate(req, res); }));
        s.Get(path("/sessions/{id}/data"), guarded([this](const auto& req, auto& res) { get_data(req, res); }));
        s.Get(path("/sessions/{id}/export"), guarded([this](const auto& req, auto& res) { get_export(req, res); }));
    }

    // --- handlers -----------------------------------------------------------

    void create_session(const httplib::Request& req, httplib::Response& res) {
        auto body = parse_body(req);
        auto user = req.get_header_value("X-User-Id");
        if (user.empty()) user = body.value("user_id", "");
        if (user.empty()) throw ValidationError("X-User-Id header (or user_id field) is required");
        auto sid = new_id("s");
        auto dir = root / "sessions" / sid;
        fs::create_directories(dir);
        json meta = {{"session_id", sid}, {"user_id", user}, {"created_at", format_rfc3339(clock->now())}};
        write_json(dir / "session.json", meta);
        send_json(res, 201, meta);
    }

    void get_session(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto meta = read_json(dir / "session.json");
        meta["has_indicators"] = fs::exists(dir / "indicators.json");
        meta["jobs"] = session_jobs(dir);
        json counts;
        for (const char* p : {"seeds", "initial", "deduplicated", "final"}) counts[p] = messages_for(dir, p).size();
        meta["counts"] = counts;
        send_json(res, 200, meta);
    }

    void delete_session(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto guard = mutate_locks.acquire(sid);
        for (const auto& jid : session_jobs(dir)) {
            if (runner->known(jid)) {
                auto st = runner->status(jid);
                if (st.state == JobState::running || st.state == JobState::pending) {
                    throw ConflictError("job " + jid + " is still running");
                }
            }
        }
        for (const auto& jid : session_jobs(dir)) fs::remove_all(job_dir(jid));
        store->clear_session(sid);
        fs::remove_all(dir);
        res.status = 204;
    }

    GenerationParams params_from(const json& j) {
        auto p = generation_params_from_json(j.is_null() ? json::object() : j);
        if (!j.contains("temperature")) p.temperature = config.defaults.temperature;
        apply_role_defaults(p, config);
        return p;
    }

    void post_indicators(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        auto params = params_from(body.value("params", json::object()));
        if (params.topic.empty() || params.industry.empty()) throw ValidationError("params.topic and params.industry are required");
        auto ctx = context_from_json(body.value("context", json()));
        IndicatorStageOptions o;
        o.providers = body.value("providers", std::vector<std::string>{});
        for (const auto& m : o.providers) ModelRef::parse(m);
        o.archive_dir = dir / "candidates";
        o.clock = clock;
        auto tid = spawn_task(sid, "indicators", [this, sid, dir, params, ctx, o] {
            auto r = run_indicator_stage(params, ctx, *gateway, config, o);
            auto guard = mutate_locks.acquire(sid);
            write_json(dir / "indicators.json", to_json(r.indicators));
            write_json(dir / "params.json", to_json(params));
            return r.to_json();
        });
        send_json(res, 202, {{"task_id", tid}});
    }

    void put_indicators(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        IndicatorSet s;
        s.summary = body.value("summary", "");
        if (body.contains("sources")) {
            s.sources = body["sources"].get<std::vector<std::string>>();
        } else if (fs::exists(dir / "indicators.json")) {
            s.sources = indicator_set_from_json(read_json(dir / "indicators.json")).sources;
        }
        if (std::find(s.sources.begin(), s.sources.end(), "manual") == s.sources.end()) s.sources.push_back("manual");
        s.created_at = clock->now();
        s.validate();
        auto guard = mutate_locks.acquire(sid);
        write_json(dir / "indicators.json", to_json(s));
        send_json(res, 200, to_json(s));
    }

    void post_seeds(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        DataFormat fmt = DataFormat::jsonl;
        if (req.has_param("format")) {
            fmt = parse_data_format(req.get_param_value("format"));
        } else {
            auto ct = req.get_header_value("Content-Type");
            if (ct.find("csv") != std::string::npos) fmt = DataFormat::csv;
            else if (ct.find("application/json") != std::string::npos) fmt = DataFormat::json;
        }
        ImportReport report;
        auto msgs = parse_messages(req.body, fmt, Source::seed, &report);
        if (report.imported == 0 && !report.errors.empty()) {
            send_json(res, 422, {{"error", {{"kind", "validation"}, {"message", "no valid seed rows"}}}, {"report", report.to_json()}});
            return;
        }
        auto guard = mutate_locks.acquire(sid);
        std::vector<Message> kept;
        if (req.get_param_value("append") == "true") kept = messages_for(dir, "seeds");
        auto ds = Dataset::from_messages("seeds", Provenance::initial, std::move(kept));
        for (auto& m : msgs) ds.add(std::move(m));
        save_messages(dir / "seeds.jsonl", ds.messages());
        auto j = report.to_json();
        j["total"] = ds.size();
        send_json(res, 200, j);
    }

    void post_job(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        auto params = params_from(body.contains("params") ? body["params"] : body);
        IndicatorSet ind = body.contains("indicators") ? indicator_set_from_json(body["indicators"]) : session_indicators(dir);
        PlanOptions po;
        po.per_request_count = body.value("per_request_count", config.defaults.messages_per_request);
        po.batch_size = body.value("batch_size", config.defaults.seeds_per_batch);
        po.job_id = new_id("job");
        auto guard = mutate_locks.acquire(sid);
        auto plan = plan_job(params, messages_for(dir, "seeds"), template_for(params), ind, po);
        auto jdir = job_dir(plan.job_id);
        fs::create_directories(jdir);
        write_json(jdir / "plan.json", to_json(plan));
        write_json(jdir / "job.json", {{"session_id", sid}, {"params", to_json(params)},
                                       {"created_at", format_rfc3339(clock->now())}});
        auto jobs = session_jobs(dir);
        jobs.push_back(plan.job_id);
        write_json(dir / "jobs.json", jobs);
        start_job(plan, sid);
        send_json(res, 202, {{"job_id", plan.job_id}, {"requests", plan.requests.size()}, {"target_total", plan.target_total}});
    }

    json job_json(const std::string& jid) {
        std::optional<JobStatus> st;
        if (runner->known(jid)) st = runner->status(jid);
        else st = disk_status(jid);
        if (!st) {
            if (!fs::exists(job_dir(jid) / "job.json")) throw NotFoundError("unknown job '" + jid + "'");
            st = JobStatus{};
            st->job_id = jid;
        }
        auto j = to_json(*st);
        j["session_id"] = read_json(job_dir(jid) / "job.json").at("session_id");
        auto rf = job_dir(jid) / "result.json";
        if (st->state == JobState::done && fs::exists(rf)) j["result"] = read_json(rf);
        return j;
    }

    void post_dedup(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        DedupConfig cfg;
        cfg.threshold = body.value("threshold", config.defaults.dedup_threshold);
        cfg.batch_size = body.value("batch_size", config.defaults.dedup_batch_size);
        cfg.ttl = std::chrono::hours(body.value("ttl_hours", static_cast<long>(config.defaults.ttl.count())));
        cfg.ns = body.value("namespace", cfg.ns);
        cfg.validate();

        auto guard = dedup_locks.try_acquire(sid);
        if (!guard) throw ConflictError("a dedup pass is already running for session " + sid);

        json state = fs::exists(dir / "dedup.json") ? read_json(dir / "dedup.json")
                                                     : json{{"processed_jobs", json::array()}, {"passes", json::array()}};
        std::set<std::string> done_jobs;
        for (const auto& j : state["processed_jobs"]) done_jobs.insert(j.get<std::string>());
        std::vector<Message> fresh;
        std::vector<std::string> new_jobs;
        for (auto& [jid, msgs] : finished_outputs(dir)) {
            if (done_jobs.count(jid)) continue;
            new_jobs.push_back(jid);
            fresh.insert(fresh.end(), msgs.begin(), msgs.end());
        }
        if (body.value("include_seeds", false) && !state.value("seeds_processed", false)) {
            auto seeds = messages_for(dir, "seeds");
            fresh.insert(fresh.begin(), seeds.begin(), seeds.end());
            state["seeds_processed"] = true;
        }

        DedupReport report;
        report.threshold = cfg.threshold;
        report.batch_size = cfg.batch_size;
        report.embedder = embedder->name();
        if (!fresh.empty()) {
            purge_expired(*store, clock->now());
            auto outcome = dedup_pipeline(fresh, sid, cfg, *embedder, *store, *clock);
            report = outcome.report;
            auto mguard = mutate_locks.acquire(sid);
            auto kept = messages_for(dir, "deduplicated");
            kept.insert(kept.end(), outcome.retained.messages().begin(), outcome.retained.messages().end());
            save_messages(dir / "deduplicated.jsonl", kept);
        }
        for (const auto& j : new_jobs) state["processed_jobs"].push_back(j);
        auto rj = report.to_json();
        state["passes"].push_back(rj);
        write_json(dir / "dedup.json", state);
        rj["jobs_processed"] = new_jobs;
        rj["total_deduplicated"] = messages_for(dir, "deduplicated").size();
        send_json(res, 200, rj);
    }

    void post_annotate(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        auto provenance = body.value("provenance", "deduplicated");
        parse_provenance(provenance);
        auto ind = session_indicators(dir);
        auto msgs = messages_for(dir, provenance);
        if (msgs.empty()) throw ValidationError("no " + provenance + " messages to annotate");
        GenerationParams params;
        if (fs::exists(dir / "params.json")) params = generation_params_from_json(read_json(dir / "params.json"));
        apply_role_defaults(params, config);
        auto model = body.value("model", params.provider_models.count(std::string(roles::kAnnotation))
                                              ? params.provider_models.at(std::string(roles::kAnnotation))
                                              : config.role_model(roles::kAnnotation));
        ModelRef::parse(model);
        AnnotationOptions o;
        o.chunk_size = body.value("chunk_size", o.chunk_size);
        o.variables = PromptVariables::from(params);
        auto guard = std::make_shared<SessionLocks::Guard>(annotate_locks.try_acquire(sid));
        if (!*guard) throw ConflictError("an annotation task is already running for session " + sid);
        auto tid = spawn_task(sid, "annotate", [this, sid, dir, msgs, ind, model, o, guard]() mutable {
            auto r = annotate(msgs, ind, *gateway, model, o);
            std::map<std::string, double> score;
            for (const auto& rec : r.records) score[rec.message_id] = rec.score;
            for (auto& m : msgs) m.score = score.at(m.id);
            {
                auto mguard = mutate_locks.acquire(sid);
                save_messages(dir / "final.jsonl", msgs);
            }
            json warnings = json::array();
            for (const auto& w : r.warnings) warnings.push_back({{"message_id", w.message_id}, {"kind", w.kind}, {"detail", w.detail}});
            *guard = SessionLocks::Guard{};
            return json{{"annotated", r.records.size()}, {"model", model}, {"retries", r.retries}, {"warnings", warnings}};
        });
        send_json(res, 202, {{"task_id", tid}});
    }

    void post_validate(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto body = parse_body(req);
        double threshold = body.value("threshold", config.defaults.annotation_threshold);
        ValidationInput v;
        if (body.contains("review_csv")) {
            v = validation_input_from_review(import_review_csv(body["review_csv"].get<std::string>()), threshold);
        } else {
            if (!body.contains("labels")) throw ValidationError("body needs labels or review_csv");
            std::map<std::string, double> scores;
            for (const auto& m : messages_for(dir, "final")) {
                if (m.score) scores[m.id] = *m.score;
            }
            v.threshold = threshold;
            for (const auto& l : body["labels"]) {
                auto id = l.at("message_id").get<std::string>();
                int label = l.at("label").get<int>();
                auto it = scores.find(id);
                if (it == scores.end()) throw ValidationError("message " + id + " has no annotation score");
                v.truths.push_back({id, label});
                v.annotations.push_back({id, it->second, ""});
            }
        }
        double acc = accuracy(v);
        std::map<std::string, double> preds;
        std::map<std::string, int> gold;
        for (const auto& a : v.annotations) preds[a.message_id] = a.score;
        for (const auto& t : v.truths) gold[t.message_id] = t.label;
        auto metrics = eval_classifier(preds, gold, threshold);
        send_json(res, 200, {{"accuracy", acc}, {"n", v.truths.size()}, {"threshold", threshold}, {"metrics", metrics.to_json()}});
    }

    void get_data(const httplib::Request& req, httplib::Response& res) {
        auto dir = session_dir(req.matches[1]);
        auto provenance = req.has_param("provenance") ? req.get_param_value("provenance") : "deduplicated";
        auto page = query_size(req, "page", 1);
        auto page_size = query_size(req, "page_size", 50);
        if (page_size > 1000) throw ValidationError("page_size must be at most 1000");
        auto msgs = messages_for(dir, provenance);
        json items = json::array();
        for (std::size_t i = (page - 1) * page_size; i < msgs.size() && i < page * page_size; ++i) items.push_back(to_json(msgs[i]));
        send_json(res, 200, {{"provenance", provenance}, {"page", page}, {"page_size", page_size},
                             {"total", msgs.size()}, {"items", items}});
    }

    void get_export(const httplib::Request& req, httplib::Response& res) {
        auto sid = std::string(req.matches[1]);
        auto dir = session_dir(sid);
        auto provenance = req.has_param("provenance") ? req.get_param_value("provenance") : "deduplicated";
        auto format = req.has_param("format") ? req.get_param_value("format") : "csv";
        auto msgs = messages_for(dir, provenance);
        std::string body, type, ext;
        if (format == "review") {
            std::vector<AnnotationRecord> recs;
            for (const auto& m : msgs) {
                if (m.score) recs.push_back({m.id, *m.score, ""});
            }
            body = export_review_csv(msgs, recs);
            type = "text/csv";
            ext = "csv";
        } else {
            auto f = parse_data_format(format);
            body = serialize_messages(msgs, f);
            type = f == DataFormat::csv ? "text/csv" : f == DataFormat::json ? kJson : "application/x-ndjson";
            ext = format;
        }
        res.set_header("Content-Disposition", "attachment; filename=\"" + sid + "_" + provenance + "." + ext + "\"");
        res.status = 200;
        res.set_content(body, type);
    }
};

Service::Service(AppConfig config, ServiceDeps deps) : impl_(std::make_unique<Impl>(std::move(config), std::move(deps))) {}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
    if (port == 0) {
        int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw BackendError("cannot bind to " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) throw BackendError("cannot bind to " + host + ":" + std::to_string(port));
    return port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_idle() {
    impl_->join_workers();
    std::vector<std::string> jobs;
    {
        std::lock_guard l(impl_->mu);
        jobs = impl_->started_jobs;
    }
    for (const auto& j : jobs) impl_->runner->wait(j);
}

std::size_t Service::sweep_expired() { return purge_expired(*impl_->store, impl_->clock->now()); }

}  // namespace eltex
