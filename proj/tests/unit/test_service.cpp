#include <condition_variable>
#include <thread>

#include "doctest.h"
#include "eltex/dataset_io.hpp"
#include "eltex/dedup.hpp"
#include "eltex/orchestrator.hpp"
#include "eltex/pipeline.hpp"
#include "eltex/service.hpp"
#include "helpers.hpp"
#include "httplib.h"

using namespace eltex;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

// Blocks inside embed_batch until released, so a dedup pass can be held open.
class GateEmbedder final : public Embedder {
public:
    HashingEmbedder inner{128};
    std::mutex mu;
    std::condition_variable cv;
    bool closed = false;
    bool entered = false;

    std::string name() const override { return "gate"; }
    std::size_t dimension() const override { return inner.dimension(); }
    std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
        std::unique_lock l(mu);
        entered = true;
        cv.notify_all();
        cv.wait(l, [this] { return !closed; });
        return inner.embed_batch(texts);
    }
    void close() {
        std::lock_guard l(mu);
        closed = true;
    }
    void open() {
        std::lock_guard l(mu);
        closed = false;
        cv.notify_all();
    }
    void wait_entered() {
        std::unique_lock l(mu);
        cv.wait(l, [this] { return entered; });
    }
};

struct Fixture {
    testing::TempDir dir;
    AppConfig cfg = AppConfig::builtin();
    ServiceDeps deps;
    std::unique_ptr<Service> svc;
    std::thread thread;
    std::unique_ptr<httplib::Client> http;
    httplib::Headers auth;

    void start() {
        cfg.service.data_dir = dir.path();
        svc = std::make_unique<Service>(cfg, deps);
        int port = svc->bind("127.0.0.1", 0);
        thread = std::thread([this] { svc->run(); });
        http = std::make_unique<httplib::Client>("127.0.0.1", port);
        http->set_read_timeout(30, 0);
        for (int i = 0; i < 200 && !http->Get("/healthz"); ++i) std::this_thread::sleep_for(5ms);
    }
    void stop() {
        if (!svc) return;
        svc->wait_idle();
        svc->stop();
        thread.join();
        svc.reset();
    }
    ~Fixture() { stop(); }

    httplib::Result post(const std::string& path, const json& body) {
        return http->Post(path, auth, body.dump(), "application/json");
    }
    json get_json(const std::string& path) {
        auto r = http->Get(path, auth);
        REQUIRE(r);
        return json::parse(r->body);
    }

    std::string session() {
        auto h = auth;
        h.emplace("X-User-Id", "analyst");
        auto r = http->Post("/sessions", h, "{}", "application/json");
        REQUIRE(r);
        REQUIRE(r->status == 201);
        return json::parse(r->body)["session_id"];
    }

    json wait_task(const std::string& tid) {
        for (int i = 0; i < 2000; ++i) {
            auto t = get_json("/tasks/" + tid);
            if (t["state"] != "running") return t;
            std::this_thread::sleep_for(5ms);
        }
        FAIL("task did not finish");
        return {};
    }

    json wait_job(const std::string& jid) {
        for (int i = 0; i < 2000; ++i) {
            auto j = get_json("/jobs/" + jid);
            if (j["state"] == "done" || j["state"] == "failed") return j;
            std::this_thread::sleep_for(5ms);
        }
        FAIL("job did not finish");
        return {};
    }

    void seed(const std::string& sid, std::size_t n = 12) {
        auto r = http->Post("/sessions/" + sid + "/seeds", auth,
                            serialize_messages(testing::seeds(n), DataFormat::jsonl), "application/x-ndjson");
        REQUIRE(r);
        REQUIRE(r->status == 200);
    }

    void indicators(const std::string& sid) {
        auto r = http->Put("/sessions/" + sid + "/indicators", auth,
                           json{{"summary", "Drained wallets, exploit rumors, phishing airdrops."}}.dump(),
                           "application/json");
        REQUIRE(r);
        REQUIRE(r->status == 200);
    }

    std::string job(const std::string& sid, std::size_t n) {
        auto r = post("/sessions/" + sid + "/jobs",
                      {{"topic", "cyberattacks"}, {"industry", "blockchain"}, {"target_size", n}, {"rng_seed", 5}});
        REQUIRE(r);
        REQUIRE(r->status == 202);
        return json::parse(r->body)["job_id"];
    }
};

json error_of(const httplib::Result& r) { return json::parse(r->body)["error"]; }

}  // namespace

TEST_SUITE("service") {

TEST_CASE("happy path: indicators, seeds, job, dedup, export, annotate") {
    Fixture f;
    f.start();
    auto d = f.get_json("/defaults");
    CHECK(d["temperature"] == 0.8);
    CHECK(d["threshold"] == 0.9);

    auto sid = f.session();
    auto r = f.post("/sessions/" + sid + "/indicators",
                    {{"params", {{"topic", "cyberattacks"}, {"industry", "blockchain"}}},
                     {"context", {{"historical_events", {"2022-03-29 - Ronin Bridge"}}}}});
    REQUIRE(r->status == 202);
    auto task = f.wait_task(json::parse(r->body)["task_id"]);
    REQUIRE(task["state"] == "done");
    CHECK(task["result"]["candidates"].size() == 3);
    auto ind = f.get_json("/sessions/" + sid + "/indicators");
    CHECK_FALSE(ind["summary"].get<std::string>().empty());
    CHECK(ind["sources"].size() == 3);

    f.seed(sid);
    auto jid = f.job(sid, 30);
    auto j = f.wait_job(jid);
    REQUIRE(j["state"] == "done");
    CHECK(j["session_id"] == sid);
    CHECK(j["result"]["produced"].size() >= 1);

    r = f.post("/sessions/" + sid + "/dedup", json::object());
    REQUIRE(r->status == 200);
    auto rep = json::parse(r->body);
    CHECK(rep["received"].get<std::size_t>() == rep["retained"].get<std::size_t>() + rep["filtered"].get<std::size_t>());
    CHECK(rep["jobs_processed"] == json::array({jid}));
    auto kept = rep["retained"].get<std::size_t>();
    CHECK(kept > 0);

    // A second pass finds nothing new.
    r = f.post("/sessions/" + sid + "/dedup", json::object());
    CHECK(json::parse(r->body)["received"] == 0);
    CHECK(json::parse(r->body)["total_deduplicated"] == kept);

    auto csv = f.http->Get("/sessions/" + sid + "/export?format=csv");
    REQUIRE(csv->status == 200);
    CHECK(csv->get_header_value("Content-Type") == "text/csv");
    auto rows = parse_messages(csv->body, DataFormat::csv, Source::synthetic);
    CHECK(rows.size() == kept);

    auto data = f.get_json("/sessions/" + sid + "/data?page=1&page_size=5");
    CHECK(data["total"] == kept);
    CHECK(data["items"].size() == std::min<std::size_t>(5, kept));

    r = f.post("/sessions/" + sid + "/annotate", json::object());
    REQUIRE(r->status == 202);
    REQUIRE(f.wait_task(json::parse(r->body)["task_id"])["state"] == "done");
    auto fin = f.get_json("/sessions/" + sid + "/data?provenance=final&page_size=1000");
    REQUIRE(fin["total"] == kept);
    CHECK(fin["items"][0]["score"].is_number());

    json labels = json::array();
    for (const auto& m : fin["items"]) labels.push_back({{"message_id", m["id"]}, {"label", 1}});
    r = f.post("/sessions/" + sid + "/validate", {{"labels", labels}});
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body)["n"] == kept);

    auto s = f.get_json("/sessions/" + sid);
    CHECK(s["counts"]["seeds"] == 12);
    CHECK(s["counts"]["deduplicated"] == kept);
    CHECK(s["counts"]["final"] == kept);
    CHECK(s["user_id"] == "analyst");
}

TEST_CASE("export before any generation is empty, not an error") {
    Fixture f;
    f.start();
    auto sid = f.session();
    auto r = f.http->Get("/sessions/" + sid + "/export?format=jsonl");
    REQUIRE(r->status == 200);
    CHECK(r->body.empty());
    r = f.http->Get("/sessions/" + sid + "/export?format=csv");
    REQUIRE(r->status == 200);
    CHECK(parse_messages(r->body, DataFormat::csv, Source::synthetic).empty());
    CHECK(f.get_json("/sessions/" + sid + "/data")["total"] == 0);
}

TEST_CASE("error mapping") {
    Fixture f;
    f.start();
    auto r = f.http->Get("/sessions/s-0000000000000000");
    CHECK(r->status == 404);
    CHECK(error_of(r)["kind"] == "not_found");
    CHECK(f.http->Get("/jobs/job-nope")->status == 404);
    CHECK(f.http->Get("/tasks/task-nope")->status == 404);

    r = f.http->Post("/sessions", "{}", "application/json");
    CHECK(r->status == 422);
    auto sid = f.session();
    r = f.http->Post("/sessions/" + sid + "/jobs", "{not json", "application/json");
    CHECK(r->status == 422);
    r = f.post("/sessions/" + sid + "/jobs", {{"topic", "x"}, {"industry", "y"}, {"target_size", 10}});
    CHECK(r->status == 422);  // no indicators yet
    f.indicators(sid);
    r = f.post("/sessions/" + sid + "/jobs", {{"topic", "x"}, {"industry", "y"}, {"temperature", 1.5}});
    CHECK(r->status == 422);
    r = f.post("/sessions/" + sid + "/dedup", {{"threshold", 0}});
    CHECK(r->status == 422);
    r = f.http->Post("/sessions/" + sid + "/seeds?format=csv", "nothing,useful\n1,2\n", "text/csv");
    CHECK(r->status == 422);
    r = f.http->Post("/sessions/" + sid + "/seeds", "{\"content\": \"\"}\n", "application/x-ndjson");
    CHECK(r->status == 422);
    CHECK(f.http->Get("/sessions/" + sid + "/data?page_size=5000")->status == 422);
    CHECK(f.http->Get("/sessions/" + sid + "/data?provenance=bogus")->status == 422);
    r = f.post("/sessions/" + sid + "/validate", json::object());
    CHECK(r->status == 422);
    r = f.post("/sessions/" + sid + "/annotate", json::object());
    CHECK(r->status == 422);  // nothing to annotate
}

TEST_CASE("concurrent dedup passes conflict") {
    Fixture f;
    auto gate = std::make_shared<GateEmbedder>();
    f.deps.embedder = gate;
    f.start();
    auto sid = f.session();
    f.seed(sid);
    f.indicators(sid);
    REQUIRE(f.wait_job(f.job(sid, 20))["state"] == "done");

    gate->close();
    std::thread first([&] {
        httplib::Client c(f.http->host(), f.http->port());
        c.set_read_timeout(30, 0);
        auto r = c.Post("/sessions/" + sid + "/dedup", "{}", "application/json");
        REQUIRE(r);
        CHECK(r->status == 200);
    });
    gate->wait_entered();
    auto r = f.post("/sessions/" + sid + "/dedup", json::object());
    CHECK(r->status == 409);
    CHECK(error_of(r)["kind"] == "conflict");

    // The lock is per session.
    auto other = f.session();
    CHECK(f.post("/sessions/" + other + "/dedup", json::object())->status == 200);
    gate->open();
    first.join();
}

TEST_CASE("sessions are isolated") {
    Fixture f;
    f.start();
    auto a = f.session();
    auto b = f.session();
    for (const auto& s : {a, b}) {
        f.seed(s, 5);
        f.indicators(s);
    }
    auto ja = f.job(a, 10);
    auto jb = f.job(b, 10);
    f.wait_job(ja);
    f.wait_job(jb);
    auto ra = json::parse(f.post("/sessions/" + a + "/dedup", json::object())->body);
    auto rb = json::parse(f.post("/sessions/" + b + "/dedup", json::object())->body);
    // Identical plans produce identical output; the other session's store
    // must not filter it.
    CHECK(ra["retained"] == rb["retained"]);
    CHECK(ra["jobs_processed"] == json::array({ja}));
    CHECK(rb["jobs_processed"] == json::array({jb}));

    auto del = f.http->Delete("/sessions/" + a);
    CHECK(del->status == 204);
    CHECK(f.http->Get("/sessions/" + a)->status == 404);
    CHECK(f.http->Get("/jobs/" + ja)->status == 404);
    CHECK(f.get_json("/sessions/" + b)["counts"]["deduplicated"] == rb["retained"]);
}

TEST_CASE("bearer token") {
    Fixture f;
    f.cfg.service.api_token = "s3cret";
    f.start();
    CHECK(f.http->Get("/healthz")->status == 200);
    auto r = f.http->Get("/defaults");
    CHECK(r->status == 401);
    CHECK(error_of(r)["kind"] == "unauthorized");
    f.auth.emplace("Authorization", "Bearer wrong");
    CHECK(f.http->Get("/defaults", f.auth)->status == 401);
    f.auth = {{"Authorization", "Bearer s3cret"}};
    CHECK(f.http->Get("/defaults", f.auth)->status == 200);
    f.session();
}

TEST_CASE("ttl sweep drops expired embeddings") {
    Fixture f;
    auto clock = std::make_shared<ManualClock>(Timestamp{std::chrono::milliseconds{1'700'000'000'000}});
    f.deps.clock = clock.get();
    f.deps.store = std::make_shared<MemoryEmbeddingStore>();
    f.start();
    auto sid = f.session();
    f.seed(sid, 6);
    f.indicators(sid);
    f.wait_job(f.job(sid, 10));
    auto rep = json::parse(f.post("/sessions/" + sid + "/dedup", {{"ttl_hours", 1}})->body);
    auto kept = rep["retained"].get<std::size_t>();
    REQUIRE(kept > 0);
    CHECK(f.deps.store->size() == kept);
    clock->advance(1h - 1ms);
    CHECK(f.svc->sweep_expired() == 0);
    clock->advance(1ms);
    CHECK(f.svc->sweep_expired() == kept);
    CHECK(f.deps.store->size() == 0);
}

TEST_CASE("restart resumes unfinished jobs and fails orphaned tasks") {
    Fixture f;
    f.start();
    auto sid = f.session();
    f.seed(sid, 8);
    f.indicators(sid);
    f.stop();

    // Leave a job planned but never run, as if the process died right after
    // accepting it, plus a task that was mid-flight.
    auto root = f.dir.path();
    GenerationParams p;
    p.topic = "cyberattacks";
    p.industry = "blockchain";
    p.target_size = 40;
    p.rng_seed = 9;
    apply_role_defaults(p, f.cfg);
    auto ind = indicator_set_from_json(json::parse(read_file(root / "sessions" / sid / "indicators.json")));
    PlanOptions po;
    po.per_request_count = 10;
    po.job_id = "job-restart";
    auto plan = plan_job(p, load_messages(root / "sessions" / sid / "seeds.jsonl"), template_for(p), ind, po);
    std::filesystem::create_directories(root / "jobs" / plan.job_id);
    write_file_atomic(root / "jobs" / plan.job_id / "plan.json", to_json(plan).dump());
    write_file_atomic(root / "jobs" / plan.job_id / "job.json", json{{"session_id", sid}}.dump());
    write_file_atomic(root / "sessions" / sid / "jobs.json", json::array({plan.job_id}).dump());
    write_file_atomic(root / "tasks" / "task-orphan.json",
                      json{{"task_id", "task-orphan"}, {"state", "running"}}.dump());

    f.start();
    auto j = f.wait_job(plan.job_id);
    CHECK(j["state"] == "done");
    CHECK(j["requests_done"] == 4);
    auto t = f.get_json("/tasks/task-orphan");
    CHECK(t["state"] == "failed");
    auto rep = json::parse(f.post("/sessions/" + sid + "/dedup", json::object())->body);
    CHECK(rep["jobs_processed"] == json::array({plan.job_id}));
}

TEST_CASE("every route is described in the OpenAPI document") {
    auto doc = read_file(std::filesystem::path(ELTEX_DOCS_DIR) / "openapi.yaml");
    for (const char* route : {"/healthz:", "/defaults:", "/sessions:", "/sessions/{session_id}:", "/sessions/{session_id}/indicators:",
                              "/tasks/{task_id}:", "/sessions/{session_id}/seeds:", "/sessions/{session_id}/jobs:", "/jobs/{job_id}:",
                              "/sessions/{session_id}/dedup:", "/sessions/{session_id}/annotate:", "/sessions/{session_id}/validate:",
                              "/sessions/{session_id}/data:", "/sessions/{session_id}/export:"}) {
        CHECK_MESSAGE(doc.find(std::string("\n  ") + route) != std::string::npos, route);
    }
}

}  // TEST_SUITE
