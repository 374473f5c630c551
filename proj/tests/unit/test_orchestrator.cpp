#include <set>

#include "doctest.h"
#include "eltex/dataset_io.hpp"
#include "eltex/errors.hpp"
#include "eltex/orchestrator.hpp"
#include "helpers.hpp"

using namespace eltex;

namespace {

GenerationParams params(std::size_t target) {
    GenerationParams p;
    p.topic = "cyberattacks";
    p.industry = "blockchain";
    p.target_size = target;
    p.rng_seed = 42;
    p.provider_models[std::string(roles::kGeneration)] = "mock/generator";
    return p;
}

IndicatorSet indicators() {
    IndicatorSet s;
    s.summary = "Phishing kits, bridge exploits, drained hot wallets.";
    s.sources = {"mock/a"};
    return s;
}

GenerationPlan plan(std::size_t target, std::size_t per_request, std::size_t seed_count = 25) {
    PlanOptions o;
    o.per_request_count = per_request;
    auto p = params(target);
    return plan_job(p, testing::seeds(seed_count), PromptTemplate::default_for(kTargetCategory), indicators(), o);
}

struct AbortRun {};

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("plan arithmetic") {
    auto p = plan(1000, 100);
    REQUIRE(p.requests.size() == 10);
    for (const auto& r : p.requests) CHECK(r.count == 100);
    CHECK(p.batches.size() == 3);

    p = plan(250, 100);
    REQUIRE(p.requests.size() == 3);
    CHECK(p.requests[2].count == 50);
    CHECK(p.requests[2].prompt.find("generate 50 new") != std::string::npos);
    CHECK(*p.requests[0].batch_index == 0);
    CHECK(*p.requests[1].batch_index == 1);
    CHECK(*p.requests[2].batch_index == 2);
    CHECK(p.requests[0].model == "mock/generator");
    CHECK(p.requests[0].fallback_prompt.find(kDefaultAlignmentClause) != std::string::npos);
    CHECK(p.requests[0].prompt.find(kDefaultAlignmentClause) == std::string::npos);

    p = plan(7, 100);
    REQUIRE(p.requests.size() == 1);
    CHECK(p.requests[0].count == 7);

    // Same inputs, same plan and job id.
    CHECK(plan(250, 100).job_id == plan(250, 100).job_id);
    CHECK(to_json(generation_plan_from_json(to_json(p))) == to_json(p));
}

TEST_CASE("plan arithmetic property") {
    for (std::size_t target = 1; target <= 400; target += 13) {
        for (std::size_t per : {1u, 3u, 10u, 100u, 1000u}) {
            auto p = plan(target, per, 5);
            std::size_t sum = 0;
            for (const auto& r : p.requests) {
                CHECK(r.count >= 1);
                CHECK(r.count <= per);
                sum += r.count;
            }
            CHECK(sum == target);
            CHECK(p.requests.size() == (target + per - 1) / per);
        }
    }
}

TEST_CASE("plan validation") {
    auto tmpl = PromptTemplate::default_for(kTargetCategory);
    auto p = params(10);
    CHECK_THROWS_AS(plan_job(p, {}, tmpl, indicators()), ValidationError);
    p.description = "exchange outage chatter";
    auto seedless = plan_job(p, {}, tmpl, indicators());
    CHECK_FALSE(seedless.requests[0].batch_index.has_value());
    CHECK(seedless.requests[0].prompt.find("exchange outage chatter") != std::string::npos);

    p.provider_models.clear();
    CHECK_THROWS_AS(plan_job(p, {}, tmpl, indicators()), ValidationError);
    p = params(0);
    CHECK_THROWS_AS(plan_job(p, testing::seeds(3), tmpl, indicators()), ValidationError);
    PlanOptions zero;
    zero.per_request_count = 0;
    CHECK_THROWS_AS(plan_job(params(5), testing::seeds(3), tmpl, indicators(), zero), ValidationError);
}

TEST_CASE("parsing generation output") {
    auto raw = nlohmann::json::parse(R"([
        "plain string", {"message": "object form"}, {"content": "alt key"},
        {"message": "   "}, "", {"other": 1}, 5, "plain string"])");
    ParseStats st;
    auto out = parse_generation_output(raw, "target", &st, std::string("s-1"));
    REQUIRE(out.size() == 4);
    CHECK(out[0].content == "plain string");
    CHECK(out[3].id == out[0].id);
    CHECK(out[1].source == Source::synthetic);
    CHECK(out[1].category == "target");
    CHECK(*out[1].session_id == "s-1");
    CHECK(st.dropped_empty == 2);
    CHECK(st.dropped_invalid == 2);
    CHECK_THROWS_AS(parse_generation_output(nlohmann::json::object(), "target"), ValidationError);
}

TEST_CASE("run_job writes the job directory") {
    auto m = testing::mock_gateway();
    testing::TempDir dir;
    auto p = plan(250, 100);
    std::vector<JobStatus> progress;
    RunOptions o;
    o.on_progress = [&](const JobStatus& s) { progress.push_back(s); };
    auto r = run_job(p, *m.gateway, dir.path(), o);
    CHECK(r.per_request_counts == std::vector<std::size_t>{100, 100, 50});
    CHECK(r.produced.size() == 250);
    CHECK(r.failures.empty());
    CHECK(m.provider->call_count() == 3);
    CHECK(std::filesystem::exists(dir / "raw/request_0002.json"));
    CHECK(load_messages(dir / "produced.jsonl", Source::synthetic, nullptr, true).size() == 250);
    auto st = job_status(dir.path());
    CHECK(st.state == JobState::done);
    CHECK(st.requests_done == 3);
    CHECK(st.messages_so_far == 250);
    CHECK(progress.back().state == JobState::done);
    CHECK(load_job_result(dir.path()).produced == r.produced);

    // A second run has nothing left to send.
    run_job(p, *m.gateway, dir.path());
    CHECK(m.provider->call_count() == 3);
    CHECK_THROWS_AS(job_status(dir / "nope"), NotFoundError);
}

TEST_CASE("crash and resume never repeats a finished request") {
    auto p = plan(500, 100);
    testing::TempDir clean;
    auto reference = testing::mock_gateway();
    auto expected = run_job(p, *reference.gateway, clean.path());

    auto m = testing::mock_gateway();
    testing::TempDir dir;
    std::size_t persisted = 0;
    RunOptions crash;
    crash.on_request_persisted = [&](std::size_t) {
        if (++persisted == 2) throw AbortRun{};
    };
    CHECK_THROWS_AS(run_job(p, *m.gateway, dir.path(), crash), AbortRun);
    CHECK(job_status(dir.path()).requests_done == 2);

    // Fresh gateway, as after a process restart.
    auto again = testing::mock_gateway();
    auto resumed = run_job(p, *again.gateway, dir.path());
    CHECK(again.provider->call_count() == 3);
    CHECK(resumed.per_request_counts == std::vector<std::size_t>(5, 100));
    CHECK(resumed.produced == expected.produced);
    CHECK(read_file(dir / "produced.jsonl") == read_file(clean / "produced.jsonl"));

    std::set<std::size_t> sent;
    auto calls = m.provider->calls();
    auto more = again.provider->calls();
    calls.insert(calls.end(), more.begin(), more.end());
    for (const auto& c : calls) {
        for (std::size_t i = 0; i < p.requests.size(); ++i) {
            if (c.user_prompt == p.requests[i].prompt) sent.insert(i);
        }
    }
    CHECK(sent.size() == 5);
}

TEST_CASE("refusals are retried once with the alignment clause") {
    auto m = testing::mock_gateway({testing::rule({{"match", "research-oriented"}, {"model", "stubborn"},
                                                   {"finish_reason", "refused"}, {"response", "no"}}),
                                    testing::rule({{"match", "generate 100 new"}, {"model", "stubborn"},
                                                   {"finish_reason", "refused"}, {"response", "no"}}),
                                    testing::rule({{"match", "generate 50 new"}, {"finish_reason", "refused"},
                                                   {"response", "no"}, {"times", 1}})});
    testing::TempDir dir;
    auto p = plan(250, 100);
    auto r = run_job(p, *m.gateway, dir.path());
    CHECK(r.refusal_retries == 1);
    CHECK(r.per_request_counts == std::vector<std::size_t>{100, 100, 50});
    CHECK(m.provider->calls().back().user_prompt.find(kDefaultAlignmentClause) != std::string::npos);

    auto q = p;
    for (auto& req : q.requests) req.model = "mock/stubborn";
    q.requests[2].model = "mock/generator";
    testing::TempDir dir2;
    auto r2 = run_job(q, *m.gateway, dir2.path());
    REQUIRE(r2.failures.size() == 2);
    CHECK(r2.failures[0].kind == "refused");
    CHECK(r2.per_request_counts == std::vector<std::size_t>{0, 0, 50});
    CHECK(job_status(dir2.path()).failures == 2);
}

TEST_CASE("malformed output and total failure") {
    auto m = testing::mock_gateway({testing::rule({{"model", "junk"}, {"response", "not json at all"}}),
                                    testing::rule({{"model", "dead"}, {"error", "permanent"}})});
    auto p = plan(150, 100);
    p.requests[0].model = "mock/junk";
    testing::TempDir dir;
    auto r = run_job(p, *m.gateway, dir.path());
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].kind == "malformed");
    CHECK(r.produced.size() == 50);

    for (auto& req : p.requests) req.model = "mock/dead";
    testing::TempDir dir2;
    CHECK_THROWS_AS(run_job(p, *m.gateway, dir2.path()), Error);
    CHECK(job_status(dir2.path()).state == JobState::failed);
}

TEST_CASE("job runner") {
    MockOptions mo;
    mo.latency = std::chrono::milliseconds(30);
    auto provider = std::make_shared<MockProvider>(std::vector<MockRule>{}, mo);
    Gateway gw(testing::fast_options());
    gw.register_provider(provider);
    JobRunner runner(gw);
    testing::TempDir dir;
    auto p = plan(300, 100);
    bool done = false;
    runner.start(p, dir.path(), {}, [&](const JobResult& r) { done = r.produced.size() == 300; });
    CHECK(runner.known(p.job_id));
    CHECK_THROWS_AS(runner.start(p, dir.path()), ConflictError);
    auto st = runner.wait(p.job_id);
    CHECK(st.state == JobState::done);
    CHECK(st.requests_done == 3);
    CHECK(done);
    CHECK(runner.status(p.job_id).state == JobState::done);
    CHECK_THROWS_AS(runner.status("job-unknown"), NotFoundError);
    CHECK_FALSE(runner.known("job-unknown"));
}

}  // TEST_SUITE
