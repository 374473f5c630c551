#include <atomic>
#include <set>

#include "doctest.h"
#include "eltex/gateway.hpp"
#include "eltex/mock_provider.hpp"
#include "helpers.hpp"

using namespace eltex;
using testing::mock_gateway;
using testing::rule;

namespace {

ChatRequest req(std::string prompt, std::string model = "mock/m") {
    ChatRequest r;
    r.model = std::move(model);
    r.user_prompt = std::move(prompt);
    return r;
}

// In-memory provider batch API that completes on the second poll.
class FakeNative final : public Provider, public NativeBatchApi {
public:
    std::string name() const override { return "nat"; }
    ProviderReply complete(const ChatRequest& r, std::string_view) override {
        ++direct_calls;
        return {"direct:" + r.user_prompt, TokenUsage{1, 1, false}, FinishReason::complete};
    }
    NativeBatchApi* native_batch() override { return this; }
    std::string submit(const std::vector<ChatRequest>& requests) override {
        std::lock_guard l(mu);
        pending = requests;
        return "b1";
    }
    Snapshot poll(const std::string& id) override {
        std::lock_guard l(mu);
        Snapshot s;
        if (id != "b1") {
            s.state = State::failed;
            return s;
        }
        if (++polls < 2) {
            s.state = State::running;
            return s;
        }
        s.state = State::done;
        s.completed = pending.size();
        for (std::size_t i = 0; i < pending.size(); ++i) {
            if (i == 1) {
                s.results.emplace_back(ProviderError(ProviderErrorKind::invalid_request, "bad item"));
            } else {
                s.results.emplace_back(ProviderReply{"batched:" + pending[i].user_prompt, TokenUsage{10, 20, false},
                                                     FinishReason::complete});
            }
        }
        return s;
    }

    std::mutex mu;
    std::vector<ChatRequest> pending;
    int polls = 0;
    std::atomic<int> direct_calls{0};
};

}  // namespace

TEST_SUITE("gateway") {

TEST_CASE("model references split at the first slash") {
    auto m = ModelRef::parse("openai/gpt-4o/2024");
    CHECK(m.provider == "openai");
    CHECK(m.model == "gpt-4o/2024");
    CHECK(m.str() == "openai/gpt-4o/2024");
    CHECK_THROWS_AS(ModelRef::parse("nomodel"), ValidationError);
    CHECK_THROWS_AS(ModelRef::parse("/x"), ValidationError);
    CHECK_THROWS_AS(ModelRef::parse("x/"), ValidationError);
}

TEST_CASE("request validation") {
    auto r = req("hi");
    CHECK_NOTHROW(r.validate());
    r.temperature = 1.2;
    CHECK_THROWS_AS(r.validate(), ValidationError);
    r = req("");
    CHECK_THROWS_AS(r.validate(), ValidationError);
    r = req("x");
    r.max_output_tokens = 0;
    CHECK_THROWS_AS(r.validate(), ValidationError);
}

TEST_CASE("unknown provider is a permanent failure") {
    auto s = mock_gateway();
    CHECK_THROWS_AS(s.gateway->complete_chat(req("x", "other/m")), ProviderError);
    CHECK(s.gateway->has_provider("mock"));
    CHECK(s.gateway->provider_names() == std::vector<std::string>{"mock"});
}

TEST_CASE("transient failures are retried then succeed") {
    auto s = mock_gateway({rule({{"error", "rate_limit"}, {"times", 2}}), rule({{"response", "ok"}})});
    std::vector<std::chrono::milliseconds> sleeps;
    auto o = testing::fast_options();
    o.sleeper = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
    Gateway gw(o);
    gw.register_provider(s.provider);
    auto r = gw.complete_chat(req("x"));
    CHECK(r.text == "ok");
    CHECK(r.retries == 2);
    CHECK(sleeps.size() == 2);
    CHECK(s.provider->call_count() == 3);
}

TEST_CASE("retries stop at the policy limit") {
    auto s = mock_gateway({rule({{"error", "transient"}})});
    CHECK_THROWS_AS(s.gateway->complete_chat(req("x")), ProviderError);
    CHECK(s.provider->call_count() == 4);
}

TEST_CASE("auth errors are not retried") {
    auto s = mock_gateway({rule({{"error", "auth"}})});
    try {
        s.gateway->complete_chat(req("x"));
        FAIL("expected an error");
    } catch (const ProviderError& e) {
        CHECK(e.kind() == ProviderErrorKind::auth);
        CHECK_FALSE(e.retryable());
    }
    CHECK(s.provider->call_count() == 1);
}

TEST_CASE("backoff grows geometrically and is capped") {
    RetryPolicy p;
    p.jitter = 0.0;
    CHECK(p.delay_for(0, 0.5).count() == 500);
    CHECK(p.delay_for(1, 0.5).count() == 1000);
    CHECK(p.delay_for(2, 0.5).count() == 2000);
    CHECK(p.delay_for(20, 0.5).count() == 30'000);
    p.jitter = 0.2;
    CHECK(p.delay_for(0, 0.0).count() == 400);
    CHECK(p.delay_for(0, 1.0).count() == 600);
}

TEST_CASE("refusals are returned, not thrown, by complete_chat") {
    auto s = mock_gateway({rule({{"response", "I can't help"}, {"finish_reason", "refused"}})});
    auto r = s.gateway->complete_chat(req("x"));
    CHECK(r.finish_reason == FinishReason::refused);
    ChatRequest sr = req("y");
    sr.response_schema = schemas::score_map(2);
    CHECK_THROWS_AS(s.gateway->complete_structured(sr), RefusalError);
}

TEST_CASE("missing usage is estimated from text length") {
    auto s = mock_gateway({rule({{"response", "12345678"}})});
    auto r = s.gateway->complete_chat(req("abcd"));
    CHECK(r.usage.estimated);
    CHECK(r.usage.input_tokens == 1);
    CHECK(r.usage.output_tokens == 2);
    auto ledger = s.gateway->ledger();
    CHECK(ledger.totals().requests == 1);
    CHECK(ledger.totals().estimated_requests == 1);
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("abcde") == 2);
}

TEST_CASE("reported usage is recorded per model") {
    auto s = mock_gateway({rule({{"response", "x"}, {"usage", {{"input", 800}, {"output", 2100}}}})});
    s.gateway->complete_chat(req("a", "mock/one"));
    s.gateway->complete_chat(req("b", "mock/two"));
    auto ledger = s.gateway->ledger();
    CHECK(ledger.per_model().size() == 2);
    CHECK(ledger.totals().input_tokens == 1600);
    CHECK(ledger.totals().output_tokens == 4200);
    auto back = CostLedger::from_json(ledger.to_json());
    CHECK(back.totals().output_tokens == 4200);
}

TEST_CASE("structured output tolerates code fences and checks the schema") {
    auto schema = schemas::annotation_scores();
    auto v = parse_structured("```json\n[{\"message_id\":\"a\",\"cyberattack_score\":0.5}]\n```", schema);
    CHECK(v.size() == 1);
    CHECK_THROWS_AS(parse_structured("not json", schema), SchemaParseError);
    try {
        parse_structured("{\"a\":1}", schema);
        FAIL("expected a schema error");
    } catch (const SchemaParseError& e) {
        CHECK(e.raw_text() == "{\"a\":1}");
    }
}

TEST_CASE("schema subset validation") {
    nlohmann::json schema = {{"type", "object"},
                             {"properties", {{"n", {{"type", "integer"}}}, {"tags", {{"type", "array"}, {"items", {{"type", "string"}}}, {"maxItems", 2}}}}},
                             {"required", {"n"}},
                             {"additionalProperties", false}};
    CHECK_NOTHROW(validate_against_schema({{"n", 1}, {"tags", {"a"}}}, schema));
    CHECK_THROWS_AS(validate_against_schema({{"tags", {"a"}}}, schema), ValidationError);
    CHECK_THROWS_AS(validate_against_schema({{"n", 1}, {"x", 2}}, schema), ValidationError);
    CHECK_THROWS_AS(validate_against_schema({{"n", 1}, {"tags", {"a", "b", "c"}}}, schema), ValidationError);
    CHECK_THROWS_AS(validate_against_schema({{"n", "one"}}, schema), ValidationError);
    CHECK_NOTHROW(validate_against_schema({"x", {{"message", "y"}}}, schemas::generated_messages(2).schema));
}

TEST_CASE("emulated batches keep request order and isolate failures") {
    auto s = mock_gateway({rule({{"match", "fail"}, {"error", "invalid_request"}}), rule({{"behavior", "echo"}})});
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 20; ++i) reqs.push_back(req(i == 7 ? "fail me" : "p" + std::to_string(i)));
    auto h = s.gateway->submit_batch(reqs);
    CHECK(h.total == 20);
    auto st = s.gateway->wait_batch(h);
    CHECK(st.finished());
    CHECK(st.state == BatchState::done);
    REQUIRE(st.results.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(st.results[i].index == i);
        if (i == 7) {
            REQUIRE_FALSE(st.results[i].ok());
            CHECK(st.results[i].error().kind == "invalid_request");
        } else {
            REQUIRE(st.results[i].ok());
            CHECK(st.results[i].response().text == "p" + std::to_string(i));
        }
    }
    CHECK_THROWS_AS(s.gateway->poll_batch("nope"), NotFoundError);
    CHECK_THROWS_AS(s.gateway->submit_batch({}), ValidationError);
}

TEST_CASE("wait_for_progress reports partial completion") {
    auto s = mock_gateway({rule({{"behavior", "echo"}})});
    std::vector<ChatRequest> reqs(5, req("x"));
    auto h = s.gateway->submit_batch(reqs);
    std::size_t seen = 0;
    BatchStatus st;
    do {
        st = s.gateway->wait_for_progress(h, seen, std::chrono::seconds(5));
        CHECK(st.completed >= seen);
        seen = st.completed;
    } while (!st.finished());
    CHECK(seen == 5);
}

TEST_CASE("native batch API is used when enabled") {
    auto nat = std::make_shared<FakeNative>();
    auto o = testing::fast_options();
    o.use_native_batch = true;
    Gateway gw(o);
    gw.register_provider(nat);
    auto st = gw.wait_batch(gw.submit_batch({req("a", "nat/m"), req("b", "nat/m"), req("c", "nat/m")}));
    CHECK(nat->direct_calls == 0);
    REQUIRE(st.results.size() == 3);
    CHECK(st.results[0].response().text == "batched:a");
    CHECK_FALSE(st.results[1].ok());
    CHECK(st.results[2].response().usage.output_tokens == 20);
}

TEST_CASE("native batch is bypassed when disabled") {
    auto nat = std::make_shared<FakeNative>();
    Gateway gw(testing::fast_options());
    gw.register_provider(nat);
    auto st = gw.wait_batch(gw.submit_batch({req("a", "nat/m")}));
    CHECK(nat->direct_calls == 1);
    CHECK(st.results[0].response().text == "direct:a");
}

TEST_CASE("mock replies are deterministic per seed") {
    ChatRequest r = req("generate please");
    r.response_schema = schemas::generated_messages(12);
    auto a = mock_gateway({}, 5);
    auto b = mock_gateway({}, 5);
    auto c = mock_gateway({}, 6);
    auto ta = a.gateway->complete_chat(r).text;
    CHECK(ta == b.gateway->complete_chat(r).text);
    CHECK(ta != c.gateway->complete_chat(r).text);
    CHECK(nlohmann::json::parse(ta).size() == 12);
}

TEST_CASE("mock script rules match by substring, call index and model") {
    auto rules = MockProvider::parse_script(
        "{\"match\": 0, \"response\": \"first\"}\n"
        "\n"
        "{\"match\": \"needle\", \"response\": \"found\"}\n"
        "{\"model\": \"special\", \"response\": \"special\"}\n");
    auto s = mock_gateway(rules);
    CHECK(s.gateway->complete_chat(req("needle")).text == "first");
    CHECK(s.gateway->complete_chat(req("a needle")).text == "found");
    CHECK(s.gateway->complete_chat(req("x", "mock/special")).text == "special");
    CHECK_THROWS_AS(MockProvider::parse_script("{\"error\": \"weird\"}"), ValidationError);
}

}  // TEST_SUITE
