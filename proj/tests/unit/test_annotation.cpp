#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "eltex/annotation.hpp"
#include "eltex/errors.hpp"
#include "helpers.hpp"

using namespace eltex;

namespace {

IndicatorSet indicators() {
    IndicatorSet s;
    s.summary = "Exploit chatter, drained wallets, phishing airdrops.";
    s.sources = {"mock/a"};
    return s;
}

ValidationInput input(std::vector<std::pair<int, double>> label_score, double threshold = 0.5) {
    ValidationInput v;
    v.threshold = threshold;
    for (std::size_t i = 0; i < label_score.size(); ++i) {
        auto id = "m" + std::to_string(i);
        v.truths.push_back({id, label_score[i].first});
        v.annotations.push_back({id, label_score[i].second, "x"});
    }
    return v;
}

}  // namespace

TEST_SUITE("annotation") {

TEST_CASE("accuracy") {
    CHECK(accuracy(input({{1, 0.9}, {1, 0.2}, {0, 0.7}})) == doctest::Approx(33.333333));
    CHECK(accuracy(input({{1, 0.9}, {0, 0.1}})) == doctest::Approx(100.0));
    // A score equal to the threshold predicts the positive label.
    CHECK(predict_label(0.5, 0.5) == 1);
    CHECK(predict_label(0.4999, 0.5) == 0);
    CHECK(accuracy(input({{1, 0.5}}, 0.5)) == doctest::Approx(100.0));
    CHECK(accuracy(input({{1, 0.3}}, 0.3)) == doctest::Approx(100.0));
    CHECK(accuracy(input({{0, 0.3}, {0, 0.31}}, 0.3)) == doctest::Approx(0.0));
}

TEST_CASE("accuracy rejects inputs that do not pair up") {
    CHECK_THROWS_AS(accuracy(input({})), ValidationError);
    CHECK_THROWS_AS(accuracy(input({{1, 0.9}}, 0.0)), ValidationError);
    CHECK_THROWS_AS(accuracy(input({{1, 0.9}}, 1.0)), ValidationError);
    auto v = input({{1, 0.9}, {0, 0.1}});
    v.annotations.pop_back();
    CHECK_THROWS_AS(accuracy(v), ValidationError);
    v = input({{1, 0.9}});
    v.annotations.push_back({"extra", 0.3, "x"});
    CHECK_THROWS_AS(accuracy(v), ValidationError);
    v = input({{1, 0.9}});
    v.truths.push_back(v.truths[0]);
    CHECK_THROWS_AS(accuracy(v), ValidationError);
    v = input({{2, 0.9}});
    CHECK_THROWS_AS(accuracy(v), ValidationError);
}

TEST_CASE("accuracy property: bounded and invariant to order") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 300; ++t) {
        std::vector<std::pair<int, double>> ls(1 + gen() % 40);
        for (auto& [l, s] : ls) {
            l = static_cast<int>(gen() % 2);
            s = u(gen);
        }
        double th = 0.05 + 0.9 * u(gen);
        auto v = input(ls, th);
        double a = accuracy(v);
        CHECK(a >= 0.0);
        CHECK(a <= 100.0);
        std::size_t hits = 0;
        for (const auto& [l, s] : ls) hits += (s >= th ? 1 : 0) == l;
        CHECK(a == doctest::Approx(100.0 * hits / ls.size()));
        std::shuffle(v.annotations.begin(), v.annotations.end(), gen);
        CHECK(accuracy(v) == doctest::Approx(a));
    }
}

TEST_CASE("annotate via the gateway") {
    auto ms = testing::seeds(23, "post");
    auto m = testing::mock_gateway();
    AnnotationOptions o;
    o.chunk_size = 10;
    auto r = annotate(ms, indicators(), *m.gateway, "mock/annotator", o);
    REQUIRE(r.records.size() == 23);
    for (std::size_t i = 0; i < ms.size(); ++i) {
        CHECK(r.records[i].message_id == ms[i].id);
        CHECK(r.records[i].score >= 0.0);
        CHECK(r.records[i].score <= 1.0);
        CHECK(r.records[i].model == "mock/annotator");
    }
    CHECK(m.provider->call_count() == 3);
    CHECK(m.provider->calls()[0].temperature == 0.0);
    CHECK(r.retries == 0);
    CHECK(r.warnings.empty());
    CHECK_THROWS_AS(annotate({}, indicators(), *m.gateway, "mock/annotator"), ValidationError);
}

TEST_CASE("missing ids are retried once and out-of-range scores clamped") {
    auto ms = testing::seeds(3, "post");
    nlohmann::json first = {{{"message_id", ms[0].id}, {"cyberattack_score", 1.7}},
                            {{"message_id", ms[1].id}, {"cyberattack_score", -0.2}},
                            {{"message_id", "stranger"}, {"cyberattack_score", 0.5}}};
    auto m = testing::mock_gateway({testing::rule({{"match", 0}, {"response", first.dump()}})});
    auto r = annotate(ms, indicators(), *m.gateway, "mock/annotator");
    CHECK(r.records[0].score == 1.0);
    CHECK(r.records[1].score == 0.0);
    CHECK(r.retries == 1);
    CHECK(m.provider->call_count() == 2);
    CHECK(m.provider->calls()[1].user_prompt.find(ms[2].id) != std::string::npos);
    CHECK(m.provider->calls()[1].user_prompt.find(ms[0].id) == std::string::npos);
    std::multiset<std::string> kinds;
    for (const auto& w : r.warnings) kinds.insert(w.kind);
    CHECK(kinds == std::multiset<std::string>{"clamped", "clamped", "unknown_id", "missing_retry"});

    auto stubborn = testing::mock_gateway({testing::rule({{"response", "[]"}})});
    CHECK_THROWS_AS(annotate(ms, indicators(), *stubborn.gateway, "mock/annotator"), Error);
    auto refuse = testing::mock_gateway({testing::rule({{"finish_reason", "refused"}, {"response", "no"}})});
    CHECK_THROWS_AS(annotate(ms, indicators(), *refuse.gateway, "mock/annotator"), RefusalError);
}

TEST_CASE("review sheet round trip") {
    auto ms = testing::seeds(3, "post, with \"quotes\"");
    std::vector<AnnotationRecord> recs = {{ms[0].id, 0.9, "x"}, {ms[1].id, 0.2, "x"}, {ms[2].id, 0.7, "x"}};
    auto csv = export_review_csv(ms, recs);
    CHECK(csv.rfind("message_id,content,cyberattack_score,human_label", 0) == 0);
    auto rows = import_review_csv(csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].content == ms[0].content);
    CHECK(*rows[1].score == doctest::Approx(0.2));
    CHECK_FALSE(rows[0].human_label.has_value());
    CHECK(validation_input_from_review(rows).truths.empty());

    std::string reviewed =
        "message_id,content,cyberattack_score,human_label\n"
        "a,x,0.9,1\nb,y,0.2,1\nc,z,0.7,0\nd,w,,1\n";
    auto v = validation_input_from_review(import_review_csv(reviewed));
    CHECK(v.truths.size() == 3);
    CHECK(accuracy(v) == doctest::Approx(33.333333));
    CHECK_THROWS_AS(import_review_csv("message_id,content\na,b\n"), ValidationError);
    CHECK_THROWS_AS(import_review_csv("message_id,content,cyberattack_score,human_label\na,b,0.1,yes\n"),
                    ValidationError);
}

}  // TEST_SUITE
