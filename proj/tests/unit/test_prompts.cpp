#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "eltex/dataset_io.hpp"
#include "eltex/errors.hpp"
#include "eltex/indicators.hpp"
#include "eltex/prompts.hpp"
#include "helpers.hpp"

using namespace eltex;

namespace {

IndicatorSet indicators(std::string summary = "Phishing domains, drained wallets, exploit chatter.") {
    IndicatorSet s;
    s.summary = std::move(summary);
    s.sources = {"a"};
    return s;
}

}  // namespace

TEST_SUITE("prompts") {

TEST_CASE("placeholders") {
    PromptVariables v;
    auto m = v.expand(100);
    CHECK(m["topic_singular"] == "cyberattack");
    CHECK(m["topic_title"] == "Cyberattack");
    CHECK(m["industry_title"] == "Blockchain");
    CHECK(m["count"] == "100");
    CHECK(render_placeholders("{count} on {industry} {unknown} {", m) == "100 on blockchain {unknown} {");
    CHECK(title_singular("phishing scams") == "Phishing Scam");
    CHECK(title_singular("loss") == "Loss");
    CHECK(title_singular("supply-chain attacks") == "Supply-Chain Attack");
}

TEST_CASE("generation prompt layout") {
    auto t = PromptTemplate::default_for(kTargetCategory);
    t.output_count = 7;
    SeedBatch b;
    b.messages = testing::seeds(3, "line\nbreak");
    auto p = build_generation_prompt(t, indicators(), &b);

    auto task = p.find("generate 7 new social media platform messages");
    auto crit = p.find("\n\nCritical:\n");
    auto ind = p.find("Cyberattack Indicators:\n\nPhishing domains");
    auto msgs = p.find("Social Media Messages:\n\nline break 0\nline break 1\nline break 2");
    REQUIRE(task != std::string::npos);
    REQUIRE(crit != std::string::npos);
    REQUIRE(ind != std::string::npos);
    REQUIRE(msgs != std::string::npos);
    CHECK(task < crit);
    CHECK(crit < ind);
    CHECK(ind < msgs);
    CHECK(p.find("list of 7 newly generated") != std::string::npos);
    CHECK(p.find("{") == std::string::npos);
    CHECK(p.find(kDefaultAlignmentClause) == std::string::npos);

    t.alignment_clause = std::string(kDefaultAlignmentClause);
    auto with = build_generation_prompt(t, indicators(), &b);
    CHECK(with.find("- " + std::string(kDefaultAlignmentClause)) != std::string::npos);
    CHECK(with.find(kDefaultAlignmentClause) < with.find("Indicators:"));
}

TEST_CASE("seedless prompt uses the description") {
    auto t = PromptTemplate::default_for(kGeneralCategory);
    auto p = build_generation_prompt(t, indicators(), nullptr, "  wallet release notes ");
    CHECK(p.find("Description of the messages to generate:\n\nwallet release notes") != std::string::npos);
    CHECK(p.find("Social Media Messages:\n\n") == std::string::npos);
    CHECK(p.find("no connection to cyberattacks") != std::string::npos);
}

TEST_CASE("generation prompt rejects bad input") {
    auto t = PromptTemplate::default_for(kTargetCategory);
    CHECK_THROWS_AS(build_generation_prompt(t, indicators(" "), nullptr), ValidationError);
    SeedBatch empty;
    CHECK_THROWS_AS(build_generation_prompt(t, indicators(), &empty), ValidationError);
    t.output_count = 0;
    CHECK_THROWS_AS(build_generation_prompt(t, indicators(), nullptr), ValidationError);
    t = PromptTemplate::default_for(kTargetCategory);
    t.task_description = "\n";
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("templates from files") {
    testing::TempDir dir;
    write_file_atomic(dir / "task.txt", "Write {count} posts about {industry}.\n");
    write_file_atomic(dir / "crit.txt", "Critical:\n- Be brief.\n\n* No hashtags.\n");
    auto t = PromptTemplate::from_files(kTargetCategory, {}, dir / "task.txt", dir / "crit.txt");
    CHECK(t.task_description == "Write {count} posts about {industry}.");
    CHECK(t.critical_instructions == std::vector<std::string>{"Be brief.", "No hashtags."});
    t.output_count = 4;
    auto p = build_generation_prompt(t, indicators(), nullptr);
    CHECK(p.rfind("Write 4 posts about blockchain.\n\nCritical:\n\n- Be brief.\n- No hashtags.", 0) == 0);
    CHECK_THROWS_AS(PromptTemplate::from_files(kTargetCategory, {}, dir / "missing.txt", {}), NotFoundError);
}

TEST_CASE("shipped template files match the built-in defaults") {
    const std::filesystem::path dir = ELTEX_TEMPLATE_DIR;
    for (std::string c : {"target", "general"}) {
        auto files = PromptTemplate::from_files(c, {}, dir / (c + "_task.txt"), dir / (c + "_critical.txt"));
        auto builtin = PromptTemplate::default_for(c);
        CHECK(files.task_description == builtin.task_description);
        CHECK(files.critical_instructions == builtin.critical_instructions);
    }
}

TEST_CASE("annotation prompt embeds messages as JSON") {
    auto m = Message::make("Wallet \"drained\"", Source::synthetic, "target");
    m.timestamp = parse_rfc3339("2024-01-02T03:04:05Z");
    auto n = Message::make("gm", Source::synthetic, "general");
    auto p = build_annotation_prompt(indicators(), {m, n});
    CHECK(p.find("`cyberattack_score`") != std::string::npos);
    auto at = p.find("Social Media Messages:\n");
    REQUIRE(at != std::string::npos);
    auto arr = nlohmann::json::parse(p.substr(at + std::string("Social Media Messages:\n").size()));
    REQUIRE(arr.size() == 2);
    CHECK(arr[0]["message_id"] == m.id);
    CHECK(arr[0]["message"] == "Wallet \"drained\"");
    CHECK(arr[0]["timestamp"] == "2024-01-02T03:04:05Z");
    CHECK_FALSE(arr[1].contains("timestamp"));
    CHECK_THROWS_AS(build_annotation_prompt(indicators(), {}), ValidationError);
}

TEST_CASE("shuffle_and_batch: 25 seeds in batches of 10") {
    auto s = testing::seeds(25);
    auto b = shuffle_and_batch(s, 10, 3);
    REQUIRE(b.size() == 3);
    CHECK(b[0].messages.size() == 10);
    CHECK(b[1].messages.size() == 10);
    CHECK(b[2].messages.size() == 5);
    CHECK(shuffle_and_batch(s, 10, 3)[1].messages == b[1].messages);
    CHECK(shuffle_and_batch(s, 10, 4)[0].messages != b[0].messages);
    CHECK_THROWS_AS(shuffle_and_batch({}, 10, 0), ValidationError);
    CHECK_THROWS_AS(shuffle_and_batch(s, 0, 0), ValidationError);
}

TEST_CASE("shuffle_and_batch property: partition with only the last batch short") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 500; ++trial) {
        std::size_t n = 1 + gen() % 200;
        std::size_t k = 1 + gen() % 30;
        auto s = testing::seeds(n);
        auto b = shuffle_and_batch(s, k, gen());
        REQUIRE(b.size() == (n + k - 1) / k);
        std::multiset<std::string> seen;
        for (std::size_t i = 0; i < b.size(); ++i) {
            CHECK(b[i].batch_index == i);
            if (i + 1 < b.size()) {
                CHECK(b[i].messages.size() == k);
            } else {
                CHECK(b[i].messages.size() == n - k * (b.size() - 1));
            }
            for (const auto& m : b[i].messages) seen.insert(m.id);
        }
        std::multiset<std::string> expect;
        for (const auto& m : s) expect.insert(m.id);
        REQUIRE(seen == expect);
    }
}

}  // TEST_SUITE
