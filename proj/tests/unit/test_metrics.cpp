#include <random>

#include "doctest.h"
#include "eltex/errors.hpp"
#include "eltex/metrics.hpp"
#include "eltex/orchestrator.hpp"
#include "helpers.hpp"

using namespace eltex;

namespace {

std::vector<std::string> words(const std::string& s) { return bleu_tokenize(s); }

EmbeddingVector unit(double angle, double jitter = 0.0) {
    return EmbeddingVector{{static_cast<float>(std::cos(angle + jitter)), static_cast<float>(std::sin(angle + jitter))}};
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("tokenizer splits punctuation") {
    CHECK(bleu_tokenize("Wallet drained!! Send $5, now.") ==
          std::vector<std::string>{"Wallet", "drained", "!", "!", "Send", "$", "5", ",", "now", "."});
    CHECK(bleu_tokenize("under_score caf\xC3\xA9") == std::vector<std::string>{"under_score", "caf\xC3\xA9"});
    CHECK(bleu_tokenize("  ").empty());
}

// Reference values computed with nltk 3.10.3 (sentence_bleu, uniform 4-gram
// weights, SmoothingFunction().method1); see tests/oracles/bleu_oracle.py.
TEST_CASE("sentence BLEU matches nltk") {
    CHECK(sentence_bleu({words("the quick brown fox jumps")}, words("the quick brown dog jumps high")) ==
          doctest::Approx(0.21711852081087685).epsilon(1e-12));
    CHECK(sentence_bleu({words("alpha beta gamma delta")}, words("one two three four")) == 0.0);
    CHECK(sentence_bleu({words("a b c d e")}, words("a b c d e")) == doctest::Approx(1.0));
}

TEST_CASE("self-BLEU matches nltk on a hand corpus") {
    std::vector<std::string> corpus = {"the cat sat on the mat today .", "the cat is on the mat",
                                       "a dog sat on a log , again !"};
    auto r = self_bleu(corpus);
    REQUIRE(r.per_document_scores.size() == 3);
    CHECK(std::abs(r.per_document_scores[0] - 0.17156894461200053) < 1e-9);
    CHECK(std::abs(r.per_document_scores[1] - 0.18204651199034363) < 1e-9);
    CHECK(std::abs(r.per_document_scores[2] - 0.050712153369465586) < 1e-9);
    CHECK(std::abs(r.mean - 0.13477586999060326) < 1e-9);
    CHECK(std::abs(r.stddev - 0.059595727999363246) < 1e-9);
    CHECK(r.corpus_size == 3);
    CHECK(r.sample_size == 3);
}

TEST_CASE("self-BLEU edge cases") {
    auto same = self_bleu(std::vector<std::string>(5, "exchange halts withdrawals after exploit"));
    CHECK(same.mean == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(same.stddev == doctest::Approx(0.0));
    auto disjoint = self_bleu({"alpha beta gamma delta", "one two three four"});
    CHECK(disjoint.mean < 0.01);
    CHECK_THROWS_AS(self_bleu({"only one"}), ValidationError);

    std::vector<std::string> big;
    for (int i = 0; i < 40; ++i) big.push_back("post number " + std::to_string(i) + " about tokens");
    auto a = self_bleu(big, 4, 10, 3);
    auto b = self_bleu(big, 4, 10, 3);
    CHECK(a.sample_size == 10);
    CHECK(a.documents == b.documents);
    CHECK(a.mean == b.mean);
    CHECK(a.to_json(true)["per_document_scores"].size() == 10);
    CHECK(a.to_json()["tokenizer"] == "words+punctuation");
}

TEST_CASE("DBSCAN") {
    std::vector<EmbeddingVector> pts;
    for (double centre : {0.0, 2.0, 4.0}) {
        for (int i = 0; i < 6; ++i) pts.push_back(unit(centre, 0.01 * i));
    }
    pts.push_back(unit(1.0));
    pts.push_back(unit(3.0));
    auto r = cluster_analysis(pts, 0.05, 5);
    CHECK(r.n_clusters == 3);
    CHECK(r.noise_count == 2);
    CHECK(r.labels[0] == 0);
    CHECK(r.labels[6] == 1);
    CHECK(r.labels[12] == 2);
    CHECK(r.labels[18] == -1);
    CHECK(r.to_json()["n_clusters"] == 3);
    CHECK(cluster_analysis(pts, 0.05, 7).n_clusters == 0);
    CHECK_THROWS_AS(cluster_analysis({}), ValidationError);
}

TEST_CASE("classifier evaluation") {
    auto two = eval_classifier({{"a", 0.8}, {"b", 0.3}}, {{"a", 1}, {"b", 0}});
    CHECK(std::abs(two.brier - 0.065) < 1e-9);
    CHECK(two.accuracy == 1.0);

    auto four = eval_classifier({{"a", 0.9}, {"b", 0.2}, {"c", 0.6}, {"d", 0.1}},
                                {{"a", 1}, {"b", 1}, {"c", 0}, {"d", 0}});
    CHECK(four.accuracy == doctest::Approx(0.5));
    CHECK(*four.roc_auc == doctest::Approx(0.75));
    CHECK(four.fp_rate == doctest::Approx(0.25));
    CHECK(four.fn_rate == doctest::Approx(0.25));
    CHECK(four.recall == doctest::Approx(0.5));
    CHECK(four.precision == doctest::Approx(0.5));
    CHECK(four.f1 == doctest::Approx(0.5));
    CHECK(four.confusion_csv() == "actual,predicted,count\n1,1,1\n1,0,1\n0,1,1\n0,0,1\n");

    auto perfect = eval_classifier({{"a", 1.0}, {"b", 0.0}}, {{"a", 1}, {"b", 0}});
    CHECK(perfect.brier == 0.0);
    CHECK(*perfect.roc_auc == 1.0);
    CHECK(perfect.f1 == 1.0);

    auto one_class = eval_classifier({{"a", 0.7}}, {{"a", 1}});
    CHECK_FALSE(one_class.roc_auc.has_value());
    auto ties = eval_classifier({{"a", 0.5}, {"b", 0.5}}, {{"a", 1}, {"b", 0}});
    CHECK(*ties.roc_auc == doctest::Approx(0.5));

    CHECK_THROWS_AS(eval_classifier({{"a", 0.5}}, {{"b", 1}}), ValidationError);
    CHECK_THROWS_AS(eval_classifier({}, {}), ValidationError);
    CHECK_THROWS_AS(eval_classifier({{"a", 1.5}}, {{"a", 1}}), ValidationError);
}

TEST_CASE("evaluation property: FP and FN rates partition the errors") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        std::map<std::string, double> p;
        std::map<std::string, int> g;
        std::size_t n = 1 + gen() % 50;
        for (std::size_t i = 0; i < n; ++i) {
            auto id = std::to_string(i);
            p[id] = u(gen);
            g[id] = static_cast<int>(gen() % 2);
        }
        auto m = eval_classifier(p, g, 0.05 + 0.9 * u(gen));
        CHECK(m.fp + m.fn + m.tp + m.tn == n);
        CHECK(m.fp_rate + m.fn_rate == doctest::Approx(1.0 - m.accuracy).epsilon(1e-12));
        CHECK(m.brier >= 0.0);
        CHECK(m.brier <= 1.0);
        if (m.roc_auc) {
            CHECK(*m.roc_auc >= 0.0);
            CHECK(*m.roc_auc <= 1.0);
        }
    }
}

TEST_CASE("cost model") {
    auto c = estimate_cost(800, 2100);
    CHECK(c.input_cost == doctest::Approx(0.002));
    CHECK(c.output_cost == doctest::Approx(0.021));
    CHECK(c.total == doctest::Approx(0.023));
    CHECK(estimate_cost(500, 1500).total == doctest::Approx(0.01625));
    auto per = estimate_cost(800, 2100, {}, std::size_t{100});
    CHECK(*per.per_message == doctest::Approx(0.00023));
    PricingModel bad;
    bad.input_price_per_million = -1;
    CHECK_THROWS_AS(estimate_cost(1, 1, bad), ValidationError);
    CHECK_THROWS_AS(estimate_cost(-1, 1), ValidationError);
}

TEST_CASE("batch score parsing") {
    auto r = parse_batch_scores(std::string_view(R"({"a": "0.4", "b": 1.3, "z": 0.1})"), {"a", "b", "c"});
    CHECK(r.scores.at("a") == doctest::Approx(0.4));
    CHECK(r.scores.at("b") == 1.0);
    CHECK(r.scores.count("z") == 0);
    CHECK(r.missing == std::vector<std::string>{"c"});
    CHECK_FALSE(r.warnings.empty());
    auto arr = parse_batch_scores(nlohmann::json::parse(R"([{"message_id": "a", "cyberattack_score": 0.2}])"), {"a"});
    CHECK(arr.scores.at("a") == doctest::Approx(0.2));
    CHECK_THROWS_AS(parse_batch_scores(std::string_view("not json"), {"a"}), SchemaParseError);
    CHECK_THROWS_AS(parse_batch_scores(nlohmann::json::parse(R"({"q": 0.5})"), {"a"}), Error);
}

TEST_CASE("dataset statistics") {
    auto ms = testing::seeds(2, "ab");
    ms.push_back(Message::make("xyz", Source::synthetic, "general"));
    ms.back().score = 0.3;
    auto s = dataset_stats(ms);
    CHECK(s.counts.total == 3);
    CHECK(s.counts.count("target") == 2);
    CHECK(s.per_source.at("seed") == 2);
    CHECK(s.min_chars == 3);
    CHECK(s.max_chars == 4);
    CHECK(s.mean_chars == doctest::Approx(11.0 / 3));
    CHECK(s.scored == 1);
}

TEST_CASE("retention experiment") {
    auto m = testing::mock_gateway({}, 3);
    HashingEmbedder e(256);
    testing::TempDir dir;
    GenerationParams p;
    p.topic = "cyberattacks";
    p.industry = "blockchain";
    p.rng_seed = 1;
    p.provider_models[std::string(roles::kGeneration)] = "mock/generator";
    IndicatorSet ind;
    ind.summary = "Drained wallets and exploit rumors.";
    ind.sources = {"mock/a"};
    RetentionOptions o;
    o.target_size = 120;
    o.work_dir = dir.path();
    auto r = retention_experiment(testing::seeds(20), PromptTemplate::default_for(kTargetCategory), ind, p,
                                  {0.2, 1.0}, {0.8, 0.95}, *m.gateway, e, o);
    REQUIRE(r.cells.size() == 4);
    for (const auto& c : r.cells) {
        CHECK(c.received > 0);
        CHECK(c.retained <= c.received);
        CHECK(c.retention_pct == doctest::Approx(100.0 * c.retained / c.received));
    }
    // Lower thresholds filter more; hotter sampling repeats less.
    CHECK(r.cells[0].retained <= r.cells[1].retained);
    CHECK(r.cells[2].retained <= r.cells[3].retained);
    CHECK(r.cells[0].retention_pct <= r.cells[2].retention_pct);
    CHECK(r.to_json()["cells"].size() == 4);
}

}  // TEST_SUITE
