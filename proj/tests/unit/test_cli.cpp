#include <cmath>
#include <sstream>

#include "../../tools/cli.hpp"
#include "doctest.h"
#include "eltex/dataset_io.hpp"
#include "helpers.hpp"

using nlohmann::json;

namespace {

const std::filesystem::path kGolden = ELTEX_GOLDEN_DIR;

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = eltex::cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string input(const std::string& name) { return (kGolden / "inputs" / name).string(); }

// Structural equality with a relative tolerance on numbers.
void check_same(const json& got, const json& want, const std::string& where = "$") {
    INFO(where);
    if (want.is_number() && got.is_number()) {
        double a = got.get<double>(), b = want.get<double>();
        CHECK(std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)));
        return;
    }
    REQUIRE(got.type() == want.type());
    if (want.is_object()) {
        CHECK(got.size() == want.size());
        for (const auto& [k, v] : want.items()) {
            REQUIRE(got.contains(k));
            check_same(got[k], v, where + "." + k);
        }
    } else if (want.is_array()) {
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) check_same(got[i], want[i], where + "[" + std::to_string(i) + "]");
    } else {
        CHECK(got == want);
    }
}

void golden(const std::string& file, std::vector<std::string> args) {
    auto r = cli(std::move(args));
    INFO(r.err);
    REQUIRE(r.code == 0);
    check_same(json::parse(r.out), json::parse(eltex::read_file(kGolden / file)));
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("golden outputs") {
    golden("cost.json", {"--json", "metrics", "cost", "--in", "800", "--out", "2100"});
    golden("validate.json", {"--json", "validate", "--review", input("review.csv")});
    golden("eval.json", {"metrics", "eval", "--predictions", input("predictions.json"), "--gold", input("gold.json"), "--json"});
    golden("dedup.json", {"--json", "dedup", input("messages.jsonl")});
    golden("self_bleu.json", {"--json", "metrics", "self-bleu", input("messages.jsonl")});
    golden("stats.json", {"--json", "metrics", "stats", input("messages.jsonl")});
}

TEST_CASE("human-readable output") {
    auto r = cli({"metrics", "cost", "--in", "800", "--out", "2100"});
    CHECK(r.code == 0);
    CHECK(r.out.find("$0.023") != std::string::npos);
    r = cli({"validate", "--review", input("review.csv")});
    CHECK(r.out.find("accuracy  33.33") != std::string::npos);
}

TEST_CASE("exit codes") {
    auto r = cli({"metrics", "cost", "--bogus"});
    CHECK(r.code == 2);
    CHECK(json::parse(r.err)["error"]["kind"] == "usage");
    CHECK(cli({}).code == 2);
    CHECK(cli({"--help"}).code == 0);

    testing::TempDir dir;
    eltex::write_file_atomic(dir / "bad.jsonl", "{\"content\": \"\"}\n");
    eltex::write_file_atomic(dir / "ind.txt", "Drained wallets.");
    r = cli({"validate", "--review", input("messages.jsonl")});
    CHECK(r.code == 3);
    CHECK(json::parse(r.err)["error"]["kind"] == "validation");
    r = cli({"--config", (dir / "missing.json").string(), "metrics", "cost", "--in", "1", "--out", "1"});
    CHECK(r.code == 4);

    eltex::write_file_atomic(dir / "down.json",
                             json{{"providers", {{{"name", "m"}, {"kind", "mock"}, {"rules", {{{"error", "auth"}}}}}}},
                                  {"roles", {{"annotation", "m/x"}}}}
                                 .dump());
    r = cli({"--config", (dir / "down.json").string(), "annotate", input("messages.jsonl"), "--indicators",
             (dir / "ind.txt").string()});
    CHECK(r.code == 5);
}

TEST_CASE("generate, dedup and annotate through files") {
    testing::TempDir dir;
    eltex::write_file_atomic(dir / "ind.txt", "Drained wallets, exploit rumors.");
    eltex::save_messages(dir / "seeds.jsonl", testing::seeds(12));
    auto r = cli({"generate", "--seeds", (dir / "seeds.jsonl").string(), "--indicators", (dir / "ind.txt").string(),
                  "--count", "120", "--seed-rng", "4", "--job-dir", (dir / "job").string(), "-o",
                  (dir / "gen.jsonl").string(), "--json"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    auto produced = eltex::load_messages(dir / "gen.jsonl", eltex::Source::synthetic, nullptr, true);
    // The built-in mock jitters reply sizes by up to 3.
    auto counts = json::parse(r.out)["per_request_counts"];
    REQUIRE(counts.size() == 2);
    CHECK(produced.size() == counts[0].get<std::size_t>() + counts[1].get<std::size_t>());
    CHECK(produced.size() >= 114);

    r = cli({"dedup", (dir / "gen.jsonl").string(), "-o", (dir / "dd.jsonl").string(), "--filtered-out",
             (dir / "gone.jsonl").string(), "--json"});
    REQUIRE(r.code == 0);
    auto rep = json::parse(r.out);
    auto kept = eltex::load_messages(dir / "dd.jsonl", eltex::Source::synthetic);
    auto gone = eltex::load_messages(dir / "gone.jsonl", eltex::Source::synthetic, nullptr, true);
    CHECK(kept.size() == rep["retained"].get<std::size_t>());
    CHECK(kept.size() + gone.size() == produced.size());

    r = cli({"annotate", (dir / "dd.jsonl").string(), "--indicators", (dir / "ind.txt").string(), "-o",
             (dir / "scored.jsonl").string(), "--review-csv", (dir / "review.csv").string()});
    REQUIRE(r.code == 0);
    for (const auto& m : eltex::load_messages(dir / "scored.jsonl", eltex::Source::synthetic)) CHECK(m.score.has_value());
    CHECK(eltex::read_file(dir / "review.csv").rfind("message_id,content,cyberattack_score,human_label", 0) == 0);

    r = cli({"generate", "--indicators", (dir / "ind.txt").string(), "--count", "250", "--description", "exchange chatter",
             "--plan-only", "--json"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["request_counts"] == json::array({100, 100, 50}));

    eltex::write_file_atomic(dir / "task.txt", "Write {count} short posts about {industry} outages.");
    r = cli({"generate", "--indicators", (dir / "ind.txt").string(), "--count", "30", "--description", "exchange chatter",
             "--task-file", (dir / "task.txt").string(), "--plan-only", "--json"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["first_prompt"].get<std::string>().rfind("Write 30 short posts about blockchain outages.", 0) == 0);
}

}  // TEST_SUITE
