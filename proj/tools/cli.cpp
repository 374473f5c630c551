#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "eltex/annotation.hpp"
#include "eltex/config.hpp"
#include "eltex/dataset_io.hpp"
#include "eltex/metrics.hpp"
#include "eltex/orchestrator.hpp"
#include "eltex/pipeline.hpp"
#include "eltex/service.hpp"

namespace eltex::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Output {
    std::ostream& out;
    bool as_json = false;

    void emit(const json& j, const std::function<void()>& human) const {
        if (as_json) {
            out << j.dump(2) << "\n";
        } else {
            human();
        }
    }
};

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
        std::ostringstream s;
        s << std::setprecision(6) << v.get<double>();
        return s.str();
    }
    return v.dump();
}

// key  value rows; nested objects flattened with dots.
void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& rows) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, rows);
    } else if (j.is_array() && (j.size() > 8 || (!j.empty() && j[0].is_structured()))) {
        rows.emplace_back(prefix, "[" + std::to_string(j.size()) + " items]");
    } else if (j.is_array()) {
        std::string s;
        for (const auto& v : j) s += (s.empty() ? "" : ", ") + scalar_text(v);
        rows.emplace_back(prefix, s);
    } else {
        rows.emplace_back(prefix, scalar_text(j));
    }
}

void print_table(std::ostream& out, const json& j) {
    std::vector<std::pair<std::string, std::string>> rows;
    flatten(j, "", rows);
    std::size_t w = 0;
    for (const auto& r : rows) w = std::max(w, r.first.size());
    for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(w + 2)) << k << v << "\n";
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

IndicatorSet load_indicators(const fs::path& p) {
    auto text = read_file(p);
    if (p.extension() == ".json") return indicator_set_from_json(json::parse(text));
    IndicatorSet s;
    s.summary = text;
    while (!s.summary.empty() && (s.summary.back() == '\n' || s.summary.back() == ' ')) s.summary.pop_back();
    s.sources = {"manual"};
    s.validate();
    return s;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (!part.empty()) out.push_back(part);
        }
    }
    return out;
}

std::vector<double> split_doubles(const std::string& text) {
    std::vector<double> out;
    for (const auto& s : split_list({text})) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size()) throw ValidationError("'" + s + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw ValidationError("expected a comma-separated list of numbers");
    return out;
}

std::size_t column(const std::map<std::string, std::size_t>& cols, std::initializer_list<const char*> names,
                   const fs::path& file) {
    for (const char* n : names) {
        auto it = cols.find(n);
        if (it != cols.end()) return it->second;
    }
    throw ValidationError(file.string() + " lacks a '" + *names.begin() + "' column");
}

double parse_number(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw ValidationError(where + ": '" + s + "' is not a number");
    return v;
}

/// id -> score from a CSV (message_id/id, score/cyberattack_score/prediction),
/// a JSON object map, or message records carrying a score.
std::map<std::string, double> load_scores(const fs::path& p) {
    std::map<std::string, double> out;
    auto fmt = format_from_path(p);
    if (fmt == DataFormat::csv) {
        auto rows = parse_csv(read_file(p));
        if (rows.empty()) throw ValidationError(p.string() + " is empty");
        std::map<std::string, std::size_t> cols;
        for (std::size_t i = 0; i < rows[0].size(); ++i) cols[rows[0][i]] = i;
        auto id_col = column(cols, {"message_id", "id"}, p);
        auto sc_col = column(cols, {"score", "cyberattack_score", "prediction"}, p);
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() == 1 && rows[r][0].empty()) continue;
            if (rows[r].size() <= std::max(id_col, sc_col)) throw ValidationError(p.string() + ": short row " + std::to_string(r + 1));
            out[rows[r][id_col]] = parse_number(rows[r][sc_col], p.string() + " row " + std::to_string(r + 1));
        }
        return out;
    }
    if (fmt == DataFormat::json) {
        auto j = json::parse(read_file(p));
        if (j.is_object()) {
            for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
            return out;
        }
    }
    for (const auto& m : load_messages(p, Source::synthetic)) {
        if (m.score) out[m.id] = *m.score;
    }
    return out;
}

std::map<std::string, int> load_labels(const fs::path& p) {
    std::map<std::string, int> out;
    if (format_from_path(p) == DataFormat::json) {
        auto j = json::parse(read_file(p));
        for (const auto& [k, v] : j.items()) out[k] = v.get<int>();
        return out;
    }
    auto rows = parse_csv(read_file(p));
    if (rows.empty()) throw ValidationError(p.string() + " is empty");
    std::map<std::string, std::size_t> cols;
    for (std::size_t i = 0; i < rows[0].size(); ++i) cols[rows[0][i]] = i;
    auto id_col = column(cols, {"message_id", "id"}, p);
    auto l_col = column(cols, {"label", "human_label"}, p);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() == 1 && rows[r][0].empty()) continue;
        if (rows[r].size() <= std::max(id_col, l_col)) throw ValidationError(p.string() + ": short row " + std::to_string(r + 1));
        const auto& l = rows[r][l_col];
        if (l != "0" && l != "1") throw ValidationError(p.string() + " row " + std::to_string(r + 1) + ": label must be 0 or 1");
        out[rows[r][id_col]] = l == "1";
    }
    return out;
}

void write_output(const fs::path& p, const std::vector<Message>& msgs) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    save_messages(p, msgs);
}

void write_json_file(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(p, j.dump(2) + "\n");
}

struct ParamFlags {
    std::string topic = "cyberattacks";
    std::string industry = "blockchain";
    std::string stakeholders;
    std::string category{kTargetCategory};
    std::string description;

    void add_to(CLI::App* app) {
        app->add_option("--topic", topic, "Target topic")->capture_default_str();
        app->add_option("--industry", industry, "Industry")->capture_default_str();
        app->add_option("--stakeholders", stakeholders, "Ecosystem participants");
        app->add_option("--category", category, "Category label for generated messages")->capture_default_str();
        app->add_option("--description", description, "Free-text description used without seed data");
    }

    GenerationParams params(const AppConfig& cfg) const {
        GenerationParams p;
        p.topic = topic;
        p.industry = industry;
        p.stakeholders = stakeholders;
        p.category = category;
        p.description = description;
        p.temperature = cfg.defaults.temperature;
        apply_role_defaults(p, cfg);
        return p;
    }
};

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const json::exception*>(&e)) return 3;
    if (dynamic_cast<const NotFoundError*>(&e)) return 4;
    if (dynamic_cast<const BackendError*>(&e) || dynamic_cast<const RefusalError*>(&e) ||
        dynamic_cast<const SchemaParseError*>(&e) || dynamic_cast<const ProviderError*>(&e)) {
        return 5;
    }
    return 1;
}

std::string kind_for(int code) {
    switch (code) {
        case 3: return "validation";
        case 4: return "not_found";
        case 5: return "backend";
        default: return "error";
    }
}

Service* g_service = nullptr;

extern "C" void on_signal(int) {
    if (g_service) g_service->stop();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic social-media data pipeline: indicators, generation, dedup, annotation, metrics", "eltex"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    bool as_json = false;
    app.add_option("--config", config_path, "Config file (else $ELTEX_CONFIG, ./eltex.json, built-in mock)");
    app.add_flag("--json", as_json, "Machine-readable JSON on stdout");

    // indicators
    auto* ind = app.add_subcommand("indicators", "Indicator extraction");
    ind->require_subcommand(1);
    auto* ind_gen = ind->add_subcommand("generate", "Query several models for indicators, then fuse them");
    ParamFlags ind_params;
    ind_params.add_to(ind_gen);
    std::vector<std::string> ind_providers;
    std::string knowledge_file, events_file, ind_out, archive_dir, summarizer;
    bool candidates_only = false;
    ind_gen->add_option("--providers", ind_providers, "Model references (provider/model), comma-separated");
    ind_gen->add_option("--knowledge-file", knowledge_file, "General knowledge, articles separated by blank lines")->check(CLI::ExistingFile);
    ind_gen->add_option("--events-file", events_file, "Historical events, one 'date - entity' per line")->check(CLI::ExistingFile);
    ind_gen->add_option("--summarizer", summarizer, "Model used to fuse candidate lists");
    ind_gen->add_option("--archive-dir", archive_dir, "Keep every raw candidate list here");
    ind_gen->add_option("-o,--out", ind_out, "Write the result here");
    ind_gen->add_flag("--candidates-only", candidates_only, "Skip summarization");

    auto* ind_sum = ind->add_subcommand("summarize", "Fuse saved candidate lists into one indicator summary");
    ParamFlags sum_params;
    sum_params.add_to(ind_sum);
    std::vector<std::string> candidate_files;
    std::string sum_out, sum_model;
    ind_sum->add_option("candidates", candidate_files, "Candidate set JSON files")->required()->check(CLI::ExistingFile);
    ind_sum->add_option("--summarizer", sum_model, "Model used to fuse candidate lists");
    ind_sum->add_option("-o,--out", sum_out, "Write the indicator set here");

    // generate
    auto* gen = app.add_subcommand("generate", "Plan and run a batched generation job");
    ParamFlags gen_params;
    gen_params.add_to(gen);
    std::string seeds_file, indicators_file, job_dir, gen_out, gen_model, task_file, critical_file;
    std::size_t count = 100, per_request = 100, seeds_per_batch = 10;
    std::optional<double> temperature;
    std::optional<std::uint64_t> seed_rng;
    bool plan_only = false;
    gen->add_option("--seeds", seeds_file, "Seed messages (jsonl, csv or json)")->check(CLI::ExistingFile);
    gen->add_option("--indicators", indicators_file, "Indicator set (json) or plain-text summary")->required()->check(CLI::ExistingFile);
    gen->add_option("--count", count, "Messages to generate")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--temperature", temperature, "Sampling temperature (default 0.8)")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--seed-rng", seed_rng, "Seed for batch shuffling");
    gen->add_option("--per-request", per_request, "Messages asked for per request")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--batch-size", seeds_per_batch, "Seed messages per prompt")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--model", gen_model, "Generation model (default: config role)");
    gen->add_option("--job-dir", job_dir, "Job directory; rerunning with the same directory resumes");
    gen->add_option("-o,--out", gen_out, "Write generated messages here");
    gen->add_option("--task-file", task_file, "Replace the task description (see templates/)")->check(CLI::ExistingFile);
    gen->add_option("--critical-file", critical_file, "Replace the critical instructions, one per line")->check(CLI::ExistingFile);
    gen->add_flag("--plan-only", plan_only, "Print the plan without calling any model");

    // dedup
    auto* dd = app.add_subcommand("dedup", "Exact plus embedding-similarity deduplication");
    std::string dd_in, dd_out, dd_filtered, dd_store, dd_session = "cli";
    double dd_threshold = 0.9;
    std::size_t dd_batch = 100;
    double dd_ttl_hours = 24;
    dd->add_option("input", dd_in, "Messages to deduplicate")->required()->check(CLI::ExistingFile);
    dd->add_option("--threshold", dd_threshold, "Similarity threshold (0, 1]")->capture_default_str();
    dd->add_option("--batch-size", dd_batch, "Embedding batch size")->capture_default_str()->check(CLI::PositiveNumber);
    dd->add_option("--session", dd_session, "Session key for stored embeddings")->capture_default_str();
    dd->add_option("--ttl-hours", dd_ttl_hours, "Embedding record lifetime")->capture_default_str()->check(CLI::PositiveNumber);
    dd->add_option("--store", dd_store, "SQLite embedding store (default: in-memory)");
    dd->add_option("-o,--out", dd_out, "Write retained messages here");
    dd->add_option("--filtered-out", dd_filtered, "Write removed messages here");

    // annotate
    auto* an = app.add_subcommand("annotate", "Score messages with an annotation model");
    ParamFlags an_params;
    an_params.add_to(an);
    std::string an_in, an_ind, an_model, an_out, an_review;
    std::size_t an_chunk = 10;
    an->add_option("input", an_in, "Messages to score")->required()->check(CLI::ExistingFile);
    an->add_option("--indicators", an_ind, "Indicator set (json) or plain-text summary")->required()->check(CLI::ExistingFile);
    an->add_option("--model", an_model, "Annotation model (default: config role)");
    an->add_option("--chunk-size", an_chunk, "Messages per request")->capture_default_str()->check(CLI::PositiveNumber);
    an->add_option("-o,--out", an_out, "Write scored messages here");
    an->add_option("--review-csv", an_review, "Write a review sheet with an empty human_label column");

    // validate
    auto* va = app.add_subcommand("validate", "Accuracy of annotation scores against human labels");
    std::string va_review, va_labels, va_scores;
    double va_threshold = 0.5;
    va->add_option("--review", va_review, "Filled-in review sheet")->check(CLI::ExistingFile);
    va->add_option("--labels", va_labels, "Human labels (csv message_id,label or json map)")->check(CLI::ExistingFile);
    va->add_option("--scores", va_scores, "Scores (csv, json map or scored messages)")->check(CLI::ExistingFile);
    va->add_option("--threshold", va_threshold, "Decision threshold")->capture_default_str();

    // metrics
    auto* me = app.add_subcommand("metrics", "Quality metrics");
    me->require_subcommand(1);
    auto* sb = me->add_subcommand("self-bleu", "Mean BLEU of each document against the rest");
    std::string sb_in;
    int sb_order = 4;
    std::optional<std::size_t> sb_sample;
    std::uint64_t sb_seed = 0;
    bool sb_scores = false;
    sb->add_option("input", sb_in, "Messages")->required()->check(CLI::ExistingFile);
    sb->add_option("--order", sb_order, "Maximum n-gram order")->capture_default_str()->check(CLI::Range(1, 8));
    sb->add_option("--sample", sb_sample, "Documents to score (seeded sample)");
    sb->add_option("--seed", sb_seed, "Sampling seed")->capture_default_str();
    sb->add_flag("--scores", sb_scores, "Include per-document scores in JSON output");

    auto* rt = me->add_subcommand("retention", "Retention across temperatures and thresholds");
    ParamFlags rt_params;
    rt_params.add_to(rt);
    std::string rt_seeds, rt_ind, rt_temps = "0.6,0.8,1.0", rt_thresholds = "0.85,0.9,0.95", rt_work = "eltex-retention";
    std::size_t rt_count = 100;
    std::optional<std::uint64_t> rt_seed;
    rt->add_option("--seeds", rt_seeds, "Seed messages")->check(CLI::ExistingFile);
    rt->add_option("--indicators", rt_ind, "Indicator set")->required()->check(CLI::ExistingFile);
    rt->add_option("--temperatures", rt_temps, "Comma-separated temperatures")->capture_default_str();
    rt->add_option("--thresholds", rt_thresholds, "Comma-separated dedup thresholds")->capture_default_str();
    rt->add_option("--count", rt_count, "Messages generated per temperature")->capture_default_str()->check(CLI::PositiveNumber);
    rt->add_option("--seed-rng", rt_seed, "Seed for batch shuffling");
    rt->add_option("--work-dir", rt_work, "Where generation jobs are written")->capture_default_str();

    auto* cl = me->add_subcommand("cluster", "DBSCAN over message embeddings");
    std::string cl_in, cl_labels;
    double cl_eps = 0.2;
    std::size_t cl_min = 5;
    cl->add_option("input", cl_in, "Messages")->required()->check(CLI::ExistingFile);
    cl->add_option("--eps", cl_eps, "Cosine distance radius")->capture_default_str();
    cl->add_option("--min-points", cl_min, "Core point threshold")->capture_default_str()->check(CLI::PositiveNumber);
    cl->add_option("--labels-out", cl_labels, "Write message_id,cluster rows here");

    auto* ev = me->add_subcommand("eval", "Classifier metrics from predictions and gold labels");
    std::string ev_pred, ev_gold, ev_confusion;
    double ev_threshold = 0.5;
    ev->add_option("--predictions", ev_pred, "Predicted probabilities")->required()->check(CLI::ExistingFile);
    ev->add_option("--gold", ev_gold, "Gold labels")->required()->check(CLI::ExistingFile);
    ev->add_option("--threshold", ev_threshold, "Decision threshold")->capture_default_str();
    ev->add_option("--confusion-csv", ev_confusion, "Write the confusion matrix here");

    auto* co = me->add_subcommand("cost", "API cost from token counts");
    std::int64_t co_in = 0, co_out = 0;
    std::optional<std::size_t> co_messages;
    std::string co_usage;
    PricingModel pricing;
    co->add_option("--in", co_in, "Input tokens")->check(CLI::NonNegativeNumber);
    co->add_option("--out", co_out, "Output tokens")->check(CLI::NonNegativeNumber);
    co->add_option("--usage", co_usage, "Take token counts from a job's result.json")->check(CLI::ExistingFile);
    co->add_option("--messages", co_messages, "Divide by this many messages for a per-message figure");
    co->add_option("--input-price", pricing.input_price_per_million, "USD per million input tokens")->capture_default_str();
    co->add_option("--output-price", pricing.output_price_per_million, "USD per million output tokens")->capture_default_str();

    auto* st = me->add_subcommand("stats", "Dataset composition");
    std::string st_in;
    st->add_option("input", st_in, "Messages")->required()->check(CLI::ExistingFile);

    // serve
    auto* sv = app.add_subcommand("serve", "Run the REST service");
    std::optional<std::string> sv_host, sv_data, sv_static;
    std::optional<int> sv_port;
    bool sv_quiet = false;
    sv->add_option("--host", sv_host, "Bind address");
    sv->add_option("--port", sv_port, "Port (default 8080)");
    sv->add_option("--data-dir", sv_data, "Data directory");
    sv->add_option("--static-dir", sv_static, "Built web UI to serve under /ui");
    sv->add_flag("--quiet", sv_quiet, "No access log");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    }

    Output o{out, as_json};
    try {
        auto cfg = AppConfig::discover(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path));

        if (ind_gen->parsed()) {
            auto params = ind_params.params(cfg);
            BackgroundContext ctx;
            if (!knowledge_file.empty()) ctx.general_knowledge = BackgroundContext::parse_knowledge(read_file(knowledge_file));
            if (!events_file.empty()) ctx.historical_events = BackgroundContext::parse_events(read_file(events_file));
            ctx.validate();
            auto providers = split_list(ind_providers);
            if (providers.empty()) providers = cfg.role_models(roles::kIndicatorGeneration);
            auto gw = cfg.make_gateway();
            json result;
            if (candidates_only) {
                CandidateOptions c;
                if (!archive_dir.empty()) c.archive_dir = archive_dir;
                auto r = generate_candidates(params, ctx, providers, *gw, c);
                IndicatorStageResult wrap{r, {}};
                result = wrap.to_json();
                result.erase("indicators");
            } else {
                IndicatorStageOptions so;
                so.providers = providers;
                if (!summarizer.empty()) so.summarizer = summarizer;
                if (!archive_dir.empty()) so.archive_dir = archive_dir;
                result = run_indicator_stage(params, ctx, *gw, cfg, so).to_json();
            }
            if (!ind_out.empty()) write_json_file(ind_out, candidates_only ? result : result["indicators"]);
            o.emit(result, [&] {
                out << result["candidates"].size() << " candidate list(s)";
                if (!result["failures"].empty()) out << ", " << result["failures"].size() << " provider failure(s)";
                out << "\n";
                for (const auto& f : result["failures"]) {
                    out << "  failed: " << f["provider"].get<std::string>() << " (" << f["kind"].get<std::string>() << ")\n";
                }
                if (result.contains("indicators")) out << "\n" << result["indicators"]["summary"].get<std::string>() << "\n";
            });
            return 0;
        }

        if (ind_sum->parsed()) {
            auto params = sum_params.params(cfg);
            std::vector<IndicatorCandidateSet> cands;
            for (const auto& f : candidate_files) cands.push_back(candidate_set_from_json(json::parse(read_file(f))));
            auto gw = cfg.make_gateway();
            auto model = sum_model.empty() ? params.provider_models.at(std::string(roles::kSummarization)) : sum_model;
            auto set = summarize_indicators(cands, *gw, model, params);
            auto j = to_json(set);
            if (!sum_out.empty()) write_json_file(sum_out, j);
            o.emit(j, [&] { out << set.summary << "\n"; });
            return 0;
        }

        if (gen->parsed()) {
            auto params = gen_params.params(cfg);
            params.target_size = count;
            if (temperature) params.temperature = *temperature;
            params.rng_seed = seed_rng;
            if (!gen_model.empty()) params.provider_models[std::string(roles::kGeneration)] = gen_model;
            params.validate();
            std::vector<Message> seeds;
            if (!seeds_file.empty()) seeds = load_messages(seeds_file, Source::seed);
            PlanOptions po;
            po.per_request_count = per_request;
            po.batch_size = seeds_per_batch;
            auto tmpl = task_file.empty() && critical_file.empty()
                            ? template_for(params)
                            : PromptTemplate::from_files(params.category, PromptVariables::from(params), task_file, critical_file);
            auto plan = plan_job(params, seeds, tmpl, load_indicators(indicators_file), po);
            if (plan_only) {
                json pj = {{"job_id", plan.job_id},
                           {"requests", plan.requests.size()},
                           {"target_total", plan.target_total},
                           {"rng_seed", plan.rng_seed}};
                json counts = json::array();
                for (const auto& r : plan.requests) counts.push_back(r.count);
                pj["request_counts"] = counts;
                json batches = json::array();
                for (const auto& b : plan.batches) batches.push_back(b.messages.size());
                pj["batch_sizes"] = batches;
                auto table = pj;
                if (!plan.requests.empty()) pj["first_prompt"] = plan.requests.front().prompt;
                o.emit(pj, [&] { print_table(out, table); });
                return 0;
            }
            fs::path dir = job_dir.empty() ? fs::path("eltex-jobs") / plan.job_id : fs::path(job_dir);
            auto gw = cfg.make_gateway();
            RunOptions ro;
            if (!as_json) {
                ro.on_progress = [&err](const JobStatus& s) {
                    err << "\r" << s.requests_done << "/" << s.requests_total << " requests, " << s.messages_so_far
                        << " messages" << std::flush;
                };
            }
            auto result = run_job(plan, *gw, dir, ro);
            if (!as_json) err << "\n";
            if (!gen_out.empty()) write_output(gen_out, result.produced);
            auto j = to_json(result);
            j["job_dir"] = dir.string();
            j["cost"] = estimate_cost(result.usage, {}, result.produced.size()).to_json();
            o.emit(j, [&] {
                out << "job " << result.job_id << ": " << result.produced.size() << " messages from "
                    << result.per_request_counts.size() << " requests";
                if (!result.failures.empty()) out << " (" << result.failures.size() << " failed)";
                out << "\noutput in " << (gen_out.empty() ? (dir / "produced.jsonl").string() : gen_out) << "\n";
            });
            return 0;
        }

        if (dd->parsed()) {
            DedupConfig dc;
            dc.threshold = dd_threshold;
            dc.batch_size = dd_batch;
            dc.ttl = std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(dd_ttl_hours * 3600'000.0)));
            dc.validate();
            auto msgs = load_messages(dd_in, Source::synthetic, nullptr, true);
            auto emb = cfg.make_embedder();
            std::unique_ptr<EmbeddingStore> store;
            if (dd_store.empty()) store = std::make_unique<MemoryEmbeddingStore>();
            else store = std::make_unique<SqliteEmbeddingStore>(dd_store);
            SystemClock clock;
            purge_expired(*store, clock.now());
            auto outcome = dedup_pipeline(msgs, dd_session, dc, *emb, *store, clock);
            if (!dd_out.empty()) write_output(dd_out, outcome.retained.messages());
            if (!dd_filtered.empty()) write_output(dd_filtered, outcome.filtered);
            auto j = outcome.report.to_json();
            o.emit(j, [&] { print_table(out, j); });
            return 0;
        }

        if (an->parsed()) {
            auto params = an_params.params(cfg);
            auto msgs = load_messages(an_in, Source::synthetic);
            auto gw = cfg.make_gateway();
            AnnotationOptions ao;
            ao.chunk_size = an_chunk;
            ao.variables = PromptVariables::from(params);
            auto model = an_model.empty() ? cfg.role_model(roles::kAnnotation) : an_model;
            auto r = annotate(msgs, load_indicators(an_ind), *gw, model, ao);
            for (std::size_t i = 0; i < msgs.size(); ++i) msgs[i].score = r.records[i].score;
            if (!an_out.empty()) write_output(an_out, msgs);
            if (!an_review.empty()) write_file_atomic(an_review, export_review_csv(msgs, r.records));
            json warnings = json::array();
            for (const auto& w : r.warnings) warnings.push_back({{"message_id", w.message_id}, {"kind", w.kind}, {"detail", w.detail}});
            json j = {{"annotated", r.records.size()}, {"model", model}, {"retries", r.retries}, {"warnings", warnings}};
            if (an_out.empty()) {
                json recs = json::array();
                for (const auto& rec : r.records) recs.push_back({{"message_id", rec.message_id}, {"score", rec.score}});
                j["records"] = recs;
            }
            o.emit(j, [&] {
                out << r.records.size() << " message(s) scored by " << model << ", " << r.warnings.size() << " warning(s)\n";
                if (an_out.empty()) {
                    for (const auto& rec : r.records) out << rec.message_id.substr(0, 12) << "  " << fixed(rec.score, 3) << "\n";
                }
            });
            return 0;
        }

        if (va->parsed()) {
            ValidationInput v;
            if (!va_review.empty()) {
                v = validation_input_from_review(import_review_csv(read_file(va_review)), va_threshold);
            } else {
                if (va_labels.empty() || va_scores.empty()) throw ValidationError("give --review, or both --labels and --scores");
                auto scores = load_scores(va_scores);
                v.threshold = va_threshold;
                for (const auto& [id, label] : load_labels(va_labels)) {
                    v.truths.push_back({id, label});
                    auto it = scores.find(id);
                    if (it != scores.end()) v.annotations.push_back({id, it->second, ""});
                }
                for (const auto& [id, s] : scores) {
                    if (std::none_of(v.truths.begin(), v.truths.end(), [&](const auto& t) { return t.message_id == id; })) {
                        v.annotations.push_back({id, s, ""});
                    }
                }
            }
            double acc = accuracy(v);
            json j = {{"accuracy", acc}, {"n", v.truths.size()}, {"threshold", v.threshold}};
            o.emit(j, [&] { out << "accuracy  " << fixed(acc, 2) << "\nn         " << v.truths.size() << "\n"; });
            return 0;
        }

        if (sb->parsed()) {
            std::vector<std::string> corpus;
            for (const auto& m : load_messages(sb_in, Source::synthetic, nullptr, true)) corpus.push_back(m.content);
            auto r = self_bleu(corpus, sb_order, sb_sample ? sb_sample : std::optional<std::size_t>(1000), sb_seed);
            auto j = r.to_json(sb_scores);
            o.emit(j, [&] { print_table(out, r.to_json(false)); });
            return 0;
        }

        if (rt->parsed()) {
            auto params = rt_params.params(cfg);
            params.rng_seed = rt_seed;
            std::vector<Message> seeds;
            if (!rt_seeds.empty()) seeds = load_messages(rt_seeds, Source::seed);
            auto gw = cfg.make_gateway();
            auto emb = cfg.make_embedder();
            RetentionOptions ro;
            ro.target_size = rt_count;
            ro.work_dir = rt_work;
            auto r = retention_experiment(seeds, template_for(params), load_indicators(rt_ind), params, split_doubles(rt_temps),
                                          split_doubles(rt_thresholds), *gw, *emb, ro);
            auto j = r.to_json();
            o.emit(j, [&] {
                out << "temperature  threshold  received  retained  retention%\n";
                for (const auto& c : r.cells) {
                    out << std::setw(11) << fixed(c.temperature, 2) << "  " << std::setw(9) << fixed(c.threshold, 2) << "  "
                        << std::setw(8) << c.received << "  " << std::setw(8) << c.retained << "  " << std::setw(10)
                        << fixed(c.retention_pct, 1) << "\n";
                }
                for (const auto& n : r.notes) out << "note: " << n << "\n";
            });
            return 0;
        }

        if (cl->parsed()) {
            auto msgs = load_messages(cl_in, Source::synthetic);
            std::vector<std::string> texts;
            for (const auto& m : msgs) texts.push_back(m.content);
            auto emb = cfg.make_embedder();
            auto r = cluster_analysis(emb->embed_batch(texts), cl_eps, cl_min);
            if (!cl_labels.empty()) {
                std::string csv = csv_row({"message_id", "cluster"});
                for (std::size_t i = 0; i < msgs.size(); ++i) csv += csv_row({msgs[i].id, std::to_string(r.labels[i])});
                write_file_atomic(cl_labels, csv);
            }
            auto j = r.to_json();
            o.emit(j, [&] {
                out << "clusters  " << r.n_clusters << "\nnoise     " << r.noise_count << " of " << r.labels.size() << "\n";
            });
            return 0;
        }

        if (ev->parsed()) {
            auto m = eval_classifier(load_scores(ev_pred), load_labels(ev_gold), ev_threshold);
            if (!ev_confusion.empty()) write_file_atomic(ev_confusion, m.confusion_csv());
            auto j = m.to_json();
            o.emit(j, [&] { print_table(out, j); });
            return 0;
        }

        if (co->parsed()) {
            pricing.validate();
            CostEstimate c;
            if (!co_usage.empty()) {
                auto j = json::parse(read_file(co_usage));
                c = estimate_cost(CostLedger::from_json(j.contains("usage") ? j["usage"] : j), pricing, co_messages);
            } else {
                c = estimate_cost(co_in, co_out, pricing, co_messages);
            }
            auto j = c.to_json();
            o.emit(j, [&] {
                out << "input    " << c.input_tokens << " tokens  $" << fixed(c.input_cost, 4) << "\n"
                    << "output   " << c.output_tokens << " tokens  $" << fixed(c.output_cost, 4) << "\n"
                    << "total    $" << fixed(c.total, 3) << "\n";
                if (c.per_message) out << "per msg  $" << fixed(*c.per_message, 6) << "\n";
            });
            return 0;
        }

        if (st->parsed()) {
            auto s = dataset_stats(load_messages(st_in, Source::synthetic, nullptr, true));
            auto j = s.to_json();
            o.emit(j, [&] { print_table(out, j); });
            return 0;
        }

        if (sv->parsed()) {
            if (sv_host) cfg.service.host = *sv_host;
            if (sv_port) cfg.service.port = *sv_port;
            if (sv_data) cfg.service.data_dir = *sv_data;
            if (sv_static) cfg.service.static_dir = *sv_static;
            cfg.service.access_log = !sv_quiet;
            Service service(cfg);
            int port = service.bind(cfg.service.host, cfg.service.port);
            err << "listening on http://" << cfg.service.host << ":" << port << " (data in " << cfg.service.data_dir.string()
                << ")\n";
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.run();
            g_service = nullptr;
            return 0;
        }
    } catch (const std::exception& e) {
        int code = exit_code_for(e);
        json j = {{"error", {{"kind", kind_for(code)}, {"message", e.what()}}}};
        err << j.dump() << "\n";
        return code;
    }
    return 2;
}

}  // namespace eltex::cli
