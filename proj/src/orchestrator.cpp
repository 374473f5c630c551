#include "eltex/orchestrator.hpp"

#include <condition_variable>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "eltex/dataset_io.hpp"
#include "eltex/rng.hpp"

namespace eltex {

namespace fs = std::filesystem;

namespace {

fs::path raw_path(const fs::path& job_dir, std::size_t index) {
    char name[32];
    std::snprintf(name, sizeof name, "request_%04zu.json", index);
    return job_dir / "raw" / name;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void GenerationPlan::validate() const {
    if (requests.empty()) throw ValidationError("plan has no requests");
    if (per_request_count < 1) throw ValidationError("per_request_count must be at least 1");
    for (const auto& r : requests) {
        if (r.batch_index && *r.batch_index >= batches.size()) {
            throw ValidationError("request " + std::to_string(r.index) + " refers to a missing seed batch");
        }
    }
}

nlohmann::json to_json(const GenerationPlan& plan) {
    nlohmann::json batches = nlohmann::json::array();
    for (const auto& b : plan.batches) {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : b.messages) msgs.push_back(to_json(m));
        batches.push_back({{"batch_index", b.batch_index}, {"messages", msgs}});
    }
    nlohmann::json requests = nlohmann::json::array();
    for (const auto& r : plan.requests) {
        requests.push_back({{"index", r.index},
                            {"batch_index", r.batch_index ? nlohmann::json(*r.batch_index) : nlohmann::json()},
                            {"count", r.count},
                            {"model", r.model},
                            {"temperature", r.temperature},
                            {"prompt", r.prompt},
                            {"fallback_prompt", r.fallback_prompt}});
    }
    return {{"job_id", plan.job_id},
            {"category", plan.category},
            {"per_request_count", plan.per_request_count},
            {"target_total", plan.target_total},
            {"batch_size", plan.batch_size},
            {"rng_seed", plan.rng_seed},
            {"batches", batches},
            {"requests", requests}};
}

GenerationPlan generation_plan_from_json(const nlohmann::json& j) {
    GenerationPlan p;
    try {
        p.job_id = j.at("job_id").get<std::string>();
        p.category = j.value("category", std::string(kTargetCategory));
        p.per_request_count = j.at("per_request_count").get<std::size_t>();
        p.target_total = j.at("target_total").get<std::size_t>();
        p.batch_size = j.value("batch_size", std::size_t{10});
        p.rng_seed = j.value("rng_seed", std::uint64_t{0});
        for (const auto& b : j.at("batches")) {
            SeedBatch sb;
            sb.batch_index = b.at("batch_index").get<std::size_t>();
            for (const auto& m : b.at("messages")) sb.messages.push_back(message_from_json(m));
            p.batches.push_back(std::move(sb));
        }
        for (const auto& r : j.at("requests")) {
            GenerationRequest g;
            g.index = r.at("index").get<std::size_t>();
            if (!r.at("batch_index").is_null()) g.batch_index = r["batch_index"].get<std::size_t>();
            g.count = r.at("count").get<std::size_t>();
            g.model = r.at("model").get<std::string>();
            g.temperature = r.at("temperature").get<double>();
            g.prompt = r.at("prompt").get<std::string>();
            g.fallback_prompt = r.at("fallback_prompt").get<std::string>();
            p.requests.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed plan: ") + e.what());
    }
    p.validate();
    return p;
}

GenerationPlan plan_job(const GenerationParams& params, const std::vector<Message>& seeds,
                        const PromptTemplate& tmpl, const IndicatorSet& indicators, const PlanOptions& options) {
    params.validate();
    if (params.target_size < 1) throw ValidationError("target_size must be at least 1");
    if (options.per_request_count < 1) throw ValidationError("per_request_count must be at least 1");
    indicators.validate();
    auto model_it = params.provider_models.find(std::string(roles::kGeneration));
    if (model_it == params.provider_models.end() || model_it->second.empty()) {
        throw ValidationError("no model configured for the 'generation' role");
    }
    if (seeds.empty() && params.description.empty()) {
        throw ValidationError("seedless generation needs a description");
    }

    GenerationPlan plan;
    plan.category = params.category;
    plan.per_request_count = options.per_request_count;
    plan.target_total = params.target_size;
    plan.batch_size = options.batch_size;
    plan.rng_seed = params.rng_seed ? *params.rng_seed : std::random_device{}();
    if (!seeds.empty()) plan.batches = shuffle_and_batch(seeds, options.batch_size, plan.rng_seed);

    std::size_t n = (params.target_size + options.per_request_count - 1) / options.per_request_count;
    for (std::size_t i = 0; i < n; ++i) {
        GenerationRequest r;
        r.index = i;
        r.count = std::min(options.per_request_count, params.target_size - i * options.per_request_count);
        r.model = model_it->second;
        r.temperature = params.temperature;
        if (!plan.batches.empty()) r.batch_index = i % plan.batches.size();

        PromptTemplate t = tmpl;
        t.output_count = r.count;
        const SeedBatch* batch = r.batch_index ? &plan.batches[*r.batch_index] : nullptr;
        r.prompt = build_generation_prompt(t, indicators, batch, params.description);
        if (!t.alignment_clause) t.alignment_clause = std::string(kDefaultAlignmentClause);
        r.fallback_prompt = build_generation_prompt(t, indicators, batch, params.description);
        plan.requests.push_back(std::move(r));
    }

    if (options.job_id) {
        plan.job_id = *options.job_id;
    } else {
        plan.job_id = "job-" + hex64(fnv1a(to_json(plan).dump()));
    }
    return plan;
}

std::vector<Message> parse_generation_output(const nlohmann::json& raw, std::string_view category, ParseStats* stats,
                                             const std::optional<std::string>& session_id) {
    if (!raw.is_array()) throw ValidationError("generation output is not a JSON array");
    ParseStats local;
    std::vector<Message> out;
    for (const auto& item : raw) {
        std::string text;
        if (item.is_string()) {
            text = item.get<std::string>();
        } else if (item.is_object()) {
            const nlohmann::json* v = nullptr;
            for (const char* key : {"message", "content", "text"}) {
                if (item.contains(key) && item[key].is_string()) {
                    v = &item[key];
                    break;
                }
            }
            if (!v) {
                ++local.dropped_invalid;
                continue;
            }
            text = v->get<std::string>();
        } else {
            ++local.dropped_invalid;
            continue;
        }
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
            ++local.dropped_empty;
            continue;
        }
        auto m = Message::make(std::move(text), Source::synthetic, std::string(category));
        m.session_id = session_id;
        out.push_back(std::move(m));
    }
    if (stats) *stats = local;
    return out;
}

nlohmann::json to_json(const JobResult& r) {
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : r.failures) failures.push_back({{"index", f.index}, {"kind", f.kind}, {"message", f.message}});
    return {{"job_id", r.job_id},
            {"produced", r.produced.size()},
            {"per_request_counts", r.per_request_counts},
            {"failures", failures},
            {"dropped_empty", r.dropped_empty},
            {"refusal_retries", r.refusal_retries},
            {"usage", r.usage.to_json()}};
}

std::string_view to_string(JobState s) {
    switch (s) {
        case JobState::pending: return "pending";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "pending";
}

JobState parse_job_state(std::string_view s) {
    for (auto st : {JobState::pending, JobState::running, JobState::done, JobState::failed}) {
        if (to_string(st) == s) return st;
    }
    throw ValidationError("unknown job state '" + std::string(s) + "'");
}

nlohmann::json to_json(const JobStatus& s) {
    nlohmann::json j = {{"job_id", s.job_id},
                        {"state", to_string(s.state)},
                        {"requests_done", s.requests_done},
                        {"requests_total", s.requests_total},
                        {"messages_so_far", s.messages_so_far},
                        {"failures", s.failures}};
    if (!s.error.empty()) j["error"] = s.error;
    return j;
}

JobStatus job_status_from_json(const nlohmann::json& j) {
    JobStatus s;
    s.job_id = j.at("job_id").get<std::string>();
    s.state = parse_job_state(j.at("state").get<std::string>());
    s.requests_done = j.value("requests_done", std::size_t{0});
    s.requests_total = j.value("requests_total", std::size_t{0});
    s.messages_so_far = j.value("messages_so_far", std::size_t{0});
    s.failures = j.value("failures", std::size_t{0});
    s.error = j.value("error", "");
    return s;
}

namespace {

struct RequestRecord {
    std::size_t index = 0;
    bool ok = false;
    std::string kind;
    std::string error;
    std::vector<std::string> messages;
    std::size_t dropped_empty = 0;
    bool used_fallback = false;
    std::optional<ChatResponse> response;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"index", index},
                            {"status", ok ? "ok" : "failed"},
                            {"messages", messages},
                            {"dropped_empty", dropped_empty},
                            {"used_fallback", used_fallback}};
        if (!ok) j["error"] = {{"kind", kind}, {"message", error}};
        if (response) {
            j["model"] = response->model;
            j["finish_reason"] = eltex::to_string(response->finish_reason);
            j["usage"] = {{"input_tokens", response->usage.input_tokens},
                          {"output_tokens", response->usage.output_tokens},
                          {"estimated", response->usage.estimated}};
            j["raw_text"] = response->text;
        }
        return j;
    }

    static RequestRecord from_json(const nlohmann::json& j) {
        RequestRecord r;
        r.index = j.at("index").get<std::size_t>();
        r.ok = j.at("status").get<std::string>() == "ok";
        r.messages = j.value("messages", std::vector<std::string>{});
        r.dropped_empty = j.value("dropped_empty", std::size_t{0});
        r.used_fallback = j.value("used_fallback", false);
        if (j.contains("error")) {
            r.kind = j["error"].value("kind", "");
            r.error = j["error"].value("message", "");
        }
        if (j.contains("model")) {
            ChatResponse c;
            c.model = j["model"].get<std::string>();
            c.finish_reason = parse_finish_reason(j.value("finish_reason", "complete"));
            c.text = j.value("raw_text", "");
            if (j.contains("usage")) {
                c.usage.input_tokens = j["usage"].value("input_tokens", std::int64_t{0});
                c.usage.output_tokens = j["usage"].value("output_tokens", std::int64_t{0});
                c.usage.estimated = j["usage"].value("estimated", false);
            }
            r.response = c;
        }
        return r;
    }
};

std::map<std::size_t, RequestRecord> load_records(const fs::path& job_dir) {
    std::map<std::size_t, RequestRecord> out;
    auto dir = job_dir / "raw";
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        auto j = nlohmann::json::parse(read_file(entry.path()), nullptr, false);
        if (j.is_discarded()) continue;  // torn write from a crash; the request is simply re-run
        auto rec = RequestRecord::from_json(j);
        out[rec.index] = std::move(rec);
    }
    return out;
}

ChatRequest to_chat(const GenerationRequest& r, bool fallback) {
    ChatRequest c;
    c.model = r.model;
    c.user_prompt = fallback ? r.fallback_prompt : r.prompt;
    c.temperature = r.temperature;
    c.response_schema = schemas::generated_messages(r.count);
    return c;
}

JobResult assemble(const std::string& job_id, const std::string& category, std::size_t total,
                   const std::map<std::size_t, RequestRecord>& records, const std::optional<std::string>& session_id) {
    JobResult res;
    res.job_id = job_id;
    res.per_request_counts.assign(total, 0);
    for (const auto& [idx, rec] : records) {
        if (rec.response) res.usage.add(*rec.response);
        if (rec.used_fallback) ++res.refusal_retries;
        if (!rec.ok) {
            res.failures.push_back({idx, rec.kind, rec.error});
            continue;
        }
        if (idx < total) res.per_request_counts[idx] = rec.messages.size();
        res.dropped_empty += rec.dropped_empty;
        for (const auto& text : rec.messages) {
            auto m = Message::make(text, Source::synthetic, category);
            m.session_id = session_id;
            res.produced.push_back(std::move(m));
        }
    }
    return res;
}

}  // namespace

JobResult run_job(const GenerationPlan& plan, Gateway& gateway, const fs::path& job_dir, const RunOptions& options) {
    plan.validate();
    fs::create_directories(job_dir / "raw");
    write_file_atomic(job_dir / "plan.json", to_json(plan).dump(2) + "\n");

    auto records = load_records(job_dir);
    std::size_t total = plan.requests.size();

    JobStatus status;
    status.job_id = plan.job_id;
    status.state = JobState::running;
    status.requests_total = total;
    auto refresh = [&] {
        status.requests_done = 0;
        status.messages_so_far = 0;
        status.failures = 0;
        for (const auto& [idx, rec] : records) {
            if (!rec.ok) {
                ++status.failures;
                continue;
            }
            ++status.requests_done;
            status.messages_so_far += rec.messages.size();
        }
    };
    auto publish = [&] {
        write_file_atomic(job_dir / "status.json", to_json(status).dump(2) + "\n");
        if (options.on_progress) options.on_progress(status);
    };

    std::vector<std::size_t> pending;
    for (const auto& r : plan.requests) {
        auto it = records.find(r.index);
        if (it == records.end() || !it->second.ok) {
            records.erase(r.index);
            pending.push_back(r.index);
        }
    }
    refresh();
    publish();

    auto persist = [&](RequestRecord rec) {
        write_file_atomic(raw_path(job_dir, rec.index), rec.to_json().dump(2) + "\n");
        if (rec.ok && !rec.messages.empty()) {
            std::string lines;
            for (const auto& text : rec.messages) {
                auto m = Message::make(text, Source::synthetic, plan.category);
                m.session_id = options.session_id;
                lines += to_json(m).dump() + "\n";
            }
            append_file(job_dir / "produced.jsonl", lines);
        }
        auto idx = rec.index;
        records[idx] = std::move(rec);
        refresh();
        publish();
        if (options.on_request_persisted) options.on_request_persisted(idx);
    };

    // Returns true when the request should be re-sent with the alignment clause.
    auto handle = [&](std::size_t index, const BatchEntry& entry, bool fallback) -> bool {
        RequestRecord rec;
        rec.index = index;
        rec.used_fallback = fallback;
        if (!entry.ok()) {
            rec.kind = entry.error().kind;
            rec.error = entry.error().message;
            persist(std::move(rec));
            return false;
        }
        const auto& resp = entry.response();
        rec.response = resp;
        if (resp.finish_reason == FinishReason::refused) {
            if (!fallback) return true;
            rec.kind = "refused";
            rec.error = "model refused after the alignment clause was added";
            persist(std::move(rec));
            return false;
        }
        try {
            auto value = parse_structured(resp.text, schemas::generated_messages(plan.requests[index].count));
            ParseStats stats;
            auto msgs = parse_generation_output(value, plan.category, &stats);
            for (auto& m : msgs) rec.messages.push_back(std::move(m.content));
            rec.dropped_empty = stats.dropped_empty;
            rec.ok = true;
        } catch (const Error& e) {
            rec.kind = resp.finish_reason == FinishReason::truncated ? "truncated" : "malformed";
            rec.error = e.what();
        }
        persist(std::move(rec));
        return false;
    };

    auto run_batch = [&](const std::vector<std::size_t>& indices, bool fallback) {
        std::vector<std::size_t> retry;
        if (indices.empty()) return retry;
        std::vector<ChatRequest> reqs;
        for (auto i : indices) reqs.push_back(to_chat(plan.requests[i], fallback));
        auto h = gateway.submit_batch(std::move(reqs));
        std::vector<bool> seen(indices.size(), false);
        std::size_t handled = 0;
        while (handled < indices.size()) {
            auto st = gateway.wait_for_progress(h, handled);
            for (const auto& entry : st.results) {
                if (seen[entry.index]) continue;
                seen[entry.index] = true;
                ++handled;
                if (handle(indices[entry.index], entry, fallback)) retry.push_back(indices[entry.index]);
            }
        }
        return retry;
    };

    try {
        auto refused = run_batch(pending, false);
        std::sort(refused.begin(), refused.end());
        run_batch(refused, true);
    } catch (const std::exception& e) {
        status.state = JobState::failed;
        status.error = e.what();
        publish();
        throw;
    }

    auto result = assemble(plan.job_id, plan.category, total, records, options.session_id);
    write_file_atomic(job_dir / "produced.jsonl", serialize_messages(result.produced, DataFormat::jsonl));
    write_file_atomic(job_dir / "result.json", to_json(result).dump(2) + "\n");

    bool any_ok = false;
    for (const auto& [idx, rec] : records) any_ok = any_ok || rec.ok;
    status.state = any_ok ? JobState::done : JobState::failed;
    if (!any_ok) status.error = "all generation requests failed";
    publish();
    if (!any_ok) throw BackendError("all " + std::to_string(total) + " generation requests failed");
    return result;
}

JobStatus job_status(const fs::path& job_dir) {
    auto p = job_dir / "status.json";
    if (!fs::exists(p)) throw NotFoundError("no job at " + job_dir.string());
    return job_status_from_json(nlohmann::json::parse(read_file(p)));
}

JobResult load_job_result(const fs::path& job_dir, const std::optional<std::string>& session_id) {
    auto plan_file = job_dir / "plan.json";
    if (!fs::exists(plan_file)) throw NotFoundError("no job at " + job_dir.string());
    auto plan = generation_plan_from_json(nlohmann::json::parse(read_file(plan_file)));
    return assemble(plan.job_id, plan.category, plan.requests.size(), load_records(job_dir), session_id);
}

struct JobRunner::Impl {
    Gateway& gateway;
    mutable std::mutex mu;
    mutable std::condition_variable cv;
    std::map<std::string, JobStatus> statuses;
    std::map<std::string, std::thread> threads;

    explicit Impl(Gateway& g) : gateway(g) {}
};

JobRunner::JobRunner(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {}

JobRunner::~JobRunner() {
    std::map<std::string, std::thread> threads;
    {
        std::lock_guard lock(impl_->mu);
        threads.swap(impl_->threads);
    }
    for (auto& [id, t] : threads) {
        if (t.joinable()) t.join();
    }
}

void JobRunner::start(const GenerationPlan& plan, const fs::path& job_dir, RunOptions options,
                      std::function<void(const JobResult&)> on_done) {
    plan.validate();
    std::lock_guard lock(impl_->mu);
    auto it = impl_->statuses.find(plan.job_id);
    if (it != impl_->statuses.end() &&
        (it->second.state == JobState::running || it->second.state == JobState::pending)) {
        throw ConflictError("job " + plan.job_id + " is already running");
    }
    auto old = impl_->threads.find(plan.job_id);
    if (old != impl_->threads.end()) {
        if (old->second.joinable()) old->second.join();
        impl_->threads.erase(old);
    }
    JobStatus st;
    st.job_id = plan.job_id;
    st.requests_total = plan.requests.size();
    impl_->statuses[plan.job_id] = st;

    Impl* impl = impl_.get();
    auto user_progress = options.on_progress;
    // A finished run stays "running" here until on_done has also completed.
    options.on_progress = [impl, user_progress](const JobStatus& s) {
        {
            std::lock_guard l(impl->mu);
            auto& held = impl->statuses[s.job_id];
            held = s;
            if (s.state == JobState::done || s.state == JobState::failed) held.state = JobState::running;
        }
        impl->cv.notify_all();
        if (user_progress) user_progress(s);
    };
    impl_->threads[plan.job_id] = std::thread([impl, plan, job_dir, options, on_done] {
        try {
            auto result = run_job(plan, impl->gateway, job_dir, options);
            if (on_done) on_done(result);
            std::lock_guard l(impl->mu);
            impl->statuses[plan.job_id].state = JobState::done;
        } catch (const std::exception& e) {
            std::lock_guard l(impl->mu);
            auto& s = impl->statuses[plan.job_id];
            s.state = JobState::failed;
            if (s.error.empty()) s.error = e.what();
        }
        impl->cv.notify_all();
    });
}

JobStatus JobRunner::status(const std::string& job_id) const {
    std::lock_guard lock(impl_->mu);
    auto it = impl_->statuses.find(job_id);
    if (it == impl_->statuses.end()) throw NotFoundError("unknown job '" + job_id + "'");
    return it->second;
}

bool JobRunner::known(const std::string& job_id) const {
    std::lock_guard lock(impl_->mu);
    return impl_->statuses.count(job_id) > 0;
}

JobStatus JobRunner::wait(const std::string& job_id) const {
    std::unique_lock lock(impl_->mu);
    auto it = impl_->statuses.find(job_id);
    if (it == impl_->statuses.end()) throw NotFoundError("unknown job '" + job_id + "'");
    impl_->cv.wait(lock, [&] {
        const auto& s = impl_->statuses.at(job_id);
        return s.state == JobState::done || s.state == JobState::failed;
    });
    return impl_->statuses.at(job_id);
}

}  // namespace eltex
