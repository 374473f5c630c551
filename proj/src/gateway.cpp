#include "eltex/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <mutex>
#include <thread>

#include "eltex/rng.hpp"

namespace eltex {

std::string_view to_string(FinishReason r) {
    switch (r) {
        case FinishReason::complete: return "complete";
        case FinishReason::truncated: return "truncated";
        case FinishReason::refused: return "refused";
    }
    return "complete";
}

FinishReason parse_finish_reason(std::string_view s) {
    if (s == "complete") return FinishReason::complete;
    if (s == "truncated") return FinishReason::truncated;
    if (s == "refused") return FinishReason::refused;
    throw ValidationError("unknown finish reason '" + std::string(s) + "'");
}

std::string_view to_string(ProviderErrorKind k) {
    switch (k) {
        case ProviderErrorKind::rate_limited: return "rate_limited";
        case ProviderErrorKind::transient: return "transient";
        case ProviderErrorKind::auth: return "auth";
        case ProviderErrorKind::invalid_request: return "invalid_request";
        case ProviderErrorKind::permanent: return "permanent";
        case ProviderErrorKind::unknown_provider: return "unknown_provider";
    }
    return "permanent";
}

std::string_view to_string(BatchState s) {
    switch (s) {
        case BatchState::queued: return "queued";
        case BatchState::running: return "running";
        case BatchState::partial: return "partial";
        case BatchState::done: return "done";
        case BatchState::failed: return "failed";
    }
    return "queued";
}

ModelRef ModelRef::parse(std::string_view ref) {
    auto slash = ref.find('/');
    if (slash == std::string_view::npos || slash == 0 || slash + 1 == ref.size()) {
        throw ValidationError("model reference must look like 'provider/model': '" + std::string(ref) + "'");
    }
    return {std::string(ref.substr(0, slash)), std::string(ref.substr(slash + 1))};
}

void ChatRequest::validate() const {
    if (user_prompt.empty()) throw ValidationError("user_prompt must be non-empty");
    if (!(temperature >= 0.0 && temperature <= 1.0)) {
        throw ValidationError("temperature must lie in [0,1], got " + std::to_string(temperature));
    }
    if (max_output_tokens && *max_output_tokens <= 0) throw ValidationError("max_output_tokens must be positive");
    ModelRef::parse(model);
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

void CostLedger::add(const ChatResponse& response) {
    auto& u = per_model_[response.model];
    u.input_tokens += response.usage.input_tokens;
    u.output_tokens += response.usage.output_tokens;
    ++u.requests;
    if (response.usage.estimated) ++u.estimated_requests;
}

void CostLedger::merge(const CostLedger& other) {
    for (const auto& [model, o] : other.per_model_) {
        auto& u = per_model_[model];
        u.input_tokens += o.input_tokens;
        u.output_tokens += o.output_tokens;
        u.requests += o.requests;
        u.estimated_requests += o.estimated_requests;
    }
}

ModelUsage CostLedger::totals() const {
    ModelUsage t;
    for (const auto& [_, u] : per_model_) {
        t.input_tokens += u.input_tokens;
        t.output_tokens += u.output_tokens;
        t.requests += u.requests;
        t.estimated_requests += u.estimated_requests;
    }
    return t;
}

nlohmann::json CostLedger::to_json() const {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& [model, u] : per_model_) {
        models[model] = {{"input_tokens", u.input_tokens},
                         {"output_tokens", u.output_tokens},
                         {"requests", u.requests},
                         {"estimated_requests", u.estimated_requests}};
    }
    auto t = totals();
    return {{"models", models},
            {"totals",
             {{"input_tokens", t.input_tokens},
              {"output_tokens", t.output_tokens},
              {"requests", t.requests},
              {"estimated_requests", t.estimated_requests}}}};
}

CostLedger CostLedger::from_json(const nlohmann::json& j) {
    CostLedger l;
    if (!j.contains("models")) return l;
    for (const auto& [model, u] : j["models"].items()) {
        auto& m = l.per_model_[model];
        m.input_tokens = u.value("input_tokens", std::int64_t{0});
        m.output_tokens = u.value("output_tokens", std::int64_t{0});
        m.requests = u.value("requests", std::size_t{0});
        m.estimated_requests = u.value("estimated_requests", std::size_t{0});
    }
    return l;
}

CostLedger record_usage(const ChatResponse& response, CostLedger ledger) {
    ledger.add(response);
    return ledger;
}

std::chrono::milliseconds RetryPolicy::delay_for(std::uint32_t retry, double unit_random) const {
    double d = static_cast<double>(base_delay.count()) * std::pow(multiplier, static_cast<double>(retry));
    d = std::min(d, static_cast<double>(max_delay.count()));
    d *= 1.0 + jitter * (2.0 * unit_random - 1.0);
    return std::chrono::milliseconds{static_cast<std::int64_t>(std::max(0.0, d))};
}

namespace {

struct BatchRecord {
    std::string id;
    std::vector<ChatRequest> requests;
    std::vector<std::optional<BatchEntry>> slots;
    std::size_t started = 0;
    std::size_t completed = 0;

    bool native = false;
    std::string native_id;
    NativeBatchApi::State native_state = NativeBatchApi::State::queued;
};

ChatResponse to_response(ProviderReply reply, const ChatRequest& req, std::uint32_t retries) {
    ChatResponse r;
    r.model = req.model;
    r.finish_reason = reply.finish_reason;
    r.retries = retries;
    if (reply.usage) {
        r.usage = *reply.usage;
    } else {
        r.usage.input_tokens =
            estimate_tokens(req.user_prompt) + (req.system_prompt ? estimate_tokens(*req.system_prompt) : 0);
        r.usage.output_tokens = estimate_tokens(reply.text);
        r.usage.estimated = true;
    }
    r.text = std::move(reply.text);
    return r;
}

BatchError to_batch_error(const std::exception& e) {
    if (auto* pe = dynamic_cast<const ProviderError*>(&e)) return {std::string(to_string(pe->kind())), pe->what()};
    if (dynamic_cast<const ValidationError*>(&e)) return {"invalid_request", e.what()};
    return {"permanent", e.what()};
}

}  // namespace

struct Gateway::Impl {
    GatewayOptions opts;

    mutable std::mutex mu;
    mutable std::condition_variable progress_cv;
    std::condition_variable work_cv;
    std::map<std::string, std::shared_ptr<Provider>, std::less<>> providers;
    std::map<std::string, std::shared_ptr<BatchRecord>, std::less<>> batches;
    std::deque<std::pair<std::shared_ptr<BatchRecord>, std::size_t>> queue;
    std::vector<std::thread> workers;
    std::vector<std::thread> pollers;
    bool stopping = false;
    std::uint64_t next_batch = 0;
    CostLedger ledger;

    std::mutex rng_mu;
    Rng jitter_rng;

    explicit Impl(GatewayOptions o) : opts(std::move(o)), jitter_rng(opts.jitter_seed) {
        if (!opts.sleeper) opts.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
        if (opts.parallelism == 0) opts.parallelism = 1;
    }

    std::shared_ptr<Provider> provider_for(const std::string& name) const {
        std::lock_guard lock(mu);
        auto it = providers.find(name);
        if (it == providers.end()) {
            throw ProviderError(ProviderErrorKind::unknown_provider, "no provider registered under '" + name + "'");
        }
        return it->second;
    }

    double next_jitter() {
        std::lock_guard lock(rng_mu);
        return jitter_rng.uniform_real();
    }

    ChatResponse complete_chat(const ChatRequest& req) {
        req.validate();
        auto ref = ModelRef::parse(req.model);
        auto provider = provider_for(ref.provider);
        for (std::uint32_t attempt = 0;; ++attempt) {
            try {
                auto response = to_response(provider->complete(req, ref.model), req, attempt);
                std::lock_guard lock(mu);
                ledger.add(response);
                return response;
            } catch (const ProviderError& e) {
                if (!e.retryable() || attempt >= opts.retry.max_retries) {
                    if (e.retryable()) {
                        throw ProviderError(e.kind(), std::string(e.what()) + " (after " + std::to_string(attempt) +
                                                          " retries)");
                    }
                    throw;
                }
                opts.sleeper(opts.retry.delay_for(attempt, next_jitter()));
            }
        }
    }

    BatchStatus snapshot(const BatchRecord& b) const {
        BatchStatus s;
        s.handle = b.id;
        s.total = b.requests.size();
        s.completed = b.completed;
        for (const auto& slot : b.slots) {
            if (slot) s.results.push_back(*slot);
        }
        if (b.completed == s.total) {
            bool any_ok = std::any_of(s.results.begin(), s.results.end(), [](const BatchEntry& e) { return e.ok(); });
            s.state = any_ok ? BatchState::done : BatchState::failed;
        } else if (b.native) {
            s.state = b.native_state == NativeBatchApi::State::queued ? BatchState::queued : BatchState::running;
        } else if (b.started == 0) {
            s.state = BatchState::queued;
        } else if (b.completed == 0) {
            s.state = BatchState::running;
        } else {
            s.state = BatchState::partial;
        }
        return s;
    }

    void worker_loop() {
        for (;;) {
            std::shared_ptr<BatchRecord> batch;
            std::size_t index = 0;
            {
                std::unique_lock lock(mu);
                work_cv.wait(lock, [&] { return stopping || !queue.empty(); });
                if (stopping) return;
                std::tie(batch, index) = queue.front();
                queue.pop_front();
                ++batch->started;
            }
            progress_cv.notify_all();

            BatchEntry entry;
            entry.index = index;
            try {
                entry.outcome = complete_chat(batch->requests[index]);
            } catch (const std::exception& e) {
                entry.outcome = to_batch_error(e);
            }
            {
                std::lock_guard lock(mu);
                batch->slots[index] = std::move(entry);
                ++batch->completed;
            }
            progress_cv.notify_all();
        }
    }

    void native_poll_loop(std::shared_ptr<BatchRecord> batch, std::shared_ptr<Provider> provider) {
        auto* api = provider->native_batch();
        for (;;) {
            NativeBatchApi::Snapshot snap;
            bool fatal = false;
            std::string fatal_message;
            try {
                snap = api->poll(batch->native_id);
            } catch (const ProviderError& e) {
                if (!e.retryable()) {
                    fatal = true;
                    fatal_message = e.what();
                }
            } catch (const std::exception& e) {
                fatal = true;
                fatal_message = e.what();
            }
            if (fatal || snap.state == NativeBatchApi::State::failed) {
                if (!fatal) fatal_message = snap.error.empty() ? "native batch failed" : snap.error;
                std::lock_guard lock(mu);
                for (std::size_t i = 0; i < batch->slots.size(); ++i) {
                    if (!batch->slots[i]) batch->slots[i] = BatchEntry{i, BatchError{"permanent", fatal_message}};
                }
                batch->completed = batch->slots.size();
                progress_cv.notify_all();
                return;
            }
            if (snap.state == NativeBatchApi::State::done) {
                std::vector<BatchEntry> entries;
                for (std::size_t i = 0; i < batch->requests.size(); ++i) {
                    BatchEntry e;
                    e.index = i;
                    if (i >= snap.results.size()) {
                        e.outcome = BatchError{"permanent", "missing from native batch output"};
                    } else if (auto* reply = std::get_if<ProviderReply>(&snap.results[i])) {
                        e.outcome = to_response(*reply, batch->requests[i], 0);
                    } else {
                        e.outcome = to_batch_error(std::get<ProviderError>(snap.results[i]));
                    }
                    entries.push_back(std::move(e));
                }
                std::lock_guard lock(mu);
                for (auto& e : entries) {
                    if (e.ok()) ledger.add(e.response());
                    batch->slots[e.index] = std::move(e);
                }
                batch->completed = batch->slots.size();
                progress_cv.notify_all();
                return;
            }
            {
                std::unique_lock lock(mu);
                batch->native_state = snap.state;
                progress_cv.notify_all();
                work_cv.wait_for(lock, opts.native_poll_interval, [&] { return stopping; });
                if (stopping) return;
            }
        }
    }
};

Gateway::Gateway(GatewayOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
    for (std::size_t i = 0; i < impl_->opts.parallelism; ++i) {
        impl_->workers.emplace_back([this] { impl_->worker_loop(); });
    }
}

Gateway::~Gateway() {
    {
        std::lock_guard lock(impl_->mu);
        impl_->stopping = true;
    }
    impl_->work_cv.notify_all();
    for (auto& t : impl_->workers) t.join();
    for (auto& t : impl_->pollers) t.join();
}

void Gateway::register_provider(std::shared_ptr<Provider> provider) {
    std::lock_guard lock(impl_->mu);
    auto name = provider->name();
    impl_->providers[name] = std::move(provider);
}

bool Gateway::has_provider(std::string_view name) const {
    std::lock_guard lock(impl_->mu);
    return impl_->providers.find(name) != impl_->providers.end();
}

std::vector<std::string> Gateway::provider_names() const {
    std::lock_guard lock(impl_->mu);
    std::vector<std::string> out;
    for (const auto& [name, _] : impl_->providers) out.push_back(name);
    return out;
}

ChatResponse Gateway::complete_chat(const ChatRequest& request) { return impl_->complete_chat(request); }

nlohmann::json Gateway::complete_structured(const ChatRequest& request, ChatResponse* raw) {
    if (!request.response_schema) throw ValidationError("complete_structured requires a response_schema");
    auto response = impl_->complete_chat(request);
    if (raw) *raw = response;
    if (response.finish_reason == FinishReason::refused) {
        throw RefusalError("model " + response.model + " refused the request", response.text);
    }
    return parse_structured(response.text, *request.response_schema);
}

BatchHandle Gateway::submit_batch(std::vector<ChatRequest> requests) {
    if (requests.empty()) throw ValidationError("submit_batch requires at least one request");
    for (const auto& r : requests) r.validate();

    auto batch = std::make_shared<BatchRecord>();
    batch->slots.resize(requests.size());

    std::shared_ptr<Provider> native_provider;
    if (impl_->opts.use_native_batch) {
        auto first = ModelRef::parse(requests.front().model).provider;
        bool same = std::all_of(requests.begin(), requests.end(),
                                [&](const ChatRequest& r) { return ModelRef::parse(r.model).provider == first; });
        if (same) {
            auto p = impl_->provider_for(first);
            if (p->native_batch()) native_provider = std::move(p);
        }
    }
    if (native_provider) {
        batch->native = true;
        batch->native_id = native_provider->native_batch()->submit(requests);
    }
    batch->requests = std::move(requests);

    BatchHandle handle;
    handle.total = batch->requests.size();
    {
        std::lock_guard lock(impl_->mu);
        char buf[32];
        std::snprintf(buf, sizeof buf, "batch-%06llu", static_cast<unsigned long long>(++impl_->next_batch));
        batch->id = buf;
        handle.id = batch->id;
        impl_->batches[batch->id] = batch;
        if (native_provider) {
            impl_->pollers.emplace_back([this, batch, native_provider] { impl_->native_poll_loop(batch, native_provider); });
        } else {
            for (std::size_t i = 0; i < batch->requests.size(); ++i) impl_->queue.emplace_back(batch, i);
        }
    }
    impl_->work_cv.notify_all();
    return handle;
}

BatchStatus Gateway::poll_batch(const BatchHandle& handle) const { return poll_batch(handle.id); }

BatchStatus Gateway::poll_batch(const std::string& handle_id) const {
    std::lock_guard lock(impl_->mu);
    auto it = impl_->batches.find(handle_id);
    if (it == impl_->batches.end()) throw NotFoundError("unknown batch handle '" + handle_id + "'");
    return impl_->snapshot(*it->second);
}

BatchStatus Gateway::wait_for_progress(const BatchHandle& handle, std::size_t seen_completed,
                                       std::chrono::milliseconds timeout) const {
    std::unique_lock lock(impl_->mu);
    auto it = impl_->batches.find(handle.id);
    if (it == impl_->batches.end()) throw NotFoundError("unknown batch handle '" + handle.id + "'");
    auto batch = it->second;
    impl_->progress_cv.wait_for(lock, timeout, [&] {
        return batch->completed > seen_completed || batch->completed == batch->requests.size();
    });
    return impl_->snapshot(*batch);
}

BatchStatus Gateway::wait_batch(const BatchHandle& handle) const {
    for (;;) {
        auto s = wait_for_progress(handle, poll_batch(handle).completed);
        if (s.finished()) return s;
    }
}

CostLedger Gateway::ledger() const {
    std::lock_guard lock(impl_->mu);
    return impl_->ledger;
}

}  // namespace eltex
