#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eltex/gateway.hpp"
#include "eltex/indicators.hpp"
#include "eltex/message.hpp"
#include "eltex/prompts.hpp"

namespace eltex {

/// Role names in GenerationParams::provider_models.
namespace roles {
inline constexpr std::string_view kIndicatorGeneration = "indicator-generation";
inline constexpr std::string_view kSummarization = "summarization";
inline constexpr std::string_view kGeneration = "generation";
inline constexpr std::string_view kAnnotation = "annotation";
}  // namespace roles

struct GenerationRequest {
    std::size_t index = 0;
    /// Seed batch used by this request; nullopt in seedless mode.
    std::optional<std::size_t> batch_index;
    std::size_t count = 0;
    std::string model;
    double temperature = 0.8;
    std::string prompt;
    /// Same prompt with the alignment clause; used once after a refusal.
    std::string fallback_prompt;
};

struct GenerationPlan {
    std::string job_id;
    std::string category{kTargetCategory};
    std::size_t per_request_count = 100;
    std::size_t target_total = 0;
    std::size_t batch_size = 10;
    std::uint64_t rng_seed = 0;
    std::vector<SeedBatch> batches;
    std::vector<GenerationRequest> requests;

    void validate() const;
};

nlohmann::json to_json(const GenerationPlan& plan);
GenerationPlan generation_plan_from_json(const nlohmann::json& j);

struct PlanOptions {
    std::size_t per_request_count = 100;
    std::size_t batch_size = 10;
    std::optional<std::string> job_id;
};

/// ceil(target_size / per_request_count) requests, the last one clamped to
/// the remainder, seed batches assigned round-robin. An empty seed list
/// selects seedless mode (requires params.description). The model comes from
/// the "generation" role. Throws ValidationError.
GenerationPlan plan_job(const GenerationParams& params, const std::vector<Message>& seeds,
                        const PromptTemplate& tmpl, const IndicatorSet& indicators, const PlanOptions& options = {});

struct ParseStats {
    std::size_t dropped_empty = 0;
    std::size_t dropped_invalid = 0;
};

/// Array of strings or {"message": string} objects. Throws ValidationError
/// when `raw` is not an array.
std::vector<Message> parse_generation_output(const nlohmann::json& raw, std::string_view category,
                                             ParseStats* stats = nullptr,
                                             const std::optional<std::string>& session_id = std::nullopt);

struct RequestFailure {
    std::size_t index = 0;
    std::string kind;
    std::string message;
};

struct JobResult {
    std::string job_id;
    /// Raw synthetic output in request order; exact repeats are kept.
    std::vector<Message> produced;
    /// Indexed by request; failed requests count 0.
    std::vector<std::size_t> per_request_counts;
    std::vector<RequestFailure> failures;
    std::size_t dropped_empty = 0;
    std::size_t refusal_retries = 0;
    CostLedger usage;
};

nlohmann::json to_json(const JobResult& r);

enum class JobState { pending, running, done, failed };
std::string_view to_string(JobState s);
JobState parse_job_state(std::string_view s);

struct JobStatus {
    std::string job_id;
    JobState state = JobState::pending;
    std::size_t requests_done = 0;
    std::size_t requests_total = 0;
    std::size_t messages_so_far = 0;
    std::size_t failures = 0;
    std::string error;
};

nlohmann::json to_json(const JobStatus& s);
JobStatus job_status_from_json(const nlohmann::json& j);

struct RunOptions {
    std::optional<std::string> session_id;
    /// Called after each request's outcome is on disk. Throwing aborts the
    /// run, which is how tests simulate a crash.
    std::function<void(std::size_t request_index)> on_request_persisted;
    std::function<void(const JobStatus&)> on_progress;
};

/// Runs every request not already completed in `job_dir` and writes
/// plan.json, raw/request_NNNN.json, produced.jsonl and status.json.
/// Requests recorded as successful are never re-sent; failed ones are retried
/// on a later run. Throws BackendError when no request succeeded.
JobResult run_job(const GenerationPlan& plan, Gateway& gateway, const std::filesystem::path& job_dir,
                  const RunOptions& options = {});

/// Reads status.json. Throws NotFoundError for an unknown job directory.
JobStatus job_status(const std::filesystem::path& job_dir);

/// Rebuilds a JobResult from a job directory's raw request records.
JobResult load_job_result(const std::filesystem::path& job_dir,
                          const std::optional<std::string>& session_id = std::nullopt);

/// Runs jobs on background threads and tracks their status in memory.
class JobRunner {
public:
    explicit JobRunner(Gateway& gateway);
    ~JobRunner();
    JobRunner(const JobRunner&) = delete;
    JobRunner& operator=(const JobRunner&) = delete;

    /// Throws ConflictError if a job with the same id is still running.
    void start(const GenerationPlan& plan, const std::filesystem::path& job_dir, RunOptions options = {},
               std::function<void(const JobResult&)> on_done = {});
    /// Throws NotFoundError for ids this runner has never seen.
    JobStatus status(const std::string& job_id) const;
    bool known(const std::string& job_id) const;
    /// Blocks until the job finishes.
    JobStatus wait(const std::string& job_id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eltex
