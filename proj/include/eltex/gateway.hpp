#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "eltex/errors.hpp"
#include "json.hpp"

namespace eltex {

enum class FinishReason { complete, truncated, refused };

std::string_view to_string(FinishReason r);
FinishReason parse_finish_reason(std::string_view s);

struct TokenUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    /// Set when the provider omitted usage and it was approximated (chars/4).
    bool estimated = false;
};

/// Structured-output descriptor: a JSON Schema (subset) plus an optional hint
/// of how many array items the caller asked for.
struct ResponseSchema {
    std::string name;
    nlohmann::json schema;
    std::optional<std::size_t> expected_items;
};

namespace schemas {

inline constexpr std::string_view kGeneratedMessages = "generated_messages";
inline constexpr std::string_view kScoreMap = "score_map";
inline constexpr std::string_view kAnnotationScores = "annotation_scores";

/// Array whose items are strings or {"message": string} objects.
ResponseSchema generated_messages(std::size_t expected);
/// Object mapping ids to scores, e.g. {"1": 0.9, "2": 0.1}.
ResponseSchema score_map(std::optional<std::size_t> expected = std::nullopt);
/// Array of {message_id, cyberattack_score}.
ResponseSchema annotation_scores(std::optional<std::size_t> expected = std::nullopt);

}  // namespace schemas

/// Checks `value` against the supported JSON Schema subset: type (single or
/// list), items, properties, required, additionalProperties, minItems,
/// maxItems. Throws ValidationError naming the offending path.
void validate_against_schema(const nlohmann::json& value, const nlohmann::json& schema);

/// Parses model text as JSON (tolerating a surrounding ``` fence) and
/// validates it. Throws SchemaParseError carrying the raw text.
nlohmann::json parse_structured(std::string_view raw_text, const ResponseSchema& schema);

/// "provider/model". Everything after the first slash is the model name.
struct ModelRef {
    std::string provider;
    std::string model;

    static ModelRef parse(std::string_view ref);
    std::string str() const { return provider + "/" + model; }
};

struct ChatRequest {
    std::string model;
    std::optional<std::string> system_prompt;
    std::string user_prompt;
    double temperature = 0.8;
    std::optional<int> max_output_tokens;
    std::optional<ResponseSchema> response_schema;

    /// Throws ValidationError on an empty prompt, temperature outside [0,1],
    /// a non-positive token limit or a malformed model reference.
    void validate() const;
};

struct ChatResponse {
    std::string text;
    TokenUsage usage;
    std::string model;
    FinishReason finish_reason = FinishReason::complete;
    /// Transient failures absorbed before this response.
    std::uint32_t retries = 0;
};

enum class ProviderErrorKind { rate_limited, transient, auth, invalid_request, permanent, unknown_provider };

std::string_view to_string(ProviderErrorKind k);

class ProviderError : public Error {
public:
    ProviderError(ProviderErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}

    ProviderErrorKind kind() const noexcept { return kind_; }
    bool retryable() const noexcept {
        return kind_ == ProviderErrorKind::rate_limited || kind_ == ProviderErrorKind::transient;
    }

private:
    ProviderErrorKind kind_;
};

/// What a provider hands back for one call. A missing usage is estimated by
/// the gateway.
struct ProviderReply {
    std::string text;
    std::optional<TokenUsage> usage;
    FinishReason finish_reason = FinishReason::complete;
};

/// Provider-side asynchronous batch API (e.g. OpenAI's Batch endpoint).
class NativeBatchApi {
public:
    enum class State { queued, running, done, failed };

    struct Snapshot {
        State state = State::queued;
        std::size_t completed = 0;
        /// Filled once the provider reports completion; indexed like the
        /// submitted requests.
        std::vector<std::variant<ProviderReply, ProviderError>> results;
        std::string error;
    };

    virtual ~NativeBatchApi() = default;
    virtual std::string submit(const std::vector<ChatRequest>& requests) = 0;
    virtual Snapshot poll(const std::string& batch_id) = 0;
};

class Provider {
public:
    virtual ~Provider() = default;

    virtual std::string name() const = 0;
    /// Throws ProviderError. `model` is the model part of the request's
    /// reference.
    virtual ProviderReply complete(const ChatRequest& request, std::string_view model) = 0;
    virtual NativeBatchApi* native_batch() { return nullptr; }
};

// --- usage accounting -----------------------------------------------------

struct ModelUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::size_t requests = 0;
    std::size_t estimated_requests = 0;
};

class CostLedger {
public:
    void add(const ChatResponse& response);
    void merge(const CostLedger& other);

    const std::map<std::string, ModelUsage>& per_model() const noexcept { return per_model_; }
    ModelUsage totals() const;

    nlohmann::json to_json() const;
    static CostLedger from_json(const nlohmann::json& j);

private:
    std::map<std::string, ModelUsage> per_model_;
};

/// Returns `ledger` with `response`'s usage added under its model.
CostLedger record_usage(const ChatResponse& response, CostLedger ledger);

/// ceil(chars / 4).
std::int64_t estimate_tokens(std::string_view text);

// --- batches --------------------------------------------------------------

enum class BatchState { queued, running, partial, done, failed };

std::string_view to_string(BatchState s);

struct BatchError {
    std::string kind;
    std::string message;
};

struct BatchEntry {
    std::size_t index = 0;
    std::variant<ChatResponse, BatchError> outcome;

    bool ok() const { return std::holds_alternative<ChatResponse>(outcome); }
    const ChatResponse& response() const { return std::get<ChatResponse>(outcome); }
    const BatchError& error() const { return std::get<BatchError>(outcome); }
};

struct BatchHandle {
    std::string id;
    std::size_t total = 0;
};

/// Snapshot of a batch. `results` holds the finished entries sorted by
/// request index; once `state` is done or failed it covers every index.
struct BatchStatus {
    std::string handle;
    BatchState state = BatchState::queued;
    std::size_t completed = 0;
    std::size_t total = 0;
    std::vector<BatchEntry> results;

    bool finished() const { return state == BatchState::done || state == BatchState::failed; }
};

// --- gateway --------------------------------------------------------------

struct RetryPolicy {
    std::uint32_t max_retries = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{30'000};
    /// Relative jitter: each delay is scaled by a factor in [1-j, 1+j].
    double jitter = 0.2;

    std::chrono::milliseconds delay_for(std::uint32_t retry, double unit_random) const;
};

struct GatewayOptions {
    RetryPolicy retry;
    /// Concurrent requests across all emulated batches.
    std::size_t parallelism = 4;
    /// Used between retries; replaced in tests to avoid real sleeping.
    std::function<void(std::chrono::milliseconds)> sleeper;
    std::uint64_t jitter_seed = 0x5eed;
    /// Route batches to a provider's native batch API when every request in
    /// the batch targets that provider.
    bool use_native_batch = false;
    std::chrono::milliseconds native_poll_interval{5'000};
};

/// Uniform front door to every configured provider. Thread-safe.
class Gateway {
public:
    explicit Gateway(GatewayOptions options = {});
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    void register_provider(std::shared_ptr<Provider> provider);
    bool has_provider(std::string_view name) const;
    std::vector<std::string> provider_names() const;

    /// Retries transient failures per the retry policy. A refusal is returned
    /// with finish_reason=refused, not thrown.
    ChatResponse complete_chat(const ChatRequest& request);

    /// Requires request.response_schema. Throws SchemaParseError or
    /// RefusalError. `raw`, when given, receives the underlying response.
    nlohmann::json complete_structured(const ChatRequest& request, ChatResponse* raw = nullptr);

    /// Queues the requests for asynchronous execution.
    BatchHandle submit_batch(std::vector<ChatRequest> requests);
    /// Throws NotFoundError for handles this gateway did not issue.
    BatchStatus poll_batch(const BatchHandle& handle) const;
    BatchStatus poll_batch(const std::string& handle_id) const;
    /// Blocks until more than `seen_completed` results exist, the batch
    /// finishes, or the timeout passes; returns the latest snapshot.
    BatchStatus wait_for_progress(const BatchHandle& handle, std::size_t seen_completed,
                                  std::chrono::milliseconds timeout = std::chrono::hours(24)) const;
    BatchStatus wait_batch(const BatchHandle& handle) const;

    /// Usage of every call made through this gateway.
    CostLedger ledger() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eltex
