#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eltex/clock.hpp"
#include "eltex/gateway.hpp"
#include "eltex/message.hpp"
#include "eltex/prompts.hpp"

namespace eltex {

struct HistoricalEvent {
    std::string date;
    std::string entity;
};

struct BackgroundContext {
    std::vector<std::string> general_knowledge;
    std::vector<HistoricalEvent> historical_events;

    bool empty() const { return general_knowledge.empty() && historical_events.empty(); }
    /// Throws ValidationError on blank entries.
    void validate() const;

    /// Articles separated by blank lines.
    static std::vector<std::string> parse_knowledge(std::string_view text);
    /// One "date - entity" per line (also accepts CSV "date,entity").
    static std::vector<HistoricalEvent> parse_events(std::string_view text);
};

struct IndicatorCandidateSet {
    std::string provider;
    std::string raw_text;
    std::vector<std::string> items;
};

struct IndicatorSet {
    std::string summary;
    std::vector<std::string> sources;
    Timestamp created_at{};

    void validate() const;
};

nlohmann::json to_json(const IndicatorCandidateSet& c);
IndicatorCandidateSet candidate_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IndicatorSet& s);
IndicatorSet indicator_set_from_json(const nlohmann::json& j);

/// Splits model output into items: one per line, list markers and emphasis
/// stripped, blank lines and heading lines (ending in ':') dropped.
std::vector<std::string> parse_indicator_items(std::string_view raw_text);

struct IndicatorPromptOptions {
    /// Appends seed messages as examples (off by default).
    std::vector<Message> seed_examples;
};

/// Throws ValidationError when topic or industry is empty.
std::string build_indicator_prompt(const GenerationParams& params, const BackgroundContext& ctx,
                                   const IndicatorPromptOptions& options = {});

std::string build_summarization_prompt(const GenerationParams& params,
                                       const std::vector<IndicatorCandidateSet>& candidates);

struct ProviderFailure {
    std::string provider;
    std::string kind;
    std::string message;
};

struct CandidateResult {
    std::vector<IndicatorCandidateSet> candidates;
    std::vector<ProviderFailure> failures;
};

struct CandidateOptions {
    IndicatorPromptOptions prompt;
    std::optional<double> temperature;
    /// When set, every raw candidate set is written here for expert review.
    std::optional<std::filesystem::path> archive_dir;
    const Clock* clock = nullptr;
};

/// Queries every provider concurrently. Failures and refusals are recorded
/// and skipped; throws BackendError only when no provider produced a candidate set.
CandidateResult generate_candidates(const GenerationParams& params, const BackgroundContext& ctx,
                                    const std::vector<std::string>& providers, Gateway& gateway,
                                    const CandidateOptions& options = {});

inline constexpr double kSummarizationTemperature = 0.2;

/// One summarization call over all candidate items. Throws ValidationError on
/// empty candidates and RefusalError when the summarizer refuses.
IndicatorSet summarize_indicators(const std::vector<IndicatorCandidateSet>& candidates, Gateway& gateway,
                                  const std::string& summarizer_model, const GenerationParams& params,
                                  double temperature = kSummarizationTemperature, const Clock* clock = nullptr);

/// File name used when archiving a candidate set: "<provider>_<timestamp>.json".
std::filesystem::path save_candidate_set(const std::filesystem::path& dir, const IndicatorCandidateSet& c,
                                         Timestamp at);

}  // namespace eltex
