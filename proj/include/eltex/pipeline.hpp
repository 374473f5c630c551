#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eltex/config.hpp"
#include "eltex/indicators.hpp"
#include "eltex/prompts.hpp"

namespace eltex {

// Glue shared by the CLI and the service so both run identical stages.

/// Sets every role the params leave unset to the configured model.
void apply_role_defaults(GenerationParams& params, const AppConfig& config);

PromptTemplate template_for(const GenerationParams& params);

BackgroundContext context_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackgroundContext& ctx);

struct IndicatorStageOptions {
    /// Model references to query; empty means the configured indicator models.
    std::vector<std::string> providers;
    /// Defaults to the params' summarization role.
    std::optional<std::string> summarizer;
    std::optional<std::filesystem::path> archive_dir;
    const Clock* clock = nullptr;
};

struct IndicatorStageResult {
    CandidateResult candidates;
    IndicatorSet indicators;

    nlohmann::json to_json() const;
};

/// Candidate generation followed by summarization.
IndicatorStageResult run_indicator_stage(const GenerationParams& params, const BackgroundContext& ctx,
                                         Gateway& gateway, const AppConfig& config,
                                         const IndicatorStageOptions& options = {});

}  // namespace eltex
