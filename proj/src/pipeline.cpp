#include "eltex/pipeline.hpp"

#include "eltex/orchestrator.hpp"

namespace eltex {

void apply_role_defaults(GenerationParams& params, const AppConfig& config) {
    for (auto role : {roles::kIndicatorGeneration, roles::kSummarization, roles::kGeneration, roles::kAnnotation}) {
        auto& slot = params.provider_models[std::string(role)];
        if (!slot.empty()) continue;
        auto models = config.role_models(role);
        if (!models.empty()) {
            slot = models.front();
        } else if (role == roles::kSummarization && !config.role_models(roles::kIndicatorGeneration).empty()) {
            slot = config.role_model(role);
        } else {
            params.provider_models.erase(std::string(role));
        }
    }
}

PromptTemplate template_for(const GenerationParams& params) {
    return PromptTemplate::default_for(params.category, PromptVariables::from(params));
}

BackgroundContext context_from_json(const nlohmann::json& j) {
    BackgroundContext ctx;
    if (j.is_null()) return ctx;
    if (!j.is_object()) throw ValidationError("context must be a JSON object");
    try {
        if (j.contains("general_knowledge")) {
            const auto& g = j["general_knowledge"];
            ctx.general_knowledge = g.is_string() ? BackgroundContext::parse_knowledge(g.get<std::string>())
                                                  : g.get<std::vector<std::string>>();
        }
        if (j.contains("historical_events")) {
            const auto& h = j["historical_events"];
            if (h.is_string()) {
                ctx.historical_events = BackgroundContext::parse_events(h.get<std::string>());
            } else {
                for (const auto& e : h) {
                    if (e.is_string()) {
                        for (auto& ev : BackgroundContext::parse_events(e.get<std::string>())) {
                            ctx.historical_events.push_back(std::move(ev));
                        }
                    } else {
                        ctx.historical_events.push_back({e.at("date").get<std::string>(), e.at("entity").get<std::string>()});
                    }
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid context: ") + e.what());
    }
    ctx.validate();
    return ctx;
}

nlohmann::json to_json(const BackgroundContext& ctx) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : ctx.historical_events) ev.push_back({{"date", e.date}, {"entity", e.entity}});
    return {{"general_knowledge", ctx.general_knowledge}, {"historical_events", ev}};
}

nlohmann::json IndicatorStageResult::to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& s : candidates.candidates) c.push_back(eltex::to_json(s));
    nlohmann::json f = nlohmann::json::array();
    for (const auto& x : candidates.failures) f.push_back({{"provider", x.provider}, {"kind", x.kind}, {"message", x.message}});
    return {{"candidates", c}, {"failures", f}, {"indicators", eltex::to_json(indicators)}};
}

IndicatorStageResult run_indicator_stage(const GenerationParams& params, const BackgroundContext& ctx,
                                         Gateway& gateway, const AppConfig& config,
                                         const IndicatorStageOptions& options) {
    auto providers = options.providers;
    if (providers.empty()) providers = config.role_models(roles::kIndicatorGeneration);
    if (providers.empty()) throw ValidationError("no indicator-generation models configured");

    std::string summarizer;
    if (options.summarizer) {
        summarizer = *options.summarizer;
    } else if (auto it = params.provider_models.find(std::string(roles::kSummarization));
               it != params.provider_models.end() && !it->second.empty()) {
        summarizer = it->second;
    } else {
        summarizer = config.role_model(roles::kSummarization);
    }

    CandidateOptions co;
    co.archive_dir = options.archive_dir;
    co.clock = options.clock;
    IndicatorStageResult out;
    out.candidates = generate_candidates(params, ctx, providers, gateway, co);
    out.indicators = summarize_indicators(out.candidates.candidates, gateway, summarizer, params,
                                          kSummarizationTemperature, options.clock);
    return out;
}

}  // namespace eltex
