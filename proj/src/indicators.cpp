#include "eltex/indicators.hpp"

#include <algorithm>
#include <cctype>

#include "eltex/dataset_io.hpp"

namespace eltex {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        out.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return out;
}

std::string strip_marker(std::string s) {
    s = trim(s);
    // Bullets: -, *, +, •
    if (s.rfind("\xE2\x80\xA2", 0) == 0) {
        s = trim(s.substr(3));
    } else if (!s.empty() && (s[0] == '-' || s[0] == '*' || s[0] == '+') && (s.size() == 1 || s[1] == ' ')) {
        s = trim(s.substr(1));
    }
    // Numbering: "12." or "12)"
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')') && (i + 1 == s.size() || s[i + 1] == ' ')) {
        s = trim(s.substr(i + 1));
    }
    while (!s.empty() && s[0] == '#') s = trim(s.substr(1));
    std::string out;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s.compare(k, 2, "**") == 0 || s.compare(k, 2, "__") == 0) {
            ++k;
            continue;
        }
        out += s[k];
    }
    return trim(out);
}

std::string ecosystem_heading(const GenerationParams& params) {
    auto v = PromptVariables::from(params).expand();
    return v["industry_title"] + " Ecosystem " + v["topic_title"] + " Indicators";
}

void require_topic(const GenerationParams& params) {
    if (trim(params.topic).empty()) throw ValidationError("topic must be non-empty");
    if (trim(params.industry).empty()) throw ValidationError("industry must be non-empty");
}

std::string sanitize(std::string_view s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
    return out;
}

}  // namespace

void BackgroundContext::validate() const {
    for (const auto& a : general_knowledge) {
        if (trim(a).empty()) throw ValidationError("general knowledge articles must be non-empty");
    }
    for (const auto& e : historical_events) {
        if (trim(e.date).empty() || trim(e.entity).empty()) {
            throw ValidationError("historical events need both a date and a named entity");
        }
    }
}

std::vector<std::string> BackgroundContext::parse_knowledge(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (const auto& line : lines_of(text)) {
        if (trim(line).empty()) {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            if (!cur.empty()) cur += '\n';
            cur += line;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

std::vector<HistoricalEvent> BackgroundContext::parse_events(std::string_view text) {
    std::vector<HistoricalEvent> out;
    std::size_t n = 0;
    for (const auto& raw : lines_of(text)) {
        ++n;
        auto line = trim(raw);
        if (line.empty()) continue;
        auto sep = line.find(" - ");
        std::size_t width = 3;
        if (sep == std::string::npos) {
            sep = line.find(',');
            width = 1;
        }
        if (sep == std::string::npos) {
            throw ValidationError("line " + std::to_string(n) + ": expected 'date - entity'");
        }
        HistoricalEvent e{trim(line.substr(0, sep)), trim(line.substr(sep + width))};
        if (e.date.empty() || e.entity.empty()) {
            throw ValidationError("line " + std::to_string(n) + ": expected 'date - entity'");
        }
        out.push_back(std::move(e));
    }
    return out;
}

void IndicatorSet::validate() const {
    if (trim(summary).empty()) throw ValidationError("indicator summary must be non-empty");
    if (sources.empty()) throw ValidationError("indicator sources must be non-empty");
}

nlohmann::json to_json(const IndicatorCandidateSet& c) {
    return {{"provider", c.provider}, {"raw_text", c.raw_text}, {"items", c.items}};
}

IndicatorCandidateSet candidate_set_from_json(const nlohmann::json& j) {
    IndicatorCandidateSet c;
    c.provider = j.at("provider").get<std::string>();
    c.raw_text = j.value("raw_text", "");
    if (j.contains("items")) {
        c.items = j["items"].get<std::vector<std::string>>();
    } else {
        c.items = parse_indicator_items(c.raw_text);
    }
    return c;
}

nlohmann::json to_json(const IndicatorSet& s) {
    return {{"summary", s.summary}, {"sources", s.sources}, {"created_at", format_rfc3339(s.created_at)}};
}

IndicatorSet indicator_set_from_json(const nlohmann::json& j) {
    IndicatorSet s;
    try {
        s.summary = j.at("summary").get<std::string>();
        if (j.contains("sources")) s.sources = j["sources"].get<std::vector<std::string>>();
        if (j.contains("created_at") && j["created_at"].is_string()) {
            auto t = parse_rfc3339(j["created_at"].get<std::string>());
            if (!t) throw ValidationError("created_at is not an RFC 3339 timestamp");
            s.created_at = *t;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed indicator set: ") + e.what());
    }
    if (s.sources.empty()) s.sources.push_back("manual");
    s.validate();
    return s;
}

std::vector<std::string> parse_indicator_items(std::string_view raw_text) {
    std::vector<std::string> out;
    for (const auto& line : lines_of(raw_text)) {
        auto item = strip_marker(line);
        if (item.empty() || item.back() == ':') continue;
        out.push_back(std::move(item));
    }
    return out;
}

std::string build_indicator_prompt(const GenerationParams& params, const BackgroundContext& ctx,
                                   const IndicatorPromptOptions& options) {
    require_topic(params);
    ctx.validate();
    auto v = PromptVariables::from(params).expand();
    std::string p = "Your task is to generate a list of " + ecosystem_heading(params) +
                    " that could be spotted by looking at social media chatter, including very early stages of the "
                    "attack.";
    auto stakeholders = trim(params.stakeholders);
    if (!stakeholders.empty()) {
        if (stakeholders.back() == '.') stakeholders.pop_back();
        p += " " + v["industry_title"] + " ecosystem participants could include " + stakeholders + ".";
    }
    if (!ctx.empty()) {
        p += " Information included below could help you reason about useful signals for monitoring reports on "
             "social media.";
    }
    if (!ctx.general_knowledge.empty()) {
        p += "\n\nGeneral Knowledge:\n";
        for (const auto& a : ctx.general_knowledge) p += "\n" + trim(a) + "\n";
        p.pop_back();
    }
    if (!ctx.historical_events.empty()) {
        p += "\n\nHistorical Events:\n";
        for (const auto& e : ctx.historical_events) p += "\n" + trim(e.date) + " - " + trim(e.entity) + "\n";
        p.pop_back();
    }
    if (!options.seed_examples.empty()) {
        p += "\n\nSocial Media Messages:\n";
        for (const auto& m : options.seed_examples) {
            std::string flat = m.content;
            std::replace(flat.begin(), flat.end(), '\n', ' ');
            p += "\n" + flat;
        }
    }
    return p;
}

std::string build_summarization_prompt(const GenerationParams& params,
                                       const std::vector<IndicatorCandidateSet>& candidates) {
    require_topic(params);
    std::string p = "Your task is to deduplicate and summarize a list of " + ecosystem_heading(params) +
                    " you will find below. It's okay to merge similar ideas into one concept, but don't remove any "
                    "ideas completely. Generate a succinct paragraph with densely packed indicators and associated "
                    "concepts you will find below without additional comments.\n";
    for (const auto& c : candidates) {
        for (const auto& item : c.items) p += "\n- " + item;
    }
    return p;
}

CandidateResult generate_candidates(const GenerationParams& params, const BackgroundContext& ctx,
                                    const std::vector<std::string>& providers, Gateway& gateway,
                                    const CandidateOptions& options) {
    if (providers.empty()) throw ValidationError("at least one provider is required");
    auto prompt = build_indicator_prompt(params, ctx, options.prompt);
    std::vector<ChatRequest> requests;
    for (const auto& model : providers) {
        ChatRequest r;
        r.model = model;
        r.user_prompt = prompt;
        r.temperature = options.temperature.value_or(params.temperature);
        r.validate();
        requests.push_back(std::move(r));
    }
    auto status = gateway.wait_batch(gateway.submit_batch(requests));

    SystemClock system_clock;
    const Clock& clock = options.clock ? *options.clock : system_clock;
    CandidateResult out;
    for (const auto& entry : status.results) {
        const auto& model = providers[entry.index];
        if (!entry.ok()) {
            out.failures.push_back({model, entry.error().kind, entry.error().message});
            continue;
        }
        const auto& resp = entry.response();
        if (resp.finish_reason == FinishReason::refused) {
            out.failures.push_back({model, "refused", resp.text});
            continue;
        }
        IndicatorCandidateSet c{model, resp.text, parse_indicator_items(resp.text)};
        if (c.items.empty()) {
            out.failures.push_back({model, "empty", "no indicators could be parsed from the response"});
            continue;
        }
        if (options.archive_dir) save_candidate_set(*options.archive_dir, c, clock.now());
        out.candidates.push_back(std::move(c));
    }
    if (out.candidates.empty()) {
        std::string why;
        for (const auto& f : out.failures) why += (why.empty() ? "" : "; ") + f.provider + ": " + f.kind;
        throw BackendError("all indicator providers failed (" + why + ")");
    }
    return out;
}

IndicatorSet summarize_indicators(const std::vector<IndicatorCandidateSet>& candidates, Gateway& gateway,
                                  const std::string& summarizer_model, const GenerationParams& params,
                                  double temperature, const Clock* clock) {
    if (candidates.empty()) throw ValidationError("no candidate indicator sets to summarize");
    ChatRequest r;
    r.model = summarizer_model;
    r.user_prompt = build_summarization_prompt(params, candidates);
    r.temperature = temperature;
    r.validate();
    auto resp = gateway.complete_chat(r);
    if (resp.finish_reason == FinishReason::refused) {
        throw RefusalError("summarizer refused to summarize indicators", resp.text);
    }
    IndicatorSet s;
    s.summary = trim(resp.text);
    if (s.summary.empty()) throw SchemaParseError("summarizer returned an empty summary", resp.text);
    for (const auto& c : candidates) s.sources.push_back(c.provider);
    SystemClock system_clock;
    s.created_at = (clock ? *clock : static_cast<const Clock&>(system_clock)).now();
    return s;
}

std::filesystem::path save_candidate_set(const std::filesystem::path& dir, const IndicatorCandidateSet& c,
                                         Timestamp at) {
    std::filesystem::create_directories(dir);
    auto stamp = format_rfc3339(at);
    std::replace(stamp.begin(), stamp.end(), ':', '-');
    auto path = dir / (sanitize(c.provider) + "_" + stamp + ".json");
    write_file_atomic(path, to_json(c).dump(2) + "\n");
    return path;
}

}  // namespace eltex
