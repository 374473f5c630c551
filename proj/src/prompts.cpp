#include "eltex/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "eltex/dataset_io.hpp"
#include "eltex/errors.hpp"
#include "eltex/indicators.hpp"
#include "eltex/rng.hpp"

namespace eltex {

namespace {

constexpr std::string_view kTargetTask =
    "Your task is to generate a list of social media platform messages to be used as early warning signals for "
    "identifying a {topic_singular} on a {industry} industry participant. Below are two lists. The \"{topic_title} "
    "Indicators\" list contains signals that can lead to financial or reputational loss. The \"Social Media Messages\" "
    "list contains social media platform messages about {topic} on a {industry} industry that happened in the past. "
    "Use the \"{topic_title} Indicators\" and \"Social Media Messages\" to generate {count} new social media platform "
    "messages that could imply a {topic_singular} on a {industry} ecosystem participant, including very early stages "
    "of it.";

constexpr std::string_view kGeneralTask =
    "Your task is to generate a list of social media platform messages about the {industry} industry that have no "
    "connection to {topic}. Below are two lists. The \"{topic_title} Indicators\" list contains signals that can lead "
    "to financial or reputational loss; the new messages must not imply any of them. The \"Social Media Messages\" "
    "list contains real social media platform messages about the {industry} industry. Use their style and subjects to "
    "generate {count} new social media platform messages about everyday {industry} industry topics such as products, "
    "markets, releases, events and opinions.";

const std::vector<std::string>& target_critical() {
    static const std::vector<std::string> v = {
        "Use modern vocabulary and writing style.",
        "Leave Law Enforcement and Government Regulators' names unchanged, but replace other named entities "
        "(organizations, persons, locations) with fictional, yet plausible and modern ones.",
        "The output must be a list of {count} newly generated social media platform messages without any "
        "explanations.",
    };
    return v;
}

const std::vector<std::string>& general_critical() {
    static const std::vector<std::string> v = {
        "Use modern vocabulary and writing style.",
        "Replace named entities (organizations, persons, locations) with fictional, yet plausible and modern ones.",
        "Do not mention hacks, exploits, breaches, scams or other security incidents.",
        "The output must be a list of {count} newly generated social media platform messages without any "
        "explanations.",
    };
    return v;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string one_line(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out += (c == '\n' || c == '\r') ? ' ' : c;
    return out;
}

}  // namespace

PromptVariables PromptVariables::from(const GenerationParams& p) {
    PromptVariables v;
    if (!p.topic.empty()) v.topic = p.topic;
    if (!p.industry.empty()) v.industry = p.industry;
    v.stakeholders = p.stakeholders;
    return v;
}

std::string title_singular(std::string_view word) {
    std::string w = trim(word);
    if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
    bool start = true;
    for (char& c : w) {
        if (start) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        start = c == ' ' || c == '-';
    }
    return w;
}

std::map<std::string, std::string> PromptVariables::expand(std::optional<std::size_t> count) const {
    std::string singular = trim(topic);
    if (singular.size() > 3 && singular.back() == 's' && singular[singular.size() - 2] != 's') singular.pop_back();
    std::string industry_title = trim(industry);
    if (!industry_title.empty()) {
        industry_title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(industry_title[0])));
    }
    std::map<std::string, std::string> m = {
        {"topic", topic},
        {"topic_singular", singular},
        {"topic_title", title_singular(topic)},
        {"industry", industry},
        {"industry_title", industry_title},
        {"stakeholders", stakeholders},
    };
    if (count) m["count"] = std::to_string(*count);
    return m;
}

std::string render_placeholders(std::string_view text, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            auto close = text.find('}', i + 1);
            if (close != std::string_view::npos) {
                auto it = values.find(std::string(text.substr(i + 1, close - i - 1)));
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += text[i++];
    }
    return out;
}

void PromptTemplate::validate() const {
    if (trim(task_description).empty()) throw ValidationError("task_description must be non-empty");
    if (output_count < 1) throw ValidationError("output_count must be at least 1");
    for (const auto& c : critical_instructions) {
        if (trim(c).empty()) throw ValidationError("critical instructions must be non-empty");
    }
}

PromptTemplate PromptTemplate::default_for(std::string_view category, PromptVariables vars) {
    PromptTemplate t;
    bool target = category == kTargetCategory;
    t.task_description = std::string(target ? kTargetTask : kGeneralTask);
    t.critical_instructions = target ? target_critical() : general_critical();
    t.variables = std::move(vars);
    return t;
}

PromptTemplate PromptTemplate::from_files(std::string_view category, PromptVariables vars,
                                          const std::filesystem::path& task_file,
                                          const std::filesystem::path& critical_file) {
    auto t = default_for(category, std::move(vars));
    if (!task_file.empty()) t.task_description = trim(read_file(task_file));
    if (!critical_file.empty()) {
        t.critical_instructions.clear();
        std::string text = read_file(critical_file);
        std::size_t pos = 0;
        while (pos <= text.size()) {
            auto nl = text.find('\n', pos);
            std::string line = trim(std::string_view(text).substr(pos, nl == std::string::npos ? nl : nl - pos));
            pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
            if (line.empty() || line == "Critical:") continue;
            if (line[0] == '-' || line[0] == '*') line = trim(line.substr(1));
            if (!line.empty()) t.critical_instructions.push_back(line);
        }
    }
    t.validate();
    return t;
}

std::vector<SeedBatch> shuffle_and_batch(const std::vector<Message>& seeds, std::size_t batch_size,
                                         std::uint64_t rng_seed) {
    if (seeds.empty()) throw ValidationError("seed set is empty");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    std::vector<std::size_t> order(seeds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(rng_seed);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<SeedBatch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        SeedBatch b;
        b.batch_index = out.size();
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
            b.messages.push_back(seeds[order[i]]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::string build_generation_prompt(const PromptTemplate& tmpl, const IndicatorSet& indicators,
                                    const SeedBatch* batch, std::string_view description) {
    tmpl.validate();
    if (trim(indicators.summary).empty()) throw ValidationError("indicator summary is empty");
    if (batch && batch->messages.empty()) throw ValidationError("seed batch is empty");
    auto vars = tmpl.variables.expand(tmpl.output_count);

    std::string p = render_placeholders(tmpl.task_description, vars);
    if (!tmpl.critical_instructions.empty() || tmpl.alignment_clause) {
        p += "\n\nCritical:\n";
        for (const auto& c : tmpl.critical_instructions) p += "\n- " + render_placeholders(c, vars);
        if (tmpl.alignment_clause) p += "\n- " + render_placeholders(*tmpl.alignment_clause, vars);
    }
    p += "\n\n" + vars["topic_title"] + " Indicators:\n\n" + trim(indicators.summary);
    if (batch) {
        p += "\n\nSocial Media Messages:\n";
        for (const auto& m : batch->messages) p += "\n" + one_line(m.content);
    } else if (!trim(description).empty()) {
        p += "\n\nDescription of the messages to generate:\n\n" + trim(description);
    }
    return p;
}

std::string build_annotation_prompt(const IndicatorSet& indicators, const std::vector<Message>& messages,
                                    const PromptVariables& vars) {
    if (messages.empty()) throw ValidationError("no messages to annotate");
    if (trim(indicators.summary).empty()) throw ValidationError("indicator summary is empty");
    auto v = vars.expand();
    static constexpr std::string_view kTask =
        "Your task is to detect early warning signals for {topic} on {industry} industry participants. You will be "
        "provided with two lists: \"{topic_title} Indicators\" list contains signals that can lead to a financial or "
        "reputational loss. The other list, \"Social Media Messages\", is an array of objects that should contain "
        "messages about {topic} on the {industry} industry. Classify those objects by adding `cyberattack_score` "
        "field to the corresponding JSONs and assign a classification score value to it from 0 to 1, where 1 "
        "corresponds to an object clearly associated with a potential or existing {topic_singular} or some context "
        "that would imply it, and 0 corresponds to an object that is not connected to a {topic_singular} at all.\n"
        "\n"
        "Critical: \n"
        "\n"
        "- The output must be only an array from the list \"Social Media Messages\", only with properties "
        "`message_id` and the corresponding `cyberattack_score`, machine-readable and formatted as JSON without any "
        "explanations, don't add anything else.\n"
        "\n"
        "- Pay attention to associated timestamps to better understand the context.\n"
        "\n"
        "- Don't remove any messages.\n"
        "\n"
        "{topic_title} Indicators\n"
        "\n";
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) {
        nlohmann::json o = {{"message_id", m.id}, {"message", m.content}};
        if (m.timestamp) o["timestamp"] = format_rfc3339(*m.timestamp);
        arr.push_back(std::move(o));
    }
    return render_placeholders(kTask, v) + trim(indicators.summary) + "\n\nSocial Media Messages:\n" + arr.dump(2);
}

}  // namespace eltex
