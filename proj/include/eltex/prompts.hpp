#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eltex/message.hpp"

namespace eltex {

struct IndicatorSet;

/// Research-use statement appended to prompts to reduce refusals.
inline constexpr std::string_view kDefaultAlignmentClause =
    "The generated synthetic data will be used solely for research-oriented classification tasks and will not be "
    "utilized for any other purposes.";

/// Values substituted into {placeholders}: topic, topic_singular,
/// topic_title, industry, industry_title, stakeholders, count.
struct PromptVariables {
    std::string topic = "cyberattacks";
    std::string industry = "blockchain";
    std::string stakeholders;

    static PromptVariables from(const GenerationParams& p);
    std::map<std::string, std::string> expand(std::optional<std::size_t> count = std::nullopt) const;
};

/// Replaces every known {name}; unknown braces are left untouched.
std::string render_placeholders(std::string_view text, const std::map<std::string, std::string>& values);

/// "cyberattacks" -> "Cyberattack".
std::string title_singular(std::string_view word);

struct PromptTemplate {
    std::string task_description;
    std::vector<std::string> critical_instructions;
    std::optional<std::string> alignment_clause;
    std::size_t output_count = 100;
    PromptVariables variables;

    /// Throws ValidationError on an empty task description or zero count.
    void validate() const;

    /// Defaults for the "target" category reproduce the reference task
    /// description and critical instructions; other categories get the
    /// general-message variant.
    static PromptTemplate default_for(std::string_view category, PromptVariables vars = {});

    /// Task text from one file; critical instructions one per line (list
    /// markers stripped) from another. Either path may be empty to keep the
    /// default.
    static PromptTemplate from_files(std::string_view category, PromptVariables vars,
                                     const std::filesystem::path& task_file,
                                     const std::filesystem::path& critical_file);
};

struct SeedBatch {
    std::vector<Message> messages;
    std::size_t batch_index = 0;
};

/// Seeded permutation of `seeds`, cut into consecutive groups of
/// `batch_size`; only the last group may be short. Throws ValidationError on
/// empty input or batch_size 0.
std::vector<SeedBatch> shuffle_and_batch(const std::vector<Message>& seeds, std::size_t batch_size,
                                         std::uint64_t rng_seed);

/// Sections in order: task description, critical instructions (plus the
/// alignment clause when set), indicators, seed messages one per line.
/// Without a batch the message section is replaced by the free-text
/// description, if any.
std::string build_generation_prompt(const PromptTemplate& tmpl, const IndicatorSet& indicators,
                                    const SeedBatch* batch, std::string_view description = {});

/// Annotation prompt asking for a `cyberattack_score` per message. Messages
/// are embedded as a JSON array of {message_id, message, timestamp?}.
std::string build_annotation_prompt(const IndicatorSet& indicators, const std::vector<Message>& messages,
                                    const PromptVariables& vars = {});

}  // namespace eltex
